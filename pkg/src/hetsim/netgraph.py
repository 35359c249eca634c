"""Computation-graph model for feed-forward inference networks.

A network is a DAG of layers with explicit output shapes. Graphs are
transcribed in deployment form: activation functions and residual
additions that inference compilers fuse into the producing convolution
are not separate layers (a fused residual shows up as a second input on
the consuming convolution), while structural operators (pooling,
concatenation, fully connected, resampling) stay explicit.

Every layer carries a partition group tag: PRE (input preparation),
BACKBONE (feature extractor) or HEAD (task branches).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple


class GraphError(ValueError):
    """Raised when a graph document fails structural validation."""


class LayerKind(Enum):
    CONV = "conv"
    FC = "fc"
    POOL = "pool"
    ADD = "add"
    ACT = "act"
    RESAMPLE = "resample"
    CONCAT = "concat"


GROUPS = ("PRE", "BACKBONE", "HEAD")


@dataclass(frozen=True)
class TensorShape:
    """Dense tensor extents plus storage width.

    dims are raw extents ([h, w, c] for feature maps, [features] for
    vectors); element_bits is the storage width of one element.
    """

    dims: Tuple[int, ...]
    element_bits: int = 8

    def __post_init__(self):
        if not self.dims or any(int(d) <= 0 for d in self.dims):
            raise GraphError(f"shape dims must be positive, got {self.dims}")
        if self.element_bits <= 0:
            raise GraphError(f"element_bits must be positive, got {self.element_bits}")

    @property
    def num_elements(self) -> int:
        n = 1
        for d in self.dims:
            n *= int(d)
        return n

    def byte_size(self, element_bits: Optional[int] = None) -> int:
        """Bytes needed to store the tensor, rounded up to whole bytes."""
        bits = self.element_bits if element_bits is None else element_bits
        return math.ceil(self.num_elements * bits / 8)


@dataclass(frozen=True)
class Layer:
    id: str
    kind: LayerKind
    inputs: Tuple[str, ...]
    output_shape: TensorShape
    group: str
    # kind-specific parameters; unused ones stay None
    kernel: Optional[Tuple[int, int]] = None
    stride: Optional[Tuple[int, int]] = None
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    groups: int = 1
    in_features: Optional[int] = None
    out_features: Optional[int] = None


def op_count(layer: Layer) -> int:
    """Arithmetic operation count of one layer (1 MAC = 2 ops).

    Convolutions count 2*Kh*Kw*(Cin/groups)*Cout per output position,
    fully connected layers 2*in*out. Pooling, activation, elementwise
    add and resampling count one op per output element. Concatenation
    is a zero-op layout operator (runtimes alias buffers).
    """
    if layer.kind is LayerKind.CONV:
        kh, kw = layer.kernel
        hout, wout = layer.output_shape.dims[0], layer.output_shape.dims[1]
        return 2 * kh * kw * (layer.in_channels // layer.groups) * layer.out_channels * hout * wout
    if layer.kind is LayerKind.FC:
        return 2 * layer.in_features * layer.out_features
    if layer.kind is LayerKind.CONCAT:
        return 0
    return layer.output_shape.num_elements


def param_count(layer: Layer) -> int:
    """Weight + bias element count of one layer."""
    if layer.kind is LayerKind.CONV:
        kh, kw = layer.kernel
        return kh * kw * (layer.in_channels // layer.groups) * layer.out_channels + layer.out_channels
    if layer.kind is LayerKind.FC:
        return layer.in_features * layer.out_features + layer.out_features
    return 0


_TOP_KEYS = {"name", "input_shape", "layers"}
_LAYER_KEYS_COMMON = {"id", "kind", "inputs", "output_shape", "group"}
_LAYER_KEYS_BY_KIND = {
    LayerKind.CONV: {"kernel", "stride", "in_channels", "out_channels", "groups"},
    LayerKind.FC: {"in_features", "out_features"},
    LayerKind.POOL: set(),
    LayerKind.ADD: set(),
    LayerKind.ACT: set(),
    LayerKind.RESAMPLE: set(),
    LayerKind.CONCAT: set(),
}


@dataclass
class Graph:
    name: str
    input_shape: TensorShape
    layers: Tuple[Layer, ...]
    _by_id: Dict[str, Layer] = field(init=False, repr=False)
    _consumers: Dict[str, List[str]] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for layer in self.layers:
            if layer.id in self._by_id:
                raise GraphError(f"duplicate layer id '{layer.id}'")
            self._by_id[layer.id] = layer
        self._consumers = {lid: [] for lid in self._by_id}
        entries = []
        for layer in self.layers:
            if not layer.inputs:
                entries.append(layer.id)
            for src in layer.inputs:
                if src not in self._by_id:
                    raise GraphError(
                        f"layer '{layer.id}' references missing id '{src}'")
                self._consumers[src].append(layer.id)
        if len(entries) != 1:
            raise GraphError(
                f"graph must have exactly one entry layer, found {sorted(entries)}")
        self._validate_layers()
        order = self.topological_order()  # raises on cycles
        if len(order) != len(self.layers):
            raise GraphError("graph contains a cycle")
        reachable = self._reachable_from(entries[0])
        missing = sorted(set(self._by_id) - reachable)
        if missing:
            raise GraphError(f"layers unreachable from the input: {missing}")
        self._check_resample_position(order)

    def layer(self, layer_id: str) -> Layer:
        return self._by_id[layer_id]

    def consumers(self, layer_id: str) -> List[str]:
        return list(self._consumers[layer_id])

    def topological_order(self) -> List[str]:
        """Deterministic topological order; ready layers are taken in id order."""
        indegree = {l.id: len(l.inputs) for l in self.layers}
        ready = [lid for lid, deg in indegree.items() if deg == 0]
        heapq.heapify(ready)
        order: List[str] = []
        while ready:
            lid = heapq.heappop(ready)
            order.append(lid)
            for nxt in self._consumers[lid]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    heapq.heappush(ready, nxt)
        if len(order) != len(self.layers):
            raise GraphError("graph contains a cycle")
        return order

    def total_ops(self) -> int:
        return sum(op_count(l) for l in self.layers)

    def total_params(self) -> int:
        return sum(param_count(l) for l in self.layers)

    def layer_input_shape(self, layer: Layer) -> TensorShape:
        """Shape feeding a single-input layer (the graph input for the entry)."""
        if not layer.inputs:
            return self.input_shape
        return self._by_id[layer.inputs[0]].output_shape

    def _reachable_from(self, entry: str) -> set:
        seen = {entry}
        stack = [entry]
        while stack:
            for nxt in self._consumers[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def _validate_layers(self):
        for layer in self.layers:
            lid = layer.id
            if layer.group not in GROUPS:
                raise GraphError(f"layer '{lid}' has unknown group '{layer.group}'")
            k = layer.kind
            n_in = len(layer.inputs)
            if k is LayerKind.CONV:
                # 0 inputs marks the entry layer reading the graph input.
                if n_in > 2:
                    raise GraphError(f"conv layer '{lid}' needs 1 input (2 with a fused residual), got {n_in}")
                for name in ("kernel", "stride", "in_channels", "out_channels"):
                    if getattr(layer, name) is None:
                        raise GraphError(f"conv layer '{lid}' is missing '{name}'")
                if layer.groups < 1 or layer.in_channels % layer.groups != 0:
                    raise GraphError(
                        f"conv layer '{lid}': groups={layer.groups} must divide in_channels={layer.in_channels}")
                if len(layer.output_shape.dims) != 3 or layer.output_shape.dims[2] != layer.out_channels:
                    raise GraphError(
                        f"conv layer '{lid}': output shape {layer.output_shape.dims} "
                        f"does not end in out_channels={layer.out_channels}")
                if n_in == 2:
                    res = self._by_id[layer.inputs[1]].output_shape
                    if res.dims != layer.output_shape.dims:
                        raise GraphError(
                            f"conv layer '{lid}': fused residual shape {res.dims} "
                            f"!= output shape {layer.output_shape.dims}")
            elif k is LayerKind.FC:
                if n_in > 1:
                    raise GraphError(f"fc layer '{lid}' needs exactly 1 input, got {n_in}")
                if layer.in_features is None or layer.out_features is None:
                    raise GraphError(f"fc layer '{lid}' is missing in_features/out_features")
                if layer.output_shape.dims != (layer.out_features,):
                    raise GraphError(
                        f"fc layer '{lid}': output shape {layer.output_shape.dims} "
                        f"!= [out_features={layer.out_features}]")
            elif k in (LayerKind.POOL, LayerKind.ACT, LayerKind.RESAMPLE):
                if n_in > 1:
                    raise GraphError(f"{k.value} layer '{lid}' takes a single input, got {n_in}")
            elif k is LayerKind.ADD:
                if n_in < 2:
                    raise GraphError(f"add layer '{lid}' needs at least 2 inputs, got {n_in}")
                for src in layer.inputs:
                    if self._by_id[src].output_shape.dims != layer.output_shape.dims:
                        raise GraphError(f"add layer '{lid}': input '{src}' shape mismatch")
            elif k is LayerKind.CONCAT:
                if n_in < 2:
                    raise GraphError(f"concat layer '{lid}' needs at least 2 inputs, got {n_in}")
                total = sum(self._by_id[src].output_shape.num_elements for src in layer.inputs)
                if total != layer.output_shape.num_elements:
                    raise GraphError(
                        f"concat layer '{lid}': input elements {total} != output elements "
                        f"{layer.output_shape.num_elements}")

    def _check_resample_position(self, order: List[str]):
        # Resampling is input preparation; it may not occur downstream of any
        # convolution.
        has_conv_ancestor: Dict[str, bool] = {}
        for lid in order:
            layer = self._by_id[lid]
            flag = False
            for src in layer.inputs:
                parent = self._by_id[src]
                if parent.kind is LayerKind.CONV or has_conv_ancestor[src]:
                    flag = True
                    break
            has_conv_ancestor[lid] = flag
            if layer.kind is LayerKind.RESAMPLE and flag:
                raise GraphError(
                    f"resample layer '{lid}' appears after a convolution")


def fusion_units(graph: Graph) -> List[Tuple[Layer, ...]]:
    """Split the graph into a chain of units at width-1 cut points.

    Walking the topological order, a unit ends when the only tensor
    still awaiting a consumer is the one just produced (or none is, at
    the very end). Parallel branches (residual projections, inception
    branches, sibling task heads) end up inside one unit, so the unit
    sequence is always a linear chain, every boundary carries exactly
    one tensor, and that tensor comes from the unit's last layer.
    """
    order = graph.topological_order()
    pending: Dict[str, int] = {}
    units: List[Tuple[Layer, ...]] = []
    current: List[Layer] = []
    for idx, lid in enumerate(order):
        layer = graph.layer(lid)
        current.append(layer)
        for src in layer.inputs:
            pending[src] -= 1
            if pending[src] == 0:
                del pending[src]
        n_cons = len(graph.consumers(lid))
        if n_cons > 0:
            pending[lid] = n_cons
        clean_cut = not pending or (len(pending) == 1 and lid in pending)
        if clean_cut or idx == len(order) - 1:
            units.append(tuple(current))
            current = []
    return units


def unit_boundary_layer(graph: Graph, unit: Sequence[Layer]) -> Layer:
    """Layer whose output crosses this unit's downstream boundary."""
    unit_ids = {layer.id for layer in unit}
    boundary = [layer for layer in unit
                if any(c not in unit_ids for c in graph.consumers(layer.id))]
    if not boundary:
        return unit[-1]
    if len(boundary) != 1:
        raise GraphError(
            f"unit {[l.id for l in unit]} has a cut width above 1")
    return boundary[0]


def _parse_shape(raw, where: str) -> TensorShape:
    if (not isinstance(raw, list)) or not raw:
        raise GraphError(f"{where}: shape must be a non-empty list, got {raw!r}")
    try:
        dims = tuple(int(d) for d in raw)
    except (TypeError, ValueError):
        raise GraphError(f"{where}: shape entries must be integers, got {raw!r}")
    if any(d <= 0 for d in dims):
        raise GraphError(f"{where}: shape entries must be positive, got {raw!r}")
    return TensorShape(dims)


def _parse_layer(doc: dict) -> Layer:
    if not isinstance(doc, dict):
        raise GraphError(f"layer entry must be an object, got {doc!r}")
    lid = doc.get("id")
    if not isinstance(lid, str) or not lid:
        raise GraphError(f"layer with missing or invalid id: {doc!r}")
    try:
        kind = LayerKind(doc.get("kind"))
    except ValueError:
        raise GraphError(f"layer '{lid}' has unknown kind '{doc.get('kind')}'")
    allowed = _LAYER_KEYS_COMMON | _LAYER_KEYS_BY_KIND[kind]
    unknown = set(doc) - allowed
    if unknown:
        raise GraphError(f"layer '{lid}' has unknown fields {sorted(unknown)}")
    missing = _LAYER_KEYS_COMMON - set(doc)
    if missing:
        raise GraphError(f"layer '{lid}' is missing fields {sorted(missing)}")
    inputs = doc["inputs"]
    if not isinstance(inputs, list) or not all(isinstance(s, str) for s in inputs):
        raise GraphError(f"layer '{lid}': inputs must be a list of layer ids")
    shape = _parse_shape(doc["output_shape"], f"layer '{lid}'")
    kw = {}
    if kind is LayerKind.CONV:
        kw["kernel"] = tuple(int(v) for v in doc["kernel"])
        kw["stride"] = tuple(int(v) for v in doc.get("stride", [1, 1]))
        kw["in_channels"] = int(doc["in_channels"])
        kw["out_channels"] = int(doc["out_channels"])
        kw["groups"] = int(doc.get("groups", 1))
        if len(kw["kernel"]) != 2 or len(kw["stride"]) != 2:
            raise GraphError(f"conv layer '{lid}': kernel and stride must have 2 entries")
    elif kind is LayerKind.FC:
        kw["in_features"] = int(doc["in_features"])
        kw["out_features"] = int(doc["out_features"])
    return Layer(id=lid, kind=kind, inputs=tuple(inputs), output_shape=shape,
                 group=str(doc["group"]), **kw)


def graph_from_document(doc: dict) -> Graph:
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise GraphError(f"graph document has unknown fields {sorted(unknown)}")
    missing = _TOP_KEYS - set(doc)
    if missing:
        raise GraphError(f"graph document is missing fields {sorted(missing)}")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise GraphError("graph document needs a non-empty 'layers' list")
    layers = tuple(_parse_layer(entry) for entry in doc["layers"])
    return Graph(name=str(doc["name"]),
                 input_shape=_parse_shape(doc["input_shape"], "input_shape"),
                 layers=layers)


def graph_to_document(graph: Graph) -> dict:
    layers = []
    for l in graph.layers:
        entry = {
            "id": l.id,
            "kind": l.kind.value,
            "inputs": list(l.inputs),
            "output_shape": list(l.output_shape.dims),
            "group": l.group,
        }
        if l.kind is LayerKind.CONV:
            entry["kernel"] = list(l.kernel)
            entry["stride"] = list(l.stride)
            entry["in_channels"] = l.in_channels
            entry["out_channels"] = l.out_channels
            entry["groups"] = l.groups
        elif l.kind is LayerKind.FC:
            entry["in_features"] = l.in_features
            entry["out_features"] = l.out_features
        layers.append(entry)
    return {"name": graph.name,
            "input_shape": list(graph.input_shape.dims),
            "layers": layers}


def load_graph(path) -> Graph:
    """Load and validate a graph JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_document(doc)
