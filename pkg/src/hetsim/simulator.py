"""Discrete cost simulator for a partitioned network on a platform.

The simulated timeline for one frame:

  1. the raw input tensor travels from the host to the entry device
     (the device running the first layer),
  2. the entry device's preprocessing stage runs (image resampling and
     similar fixed work),
  3. layers execute in topological order; consecutive layers on the
     same device form one segment paying that device's invocation
     overhead once, and every segment boundary moves the crossing
     tensor at the producing device's native precision.

Inference latency covers step 3 only; total latency adds steps 1-2.
Layers in the PRE group are covered by the preprocessing stage, so
they add no compute time, but a PRE segment on a device of its own
still pays that device's invocation overhead.

Energy integrates active power over each device's busy time and idle
power over the rest of the frame, counting only devices the assignment
uses. Link transfers are attributed to no device.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from .accmodel import (AccuracyMetrics, AccuracyModel, predict_accuracy,
                       predict_from_shares)
from .devmodel import Platform, energy, layer_latency, tensor_bytes
from .netgraph import GROUPS, Graph, Layer, fusion_units, op_count


class ScheduleError(ValueError):
    """The assignment cannot be executed on the platform."""


@dataclass(frozen=True)
class SegmentTrace:
    """One timeline event: preprocessing, a compute segment, or a transfer.

    For transfers, device reads "src->dst" and layer_ids is empty; the
    first transfer of a frame is the raw input delivery.
    """
    device: str
    kind: str                     # "preproc" | "compute" | "transfer"
    layer_ids: Tuple[str, ...]
    start_s: float
    end_s: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class ScheduleReport:
    graph_name: str
    assignment: Dict[str, str]          # layer id -> device
    traces: List[SegmentTrace]
    entry_device: str
    delivery_s: float
    preproc_s: float
    inference_s: float
    total_s: float
    fps_sequential: float
    fps_pipelined: float
    device_busy: Dict[str, float]
    segment_count: int
    energy_j: float
    accuracy: Optional[AccuracyMetrics]


def expand_assignment(graph: Graph, mapping: Mapping[str, str]) -> Dict[str, str]:
    """Normalize a group->device or layer->device map to layer->device."""
    if not mapping:
        raise ScheduleError("empty assignment")
    if set(mapping) <= set(GROUPS):
        missing = {layer.group for layer in graph.layers} - set(mapping)
        if missing:
            raise ScheduleError(f"assignment does not map groups {sorted(missing)}")
        return {layer.id: mapping[layer.group] for layer in graph.layers}
    layer_ids = {layer.id for layer in graph.layers}
    unknown = set(mapping) - layer_ids
    if unknown:
        raise ScheduleError(f"assignment names unknown layers {sorted(unknown)}")
    missing = layer_ids - set(mapping)
    if missing:
        raise ScheduleError(f"assignment misses layers {sorted(missing)}")
    return dict(mapping)


def check_unit_alignment(graph: Graph, device_of: Mapping[str, str]) -> List[Tuple[Layer, ...]]:
    """Fused units of the graph, verifying each stays on one device."""
    units = fusion_units(graph)
    for unit in units:
        devices = {device_of[layer.id] for layer in unit}
        if len(devices) > 1:
            ids = [layer.id for layer in unit]
            raise ScheduleError(
                f"layers {ids} form one fused unit and must share a device, got {sorted(devices)}")
    return units


def group_map_of(graph: Graph, device_of: Mapping[str, str]) -> Optional[Dict[str, str]]:
    """group -> device map if the assignment is group-homogeneous, else None."""
    per_group: Dict[str, set] = {}
    for layer in graph.layers:
        per_group.setdefault(layer.group, set()).add(device_of[layer.id])
    if all(len(devs) == 1 for devs in per_group.values()):
        return {group: next(iter(devs)) for group, devs in per_group.items()}
    return None


def group_op_shares(graph: Graph) -> Dict[str, float]:
    """layer id -> its share of its group's total op count."""
    group_ops: Dict[str, int] = {}
    for layer in graph.layers:
        group_ops[layer.group] = group_ops.get(layer.group, 0) + op_count(layer)
    shares = {}
    for layer in graph.layers:
        total = group_ops[layer.group]
        shares[layer.id] = op_count(layer) / total if total else 0.0
    return shares


def accuracy_of(graph: Graph, device_of: Mapping[str, str],
                model: AccuracyModel) -> AccuracyMetrics:
    """Predicted metrics; group-level when homogeneous, op-share scaled otherwise.

    The group-level path needs every partition group to actually occur
    in the graph; a graph missing one falls back to op shares so the
    absent group contributes nothing.
    """
    group_map = group_map_of(graph, device_of)
    if group_map is not None and all(g in group_map for g in ("BACKBONE", "HEAD")):
        return predict_accuracy(group_map, model)
    shares = group_op_shares(graph)
    contributions = []
    for lid in graph.topological_order():
        layer = graph.layer(lid)
        contributions.append((device_of[lid], layer.group, shares[lid]))
    return predict_from_shares(contributions, model)


def simulate(graph: Graph, assignment: Mapping[str, str], platform: Platform,
             accuracy_model: Optional[AccuracyModel] = None) -> ScheduleReport:
    device_of = expand_assignment(graph, assignment)
    for layer_id, device in sorted(device_of.items()):
        if device not in platform.devices:
            raise ScheduleError(f"layer '{layer_id}' assigned to unknown device '{device}'")
    units = check_unit_alignment(graph, device_of)

    # Merge consecutive fused units on the same device into segments.
    segments: List[List[Layer]] = []
    for unit in units:
        device = device_of[unit[0].id]
        if segments and device_of[segments[-1][0].id] == device:
            segments[-1].extend(unit)
        else:
            segments.append(list(unit))

    entry_device = device_of[units[0][0].id]
    delivery_s = platform.transfer_seconds(graph.input_shape.byte_size(),
                                           platform.host, entry_device)
    preproc_s = platform.devices[entry_device].preproc_cost

    traces: List[SegmentTrace] = []
    device_busy: Dict[str, float] = {entry_device: preproc_s}
    stage_busy: Dict[str, float] = {entry_device: delivery_s + preproc_s}
    traces.append(SegmentTrace(device=f"{platform.host}->{entry_device}",
                               kind="transfer", layer_ids=(),
                               start_s=0.0, end_s=delivery_s))
    traces.append(SegmentTrace(device=entry_device, kind="preproc", layer_ids=(),
                               start_s=delivery_s, end_s=delivery_s + preproc_s))

    clock = delivery_s + preproc_s
    inference_s = 0.0
    for i, seg_layers in enumerate(segments):
        device = device_of[seg_layers[0].id]
        profile = platform.devices[device]
        if i > 0:
            producer = segments[i - 1][-1]
            producer_dev = device_of[producer.id]
            nbytes = tensor_bytes(producer.output_shape,
                                  platform.devices[producer_dev].native_precision)
            transfer_in = platform.transfer_seconds(nbytes, producer_dev, device)
            traces.append(SegmentTrace(device=f"{producer_dev}->{device}",
                                       kind="transfer", layer_ids=(),
                                       start_s=clock, end_s=clock + transfer_in))
            clock += transfer_in
            inference_s += transfer_in
            stage_busy[device] = stage_busy.get(device, 0.0) + transfer_in
        compute = 0.0
        for layer in seg_layers:
            if layer.group != "PRE":
                compute += layer_latency(layer, profile)
        overhead = profile.invocation_overhead
        traces.append(SegmentTrace(device=device, kind="compute",
                                   layer_ids=tuple(layer.id for layer in seg_layers),
                                   start_s=clock, end_s=clock + overhead + compute))
        clock += overhead + compute
        inference_s += overhead + compute
        device_busy[device] = device_busy.get(device, 0.0) + (overhead + compute)
        stage_busy[device] = stage_busy.get(device, 0.0) + (overhead + compute)

    total_s = delivery_s + preproc_s + inference_s

    # Pipelined rate: frames stream through the device chain, so the
    # busiest device bounds throughput. A device's stage owns its inbound
    # transfers; the entry device also owns delivery and preprocessing.
    bottleneck = max(stage_busy.values())

    used = sorted(set(device_of.values()))
    energy_j = energy(device_busy, {name: platform.devices[name] for name in used}, total_s)

    accuracy = None
    if accuracy_model is not None:
        accuracy = accuracy_of(graph, device_of, accuracy_model)

    return ScheduleReport(
        graph_name=graph.name,
        assignment=device_of,
        traces=traces,
        entry_device=entry_device,
        delivery_s=delivery_s,
        preproc_s=preproc_s,
        inference_s=inference_s,
        total_s=total_s,
        fps_sequential=1.0 / total_s if total_s > 0 else float("inf"),
        fps_pipelined=1.0 / bottleneck if bottleneck > 0 else float("inf"),
        device_busy=device_busy,
        segment_count=len(segments),
        energy_j=energy_j,
        accuracy=accuracy,
    )


def throughput(graph: Graph, assignment: Mapping[str, str],
               platform: Platform) -> Tuple[float, float]:
    """(sequential FPS, pipelined FPS) for the assignment."""
    report = simulate(graph, assignment, platform)
    return report.fps_sequential, report.fps_pipelined


def report_to_document(report: ScheduleReport) -> dict:
    doc = {
        "graph": report.graph_name,
        "assignment": dict(sorted(report.assignment.items())),
        "entry_device": report.entry_device,
        "delivery_s": report.delivery_s,
        "preproc_s": report.preproc_s,
        "inference_s": report.inference_s,
        "total_s": report.total_s,
        "fps_sequential": report.fps_sequential,
        "fps_pipelined": report.fps_pipelined,
        "segment_count": report.segment_count,
        "device_busy_s": dict(sorted(report.device_busy.items())),
        "energy_j": report.energy_j,
        "accuracy": None,
        "traces": [
            {"device": t.device, "kind": t.kind, "layers": list(t.layer_ids),
             "start_s": t.start_s, "end_s": t.end_s}
            for t in report.traces
        ],
    }
    if report.accuracy is not None:
        doc["accuracy"] = {"loce_m": report.accuracy.loce_m,
                           "orie_deg": report.accuracy.orie_deg}
    return doc


def write_trace_csv(report: ScheduleReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device", "kind", "start_s", "end_s", "layers"])
        for t in report.traces:
            writer.writerow([t.device, t.kind, f"{t.start_s:.9f}",
                             f"{t.end_s:.9f}", ";".join(t.layer_ids)])
