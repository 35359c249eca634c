"""Assignment search: place layers on devices to minimize total latency.

Two granularities:

  * group mode (default): one device per layer group, matching how the
    measured configurations were deployed; the candidate set is tiny
    and is enumerated outright.
  * per-layer mode: device choice per fused unit along the topological
    chain, solved with a label-correcting dynamic program over states
    (unit position, current device). Fused units (residual blocks,
    branch fan-outs) move as a whole so every boundary is a single
    tensor and the chain structure is exact, not an approximation.

Feasibility uses the calibrated accuracy model and the simulated
energy; the objective is the simulated single-frame total latency.
Ties break by fewer device switches, then lexicographic device names.
The DP accumulates costs with the same operation order as the
simulator, so its objective is bit-identical to simulating its answer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from .accmodel import AccuracyMetrics, AccuracyModel
from .devmodel import Platform, energy, layer_latency, tensor_bytes
from .netgraph import GROUPS, Graph
from .simulator import (accuracy_of, check_unit_alignment, group_op_shares,
                        simulate)


class SearchSpaceError(ValueError):
    """Exhaustive enumeration would exceed the configured size bound."""


class InfeasibleError(Exception):
    """No assignment satisfies the constraints.

    Carries the best violating assignment found, its metrics, and the
    constraint with the largest relative violation.
    """

    def __init__(self, binding_constraint: str, violations: Dict[str, float],
                 best_assignment: Dict[str, str], total_s: float,
                 accuracy: Optional[AccuracyMetrics], energy_j: float):
        self.binding_constraint = binding_constraint
        self.violations = violations
        self.best_assignment = best_assignment
        self.total_s = total_s
        self.accuracy = accuracy
        self.energy_j = energy_j
        detail = ", ".join(f"{name} exceeded by {frac:.1%}"
                           for name, frac in sorted(violations.items()))
        super().__init__(
            f"no feasible assignment; binding constraint: {binding_constraint} ({detail})")


@dataclass(frozen=True)
class Constraints:
    max_loce_m: Optional[float] = None
    max_orie_deg: Optional[float] = None
    max_energy_j: Optional[float] = None
    group_homogeneous: bool = True

    def __post_init__(self):
        for name in ("max_loce_m", "max_orie_deg", "max_energy_j"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")

    def any_accuracy_bound(self) -> bool:
        return self.max_loce_m is not None or self.max_orie_deg is not None


@dataclass(frozen=True)
class SearchResult:
    assignment: Dict[str, str]      # layer id -> device
    total_s: float
    switches: int
    accuracy: Optional[AccuracyMetrics]
    energy_j: float

    def group_summary(self, graph: Graph) -> Dict[str, str]:
        summary: Dict[str, set] = {}
        for layer in graph.layers:
            summary.setdefault(layer.group, set()).add(self.assignment[layer.id])
        return {group: "+".join(sorted(devs)) for group, devs in sorted(summary.items())}


def _violations(constraints: Constraints, accuracy: Optional[AccuracyMetrics],
                energy_j: float) -> Dict[str, float]:
    out: Dict[str, float] = {}
    if constraints.max_loce_m is not None:
        out["max_loce_m"] = (accuracy.loce_m - constraints.max_loce_m) / constraints.max_loce_m
    if constraints.max_orie_deg is not None:
        out["max_orie_deg"] = (accuracy.orie_deg - constraints.max_orie_deg) / constraints.max_orie_deg
    if constraints.max_energy_j is not None:
        out["max_energy_j"] = (energy_j - constraints.max_energy_j) / constraints.max_energy_j
    return {name: v for name, v in out.items() if v > 0}


def _raise_infeasible(best: Tuple) -> None:
    _, total, _, _, assignment, accuracy, energy_j, violations = best
    binding = max(sorted(violations), key=lambda name: violations[name])
    raise InfeasibleError(binding, violations, assignment, total, accuracy, energy_j)


def _require_model(constraints: Constraints, acc_model: Optional[AccuracyModel]) -> None:
    if constraints.any_accuracy_bound() and acc_model is None:
        raise ValueError("accuracy constraints given but no accuracy model")


def _search_enumerate(graph: Graph, platform: Platform,
                      acc_model: Optional[AccuracyModel],
                      constraints: Constraints,
                      size_bound: Optional[int]) -> SearchResult:
    """Lexicographic enumeration; the oracle semantics both modes share."""
    device_names = sorted(platform.devices)
    if constraints.group_homogeneous:
        groups = [g for g in GROUPS if any(l.group == g for l in graph.layers)]
        n_units = len(groups)
    else:
        units = check_unit_alignment(graph, {l.id: device_names[0] for l in graph.layers})
        n_units = len(units)
    space = len(device_names) ** n_units
    if size_bound is not None and space > size_bound:
        raise SearchSpaceError(
            f"{len(device_names)}^{n_units} = {space} assignments exceeds bound {size_bound}")

    best_feasible = None
    best_violating = None
    for choice in itertools.product(device_names, repeat=n_units):
        if constraints.group_homogeneous:
            mapping: Mapping[str, str] = dict(zip(groups, choice))
        else:
            mapping = {}
            for unit, device in zip(units, choice):
                for layer in unit:
                    mapping[layer.id] = device
        report = simulate(graph, mapping, platform, acc_model)
        switches = report.segment_count - 1
        violations = _violations(constraints, report.accuracy, report.energy_j)
        key_tail = (report.total_s, switches, choice)
        entry = (max(violations.values()) if violations else 0.0, *key_tail,
                 report.assignment, report.accuracy, report.energy_j, violations)
        if not violations:
            if best_feasible is None or key_tail < best_feasible[1:4]:
                best_feasible = entry
        else:
            if best_violating is None or entry[:4] < best_violating[:4]:
                best_violating = entry
    if best_feasible is not None:
        _, total, switches, _, assignment, accuracy, energy_j, _ = best_feasible
        return SearchResult(assignment, total, switches, accuracy, energy_j)
    _raise_infeasible(best_violating)


def exhaustive_search(graph: Graph, platform: Platform,
                      acc_model: Optional[AccuracyModel],
                      constraints: Constraints,
                      size_bound: int = 10 ** 6) -> SearchResult:
    """Full enumeration oracle; refuses when the space exceeds size_bound."""
    _require_model(constraints, acc_model)
    return _search_enumerate(graph, platform, acc_model, constraints, size_bound)


class _Label:
    """Partial chain solution ending at a fixed (position, device) state."""

    __slots__ = ("inf_closed", "open_overhead", "open_compute", "busy", "used",
                 "switches", "path", "acc_loce", "acc_orie")

    def __init__(self, inf_closed, open_overhead, open_compute, busy, used,
                 switches, path, acc_loce, acc_orie):
        self.inf_closed = inf_closed
        self.open_overhead = open_overhead
        self.open_compute = open_compute
        self.busy = busy            # dict device -> seconds, segment-close order
        self.used = used            # frozenset of touched devices
        self.switches = switches
        self.path = path            # tuple of device names per unit
        self.acc_loce = acc_loce
        self.acc_orie = acc_orie


def _dominates(a: _Label, b: _Label, need_acc: bool, need_energy: bool,
               entry_cost: Dict[str, float]) -> bool:
    """True when a is at least as good as b for every possible completion.

    Pruning b is only sound on dimensions that affect feasibility, the
    objective, or the tie-break, so accuracy and energy components join
    the comparison only when the corresponding constraints are active.
    The entry device's delivery and preprocessing cost is folded into
    the total only at completion, so it is compared here explicitly.
    """
    if a.switches > b.switches or a.path > b.path:
        return False
    if entry_cost[a.path[0]] > entry_cost[b.path[0]]:
        return False
    if a.inf_closed > b.inf_closed or a.open_compute > b.open_compute:
        return False
    if need_acc and (a.acc_loce > b.acc_loce or a.acc_orie > b.acc_orie):
        return False
    if need_energy:
        if not a.used <= b.used:
            return False
        for device, busy in a.busy.items():
            if busy > b.busy.get(device, 0.0):
                return False
    return True


def optimize_chain_dp(graph: Graph, platform: Platform,
                      acc_model: Optional[AccuracyModel],
                      constraints: Constraints) -> SearchResult:
    """Minimum-total-latency feasible assignment at the chosen granularity."""
    _require_model(constraints, acc_model)
    if constraints.group_homogeneous:
        # Three decision units at most; enumeration is already exact and
        # shares the oracle's evaluation path.
        return _search_enumerate(graph, platform, acc_model, constraints, None)

    device_names = sorted(platform.devices)
    units = check_unit_alignment(graph, {l.id: device_names[0] for l in graph.layers})
    shares = group_op_shares(graph)

    # Per-unit, per-device layer latencies, replayed one layer at a time so
    # float accumulation matches the simulator's exactly.
    lat_lists: List[Dict[str, List[float]]] = []
    acc_lists: List[Dict[str, List[Tuple[float, float]]]] = []
    for unit in units:
        by_dev_lat: Dict[str, List[float]] = {}
        by_dev_acc: Dict[str, List[Tuple[float, float]]] = {}
        for device in device_names:
            profile = platform.devices[device]
            by_dev_lat[device] = [layer_latency(layer, profile)
                                  for layer in unit if layer.group != "PRE"]
            terms = []
            if acc_model is not None:
                for layer in unit:
                    share = shares[layer.id]
                    if layer.group == "PRE" or share == 0.0:
                        continue
                    delta = acc_model.delta(device, layer.group)
                    terms.append((delta.loce_m * share, delta.orie_deg * share))
            by_dev_acc[device] = terms
        lat_lists.append(by_dev_lat)
        acc_lists.append(by_dev_acc)

    entry_cost = {}
    for device in device_names:
        delivery = platform.transfer_seconds(graph.input_shape.byte_size(),
                                             platform.host, device)
        entry_cost[device] = delivery + platform.devices[device].preproc_cost

    boundary_bytes = {}
    for i in range(len(units) - 1):
        producer = units[i][-1]
        boundary_bytes[i] = {
            device: tensor_bytes(producer.output_shape,
                                 platform.devices[device].native_precision)
            for device in device_names}

    if acc_model is not None:
        base_loce = acc_model.baseline.loce_m + acc_model.model_offset.loce_m
        base_orie = acc_model.baseline.orie_deg + acc_model.model_offset.orie_deg
    else:
        base_loce = base_orie = 0.0

    def extend_open(label: _Label, pos: int, device: str) -> None:
        compute = label.open_compute
        for lat in lat_lists[pos][device]:
            compute += lat
        label.open_compute = compute
        loce, orie = label.acc_loce, label.acc_orie
        for dl, do in acc_lists[pos][device]:
            loce += dl
            orie += do
        label.acc_loce, label.acc_orie = loce, orie

    need_acc = constraints.any_accuracy_bound()
    need_energy = constraints.max_energy_j is not None

    states: Dict[str, List[_Label]] = {}
    for device in device_names:
        label = _Label(0.0, platform.devices[device].invocation_overhead, 0.0,
                       {device: platform.devices[device].preproc_cost},
                       frozenset((device,)), 0, (device,), base_loce, base_orie)
        extend_open(label, 0, device)
        states[device] = [label]

    def insert(pool: List[_Label], label: _Label) -> None:
        for existing in pool:
            if _dominates(existing, label, need_acc, need_energy, entry_cost):
                return
        pool[:] = [existing for existing in pool
                   if not _dominates(label, existing, need_acc, need_energy, entry_cost)]
        pool.append(label)

    for pos in range(1, len(units)):
        next_states: Dict[str, List[_Label]] = {d: [] for d in device_names}
        for prev_device in device_names:
            for label in states.get(prev_device, []):
                for device in device_names:
                    if device == prev_device:
                        new = _Label(label.inf_closed, label.open_overhead,
                                     label.open_compute, dict(label.busy), label.used,
                                     label.switches, label.path + (device,),
                                     label.acc_loce, label.acc_orie)
                    else:
                        seg_total = label.open_overhead + label.open_compute
                        busy = dict(label.busy)
                        busy[prev_device] = busy.get(prev_device, 0.0) + seg_total
                        inf_closed = label.inf_closed + seg_total
                        transfer = platform.transfer_seconds(
                            boundary_bytes[pos - 1][prev_device], prev_device, device)
                        inf_closed = inf_closed + transfer
                        new = _Label(inf_closed,
                                     platform.devices[device].invocation_overhead,
                                     0.0, busy, label.used | {device},
                                     label.switches + 1, label.path + (device,),
                                     label.acc_loce, label.acc_orie)
                    extend_open(new, pos, device)
                    insert(next_states[device], new)
        states = next_states

    best_feasible = None
    best_violating = None
    for device in device_names:
        for label in states.get(device, []):
            seg_total = label.open_overhead + label.open_compute
            busy = dict(label.busy)
            busy[device] = busy.get(device, 0.0) + seg_total
            inference = label.inf_closed + seg_total
            total = entry_cost[label.path[0]] + inference
            used = sorted(label.used)
            energy_j = energy(busy, {name: platform.devices[name] for name in used},
                              total)
            assignment = {}
            for unit, dev in zip(units, label.path):
                for layer in unit:
                    assignment[layer.id] = dev
            accuracy = accuracy_of(graph, assignment, acc_model) if acc_model else None
            violations = _violations(constraints, accuracy, energy_j)
            key_tail = (total, label.switches, label.path)
            entry = (max(violations.values()) if violations else 0.0, *key_tail,
                     assignment, accuracy, energy_j, violations)
            if not violations:
                if best_feasible is None or key_tail < best_feasible[1:4]:
                    best_feasible = entry
            else:
                if best_violating is None or entry[:4] < best_violating[:4]:
                    best_violating = entry
    if best_feasible is not None:
        _, total, switches, _, assignment, accuracy, energy_j, _ = best_feasible
        return SearchResult(assignment, total, switches, accuracy, energy_j)
    _raise_infeasible(best_violating)


@dataclass(frozen=True)
class ParetoPoint:
    group_assignment: Dict[str, str]
    total_s: float
    accuracy: AccuracyMetrics
    energy_j: float


def pareto_frontier(graph: Graph, platform: Platform,
                    acc_model: AccuracyModel) -> List[ParetoPoint]:
    """Non-dominated group assignments under (latency, ORIE, energy)."""
    device_names = sorted(platform.devices)
    groups = [g for g in GROUPS if any(l.group == g for l in graph.layers)]
    candidates: List[Tuple[Tuple[float, float, float], Tuple[str, ...], ParetoPoint]] = []
    for choice in itertools.product(device_names, repeat=len(groups)):
        mapping = dict(zip(groups, choice))
        report = simulate(graph, mapping, platform, acc_model)
        objective = (report.total_s, report.accuracy.orie_deg, report.energy_j)
        candidates.append((objective, choice,
                           ParetoPoint(mapping, report.total_s, report.accuracy,
                                       report.energy_j)))
    kept: List[Tuple[Tuple[float, float, float], Tuple[str, ...], ParetoPoint]] = []
    seen_objectives = set()
    for objective, choice, point in sorted(candidates, key=lambda c: (c[0], c[1])):
        dominated = any(
            all(o <= p for o, p in zip(other, objective)) and other != objective
            for other, _, _ in candidates)
        if dominated or objective in seen_objectives:
            continue
        seen_objectives.add(objective)
        kept.append((objective, choice, point))
    return [point for _, _, point in kept]
