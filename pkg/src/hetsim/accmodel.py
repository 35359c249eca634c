"""Additive accuracy model for partitioned inference.

Predicted metric = baseline + model_offset + sum over groups of the
delta attached to (device running the group, group). Deltas are
non-negative penalties keyed by device (each device implies its native
precision plus its toolchain's quantization pipeline, so the device
name is the right key). The PRE group only reshapes the input and
carries no delta.

Calibration solves a non-negative least-squares system over measured
configurations. model_offset is the device-independent floor: the
componentwise best measured metric minus the baseline, clipped at
zero. When a (device, group) delta is not pinned down by any mixed
measurement, a weak prior splits the device's total penalty between
BACKBONE and HEAD using a configurable attribution ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls

PARTITION_GROUPS = ("BACKBONE", "HEAD")
DEFAULT_ATTRIBUTION = {"BACKBONE": 0.3, "HEAD": 0.7}
_PRIOR_WEIGHT = 1e-3  # sqrt of the regularization strength


class CoverageError(KeyError):
    """A prediction needs a delta the model does not contain."""


class CalibrationError(ValueError):
    """The measurement set cannot identify the requested model."""


@dataclass(frozen=True)
class AccuracyMetrics:
    loce_m: float     # location error, meters
    orie_deg: float   # orientation error, degrees

    def as_tuple(self) -> Tuple[float, float]:
        return (self.loce_m, self.orie_deg)

    def __add__(self, other: "AccuracyMetrics") -> "AccuracyMetrics":
        return AccuracyMetrics(self.loce_m + other.loce_m, self.orie_deg + other.orie_deg)

    def __sub__(self, other: "AccuracyMetrics") -> "AccuracyMetrics":
        return AccuracyMetrics(self.loce_m - other.loce_m, self.orie_deg - other.orie_deg)


@dataclass
class AccuracyModel:
    baseline: AccuracyMetrics
    model_offset: AccuracyMetrics
    deltas: Dict[Tuple[str, str], AccuracyMetrics]  # (device, group) -> penalty

    def delta(self, device: str, group: str) -> AccuracyMetrics:
        if group == "PRE":
            return AccuracyMetrics(0.0, 0.0)
        key = (device, group)
        if key not in self.deltas:
            raise CoverageError(
                f"no calibrated delta for device '{device}' on group '{group}'")
        return self.deltas[key]


def predict_accuracy(assignment: Mapping[str, str], model: AccuracyModel) -> AccuracyMetrics:
    """Metrics for a group-homogeneous assignment (group -> device)."""
    for group in PARTITION_GROUPS:
        if group not in assignment:
            raise CoverageError(f"assignment does not map group '{group}'")
    loce = model.baseline.loce_m + model.model_offset.loce_m
    orie = model.baseline.orie_deg + model.model_offset.orie_deg
    for group in PARTITION_GROUPS:
        d = model.delta(assignment[group], group)
        loce += d.loce_m
        orie += d.orie_deg
    return AccuracyMetrics(loce, orie)


def predict_from_shares(contributions: Iterable[Tuple[str, str, float]],
                        model: AccuracyModel) -> AccuracyMetrics:
    """Metrics from (device, group, share-of-group-ops) contributions.

    Used for per-layer assignments: a layer inherits its group's delta
    scaled by its share of the group's op count. Contributions must be
    supplied in a fixed order to keep results reproducible.
    """
    loce = model.baseline.loce_m + model.model_offset.loce_m
    orie = model.baseline.orie_deg + model.model_offset.orie_deg
    for device, group, share in contributions:
        if group == "PRE" or share == 0.0:
            continue
        d = model.delta(device, group)
        loce += d.loce_m * share
        orie += d.orie_deg * share
    return AccuracyMetrics(loce, orie)


def _row_devices(assignment: Mapping[str, str]) -> List[str]:
    return sorted({assignment[g] for g in PARTITION_GROUPS if g in assignment})


def calibrate_accuracy(rows: Sequence[Tuple[Mapping[str, str], AccuracyMetrics]],
                       baseline: AccuracyMetrics,
                       attribution: Optional[Mapping[str, float]] = None,
                       ) -> Tuple[AccuracyModel, List[AccuracyMetrics]]:
    """Fit offset and deltas; returns (model, per-row residuals).

    Every device appearing in a mixed row must also appear in a
    single-device row, otherwise its deltas cannot be separated from
    its partner's and calibration refuses.
    """
    if not rows:
        raise CalibrationError("no measurement rows supplied")
    attribution = dict(attribution or DEFAULT_ATTRIBUTION)
    if set(attribution) != set(PARTITION_GROUPS):
        raise CalibrationError(f"attribution must cover {PARTITION_GROUPS}")
    if not math.isclose(sum(attribution.values()), 1.0, rel_tol=1e-9):
        raise CalibrationError("attribution shares must sum to 1")

    for assignment, _ in rows:
        for group in PARTITION_GROUPS:
            if group not in assignment:
                raise CalibrationError(f"a row does not map group '{group}'")

    single_rows: Dict[str, AccuracyMetrics] = {}
    for assignment, measured in rows:
        devs = _row_devices(assignment)
        if len(devs) == 1:
            single_rows[devs[0]] = measured
    unidentifiable = []
    for assignment, _ in rows:
        for dev in _row_devices(assignment):
            if dev not in single_rows:
                unidentifiable.extend((dev, g) for g in PARTITION_GROUPS)
    if unidentifiable:
        raise CalibrationError(
            "cannot separate deltas for pairs: "
            + ", ".join(f"({d}, {g})" for d, g in sorted(set(unidentifiable))))

    # Device-independent floor: best measured value per metric.
    floor_loce = min(m.loce_m for _, m in rows)
    floor_orie = min(m.orie_deg for _, m in rows)
    offset = AccuracyMetrics(max(0.0, floor_loce - baseline.loce_m),
                             max(0.0, floor_orie - baseline.orie_deg))

    keys = sorted({(assignment[g], g) for assignment, _ in rows for g in PARTITION_GROUPS})
    index = {key: i for i, key in enumerate(keys)}
    n = len(keys)

    a_rows = np.zeros((len(rows), n))
    b = np.zeros((len(rows), 2))
    for r, (assignment, measured) in enumerate(rows):
        for g in PARTITION_GROUPS:
            a_rows[r, index[(assignment[g], g)]] += 1.0
        b[r, 0] = measured.loce_m - baseline.loce_m - offset.loce_m
        b[r, 1] = measured.orie_deg - baseline.orie_deg - offset.orie_deg

    # Weak prior: split each device's single-row total by the attribution
    # ratio; pins directions the rows leave free, without disturbing the fit.
    priors = np.zeros((n, 2))
    for (dev, group), i in index.items():
        if dev in single_rows:
            total = single_rows[dev]
            priors[i, 0] = attribution[group] * max(0.0, total.loce_m - baseline.loce_m - offset.loce_m)
            priors[i, 1] = attribution[group] * max(0.0, total.orie_deg - baseline.orie_deg - offset.orie_deg)

    stacked_a = np.vstack([a_rows, _PRIOR_WEIGHT * np.eye(n)])
    deltas = np.zeros((n, 2))
    for metric in (0, 1):
        stacked_b = np.concatenate([b[:, metric], _PRIOR_WEIGHT * priors[:, metric]])
        solution, _ = nnls(stacked_a, stacked_b)
        deltas[:, metric] = solution

    model = AccuracyModel(
        baseline=baseline,
        model_offset=offset,
        deltas={key: AccuracyMetrics(float(deltas[i, 0]), float(deltas[i, 1]))
                for key, i in index.items()},
    )
    residuals = []
    for assignment, measured in rows:
        predicted = predict_accuracy(assignment, model)
        residuals.append(AccuracyMetrics(predicted.loce_m - measured.loce_m,
                                         predicted.orie_deg - measured.orie_deg))
    return model, residuals


def model_to_document(model: AccuracyModel) -> dict:
    deltas: Dict[str, Dict[str, dict]] = {}
    for (dev, group) in sorted(model.deltas):
        m = model.deltas[(dev, group)]
        deltas.setdefault(dev, {})[group] = {"loce_m": m.loce_m, "orie_deg": m.orie_deg}
    return {
        "baseline": {"loce_m": model.baseline.loce_m, "orie_deg": model.baseline.orie_deg},
        "model_offset": {"loce_m": model.model_offset.loce_m,
                         "orie_deg": model.model_offset.orie_deg},
        "deltas": deltas,
    }


def model_from_document(doc: dict) -> AccuracyModel:
    try:
        baseline = AccuracyMetrics(float(doc["baseline"]["loce_m"]),
                                   float(doc["baseline"]["orie_deg"]))
        offset = AccuracyMetrics(float(doc["model_offset"]["loce_m"]),
                                 float(doc["model_offset"]["orie_deg"]))
        deltas = {}
        for dev, groups in doc["deltas"].items():
            for group, m in groups.items():
                if group not in PARTITION_GROUPS:
                    raise CalibrationError(f"unknown group '{group}' in accuracy model")
                deltas[(dev, group)] = AccuracyMetrics(float(m["loce_m"]), float(m["orie_deg"]))
    except (KeyError, TypeError) as exc:
        raise CalibrationError(f"malformed accuracy model document: {exc}") from exc
    if offset.loce_m < 0 or offset.orie_deg < 0:
        raise CalibrationError("model_offset must be non-negative")
    for key, m in deltas.items():
        if m.loce_m < 0 or m.orie_deg < 0:
            raise CalibrationError(f"delta for {key} must be non-negative")
    return AccuracyModel(baseline=baseline, model_offset=offset, deltas=deltas)


def load_accuracy_model(path) -> AccuracyModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_document(doc)
