"""Device, link and platform cost models.

Each device executes in one native precision and is characterized by an
affine cost model: sustained op rates per layer class (conv / fc /
other), a fixed per-invocation overhead charged once per contiguous
segment of layers, and a fixed host-side preprocessing cost charged
once per frame when the device's pipeline receives the input. Links are
directed bandwidth/latency pairs; any two devices communicate either
directly or through the platform host.

Rates, overheads, preprocessing costs and link parameters are fitted
quantities, not vendor datasheet numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .netgraph import Layer, LayerKind, TensorShape


class PlatformError(ValueError):
    """Raised for malformed platforms or unsatisfiable cost-model queries."""


class Precision(Enum):
    FP32 = "fp32"
    FP16 = "fp16"
    INT8 = "int8"

    @property
    def bits(self) -> int:
        return {"fp32": 32, "fp16": 16, "int8": 8}[self.value]


class LayerClass(Enum):
    CONV = "conv"
    FC = "fc"
    OTHER = "other"


def layer_class(kind: LayerKind) -> LayerClass:
    if kind is LayerKind.CONV:
        return LayerClass.CONV
    if kind is LayerKind.FC:
        return LayerClass.FC
    return LayerClass.OTHER


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    native_precision: Precision
    rate: Dict[LayerClass, float]        # sustained ops/second per layer class
    invocation_overhead: float           # seconds per contiguous segment
    preproc_cost: float                  # seconds, host-side input preparation
    power_active: float                  # watts while busy
    power_idle: float                    # watts while idle

    def __post_init__(self):
        for cls in LayerClass:
            if cls not in self.rate:
                raise PlatformError(f"device '{self.name}': missing rate for class {cls.value}")
            if not (self.rate[cls] > 0):
                raise PlatformError(f"device '{self.name}': rate for {cls.value} must be > 0")
        if self.invocation_overhead < 0 or self.preproc_cost < 0:
            raise PlatformError(f"device '{self.name}': overheads must be >= 0")
        if not (self.power_active >= self.power_idle >= 0):
            raise PlatformError(
                f"device '{self.name}': need power_active >= power_idle >= 0")


@dataclass(frozen=True)
class LinkProfile:
    src: str
    dst: str
    bandwidth: float   # bytes/second
    latency: float     # seconds per transfer

    def __post_init__(self):
        if not (self.bandwidth > 0):
            raise PlatformError(f"link {self.src}->{self.dst}: bandwidth must be > 0")
        if self.latency < 0:
            raise PlatformError(f"link {self.src}->{self.dst}: latency must be >= 0")


def layer_compute_latency(layer_ops: int, cls: LayerClass, device: DeviceProfile) -> float:
    """Pure compute seconds for one layer; invocation overhead excluded."""
    if layer_ops < 0:
        raise PlatformError("op count must be >= 0")
    return layer_ops / device.rate[cls]


def layer_latency(layer: Layer, device: DeviceProfile) -> float:
    from .netgraph import op_count
    return layer_compute_latency(op_count(layer), layer_class(layer.kind), device)


def transfer_latency(num_bytes: int, link: LinkProfile) -> float:
    """Seconds to move num_bytes over one link: latency + bytes/bandwidth."""
    if num_bytes < 0:
        raise PlatformError("transfer size must be >= 0")
    return link.latency + num_bytes / link.bandwidth


def tensor_bytes(shape: TensorShape, precision: Precision) -> int:
    """Wire size of a tensor stored in the given precision."""
    return shape.byte_size(element_bits=precision.bits)


def energy(device_busy: Dict[str, float], devices: Dict[str, DeviceProfile],
           makespan: float) -> float:
    """Joules over one frame: active power while busy, idle power otherwise.

    device_busy maps device name to its total busy seconds within the
    makespan. Busy time above the makespan is a contract violation.
    """
    if makespan < 0:
        raise PlatformError("makespan must be >= 0")
    total = 0.0
    for name in sorted(devices):
        busy = device_busy.get(name, 0.0)
        if busy < 0:
            raise PlatformError(f"device '{name}': busy time must be >= 0")
        if busy > makespan * (1 + 1e-9) + 1e-15:
            raise PlatformError(
                f"device '{name}': busy time {busy} exceeds makespan {makespan}")
        prof = devices[name]
        total += prof.power_active * busy + prof.power_idle * (makespan - busy)
    return total


@dataclass
class Platform:
    devices: Dict[str, DeviceProfile]
    links: Dict[Tuple[str, str], LinkProfile]
    host: str

    def __post_init__(self):
        if self.host not in self.devices:
            raise PlatformError(f"host '{self.host}' is not a declared device")
        for (src, dst), link in self.links.items():
            if src == dst:
                raise PlatformError(f"link {src}->{dst}: endpoints must differ")
            if src not in self.devices or dst not in self.devices:
                raise PlatformError(f"link {src}->{dst}: unknown endpoint")
            if (link.src, link.dst) != (src, dst):
                raise PlatformError(f"link {src}->{dst}: key/profile mismatch")
        for a in self.devices:
            for b in self.devices:
                if a != b:
                    self.path(a, b)  # raises if unresolvable

    def device(self, name: str) -> DeviceProfile:
        if name not in self.devices:
            raise PlatformError(f"unknown device '{name}'")
        return self.devices[name]

    def path(self, src: str, dst: str) -> List[LinkProfile]:
        """Links used to move data src -> dst: direct if present, else via host."""
        if src == dst:
            return []
        direct = self.links.get((src, dst))
        if direct is not None:
            return [direct]
        first = self.links.get((src, self.host))
        second = self.links.get((self.host, dst))
        if src == self.host and second is not None:
            return [second]
        if dst == self.host and first is not None:
            return [first]
        if first is not None and second is not None:
            return [first, second]
        raise PlatformError(f"no transfer path from '{src}' to '{dst}'")

    def transfer_seconds(self, num_bytes: int, src: str, dst: str) -> float:
        total = 0.0
        for link in self.path(src, dst):
            total += transfer_latency(num_bytes, link)
        return total


_DEVICE_KEYS = {"name", "precision", "rates", "overhead_s", "preproc_s", "power_w"}
_LINK_KEYS = {"src", "dst", "bandwidth_Bps", "latency_s"}


def _parse_device(doc: dict) -> DeviceProfile:
    if not isinstance(doc, dict):
        raise PlatformError(f"device entry must be an object, got {doc!r}")
    unknown = set(doc) - _DEVICE_KEYS
    if unknown:
        raise PlatformError(f"device entry has unknown fields {sorted(unknown)}")
    missing = _DEVICE_KEYS - set(doc)
    if missing:
        raise PlatformError(f"device entry is missing fields {sorted(missing)}")
    try:
        precision = Precision(doc["precision"])
    except ValueError:
        raise PlatformError(f"device '{doc.get('name')}': unknown precision '{doc['precision']}'")
    rates_doc = doc["rates"]
    if set(rates_doc) != {"conv", "fc", "other"}:
        raise PlatformError(
            f"device '{doc['name']}': rates must have exactly conv/fc/other, got {sorted(rates_doc)}")
    rate = {LayerClass(k): float(v) for k, v in rates_doc.items()}
    power = doc["power_w"]
    if set(power) != {"active", "idle"}:
        raise PlatformError(f"device '{doc['name']}': power_w must have active and idle")
    return DeviceProfile(
        name=str(doc["name"]),
        native_precision=precision,
        rate=rate,
        invocation_overhead=float(doc["overhead_s"]),
        preproc_cost=float(doc["preproc_s"]),
        power_active=float(power["active"]),
        power_idle=float(power["idle"]),
    )


def platform_from_document(doc: dict) -> Platform:
    if not isinstance(doc, dict):
        raise PlatformError("platform document must be a JSON object")
    unknown = set(doc) - {"devices", "links", "host"}
    if unknown:
        raise PlatformError(f"platform document has unknown fields {sorted(unknown)}")
    if "devices" not in doc or "host" not in doc:
        raise PlatformError("platform document needs 'devices' and 'host'")
    devices: Dict[str, DeviceProfile] = {}
    for entry in doc["devices"]:
        prof = _parse_device(entry)
        if prof.name in devices:
            raise PlatformError(f"duplicate device '{prof.name}'")
        devices[prof.name] = prof
    links: Dict[Tuple[str, str], LinkProfile] = {}
    for entry in doc.get("links", []):
        unknown = set(entry) - _LINK_KEYS
        if unknown:
            raise PlatformError(f"link entry has unknown fields {sorted(unknown)}")
        missing = _LINK_KEYS - set(entry)
        if missing:
            raise PlatformError(f"link entry is missing fields {sorted(missing)}")
        link = LinkProfile(src=str(entry["src"]), dst=str(entry["dst"]),
                           bandwidth=float(entry["bandwidth_Bps"]),
                           latency=float(entry["latency_s"]))
        key = (link.src, link.dst)
        if key in links:
            raise PlatformError(f"duplicate link {key[0]}->{key[1]}")
        links[key] = link
    return Platform(devices=devices, links=links, host=str(doc["host"]))


def platform_to_document(platform: Platform) -> dict:
    devices = []
    for name in sorted(platform.devices):
        d = platform.devices[name]
        devices.append({
            "name": d.name,
            "precision": d.native_precision.value,
            "rates": {"conv": d.rate[LayerClass.CONV],
                      "fc": d.rate[LayerClass.FC],
                      "other": d.rate[LayerClass.OTHER]},
            "overhead_s": d.invocation_overhead,
            "preproc_s": d.preproc_cost,
            "power_w": {"active": d.power_active, "idle": d.power_idle},
        })
    links = []
    for key in sorted(platform.links):
        l = platform.links[key]
        links.append({"src": l.src, "dst": l.dst,
                      "bandwidth_Bps": l.bandwidth, "latency_s": l.latency})
    return {"devices": devices, "links": links, "host": platform.host}


def load_platform(path) -> Platform:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlatformError(f"{path}: not valid JSON ({exc})") from exc
    return platform_from_document(doc)
