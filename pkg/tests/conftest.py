"""Shared fixtures: bundled data, one calibration run, small hand-built inputs."""

import json

import pytest

from hetsim import (calibrate_accuracy, fit_profiles, load_graph,
                    load_measurements, load_skeleton)
from hetsim.data import data_path
from hetsim.devmodel import (DeviceProfile, LayerClass, LinkProfile, Platform,
                             Precision)
from hetsim.netgraph import Graph, Layer, LayerKind, TensorShape


@pytest.fixture(scope="session")
def pose_graph():
    return load_graph(data_path("ursonet_proxy.json"))


@pytest.fixture(scope="session")
def table1():
    baseline, rows = load_measurements(data_path("table1.json"))
    return baseline, rows


@pytest.fixture(scope="session")
def skeleton():
    return load_skeleton(data_path("platform_skeleton.json"))


@pytest.fixture(scope="session")
def fitted(pose_graph, table1, skeleton):
    """One calibration run shared by every latency test."""
    _, rows = table1
    return fit_profiles(rows, pose_graph, skeleton)


@pytest.fixture(scope="session")
def accuracy_fit(table1):
    baseline, rows = table1
    pairs = [(row.assignment, row.accuracy) for row in rows
             if row.accuracy is not None]
    model, residuals = calibrate_accuracy(pairs, baseline)
    return model, residuals


def make_device(name, precision=Precision.INT8, conv=1e9, fc=None, other=None,
                overhead=0.0, preproc=0.0, active=1.0, idle=0.1):
    return DeviceProfile(
        name=name, native_precision=precision,
        rate={LayerClass.CONV: conv,
              LayerClass.FC: fc if fc is not None else conv / 2,
              LayerClass.OTHER: other if other is not None else conv / 10},
        invocation_overhead=overhead, preproc_cost=preproc,
        power_active=active, power_idle=idle)


def star_platform(devices, host, bandwidth=1e9, latency=1e-4):
    """Host-centred star topology: every accelerator links to and from host."""
    links = {}
    for dev in devices:
        if dev.name == host:
            continue
        links[(host, dev.name)] = LinkProfile(host, dev.name, bandwidth, latency)
        links[(dev.name, host)] = LinkProfile(dev.name, host, bandwidth, latency)
    return Platform(devices={d.name: d for d in devices}, links=links, host=host)


@pytest.fixture
def two_device_platform():
    cpu = make_device("cpu", Precision.FP32, conv=1e8, overhead=0.001,
                      active=5.0, idle=1.0)
    npu = make_device("npu", Precision.INT8, conv=1e10, overhead=0.002,
                      preproc=0.003, active=3.0, idle=0.5)
    return star_platform([cpu, npu], host="cpu")


def chain_graph(name="chain", groups=("PRE", "BACKBONE", "BACKBONE", "HEAD")):
    """Linear conv stack with one layer per entry of `groups`."""
    layers = []
    prev = None
    shape = TensorShape((16, 16, 8))
    for i, group in enumerate(groups):
        lid = f"l{i}"
        layers.append(Layer(
            id=lid, kind=LayerKind.CONV,
            inputs=() if prev is None else (prev,),
            output_shape=shape, group=group,
            kernel=(3, 3), stride=(1, 1), in_channels=8, out_channels=8))
        prev = lid
    return Graph(name=name, input_shape=shape, layers=tuple(layers))


@pytest.fixture
def small_chain():
    return chain_graph()


def write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


# --- randomized small instances for search cross-checks ---------------------

def random_instance(rng):
    """(graph, platform, accuracy model, constraints) for dual-route search tests.

    Graphs stay small (<= 6 fused units) and platforms small (<= 4 devices)
    so exhaustive enumeration stays cheap.
    """
    from hetsim.accmodel import AccuracyMetrics, AccuracyModel
    from hetsim.partitioner import Constraints

    names = ["alpha", "beta", "gamma", "delta"][:rng.randint(2, 4)]
    host = rng.choice(names)
    devices = []
    for name in names:
        conv = 10.0 ** rng.uniform(8.0, 11.0)
        devices.append(make_device(
            name,
            precision=rng.choice(list(Precision)),
            conv=conv, fc=conv / rng.uniform(1.0, 4.0),
            other=conv / rng.uniform(5.0, 50.0),
            overhead=rng.uniform(0.0, 3e-3),
            preproc=rng.uniform(0.0, 2e-3),
            active=rng.uniform(1.0, 6.0), idle=rng.uniform(0.0, 1.0)))
    platform = star_platform(devices, host,
                             bandwidth=10.0 ** rng.uniform(8.0, 10.0),
                             latency=rng.uniform(0.0, 5e-4))
    if len(names) >= 3 and rng.random() < 0.3:
        a, b = rng.sample([n for n in names if n != host], 2)
        platform.links[(a, b)] = LinkProfile(a, b,
                                             10.0 ** rng.uniform(8.0, 10.0),
                                             rng.uniform(0.0, 5e-4))

    n_units = rng.randint(2, 6)
    shape = TensorShape((8, 8, 4))
    layers = [Layer(id="u0", kind=LayerKind.CONV, inputs=(),
                    output_shape=shape, group="PRE" if rng.random() < 0.4
                    else "BACKBONE",
                    kernel=(3, 3), stride=(1, 1), in_channels=4, out_channels=4)]
    prev = "u0"
    for i in range(1, n_units):
        group = ("BACKBONE" if i < max(1, n_units - rng.randint(1, 2))
                 else "HEAD")
        roll = rng.random()
        if roll < 0.2:
            left = Layer(id=f"u{i}l", kind=LayerKind.CONV, inputs=(prev,),
                         output_shape=shape, group=group, kernel=(1, 1),
                         stride=(1, 1), in_channels=4, out_channels=4)
            right = Layer(id=f"u{i}r", kind=LayerKind.CONV, inputs=(prev,),
                          output_shape=shape, group=group, kernel=(3, 3),
                          stride=(1, 1), in_channels=4, out_channels=4)
            join = Layer(id=f"u{i}z", kind=LayerKind.ADD,
                         inputs=(left.id, right.id), output_shape=shape,
                         group=group)
            layers.extend([left, right, join])
            prev = join.id
        elif roll < 0.35:
            layer = Layer(id=f"u{i}", kind=LayerKind.POOL, inputs=(prev,),
                          output_shape=shape, group=group)
            layers.append(layer)
            prev = layer.id
        elif roll < 0.45 and i == n_units - 1:
            layer = Layer(id=f"u{i}", kind=LayerKind.FC, inputs=(prev,),
                          output_shape=TensorShape((16,)), group="HEAD",
                          in_features=shape.num_elements, out_features=16)
            layers.append(layer)
            prev = layer.id
        else:
            layer = Layer(id=f"u{i}", kind=LayerKind.CONV, inputs=(prev,),
                          output_shape=shape, group=group, kernel=(3, 3),
                          stride=(1, 1), in_channels=4, out_channels=4)
            layers.append(layer)
            prev = layer.id
    graph = Graph(name=f"rand{rng.randrange(10**6)}", input_shape=shape,
                  layers=tuple(layers))

    baseline = AccuracyMetrics(0.5, 5.0)
    deltas = {}
    for name in names:
        for group in ("BACKBONE", "HEAD"):
            deltas[(name, group)] = AccuracyMetrics(rng.uniform(0.0, 0.3),
                                                    rng.uniform(0.0, 3.0))
    model = AccuracyModel(baseline=baseline,
                          model_offset=AccuracyMetrics(0.0, 0.0),
                          deltas=deltas)

    roll = rng.random()
    max_loce = max_orie = max_energy = None
    if roll < 0.30:
        max_loce = baseline.loce_m + rng.uniform(0.05, 0.45)
        max_orie = baseline.orie_deg + rng.uniform(0.5, 4.5)
    elif roll < 0.45:
        max_energy = 10.0 ** rng.uniform(-3.5, -1.0)
    elif roll < 0.60:
        max_loce = baseline.loce_m + rng.uniform(0.05, 0.45)
        max_energy = 10.0 ** rng.uniform(-3.5, -1.0)
    constraints = Constraints(max_loce_m=max_loce, max_orie_deg=max_orie,
                              max_energy_j=max_energy,
                              group_homogeneous=False)
    return graph, platform, model, constraints
