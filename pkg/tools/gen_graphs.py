#!/usr/bin/env python3
"""Generate the bundled network description files under src/hetsim/data/.

Networks are transcribed in deployment form: activations and residual
additions are fused into the producing convolution (a fused residual is
the consuming convolution's second input), while pooling, concatenation,
fully connected and resampling layers stay explicit.

Run from the repository root:  python tools/gen_graphs.py
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                os.pardir, "src"))

from hetsim.devmodel import layer_class  # noqa: E402
from hetsim.netgraph import fusion_units, graph_from_document, op_count  # noqa: E402

OUT_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                       os.pardir, "src", "hetsim", "data")


def same(extent: int, stride: int) -> int:
    return -(-extent // stride)


def valid(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


class Builder:
    def __init__(self, name, input_hw, in_ch=3):
        self.name = name
        h, w = input_hw
        self.input_shape = [h, w, in_ch]
        self.layers = []
        self.ids = set()

    def _add(self, entry):
        if entry["id"] in self.ids:
            raise ValueError(f"duplicate id {entry['id']}")
        self.ids.add(entry["id"])
        self.layers.append(entry)
        return entry["id"]

    def conv(self, lid, src, in_ch, out_ch, hw, kernel, stride=(1, 1),
             group="BACKBONE", groups=1, residual=None):
        h, w = hw
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        if isinstance(stride, int):
            stride = (stride, stride)
        inputs = [src] if residual is None else [src, residual]
        if src is None:
            inputs = []
        return self._add({
            "id": lid, "kind": "conv", "inputs": inputs,
            "output_shape": [h, w, out_ch], "group": group,
            "kernel": list(kernel), "stride": list(stride),
            "in_channels": in_ch, "out_channels": out_ch, "groups": groups,
        })

    def pool(self, lid, src, shape, group="BACKBONE"):
        return self._add({"id": lid, "kind": "pool", "inputs": [src],
                          "output_shape": list(shape), "group": group})

    def fc(self, lid, src, n_in, n_out, group="HEAD"):
        return self._add({"id": lid, "kind": "fc", "inputs": [src],
                          "output_shape": [n_out], "group": group,
                          "in_features": n_in, "out_features": n_out})

    def concat(self, lid, srcs, shape, group="BACKBONE"):
        return self._add({"id": lid, "kind": "concat", "inputs": list(srcs),
                          "output_shape": list(shape), "group": group})

    def resample(self, lid, src, shape, group="PRE"):
        inputs = [] if src is None else [src]
        return self._add({"id": lid, "kind": "resample", "inputs": inputs,
                          "output_shape": list(shape), "group": group})

    def document(self):
        return {"name": self.name, "input_shape": self.input_shape,
                "layers": self.layers}


def mobilenet_v2():
    b = Builder("mobilenet_v2", (224, 224))
    prev = b.conv("stem", None, 3, 32, (112, 112), 3, 2)
    settings = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    in_ch, h, idx = 32, 112, 0
    for t, c, n, s in settings:
        for i in range(n):
            stride = s if i == 0 else 1
            hidden = in_ch * t
            out_h = same(h, stride)
            block_in, src, name = prev, prev, f"blk{idx:02d}"
            if t != 1:
                src = b.conv(f"{name}_expand", src, in_ch, hidden, (h, h), 1)
            src = b.conv(f"{name}_dw", src, hidden, hidden, (out_h, out_h), 3,
                         stride, groups=hidden)
            residual = block_in if stride == 1 and in_ch == c else None
            prev = b.conv(f"{name}_project", src, hidden, c, (out_h, out_h), 1,
                          residual=residual)
            in_ch, h = c, out_h
            idx += 1
    prev = b.conv("head_conv", prev, 320, 1280, (7, 7), 1)
    prev = b.pool("gap", prev, (1, 1, 1280))
    b.fc("classifier", prev, 1280, 1000)
    return b.document()


def _bottleneck(b, name, prev, in_ch, mid, out_ch, stride, hw):
    h, w = hw
    out_hw = (same(h, stride), same(w, stride))
    identity = prev
    if stride != 1 or in_ch != out_ch:
        identity = b.conv(f"{name}_proj", prev, in_ch, out_ch, out_hw, 1, stride)
    x = b.conv(f"{name}_a", prev, in_ch, mid, hw, 1)
    x = b.conv(f"{name}_b", x, mid, mid, out_hw, 3, stride)
    x = b.conv(f"{name}_c", x, mid, out_ch, out_hw, 1, residual=identity)
    return x, out_hw


_RESNET50_STAGES = [(3, 64, 256, 1), (4, 128, 512, 2), (6, 256, 1024, 2),
                    (3, 512, 2048, 2)]


def _resnet50_trunk(b, prev, hw):
    in_ch = 64
    for si, (n, mid, out_ch, first_stride) in enumerate(_RESNET50_STAGES, start=1):
        for bi in range(n):
            stride = first_stride if bi == 0 else 1
            prev, hw = _bottleneck(b, f"s{si}b{bi}", prev, in_ch, mid, out_ch,
                                   stride, hw)
            in_ch = out_ch
    return prev


def resnet50():
    b = Builder("resnet50", (224, 224))
    prev = b.conv("stem", None, 3, 64, (112, 112), 7, 2)
    prev = b.pool("stem_pool", prev, (56, 56, 64))
    prev = _resnet50_trunk(b, prev, (56, 56))
    prev = b.pool("gap", prev, (1, 1, 2048))
    b.fc("classifier", prev, 2048, 1000)
    return b.document()


def inception_v4():
    b = Builder("inception_v4", (299, 299))
    # stem
    x = b.conv("stem1", None, 3, 32, (149, 149), 3, 2)
    x = b.conv("stem2", x, 32, 32, (147, 147), 3, 1)
    x = b.conv("stem3", x, 32, 64, (147, 147), 3, 1)
    p = b.pool("m3a_pool", x, (73, 73, 64))
    c = b.conv("m3a_conv", x, 64, 96, (73, 73), 3, 2)
    x = b.concat("m3a", [p, c], (73, 73, 160))
    a = b.conv("m4a_a1", x, 160, 64, (73, 73), 1)
    a = b.conv("m4a_a2", a, 64, 96, (71, 71), 3)
    d = b.conv("m4a_b1", x, 160, 64, (73, 73), 1)
    d = b.conv("m4a_b2", d, 64, 64, (73, 73), (7, 1))
    d = b.conv("m4a_b3", d, 64, 64, (73, 73), (1, 7))
    d = b.conv("m4a_b4", d, 64, 96, (71, 71), 3)
    x = b.concat("m4a", [a, d], (71, 71, 192))
    c = b.conv("m5a_conv", x, 192, 192, (35, 35), 3, 2)
    p = b.pool("m5a_pool", x, (35, 35, 192))
    x = b.concat("m5a", [c, p], (35, 35, 384))

    for i in range(4):  # inception-A
        n = f"a{i}"
        p = b.pool(f"{n}_b1p", x, (35, 35, 384))
        br1 = b.conv(f"{n}_b1c", p, 384, 96, (35, 35), 1)
        br2 = b.conv(f"{n}_b2", x, 384, 96, (35, 35), 1)
        br3 = b.conv(f"{n}_b3a", x, 384, 64, (35, 35), 1)
        br3 = b.conv(f"{n}_b3b", br3, 64, 96, (35, 35), 3)
        br4 = b.conv(f"{n}_b4a", x, 384, 64, (35, 35), 1)
        br4 = b.conv(f"{n}_b4b", br4, 64, 96, (35, 35), 3)
        br4 = b.conv(f"{n}_b4c", br4, 96, 96, (35, 35), 3)
        x = b.concat(f"{n}_out", [br1, br2, br3, br4], (35, 35, 384))

    p = b.pool("ra_pool", x, (17, 17, 384))  # reduction-A
    br2 = b.conv("ra_b2", x, 384, 384, (17, 17), 3, 2)
    br3 = b.conv("ra_b3a", x, 384, 192, (35, 35), 1)
    br3 = b.conv("ra_b3b", br3, 192, 224, (35, 35), 3)
    br3 = b.conv("ra_b3c", br3, 224, 256, (17, 17), 3, 2)
    x = b.concat("ra_out", [p, br2, br3], (17, 17, 1024))

    for i in range(7):  # inception-B
        n = f"b{i}"
        p = b.pool(f"{n}_b1p", x, (17, 17, 1024))
        br1 = b.conv(f"{n}_b1c", p, 1024, 128, (17, 17), 1)
        br2 = b.conv(f"{n}_b2", x, 1024, 384, (17, 17), 1)
        br3 = b.conv(f"{n}_b3a", x, 1024, 192, (17, 17), 1)
        br3 = b.conv(f"{n}_b3b", br3, 192, 224, (17, 17), (1, 7))
        br3 = b.conv(f"{n}_b3c", br3, 224, 256, (17, 17), (7, 1))
        br4 = b.conv(f"{n}_b4a", x, 1024, 192, (17, 17), 1)
        br4 = b.conv(f"{n}_b4b", br4, 192, 192, (17, 17), (1, 7))
        br4 = b.conv(f"{n}_b4c", br4, 192, 224, (17, 17), (7, 1))
        br4 = b.conv(f"{n}_b4d", br4, 224, 224, (17, 17), (1, 7))
        br4 = b.conv(f"{n}_b4e", br4, 224, 256, (17, 17), (7, 1))
        x = b.concat(f"{n}_out", [br1, br2, br3, br4], (17, 17, 1024))

    p = b.pool("rb_pool", x, (8, 8, 1024))  # reduction-B
    br2 = b.conv("rb_b2a", x, 1024, 192, (17, 17), 1)
    br2 = b.conv("rb_b2b", br2, 192, 192, (8, 8), 3, 2)
    br3 = b.conv("rb_b3a", x, 1024, 256, (17, 17), 1)
    br3 = b.conv("rb_b3b", br3, 256, 256, (17, 17), (1, 7))
    br3 = b.conv("rb_b3c", br3, 256, 320, (17, 17), (7, 1))
    br3 = b.conv("rb_b3d", br3, 320, 320, (8, 8), 3, 2)
    x = b.concat("rb_out", [p, br2, br3], (8, 8, 1536))

    for i in range(3):  # inception-C
        n = f"c{i}"
        p = b.pool(f"{n}_b1p", x, (8, 8, 1536))
        br1 = b.conv(f"{n}_b1c", p, 1536, 256, (8, 8), 1)
        br2 = b.conv(f"{n}_b2", x, 1536, 256, (8, 8), 1)
        br3 = b.conv(f"{n}_b3a", x, 1536, 384, (8, 8), 1)
        br3l = b.conv(f"{n}_b3l", br3, 384, 256, (8, 8), (1, 3))
        br3r = b.conv(f"{n}_b3r", br3, 384, 256, (8, 8), (3, 1))
        br4 = b.conv(f"{n}_b4a", x, 1536, 384, (8, 8), 1)
        br4 = b.conv(f"{n}_b4b", br4, 384, 448, (8, 8), (1, 3))
        br4 = b.conv(f"{n}_b4c", br4, 448, 512, (8, 8), (3, 1))
        br4l = b.conv(f"{n}_b4l", br4, 512, 256, (8, 8), (1, 3))
        br4r = b.conv(f"{n}_b4r", br4, 512, 256, (8, 8), (3, 1))
        x = b.concat(f"{n}_out", [br1, br2, br3l, br3r, br4l, br4r],
                     (8, 8, 1536))

    x = b.pool("gap", x, (1, 1, 1536))
    b.fc("classifier", x, 1536, 1000)
    return b.document()


def ursonet_proxy():
    b = Builder("ursonet_proxy", (960, 1280))
    x = b.resample("pre_resample", None, (480, 640, 3))
    x = b.conv("stem", x, 3, 64, (240, 320), 7, 2)
    x = b.pool("stem_pool", x, (120, 160, 64))
    x = _resnet50_trunk(b, x, (120, 160))
    x = b.pool("gap", x, (1, 1, 2048))
    loc = b.fc("loc_fc1", x, 2048, 512)
    b.fc("loc_fc2", loc, 512, 3)
    ori = b.fc("ori_fc1", x, 2048, 512)
    b.fc("ori_fc2", ori, 512, 4)
    return b.document()


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    for build in (mobilenet_v2, resnet50, inception_v4, ursonet_proxy):
        doc = build()
        graph = graph_from_document(doc)  # validate before writing
        units = fusion_units(graph)
        ops = {"conv": 0, "fc": 0, "other": 0}
        for layer in graph.layers:
            if layer.group != "PRE":
                ops[layer_class(layer.kind).value] += op_count(layer)
        path = os.path.join(OUT_DIR, f"{graph.name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        print(f"{graph.name}: {len(graph.layers)} layers, {len(units)} units, "
              f"conv {ops['conv'] / 1e9:.3f} Gop, fc {ops['fc'] / 1e9:.4f} Gop, "
              f"other {ops['other'] / 1e9:.6f} Gop -> {os.path.relpath(path)}")


if __name__ == "__main__":
    main()
