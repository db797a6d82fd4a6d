"""Cross-module oracle properties behind the ``verify`` command.

Every check here pits one implementation against an independently written
second route: the instrumented executor against the analytical MAC count,
grouped convolution against a block-diagonal dense construction, the
executor against a scalar triple-loop kernel, the codec against identity.
The scalar kernel below is deliberately loop-by-loop and shares no code
with the executor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import compress, costs, huffman, refexec
from .graph import (ArchGraph, Conv, GraphBuilder, Pool, ReLU, Shuffle, TensorShape,
                    infer_shapes, lower_fc)
from .weights import WeightTensor


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def conv_scalar_reference(x: np.ndarray, spec: Conv, weight: np.ndarray,
                          bias: Optional[np.ndarray]) -> np.ndarray:
    """Second convolution implementation: plain nested loops, no vector ops."""
    c_in, h_in, w_in = x.shape
    cg = c_in // spec.groups
    fg = spec.filters // spec.groups
    h_out = (h_in + 2 * spec.pad - spec.kernel_h) // spec.stride + 1
    w_out = (w_in + 2 * spec.pad - spec.kernel_w) // spec.stride + 1
    out = np.zeros((spec.filters, h_out, w_out), dtype=np.float32)
    for f in range(spec.filters):
        group = f // fg
        for oy in range(h_out):
            for ox in range(w_out):
                acc = 0.0
                for c in range(cg):
                    ic = group * cg + c
                    for ky in range(spec.kernel_h):
                        iy = oy * spec.stride + ky - spec.pad
                        if iy < 0 or iy >= h_in:
                            continue
                        for kx in range(spec.kernel_w):
                            ix = ox * spec.stride + kx - spec.pad
                            if ix < 0 or ix >= w_in:
                                continue
                            acc += float(x[ic, iy, ix]) * float(weight[f, c, ky, kx])
                if bias is not None:
                    acc += float(bias[f])
                out[f, oy, ox] = np.float32(acc)
    return out


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def random_graph(rng: np.random.Generator, max_layers: int = 8) -> ArchGraph:
    """Small random valid graph: a chain of conv/pool/relu/shuffle layers
    with at most one fire-style diamond, sometimes finished by GAP or FC."""
    b = GraphBuilder(f"fuzz{rng.integers(1 << 30)}")
    h = int(rng.integers(6, 13))
    c = int(rng.choice([2, 3, 4, 6, 8]))
    x = b.input(TensorShape(h, h, c))
    shape = TensorShape(h, h, c)
    diamond_used = False
    for _ in range(int(rng.integers(3, max_layers + 1))):
        choices = ["conv", "relu"]
        if shape.height >= 2 and shape.width >= 2:
            choices.append("pool")
        if shape.channels > 1:
            choices.append("shuffle")
        if not diamond_used and shape.height >= 3 and shape.width >= 3:
            choices.append("diamond")
        op = rng.choice(choices)
        if op == "conv":
            groups = int(rng.choice(_divisors(shape.channels)))
            filters = groups * int(rng.integers(1, 5))
            if shape.height >= 3 and shape.width >= 3 and rng.random() < 0.5:
                kernel, pad = 3, int(rng.integers(0, 2))
            else:
                kernel, pad = 1, 0
            stride = int(rng.choice([1, 1, 2]))
            if (shape.height + 2 * pad - kernel) // stride + 1 < 1:
                stride = 1
            x = b.conv(x, kernel, filters, groups=groups, stride=stride, pad=pad,
                       bias=bool(rng.random() < 0.5))
        elif op == "relu":
            x = b.relu(x)
        elif op == "pool":
            if rng.random() < 0.5:
                x = b.maxpool(x, 2, 2)
            else:
                x = b.avgpool(x, 2, 2)
        elif op == "shuffle":
            g = int(rng.choice([d for d in _divisors(shape.channels) if d > 1]))
            x = b.shuffle(x, g)
        else:  # diamond
            squeeze = b.conv(x, 1, int(rng.integers(1, 4)))
            left = b.conv(squeeze, 1, int(rng.integers(1, 5)))
            right = b.conv(squeeze, 3, int(rng.integers(1, 5)), pad=1)
            x = b.concat([left, right])
            diamond_used = True
        shape = infer_shapes(b.build())[x]
    if rng.random() < 0.3:
        x = b.gap(x)
    if rng.random() < 0.3:
        x = b.fc(x, int(rng.integers(2, 6)))
    return b.build()


def check_mac_counts(seed: int = 0, trials: int = 20) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for i in range(trials):
        graph = random_graph(rng)
        analytic = costs.model_macs(graph)
        instrumented = refexec.count_macs_instrumented(graph)
        if analytic != instrumented:
            return PropertyResult("mac_counts", False,
                                  f"graph {i} ({graph.name}): analytic {analytic} != "
                                  f"instrumented {instrumented}")
    return PropertyResult("mac_counts", True,
                          f"analytic == instrumented on {trials} random graphs")


def check_run_shapes(seed: int = 1, trials: int = 12) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for i in range(trials):
        graph = random_graph(rng)
        shapes = infer_shapes(graph)
        weights = refexec.random_weights(graph, rng)
        in_shape = shapes[graph.nodes[0][0]]
        x = refexec.Tensor3D(in_shape, rng.standard_normal(in_shape.elements)
                             .astype(np.float32))
        acts = refexec.run_all(graph, weights, x)
        for nid, act in acts.items():
            if act.shape != shapes[nid]:
                return PropertyResult("run_shapes", False,
                                      f"graph {i}, node {nid}: executed {act.shape}, "
                                      f"inferred {shapes[nid]}")
    return PropertyResult("run_shapes", True,
                          f"executed shapes match inference on {trials} random graphs")


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))) / denom


def check_grouped_vs_blockdiag(seed: int = 2, tol: float = 1e-6) -> PropertyResult:
    """Grouped conv must equal a dense conv whose weight tensor is zero
    outside the per-group channel blocks."""
    rng = np.random.default_rng(seed)
    c = 8
    x = rng.standard_normal((c, 6, 6)).astype(np.float32)
    for g in (1, 2, 4, c):
        spec = Conv(3, 3, c, groups=g, stride=1, pad=1, bias=False)
        w = rng.standard_normal((c, c // g, 3, 3)).astype(np.float32)
        grouped = refexec.conv_forward(x, spec, w, None)
        dense_w = np.zeros((c, c, 3, 3), dtype=np.float32)
        fg = c // g
        for f in range(c):
            block = f // fg
            dense_w[f, block * (c // g):(block + 1) * (c // g)] = w[f]
        dense = refexec.conv_forward(x, Conv(3, 3, c, groups=1, stride=1, pad=1, bias=False),
                                     dense_w, None)
        err = _relative_error(grouped, dense)
        if err > tol:
            return PropertyResult("grouped_vs_blockdiag", False,
                                  f"g={g}: relative error {err:.2e} > {tol}")
    return PropertyResult("grouped_vs_blockdiag", True,
                          f"grouped == block-diagonal dense for g in (1, 2, 4, {c})")


def check_shuffle(seed: int = 3, trials: int = 20) -> PropertyResult:
    rng = np.random.default_rng(seed)
    fixed = refexec.shuffle_sources(6, 2)
    if fixed != [0, 3, 1, 4, 2, 5]:
        return PropertyResult("shuffle", False, f"C=6, g=2 source order {fixed}")
    for _ in range(trials):
        g = int(rng.integers(1, 7))
        c = g * int(rng.integers(1, 7))
        sources = refexec.shuffle_sources(c, g)
        if sorted(sources) != list(range(c)):
            return PropertyResult("shuffle", False, f"C={c}, g={g}: not a bijection")
        x = rng.standard_normal((c, 2, 2)).astype(np.float32)
        back = refexec.shuffle_forward(refexec.shuffle_forward(x, g), c // g)
        if not np.array_equal(back, x):
            return PropertyResult("shuffle", False,
                                  f"C={c}, g={g}: shuffle({c // g}) did not invert shuffle({g})")
    return PropertyResult("shuffle", True,
                          f"bijection and inverse hold on {trials} random (g, C)")


def check_fc_lowering(seed: int = 4, tol: float = 1e-6) -> PropertyResult:
    rng = np.random.default_rng(seed)
    b = GraphBuilder("fc_lowering")
    x = b.input(TensorShape(5, 5, 3))
    x = b.conv(x, 3, 4, pad=1, name="conv")
    x = b.relu(x)
    x = b.fc(x, 6, name="fc_mid")
    x = b.relu(x)
    b.fc(x, 3, name="fc_out")
    graph = b.build()
    weights = refexec.random_weights(graph, rng)
    shape = infer_shapes(graph)[graph.nodes[0][0]]
    inp = refexec.Tensor3D(shape, rng.standard_normal(shape.elements).astype(np.float32))
    lowered = lower_fc(graph)
    out_a = refexec.run(graph, weights, inp).values
    out_b = refexec.run(lowered, weights, inp).values
    err = _relative_error(out_a, out_b)
    if err > tol:
        return PropertyResult("fc_lowering", False, f"relative error {err:.2e} > {tol}")
    if costs.model_params(graph) != costs.model_params(lowered):
        return PropertyResult("fc_lowering", False, "parameter count changed")
    return PropertyResult("fc_lowering", True,
                          "lowered graph matches on outputs and parameter count")


def check_scalar_oracle(seed: int = 5, tol: float = 1e-6) -> PropertyResult:
    """Executor vs the independent scalar kernel on one multi-layer graph."""
    rng = np.random.default_rng(seed)
    b = GraphBuilder("oracle8")
    x = b.input(TensorShape(9, 9, 4))
    x = b.conv(x, 3, 6, pad=1, name="c1")
    x = b.relu(x)
    x = b.conv(x, 3, 6, groups=2, stride=2, pad=1, name="c2")
    x = b.shuffle(x, 2)
    x = b.conv(x, 1, 8, name="c3")
    x = b.maxpool(x, 2, 2)
    x = b.conv(x, 1, 4, groups=4, name="c4")
    graph = b.build()
    weights = {t.name: t for t in refexec.random_weights(graph, rng)}
    shape = infer_shapes(graph)[graph.nodes[0][0]]
    inp = rng.standard_normal((shape.channels, shape.height, shape.width)).astype(np.float32)

    # replay with the scalar kernels only
    act = inp
    for nid, spec in graph.nodes[1:]:
        if isinstance(spec, Conv):
            w = weights[f"{nid}.weight"].values.reshape(
                (spec.filters, act.shape[0] // spec.groups, spec.kernel_h, spec.kernel_w))
            bias = weights[f"{nid}.bias"].values if spec.bias else None
            act = conv_scalar_reference(act, spec, w, bias)
        elif isinstance(spec, ReLU):
            act = np.where(act > 0, act, np.float32(0.0))
        elif isinstance(spec, Shuffle):
            act = act[refexec.shuffle_sources(act.shape[0], spec.groups)]
        elif isinstance(spec, Pool):
            out = np.zeros((act.shape[0], act.shape[1] // 2, act.shape[2] // 2),
                           dtype=np.float32)
            for cc in range(act.shape[0]):
                for oy in range(out.shape[1]):
                    for ox in range(out.shape[2]):
                        out[cc, oy, ox] = act[cc, 2 * oy:2 * oy + 2, 2 * ox:2 * ox + 2].max()
            act = out
    got = refexec.run(graph, list(weights.values()),
                      refexec.Tensor3D(shape, inp.reshape(-1).copy())).values
    err = _relative_error(got, act.reshape(-1))
    if err > tol:
        return PropertyResult("scalar_oracle", False, f"relative error {err:.2e} > {tol}")
    return PropertyResult("scalar_oracle", True, "executor matches the scalar kernels")


def check_codec_roundtrip(seed: int = 6, trials: int = 25) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for i in range(trials):
        n = int(rng.integers(1, 400))
        values = (rng.standard_normal(n) * rng.uniform(0.1, 3.0)).astype(np.float32)
        t = WeightTensor(f"t{i}", (n,), values)
        sparsity = float(rng.uniform(0.0, 0.95))
        bits = int(rng.integers(1, 7))
        pruned, _ = compress.prune_magnitude(t, sparsity)
        qt = compress.kmeans_quantize(pruned, bits)
        model = compress.encode([qt], rel_index_bits=int(rng.integers(1, 9)))
        restored = compress.read_sdnc(compress.write_sdnc(model))
        decoded = compress.decode_model(restored)[0]
        if not np.array_equal(decoded.values, qt.dequantize().values):
            return PropertyResult("codec_roundtrip", False, f"tensor {i} not bit-exact")
    return PropertyResult("codec_roundtrip", True,
                          f"bit-exact round trip on {trials} random tensors")


def check_huffman_bound(seed: int = 7, trials: int = 30) -> PropertyResult:
    """Huffman payload never exceeds the fixed-width payload plus the
    length-table overhead."""
    rng = np.random.default_rng(seed)
    for i in range(trials):
        alphabet = int(rng.integers(1, 65))
        n = int(rng.integers(1, 2000))
        skew = rng.uniform(0.5, 4.0)
        probs = rng.random(alphabet) ** skew
        probs /= probs.sum()
        symbols = rng.choice(alphabet, size=n, p=probs).tolist()
        lengths = huffman.code_lengths(symbols)
        bits = huffman.encoded_bits(symbols, lengths)
        fixed_bits = n * max(1, (alphabet - 1).bit_length())
        table_bits = alphabet * 8
        if bits > fixed_bits + table_bits:
            return PropertyResult("huffman_bound", False,
                                  f"trial {i}: {bits} > {fixed_bits} + {table_bits}")
    return PropertyResult("huffman_bound", True,
                          f"coded length within fixed-width bound on {trials} streams")


ALL_CHECKS: tuple[Callable[[], PropertyResult], ...] = (
    check_mac_counts,
    check_run_shapes,
    check_grouped_vs_blockdiag,
    check_shuffle,
    check_fc_lowering,
    check_scalar_oracle,
    check_codec_roundtrip,
    check_huffman_bound,
)


def run_all_checks() -> list[PropertyResult]:
    return [check() for check in ALL_CHECKS]
