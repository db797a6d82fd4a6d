"""Analytical cost metrics for architecture graphs.

Counts parameters, storage, multiply-accumulates, peak live activation
bytes, and a first-order energy and throughput estimate for one inference
at batch size 1 (the natural batch for embedded vision).

Conventions, stated once:
  * one MAC = one multiply + one add; bias additions are not MACs
  * pooling, ReLU, shuffle, and concat cost zero parameters and zero MACs
  * the energy model is all-or-nothing: a weight or activation working set
    either fits on-chip (free) or spills entirely, with each spilled word
    costing ``offchip_ratio`` MAC-energies; it is a ranking proxy, not a
    hardware simulator
  * the frames-per-second figure is a pure compute-throughput proxy
    (macs_per_second / total_macs); memory pressure shows up in the energy
    term instead
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

from .graph import (ArchGraph, Concat, Conv, FullyConnected, GlobalAvgPool, Input, LayerSpec,
                    Pool, ReLU, Shuffle, TensorShape, infer_shapes, topological_order)


@dataclass(frozen=True)
class PlatformSpec:
    """Target platform constants for the energy/FPS proxies."""

    on_chip_bytes: int
    e_mac: float                 # joules per multiply-accumulate
    macs_per_second: float
    offchip_ratio: float = 100.0  # off-chip access energy in MAC-energies
    word_bytes: int = 4

    def __post_init__(self):
        for name in ("on_chip_bytes", "e_mac", "macs_per_second", "offchip_ratio", "word_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"PlatformSpec.{name} must be strictly positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PlatformSpec":
        known = {"on_chip_bytes", "e_mac", "macs_per_second", "offchip_ratio", "word_bytes"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"platform config: unknown key(s) {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PlatformSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


#: Placeholder embedded target: 8 MiB SRAM, 1 pJ/MAC, 10 GMAC/s, fp32 words.
DEFAULT_PLATFORM = PlatformSpec(on_chip_bytes=8 * 1024 * 1024, e_mac=1e-12,
                                macs_per_second=1e10)


@dataclass(frozen=True)
class MetricsReport:
    """The metric vector for one architecture on one platform. Accuracy and
    training latency are recorded externally, never computed here."""

    name: str
    total_params: int
    storage_bytes: int
    total_macs: int
    peak_activation_bytes: int
    energy_per_frame: float
    fps_proxy: float
    ota_bytes: int
    recorded_top5_error: Optional[float] = None
    recorded_training_latency: Optional[float] = None

    def to_dict(self) -> dict:
        # fixed key order for stable machine output
        return {
            "name": self.name,
            "total_params": self.total_params,
            "storage_bytes": self.storage_bytes,
            "total_macs": self.total_macs,
            "peak_activation_bytes": self.peak_activation_bytes,
            "energy_per_frame": self.energy_per_frame,
            "fps_proxy": self.fps_proxy if math.isfinite(self.fps_proxy) else None,
            "ota_bytes": self.ota_bytes,
            "recorded_top5_error": self.recorded_top5_error,
            "recorded_training_latency": self.recorded_training_latency,
        }


def layer_params(spec: LayerSpec, in_shape: TensorShape) -> int:
    """Learnable parameter count of one layer bound to its input shape."""
    if isinstance(spec, Conv):
        c_in = in_shape.channels
        if c_in % spec.groups != 0:
            raise ValueError(f"groups must divide input channels (g={spec.groups}, C_in={c_in})")
        weights = spec.kernel_h * spec.kernel_w * (c_in // spec.groups) * spec.filters
        return weights + (spec.filters if spec.bias else 0)
    if isinstance(spec, FullyConnected):
        # a fully-connected layer is a convolution spanning the full input extent
        weights = in_shape.height * in_shape.width * in_shape.channels * spec.filters
        return weights + (spec.filters if spec.bias else 0)
    if isinstance(spec, (Input, Pool, GlobalAvgPool, ReLU, Shuffle, Concat)):
        return 0
    raise ValueError(f"unknown layer type {type(spec).__name__}")


def layer_macs(spec: LayerSpec, in_shape: TensorShape) -> int:
    """Multiply-accumulate count of one layer bound to its input shape."""
    if isinstance(spec, Conv):
        c_in = in_shape.channels
        if c_in % spec.groups != 0:
            raise ValueError(f"groups must divide input channels (g={spec.groups}, C_in={c_in})")
        h_out = (in_shape.height + 2 * spec.pad - spec.kernel_h) // spec.stride + 1
        w_out = (in_shape.width + 2 * spec.pad - spec.kernel_w) // spec.stride + 1
        if h_out < 1 or w_out < 1:
            raise ValueError(f"convolution output {h_out}x{w_out} is not positive")
        return spec.kernel_h * spec.kernel_w * (c_in // spec.groups) * spec.filters * h_out * w_out
    if isinstance(spec, FullyConnected):
        return in_shape.height * in_shape.width * in_shape.channels * spec.filters
    if isinstance(spec, (Input, Pool, GlobalAvgPool, ReLU, Shuffle, Concat)):
        return 0
    raise ValueError(f"unknown layer type {type(spec).__name__}")


def _bound_shapes(graph: ArchGraph) -> list[tuple[str, LayerSpec, Optional[TensorShape]]]:
    shapes = infer_shapes(graph)
    out = []
    for nid, spec in graph.nodes:
        preds = graph.preds.get(nid, ())
        in_shape = shapes[preds[0]] if preds else None
        out.append((nid, spec, in_shape))
    return out


def model_params(graph: ArchGraph) -> int:
    return sum(layer_params(spec, s) for _, spec, s in _bound_shapes(graph)
               if not isinstance(spec, Input))


def model_macs(graph: ArchGraph) -> int:
    return sum(layer_macs(spec, s) for _, spec, s in _bound_shapes(graph)
               if not isinstance(spec, Input))


def per_layer_params(graph: ArchGraph) -> dict[str, int]:
    return {nid: (0 if isinstance(spec, Input) else layer_params(spec, s))
            for nid, spec, s in _bound_shapes(graph)}


def per_layer_macs(graph: ArchGraph) -> dict[str, int]:
    return {nid: (0 if isinstance(spec, Input) else layer_macs(spec, s))
            for nid, spec, s in _bound_shapes(graph)}


def storage_bytes(graph: ArchGraph, bits_per_param: int = 32) -> int:
    if bits_per_param < 1:
        raise ValueError("bits_per_param must be positive")
    return math.ceil(model_params(graph) * bits_per_param / 8)


def peak_activation_bytes(graph: ArchGraph, word_bytes: int = 4) -> int:
    """Maximum bytes of simultaneously live activations over a topological
    execution. A node's output stays live until its last consumer has run;
    while a node runs, its inputs and its own output are live together."""
    shapes = infer_shapes(graph)
    order = topological_order(graph)
    position = {nid: i for i, nid in enumerate(order)}
    succ = graph.successors()
    last_use = {nid: max((position[s] for s in succ[nid]), default=position[nid])
                for nid in order}
    peak = 0
    for i, nid in enumerate(order):
        live = sum(shapes[other].elements for other in order[:i + 1]
                   if last_use[other] >= i)
        peak = max(peak, live * word_bytes)
    return peak


def activation_traffic_words(graph: ArchGraph) -> int:
    """Total input plus output activation words across all layers: every
    tensor is counted once when written and once per consumer read."""
    shapes = infer_shapes(graph)
    total = 0
    for nid, _ in graph.nodes:
        total += shapes[nid].elements
        total += sum(shapes[p].elements for p in graph.preds.get(nid, ()))
    return total


def energy_from_counts(total_macs: int, total_params: int, activation_words: int,
                       peak_activation_bytes_: int, platform: PlatformSpec,
                       batch: int = 1) -> float:
    """First-order per-frame energy from aggregate counts.

    Weights spill off-chip when they alone exceed on-chip capacity;
    activations spill when weights plus the peak activation footprint do.
    Spilled weight traffic amortizes over the batch, activations do not.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    storage = total_params * platform.word_bytes
    param_spill = total_params if storage > platform.on_chip_bytes else 0
    act_spill = (activation_words
                 if storage + peak_activation_bytes_ > platform.on_chip_bytes else 0)
    offchip = param_spill / batch + act_spill
    return total_macs * platform.e_mac + offchip * platform.offchip_ratio * platform.e_mac


def energy_estimate(graph: ArchGraph, platform: PlatformSpec, batch: int = 1) -> float:
    return energy_from_counts(model_macs(graph), model_params(graph),
                              activation_traffic_words(graph),
                              peak_activation_bytes(graph, platform.word_bytes),
                              platform, batch)


def report(graph: ArchGraph, platform: PlatformSpec = DEFAULT_PLATFORM,
           batch: int = 1) -> MetricsReport:
    """Assemble the full metric vector for one architecture."""
    params = model_params(graph)
    macs = model_macs(graph)
    storage = params * platform.word_bytes
    peak = peak_activation_bytes(graph, platform.word_bytes)
    energy = energy_from_counts(macs, params, activation_traffic_words(graph), peak,
                                platform, batch)
    fps = platform.macs_per_second / macs if macs > 0 else math.inf
    return MetricsReport(
        name=graph.name,
        total_params=params,
        storage_bytes=storage,
        total_macs=macs,
        peak_activation_bytes=peak,
        energy_per_frame=energy,
        fps_proxy=fps,
        ota_bytes=storage,
    )
