"""Typed layer-graph IR for convolutional architectures.

Graphs are DAGs of layer nodes with exactly one input node and one sink.
All structures are immutable after construction; every operation here is a
pure function, so graphs can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional


class GraphError(ValueError):
    """Structural problem that prevents an operation from running."""


class ShapeError(GraphError):
    """Shape inference produced an impossible dimension."""


@dataclass(frozen=True)
class TensorShape:
    """Height x width x channels of one activation tensor."""

    height: int
    width: int
    channels: int

    def __post_init__(self):
        for name in ("height", "width", "channels"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def elements(self) -> int:
        return self.height * self.width * self.channels

    def __str__(self) -> str:
        return f"{self.height}x{self.width}x{self.channels}"


def _require_positive(obj, *names):
    for name in names:
        v = getattr(obj, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ValueError(f"{type(obj).__name__}.{name} must be a positive integer, got {v!r}")


class LayerSpec:
    """Base marker for layer variants; concrete layers are frozen dataclasses."""

    __slots__ = ()


@dataclass(frozen=True)
class Input(LayerSpec):
    shape: TensorShape


@dataclass(frozen=True)
class Conv(LayerSpec):
    kernel_h: int
    kernel_w: int
    filters: int
    groups: int = 1
    stride: int = 1
    pad: int = 0
    bias: bool = True

    def __post_init__(self):
        _require_positive(self, "kernel_h", "kernel_w", "filters", "groups", "stride")
        if not isinstance(self.pad, int) or isinstance(self.pad, bool) or self.pad < 0:
            raise ValueError(f"Conv.pad must be a non-negative integer, got {self.pad!r}")


@dataclass(frozen=True)
class FullyConnected(LayerSpec):
    filters: int
    bias: bool = True

    def __post_init__(self):
        _require_positive(self, "filters")


@dataclass(frozen=True)
class Pool(LayerSpec):
    kind: str  # "max" or "avg"
    kernel: int
    stride: int
    ceil_mode: bool = False

    def __post_init__(self):
        if self.kind not in ("max", "avg"):
            raise ValueError(f"Pool.kind must be 'max' or 'avg', got {self.kind!r}")
        _require_positive(self, "kernel", "stride")


@dataclass(frozen=True)
class GlobalAvgPool(LayerSpec):
    pass


@dataclass(frozen=True)
class ReLU(LayerSpec):
    pass


@dataclass(frozen=True)
class Shuffle(LayerSpec):
    groups: int

    def __post_init__(self):
        _require_positive(self, "groups")


@dataclass(frozen=True)
class Concat(LayerSpec):
    pass


@dataclass(frozen=True)
class ArchGraph:
    """Named DAG of layers. ``nodes`` is ordered; ``preds`` maps node id to
    the ordered tuple of predecessor ids (empty for the input node)."""

    name: str
    nodes: tuple[tuple[str, LayerSpec], ...]
    preds: Mapping[str, tuple[str, ...]]

    def layer(self, node_id: str) -> LayerSpec:
        for nid, spec in self.nodes:
            if nid == node_id:
                return spec
        raise KeyError(node_id)

    def node_ids(self) -> list[str]:
        return [nid for nid, _ in self.nodes]

    def successors(self) -> dict[str, list[str]]:
        succ: dict[str, list[str]] = {nid: [] for nid, _ in self.nodes}
        for nid, _ in self.nodes:
            for p in self.preds.get(nid, ()):
                if p in succ:
                    succ[p].append(nid)
        return succ


class GraphBuilder:
    """Incrementally assembles an ArchGraph; node ids are auto-generated
    unless given explicitly."""

    def __init__(self, name: str):
        self.name = name
        self._nodes: list[tuple[str, LayerSpec]] = []
        self._preds: dict[str, tuple[str, ...]] = {}
        self._counts: dict[str, int] = {}

    def _auto_name(self, prefix: str) -> str:
        self._counts[prefix] = self._counts.get(prefix, 0) + 1
        return f"{prefix}{self._counts[prefix]}"

    def add(self, spec: LayerSpec, inputs: Iterable[str] = (), name: Optional[str] = None) -> str:
        node_id = name if name is not None else self._auto_name(type(spec).__name__.lower())
        if any(node_id == nid for nid, _ in self._nodes):
            raise GraphError(f"duplicate id {node_id!r}")
        inputs = tuple(inputs)
        for src in inputs:
            if not any(src == nid for nid, _ in self._nodes):
                raise GraphError(f"{node_id!r} references unknown input {src!r}")
        self._nodes.append((node_id, spec))
        self._preds[node_id] = inputs
        return node_id

    def input(self, shape: TensorShape, name: str = "input") -> str:
        return self.add(Input(shape), (), name)

    def conv(self, src: str, kernel, filters: int, *, groups: int = 1, stride: int = 1,
             pad: int = 0, bias: bool = True, name: Optional[str] = None) -> str:
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        return self.add(Conv(kh, kw, filters, groups, stride, pad, bias), (src,), name)

    def fc(self, src: str, filters: int, *, bias: bool = True, name: Optional[str] = None) -> str:
        return self.add(FullyConnected(filters, bias), (src,), name)

    def maxpool(self, src: str, kernel: int, stride: int, *, ceil_mode: bool = False,
                name: Optional[str] = None) -> str:
        return self.add(Pool("max", kernel, stride, ceil_mode), (src,), name)

    def avgpool(self, src: str, kernel: int, stride: int, *, ceil_mode: bool = False,
                name: Optional[str] = None) -> str:
        return self.add(Pool("avg", kernel, stride, ceil_mode), (src,), name)

    def gap(self, src: str, name: Optional[str] = None) -> str:
        return self.add(GlobalAvgPool(), (src,), name)

    def relu(self, src: str, name: Optional[str] = None) -> str:
        return self.add(ReLU(), (src,), name)

    def shuffle(self, src: str, groups: int, name: Optional[str] = None) -> str:
        return self.add(Shuffle(groups), (src,), name)

    def concat(self, srcs: Iterable[str], name: Optional[str] = None) -> str:
        return self.add(Concat(), tuple(srcs), name)

    def build(self) -> ArchGraph:
        return ArchGraph(self.name, tuple(self._nodes), dict(self._preds))


def topological_order(graph: ArchGraph) -> list[str]:
    """Kahn's algorithm, breaking ties by node declaration order.

    Raises GraphError on cycles or dangling predecessor references.
    """
    ids = graph.node_ids()
    id_set = set(ids)
    indeg = {nid: 0 for nid in ids}
    for nid in ids:
        for p in graph.preds.get(nid, ()):
            if p not in id_set:
                raise GraphError(f"{nid!r} references unknown input {p!r}")
            indeg[nid] += 1
    succ = graph.successors()
    emitted: set[str] = set()
    order: list[str] = []
    while len(order) < len(ids):
        nid = next((i for i in ids if i not in emitted and indeg[i] == 0), None)
        if nid is None:
            raise GraphError("graph contains a cycle")
        emitted.add(nid)
        order.append(nid)
        for s in succ[nid]:
            indeg[s] -= 1
    return order


def _conv_spatial(in_dim: int, kernel: int, stride: int, pad: int, use_ceil: bool) -> int:
    num = in_dim + 2 * pad - kernel
    out = (math.ceil(num / stride) if use_ceil else num // stride) + 1
    return out


def _node_output_shape(spec: LayerSpec, in_shapes: list[TensorShape], node_id: str) -> TensorShape:
    if isinstance(spec, Input):
        return spec.shape
    if isinstance(spec, Conv):
        s = in_shapes[0]
        h = _conv_spatial(s.height, spec.kernel_h, spec.stride, spec.pad, False)
        w = _conv_spatial(s.width, spec.kernel_w, spec.stride, spec.pad, False)
        if h < 1 or w < 1:
            raise ShapeError(f"{node_id}: convolution output {h}x{w} is not positive "
                             f"(input {s}, kernel {spec.kernel_h}x{spec.kernel_w}, "
                             f"stride {spec.stride}, pad {spec.pad})")
        return TensorShape(h, w, spec.filters)
    if isinstance(spec, FullyConnected):
        return TensorShape(1, 1, spec.filters)
    if isinstance(spec, Pool):
        s = in_shapes[0]
        h = _conv_spatial(s.height, spec.kernel, spec.stride, 0, spec.ceil_mode)
        w = _conv_spatial(s.width, spec.kernel, spec.stride, 0, spec.ceil_mode)
        if h < 1 or w < 1:
            raise ShapeError(f"{node_id}: pool output {h}x{w} is not positive "
                             f"(input {s}, kernel {spec.kernel}, stride {spec.stride})")
        return TensorShape(h, w, s.channels)
    if isinstance(spec, GlobalAvgPool):
        return TensorShape(1, 1, in_shapes[0].channels)
    if isinstance(spec, (ReLU, Shuffle)):
        return in_shapes[0]
    if isinstance(spec, Concat):
        h, w = in_shapes[0].height, in_shapes[0].width
        for s in in_shapes[1:]:
            if (s.height, s.width) != (h, w):
                raise ShapeError(f"{node_id}: concat inputs disagree on spatial size "
                                 f"({s} vs {in_shapes[0]})")
        return TensorShape(h, w, sum(s.channels for s in in_shapes))
    raise GraphError(f"{node_id}: unknown layer type {type(spec).__name__}")


def validate(graph: ArchGraph) -> list[str]:
    """Return every structural and divisibility violation; empty list means ok.

    Violations are data, not exceptions: each entry names the offending node.
    """
    violations: list[str] = []
    ids = graph.node_ids()
    seen: set[str] = set()
    for nid in ids:
        if nid in seen:
            violations.append(f"{nid}: duplicate id")
        seen.add(nid)
    if len(seen) != len(ids):
        return violations  # ids ambiguous; further checks would mislead

    specs = dict(graph.nodes)
    inputs = [nid for nid, spec in graph.nodes if isinstance(spec, Input)]
    if not inputs:
        violations.append("graph: missing Input")
    elif len(inputs) > 1:
        violations.append(f"graph: multiple Input nodes ({', '.join(inputs)})")

    for nid, spec in graph.nodes:
        preds = graph.preds.get(nid, ())
        for p in preds:
            if p not in specs:
                violations.append(f"{nid}: references unknown input {p!r}")
        if isinstance(spec, Input):
            if preds:
                violations.append(f"{nid}: Input node must have no predecessors")
        elif isinstance(spec, Concat):
            if len(preds) < 2:
                violations.append(f"{nid}: Concat needs at least 2 predecessors, has {len(preds)}")
        elif len(preds) != 1:
            violations.append(f"{nid}: needs exactly one predecessor, has {len(preds)}")
        if isinstance(spec, Conv) and spec.filters % spec.groups != 0:
            violations.append(f"{nid}: groups must divide filters "
                              f"(g={spec.groups}, F={spec.filters})")

    try:
        order = topological_order(graph)
    except GraphError as exc:
        if "cycle" in str(exc):  # unknown references were already reported above
            violations.append(f"graph: {exc}")
        return violations

    if inputs:
        reachable = {inputs[0]}
        for nid in order:
            if any(p in reachable for p in graph.preds.get(nid, ())):
                reachable.add(nid)
        for nid in ids:
            if nid not in reachable:
                violations.append(f"{nid}: not reachable from Input")

    succ = graph.successors()
    sinks = [nid for nid in ids if not succ[nid]]
    if len(sinks) != 1:
        violations.append(f"graph: expected exactly one sink node, found {len(sinks)} "
                          f"({', '.join(sinks)})")

    # Bind-time checks need shapes; propagate tolerantly and skip nodes whose
    # inputs could not be resolved.
    shapes: dict[str, Optional[TensorShape]] = {}
    for nid in order:
        spec = specs[nid]
        in_shapes = [shapes.get(p) for p in graph.preds.get(nid, ())]
        if not isinstance(spec, Input) and (not in_shapes or any(s is None for s in in_shapes)):
            shapes[nid] = None
            continue
        if isinstance(spec, Conv):
            c_in = in_shapes[0].channels
            if c_in % spec.groups != 0:
                violations.append(f"{nid}: groups must divide input channels "
                                  f"(g={spec.groups}, C_in={c_in})")
        elif isinstance(spec, Shuffle):
            c_in = in_shapes[0].channels
            if c_in % spec.groups != 0:
                violations.append(f"{nid}: groups must divide input channels "
                                  f"(g={spec.groups}, C_in={c_in})")
        elif isinstance(spec, Concat):
            hw = {(s.height, s.width) for s in in_shapes}
            if len(hw) > 1:
                violations.append(f"{nid}: concat inputs must share height and width")
        try:
            shapes[nid] = _node_output_shape(spec, in_shapes, nid)
        except GraphError:
            shapes[nid] = None
    return violations


def check_valid(graph: ArchGraph) -> None:
    """Raise GraphError listing all violations when the graph is invalid."""
    violations = validate(graph)
    if violations:
        raise GraphError(f"invalid graph {graph.name!r}: " + "; ".join(violations))


def infer_shapes(graph: ArchGraph) -> dict[str, TensorShape]:
    """Map every node id to its output shape. Requires a valid graph;
    raises ShapeError naming the node when a dimension collapses."""
    check_valid(graph)
    specs = dict(graph.nodes)
    shapes: dict[str, TensorShape] = {}
    for nid in topological_order(graph):
        in_shapes = [shapes[p] for p in graph.preds.get(nid, ())]
        shapes[nid] = _node_output_shape(specs[nid], in_shapes, nid)
    return shapes


def input_shape_of(graph: ArchGraph, node_id: str, shapes: Mapping[str, TensorShape]) -> TensorShape:
    """Shape feeding ``node_id`` (first predecessor's output)."""
    preds = graph.preds.get(node_id, ())
    if not preds:
        raise GraphError(f"{node_id}: has no predecessor")
    return shapes[preds[0]]


def sink_id(graph: ArchGraph) -> str:
    succ = graph.successors()
    sinks = [nid for nid in graph.node_ids() if not succ[nid]]
    if len(sinks) != 1:
        raise GraphError(f"expected exactly one sink, found {len(sinks)}")
    return sinks[0]


def lower_fc(graph: ArchGraph) -> ArchGraph:
    """Rewrite each fully-connected layer as a convolution spanning the full
    spatial extent of its input. Shapes and parameter counts are unchanged;
    the rewrite is idempotent."""
    shapes = infer_shapes(graph)
    new_nodes = []
    for nid, spec in graph.nodes:
        if isinstance(spec, FullyConnected):
            s = input_shape_of(graph, nid, shapes)
            spec = Conv(s.height, s.width, spec.filters, groups=1, stride=1, pad=0,
                        bias=spec.bias)
        new_nodes.append((nid, spec))
    return ArchGraph(graph.name, tuple(new_nodes), dict(graph.preds))
