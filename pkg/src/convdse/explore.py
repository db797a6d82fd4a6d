"""Grid sweeps, recorded-accuracy joins, saturation detection, Pareto
frontiers, and budget checks over design points.

A design point is one metaparameter assignment for a model family together
with its cost metrics. Accuracy is only ever joined from externally
recorded tables; nothing here predicts it.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

from .costs import MetricsReport, PlatformSpec, report
from .graph import ArchGraph
from .zoo import PoolPlacement, alexnet, mobilenet_like, squeezenet, vgg19


class SweepError(ValueError):
    """Bad family, metaparameter, grid, or accuracy table."""


@dataclass(frozen=True)
class DesignPoint:
    metaparams: dict[str, object]
    metrics: MetricsReport
    top5_error: Optional[float] = None

    def value_of(self, metric: str) -> float:
        """Look a metric up by name: report fields first, then the recorded
        error, then metaparameters."""
        if metric in type(self.metrics).__dataclass_fields__ and metric != "name":
            return getattr(self.metrics, metric)
        if metric == "top5_error":
            if self.top5_error is None:
                raise SweepError("point has no recorded top5_error")
            return self.top5_error
        if metric in self.metaparams:
            return self.metaparams[metric]  # type: ignore[return-value]
        raise SweepError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class ConstraintSet:
    """Deployment budgets; None leaves a constraint unset. The desired
    frame rate is advisory and never fails a point."""

    max_onchip_bytes: Optional[int] = None
    max_top5_error: Optional[float] = None
    min_fps_required: Optional[float] = None
    min_fps_desired: Optional[float] = None
    max_energy_per_frame: Optional[float] = None

    def __post_init__(self):
        for name in ("max_onchip_bytes", "max_top5_error", "min_fps_required",
                     "min_fps_desired", "max_energy_per_frame"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"ConstraintSet.{name} must be positive when set")

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintSet":
        known = {"max_onchip_bytes", "max_top5_error", "min_fps_required",
                 "min_fps_desired", "max_energy_per_frame"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"constraint config: unknown key(s) {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ConstraintSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _squeezenet_from_params(params: dict) -> ArchGraph:
    p = params.get("p", 0.5)
    placement = params.get("pool_placement")
    count = params.get("pool_count")
    if placement is None and count is None:
        pooling = None  # canonical positions
    else:
        pooling = PoolPlacement(placement or "even", int(count) if count else 3)
    return squeezenet(p, pooling)


#: family name -> (builder over metaparams, allowed metaparam names)
FAMILIES: dict[str, tuple[Callable[[dict], ArchGraph], frozenset[str]]] = {
    "alexnet": (lambda params: alexnet(), frozenset()),
    "vgg19": (lambda params: vgg19(), frozenset()),
    "squeezenet": (_squeezenet_from_params,
                   frozenset({"p", "pool_placement", "pool_count"})),
    "mobilenet": (lambda params: mobilenet_like(params.get("width_mult", 1.0)),
                  frozenset({"width_mult"})),
}


def build_family(family: str, metaparams: dict) -> ArchGraph:
    if family not in FAMILIES:
        raise SweepError(f"unknown family {family!r} (known: {sorted(FAMILIES)})")
    builder, allowed = FAMILIES[family]
    unknown = set(metaparams) - allowed
    if unknown:
        raise SweepError(f"family {family!r} does not take metaparameter(s) "
                         f"{sorted(unknown)} (allowed: {sorted(allowed) or 'none'})")
    return builder(metaparams)


def sweep(family: str, grid: dict[str, Sequence], platform: PlatformSpec,
          max_points: int = 4096, batch: int = 1) -> list[DesignPoint]:
    """One design point per grid cell, in lexicographic order over the grid
    axes as given. Deterministic: same grid and platform, same points."""
    if family not in FAMILIES:
        raise SweepError(f"unknown family {family!r} (known: {sorted(FAMILIES)})")
    _, allowed = FAMILIES[family]
    axes = list(grid.keys())
    unknown = set(axes) - allowed
    if unknown:
        raise SweepError(f"family {family!r} does not take metaparameter(s) "
                         f"{sorted(unknown)} (allowed: {sorted(allowed) or 'none'})")
    for axis in axes:
        if not grid[axis]:
            raise SweepError(f"grid axis {axis!r} has no values")
    total = math.prod(len(grid[a]) for a in axes) if axes else 1
    if total > max_points:
        raise SweepError(f"grid has {total} cells, exceeding the cap of {max_points}")
    points = []
    for combo in itertools.product(*(grid[a] for a in axes)):
        metaparams = dict(zip(axes, combo))
        graph = build_family(family, metaparams)
        points.append(DesignPoint(metaparams, report(graph, platform, batch)))
    return points


def _norm(value) -> object:
    """Canonical join key: numbers as float, everything else as string."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


def load_accuracy_table(text: str) -> list[dict[str, object]]:
    """Parse a CSV whose header names metaparams plus ``top5_error``.
    Metaparam cells may be numeric or symbolic; the error must be a
    fraction in [0, 1]."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "top5_error" not in reader.fieldnames:
        raise SweepError("accuracy table needs a header row with a top5_error column")
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        row: dict[str, object] = {}
        for key, value in raw.items():
            if key is None or value is None:
                raise SweepError(f"accuracy table line {lineno}: ragged row")
            row[key] = _norm(value)
        err = row["top5_error"]
        if not isinstance(err, float) or not 0.0 <= err <= 1.0:
            raise SweepError(f"accuracy table line {lineno}: top5_error must be in [0, 1]")
        rows.append(row)
    return rows


def attach_accuracy(points: Sequence[DesignPoint],
                    table: Sequence[dict[str, object]]) -> tuple[list[DesignPoint], list[dict]]:
    """Join recorded accuracy onto matching points. Returns the new points
    plus any table rows that matched nothing. Conflicting duplicate rows
    are an error; identical duplicates are tolerated."""
    keys: Optional[tuple[str, ...]] = None
    for row in table:
        row_keys = tuple(sorted(k for k in row if k != "top5_error"))
        if keys is None:
            keys = row_keys
        elif row_keys != keys:
            raise SweepError("accuracy table rows disagree on metaparam columns")
    seen: dict[tuple, float] = {}
    for row in table:
        key = tuple(_norm(row[k]) for k in (keys or ()))
        if key in seen and seen[key] != row["top5_error"]:
            raise SweepError(f"accuracy table has conflicting rows for {dict(zip(keys, key))}")
        seen[key] = row["top5_error"]  # type: ignore[assignment]
    if keys:
        for point in points:
            missing = [k for k in keys if k not in point.metaparams]
            if missing:
                raise SweepError(f"accuracy table column(s) {missing} are not "
                                 f"metaparameters of the swept points")

    out = []
    matched_rows: set[tuple] = set()
    for point in points:
        key = tuple(_norm(point.metaparams[k]) for k in (keys or ()))
        if table and key in seen:
            matched_rows.add(key)
            out.append(replace(point, top5_error=seen[key]))
        else:
            out.append(point)
    unmatched = [dict(zip(keys or (), key)) | {"top5_error": err}
                 for key, err in seen.items() if key not in matched_rows]
    return out, unmatched


def find_saturation(points: Sequence[DesignPoint], epsilon: float = 0.005,
                    axis: str = "total_params") -> Optional[DesignPoint]:
    """Smallest point (along ``axis``) that no larger point improves on by
    more than ``epsilon`` top-5 error. Returns None when the sequence is
    still improving at its largest point.

    Plateau noise up to epsilon cannot defeat detection because each point
    is compared against the best error over all larger points, not just
    its neighbor.
    """
    if not points:
        raise SweepError("find_saturation needs at least one point")
    errors = []
    for point in points:
        if point.top5_error is None:
            raise SweepError("every point needs a recorded top5_error")
        errors.append(point.top5_error)
    sizes = [point.value_of(axis) for point in points]
    for a, b in zip(sizes, sizes[1:]):
        if not b > a:
            raise SweepError(f"points must be strictly increasing along {axis!r}")
    n = len(points)
    for i in range(n - 1):
        best_later = min(errors[i + 1:])
        if best_later >= errors[i] - epsilon:
            return points[i]
    if n == 1:
        return points[0]
    # only the largest point is left: it saturates unless it is itself still
    # a better-than-epsilon improvement on its predecessor
    if errors[-1] < errors[-2] - epsilon:
        return None
    return points[-1]


def pareto_front(points: Sequence[DesignPoint],
                 objectives: Sequence[tuple[str, str]]) -> list[DesignPoint]:
    """Exactly the non-dominated points, sorted by the first objective
    (ties kept in input order)."""
    if not objectives:
        raise SweepError("pareto_front needs at least one objective")
    for metric, sense in objectives:
        if sense not in ("min", "max"):
            raise SweepError(f"objective sense must be 'min' or 'max', got {sense!r}")

    def key(point: DesignPoint) -> tuple[float, ...]:
        # flip maximized metrics so domination reads uniformly as <=
        return tuple(point.value_of(m) if s == "min" else -point.value_of(m)
                     for m, s in objectives)

    keys = [key(p) for p in points]

    def dominates(a: tuple, b: tuple) -> bool:
        return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))

    front = [p for i, p in enumerate(points)
             if not any(dominates(keys[j], keys[i]) for j in range(len(points)) if j != i)]
    front.sort(key=lambda p: p.value_of(objectives[0][0])
               * (1 if objectives[0][1] == "min" else -1))
    return front


def dominating_witness(points: Sequence[DesignPoint], point: DesignPoint,
                       objectives: Sequence[tuple[str, str]]) -> Optional[DesignPoint]:
    """A point that dominates ``point``, or None if it is non-dominated."""
    def key(p: DesignPoint) -> tuple[float, ...]:
        return tuple(p.value_of(m) if s == "min" else -p.value_of(m)
                     for m, s in objectives)

    target = key(point)
    for other in points:
        if other is point:
            continue
        k = key(other)
        if all(x <= y for x, y in zip(k, target)) and any(x < y for x, y in zip(k, target)):
            return other
    return None


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    limit: float
    measured: float
    passed: bool
    hard: bool


@dataclass(frozen=True)
class ConstraintReport:
    checks: tuple[ConstraintCheck, ...]
    passed: bool  # over hard constraints only


def check_constraints(point: DesignPoint, constraints: ConstraintSet) -> ConstraintReport:
    """Evaluate every set budget. The on-chip check covers weights plus the
    peak activation footprint; the desired frame rate is advisory only."""
    m = point.metrics
    checks: list[ConstraintCheck] = []
    if constraints.max_onchip_bytes is not None:
        working_set = m.storage_bytes + m.peak_activation_bytes
        checks.append(ConstraintCheck("onchip_bytes", constraints.max_onchip_bytes,
                                      working_set,
                                      working_set <= constraints.max_onchip_bytes, True))
    if constraints.max_top5_error is not None:
        if point.top5_error is None:
            raise SweepError("error budget set but the point has no recorded top5_error")
        checks.append(ConstraintCheck("top5_error", constraints.max_top5_error,
                                      point.top5_error,
                                      point.top5_error <= constraints.max_top5_error, True))
    if constraints.min_fps_required is not None:
        checks.append(ConstraintCheck("fps_required", constraints.min_fps_required,
                                      m.fps_proxy,
                                      m.fps_proxy >= constraints.min_fps_required, True))
    if constraints.min_fps_desired is not None:
        checks.append(ConstraintCheck("fps_desired", constraints.min_fps_desired,
                                      m.fps_proxy,
                                      m.fps_proxy >= constraints.min_fps_desired, False))
    if constraints.max_energy_per_frame is not None:
        checks.append(ConstraintCheck("energy_per_frame", constraints.max_energy_per_frame,
                                      m.energy_per_frame,
                                      m.energy_per_frame <= constraints.max_energy_per_frame,
                                      True))
    passed = all(c.passed for c in checks if c.hard)
    return ConstraintReport(tuple(checks), passed)
