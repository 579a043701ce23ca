"""Class centers pulled toward the densest part of each class cluster.

A center starts at the class centroid and is moved by repeated mean-shift
steps: select the enclosure points around the current estimate, weight them
with a kernel, and take their weighted mean. With the uniform kernel the
weighted step reduces to the plain mean of the enclosure points.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEnclosure, InvalidInput

log = logging.getLogger(__name__)

ENCLOSURE_MODES = ("fraction", "count", "radius")


@dataclass(frozen=True)
class EnclosureSpec:
    mode: str = "fraction"
    fraction: float = 0.17
    count: int | None = None
    radius: float | None = None
    min_points: int = 1

    def __post_init__(self):
        if self.mode not in ENCLOSURE_MODES:
            raise InvalidInput(f"enclosure mode must be one of {ENCLOSURE_MODES}")
        if self.min_points < 1:
            raise InvalidInput("min_points must be >= 1")
        if self.mode == "fraction" and not 0 < self.fraction <= 1:
            raise InvalidInput("fraction must lie in (0, 1]")
        if self.mode == "count" and (self.count is None or self.count < 1):
            raise InvalidInput("count mode needs a positive count")
        if self.mode == "radius" and (self.radius is None or not self.radius > 0):
            raise InvalidInput("radius mode needs a positive radius")

    def size_for(self, n: int) -> int:
        """Number of enclosure points out of ``n`` in count/fraction mode."""
        if self.mode == "count":
            p = self.count
        elif self.mode == "fraction":
            p = max(self.min_points, int(round(self.fraction * n)))
        else:
            raise InvalidInput("radius mode has no fixed size")
        return min(p, n)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "uniform"
    weight_constant: float = 1.0

    def __post_init__(self):
        if self.kind != "uniform":
            raise InvalidInput(f"unsupported kernel {self.kind!r}")
        if not self.weight_constant > 0:
            raise InvalidInput("weight_constant must be positive")


@dataclass(frozen=True)
class ShiftConfig:
    max_iterations: int = 10
    tolerance: float = 1e-6
    enclosure: EnclosureSpec = field(default_factory=EnclosureSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInput("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise InvalidInput("tolerance must be positive")


@dataclass
class ClassCenter:
    class_id: int
    center: np.ndarray
    shift_history: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    centroid: np.ndarray | None = None   # starting point, kept for baselines

    @property
    def shift_norms(self) -> list[float]:
        return [float(np.linalg.norm(v)) for v in self.shift_history]

    @property
    def total_shift(self) -> float:
        """Sum of per-iteration shift magnitudes."""
        return float(sum(self.shift_norms))


def _as_points(points) -> np.ndarray:
    try:
        P = np.asarray(points, dtype=float)
    except ValueError as exc:
        raise InvalidInput(f"points have inconsistent dimensions: {exc}") from None
    if P.ndim != 2:
        raise InvalidInput("points must form a 2-d array of vectors")
    if P.shape[0] == 0:
        raise InvalidInput("empty point set")
    return P


def compute_centroid(points) -> np.ndarray:
    P = _as_points(points)
    return P.mean(axis=0)


def _sq_dists(center, P):
    d = P - center
    return (d * d).sum(axis=1)


def select_enclosure(center, points, spec: EnclosureSpec) -> np.ndarray:
    """Indices (ascending) of the enclosure points around ``center``.

    Count/fraction modes take the nearest points by squared distance with
    ties broken by lower index. Radius mode keeps points strictly inside the
    radius and raises :class:`DegenerateEnclosure` when fewer than
    ``spec.min_points`` qualify.
    """
    P = _as_points(points)
    c = np.asarray(center, dtype=float)
    if c.shape != P.shape[1:]:
        raise InvalidInput("center and points differ in dimension")
    d2 = _sq_dists(c, P)
    if spec.mode == "radius":
        idx = np.flatnonzero(np.sqrt(d2) < spec.radius)
        if idx.size < spec.min_points:
            raise DegenerateEnclosure(
                f"{idx.size} point(s) within radius {spec.radius}, need {spec.min_points}"
            )
        return idx
    p = spec.size_for(P.shape[0])
    order = np.lexsort((np.arange(P.shape[0]), d2))
    return np.sort(order[:p])


def kernel_weight(kernel: KernelSpec, center, point, radius: float) -> float:
    if not radius > 0:
        raise InvalidInput("radius must be positive")
    c = np.asarray(center, dtype=float)
    z = np.asarray(point, dtype=float)
    if c.shape != z.shape:
        raise InvalidInput("center and point differ in dimension")
    return kernel.weight_constant if float(np.linalg.norm(c - z)) < radius else 0.0


def mean_shift_step(center, class_points, spec: EnclosureSpec, kernel: KernelSpec = KernelSpec()):
    """One weighted mean-shift update; returns ``(new_center, shift)``.

    Weights are evaluated against the incoming ``center``. In count and
    fraction modes every enclosure point carries the kernel constant. A
    radius enclosure with too few points falls back to the ``min_points``
    nearest points.
    """
    P = _as_points(class_points)
    c = np.asarray(center, dtype=float)
    try:
        idx = select_enclosure(c, P, spec)
        fallback = False
    except DegenerateEnclosure as exc:
        log.info("enclosure fallback to %d nearest point(s): %s", spec.min_points, exc)
        idx = select_enclosure(c, P, EnclosureSpec(mode="count", count=spec.min_points))
        fallback = True
    Z = P[idx]
    if spec.mode == "radius" and not fallback:
        w = np.array([kernel_weight(kernel, c, z, spec.radius) for z in Z])
    else:
        w = np.full(len(idx), kernel.weight_constant)
    total = w.sum()
    if total <= 0:
        raise DegenerateEnclosure("all kernel weights are zero")
    if kernel.weight_constant == 1.0:
        new_center = Z.sum(axis=0) / total
    else:
        new_center = (w[:, None] * Z).sum(axis=0) / total
    return new_center, new_center - c


def shift_center(class_id, class_points, config: ShiftConfig = ShiftConfig()) -> ClassCenter:
    P = _as_points(class_points)
    start = compute_centroid(P)
    result = ClassCenter(class_id=int(class_id), center=start, centroid=start.copy())
    for _ in range(config.max_iterations):
        try:
            new_center, shift = mean_shift_step(result.center, P, config.enclosure, config.kernel)
        except DegenerateEnclosure as exc:
            raise DegenerateEnclosure(f"class {class_id}: {exc}") from exc
        result.center = new_center
        result.shift_history.append(shift)
        result.iterations_run += 1
        if float(np.linalg.norm(shift)) < config.tolerance:
            result.converged = True
            break
    return result


def shift_all_centers(embeddings, labels, config: ShiftConfig = ShiftConfig()) -> dict[int, ClassCenter]:
    """Run :func:`shift_center` for every class present in ``labels``."""
    E = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    return {int(c): shift_center(c, E[labels == c], config) for c in np.unique(labels)}


def mean_total_shift(centers: dict[int, ClassCenter]) -> float:
    if not centers:
        return 0.0
    return float(np.mean([c.total_shift for c in centers.values()]))


# -- center dumps -----------------------------------------------------------

def center_records(centers: dict[int, ClassCenter], epoch=None) -> list[dict]:
    rows = []
    for cid in sorted(centers):
        c = centers[cid]
        row = {} if epoch is None else {"epoch": epoch}
        row.update(
            class_id=cid,
            iterations_run=c.iterations_run,
            converged=c.converged,
            center=[float(v) for v in c.center],
            shift_norms=c.shift_norms,
        )
        rows.append(row)
    return rows


def write_centers_csv(path, records: list[dict]) -> None:
    """Tidy CSV: one row per (epoch, class); shift norms are ';'-joined."""
    if not records:
        raise InvalidInput("no center records to write")
    dim = len(records[0]["center"])
    has_epoch = "epoch" in records[0]
    header = (["epoch"] if has_epoch else []) + [
        "class_id", "iterations_run", "converged", "total_shift", "shift_norms",
    ] + [f"c{i}" for i in range(dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = [r["epoch"]] if has_epoch else []
            row += [
                r["class_id"], r["iterations_run"], int(r["converged"]),
                repr(float(sum(r["shift_norms"]))),
                ";".join(repr(v) for v in r["shift_norms"]),
            ]
            row += [repr(v) for v in r["center"]]
            w.writerow(row)


def write_centers_json(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")
