"""Squared Euclidean metric and the tuple losses built on it.

All losses use the hinge ``max(0, f)``. Center-anchored variants treat the
center as a constant, so they return no anchor gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInput

VARIANTS = ("triplet_vanilla", "triplet_center", "datl", "daql", "quadruplet_vanilla")
CENTER_VARIANTS = ("triplet_center", "datl", "daql")
QUADRUPLET_VARIANTS = ("daql", "quadruplet_vanilla")


@dataclass(frozen=True)
class MetricConfig:
    kind: str = "squared_euclidean"

    def __post_init__(self):
        if self.kind != "squared_euclidean":
            raise InvalidInput(f"unsupported metric {self.kind!r}")


@dataclass(frozen=True)
class LossConfig:
    variant: str = "datl"
    margin_alpha: float = 0.2
    margin_alpha1: float = 0.2
    margin_alpha2: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInput(
                f"unknown loss variant {self.variant!r}; valid: {', '.join(VARIANTS)}"
            )
        for name in ("margin_alpha", "margin_alpha1", "margin_alpha2"):
            if not getattr(self, name) >= 0:
                raise InvalidInput(f"{name} must be non-negative")

    @property
    def uses_center(self) -> bool:
        return self.variant in CENTER_VARIANTS

    @property
    def quadruplet(self) -> bool:
        return self.variant in QUADRUPLET_VARIANTS

    def margins(self) -> tuple[float, float]:
        """(first, second) margins; the second is unused by triplet variants."""
        if self.quadruplet:
            return self.margin_alpha1, self.margin_alpha2
        return self.margin_alpha, 0.0


@dataclass
class LossResult:
    value: float
    grad_wrt_positive: np.ndarray
    grad_wrt_negative: np.ndarray
    grad_wrt_second_negative: Optional[np.ndarray] = None
    grad_wrt_anchor: Optional[np.ndarray] = None
    active: bool = False


def _check_same_dims(*vectors):
    arrays = [np.asarray(v, dtype=float) for v in vectors]
    shape = arrays[0].shape
    if arrays[0].ndim != 1:
        raise InvalidInput("expected 1-d vectors")
    for a in arrays[1:]:
        if a.shape != shape:
            raise InvalidInput(f"dimension mismatch: {a.shape} vs {shape}")
    return arrays


def distance(x, y) -> float:
    """Squared Euclidean distance ``||x - y||^2`` (no square root)."""
    x, y = _check_same_dims(x, y)
    d = x - y
    return float((d * d).sum())


def pairwise_distances(X, Y) -> np.ndarray:
    """Matrix of squared distances between the rows of ``X`` and ``Y``.

    Entry ``[i, j]`` is bit-identical to ``distance(X[i], Y[j])``; the
    difference-then-square form is kept (rather than the Gram expansion) so
    that ties and thresholds are exact.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise InvalidInput(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    out = np.empty((X.shape[0], Y.shape[0]))
    for i in range(X.shape[0]):
        d = Y - X[i]
        out[i] = (d * d).sum(axis=1)
    return out


def _hinge_triplet(anchor, positive, negative, alpha, with_anchor):
    a, p, n = _check_same_dims(anchor, positive, negative)
    f = distance(a, p) - distance(a, n) + alpha
    zero = np.zeros_like(a)
    if f <= 0:
        return LossResult(0.0, zero, zero.copy(),
                          grad_wrt_anchor=zero.copy() if with_anchor else None)
    return LossResult(
        float(f),
        2.0 * (p - a),
        -2.0 * (n - a),
        grad_wrt_anchor=2.0 * (n - p) if with_anchor else None,
        active=True,
    )


def triplet_loss(anchor, positive, negative, alpha=0.2) -> LossResult:
    """Sample-anchored triplet hinge; gradients flow to all three inputs."""
    return _hinge_triplet(anchor, positive, negative, alpha, with_anchor=True)


def datl_loss(center, positive, negative, alpha=0.2) -> LossResult:
    """Triplet hinge anchored on the density-shifted class center."""
    return _hinge_triplet(center, positive, negative, alpha, with_anchor=False)


def center_triplet_loss(centroid, positive, negative, alpha=0.2) -> LossResult:
    # same contract as datl_loss; the caller passes the unshifted centroid
    return _hinge_triplet(centroid, positive, negative, alpha, with_anchor=False)


def _quadruplet(anchor, positive, neg1, neg2, alpha1, alpha2, with_anchor):
    a, p, n1, n2 = _check_same_dims(anchor, positive, neg1, neg2)
    d_ap = distance(a, p)
    f1 = d_ap - distance(a, n1) + alpha1
    f2 = d_ap - distance(a, n2) + alpha2
    gp = np.zeros_like(a)
    gn1 = np.zeros_like(a)
    gn2 = np.zeros_like(a)
    ga = np.zeros_like(a)
    value = 0.0
    if f1 > 0:
        value += f1
        gp += 2.0 * (p - a)
        gn1 -= 2.0 * (n1 - a)
        ga += 2.0 * (n1 - p)
    if f2 > 0:
        value += f2
        gp += 2.0 * (p - a)
        gn2 -= 2.0 * (n2 - a)
        ga += 2.0 * (n2 - p)
    return LossResult(
        float(value), gp, gn1, gn2,
        grad_wrt_anchor=ga if with_anchor else None,
        active=bool(f1 > 0 or f2 > 0),
    )


def daql_loss(center, positive, negative, second_negative, alpha1=0.2, alpha2=0.1) -> LossResult:
    """Two-hinge quadruplet loss anchored on the shifted center."""
    return _quadruplet(center, positive, negative, second_negative, alpha1, alpha2, False)


def quadruplet_loss(anchor, positive, negative, second_negative, alpha1=0.2, alpha2=0.1) -> LossResult:
    """Sample-anchored counterpart of :func:`daql_loss` (baseline)."""
    return _quadruplet(anchor, positive, negative, second_negative, alpha1, alpha2, True)


def batch_tuple_loss(anchors, positives, negatives, second_negatives=None,
                     alpha1=0.2, alpha2=0.1):
    """Vectorised hinge losses over a batch of tuples.

    Rows of the arrays are aligned tuples. With ``second_negatives`` the
    two-term quadruplet form is used, otherwise the single triplet hinge
    with margin ``alpha1``.

    Returns ``(values, grads)`` where ``grads`` maps ``"anchor"``,
    ``"positive"``, ``"negative"`` and (quadruplets only)
    ``"second_negative"`` to per-row gradient arrays.
    """
    A = np.asarray(anchors, dtype=float)
    P = np.asarray(positives, dtype=float)
    N = np.asarray(negatives, dtype=float)
    if not (A.shape == P.shape == N.shape):
        raise InvalidInput("batch arrays must share a shape")
    d_ap = ((P - A) ** 2).sum(axis=1)
    f1 = d_ap - ((N - A) ** 2).sum(axis=1) + alpha1
    on1 = (f1 > 0)[:, None]
    values = np.where(on1[:, 0], f1, 0.0)
    grads = {
        "positive": on1 * 2.0 * (P - A),
        "negative": on1 * -2.0 * (N - A),
        "anchor": on1 * 2.0 * (N - P),
    }
    if second_negatives is not None:
        N2 = np.asarray(second_negatives, dtype=float)
        if N2.shape != A.shape:
            raise InvalidInput("batch arrays must share a shape")
        f2 = d_ap - ((N2 - A) ** 2).sum(axis=1) + alpha2
        on2 = (f2 > 0)[:, None]
        values = values + np.where(on2[:, 0], f2, 0.0)
        grads["positive"] = grads["positive"] + on2 * 2.0 * (P - A)
        grads["second_negative"] = on2 * -2.0 * (N2 - A)
        grads["anchor"] = grads["anchor"] + on2 * 2.0 * (N2 - P)
    return values, grads
