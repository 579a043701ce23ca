"""Per-epoch sample pools and thresholded hard tuple mining.

A pool holds up to ``b`` random samples of each class. Every pool sample
acts as an anchor; same-class partners farther than ``t_p`` are hard
positives and other-class partners closer than ``t_n`` are hard negatives.
Tuples are the (capped) cross product of the two sets.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .datakit import LabeledDataset
from .errors import EmptyMiningResult, InvalidInput
from .losses import pairwise_distances


@dataclass(frozen=True)
class Percentile:
    """Threshold given as a percentile of a pool distance distribution."""
    q: float

    def __post_init__(self):
        if not 0 <= self.q <= 100:
            raise InvalidInput("percentile must lie in [0, 100]")

    def widened(self, points: float) -> "Percentile":
        return Percentile(min(100.0, max(0.0, self.q + points)))


@dataclass(frozen=True)
class MiningConfig:
    images_per_class: int = 16
    hard_positive_threshold: float | Percentile = Percentile(50.0)
    hard_negative_threshold: float | Percentile = Percentile(50.0)
    quadruplet_mode: bool = False
    rng_seed: int = 0
    hard_mining_enabled: bool = True
    fill_size: int = 600
    max_per_anchor: int | None = 8

    def __post_init__(self):
        if self.images_per_class < 1:
            raise InvalidInput("images_per_class must be positive")
        for t in (self.hard_positive_threshold, self.hard_negative_threshold):
            if not isinstance(t, Percentile) and not t >= 0:
                raise InvalidInput("absolute thresholds must be non-negative")
        if self.fill_size < 1:
            raise InvalidInput("fill_size must be positive")

    def relaxed(self, points: float = 10.0) -> "MiningConfig":
        """Percentile thresholds widened so more pairs count as hard."""
        tp, tn = self.hard_positive_threshold, self.hard_negative_threshold
        if isinstance(tp, Percentile):
            tp = tp.widened(-points)
        if isinstance(tn, Percentile):
            tn = tn.widened(points)
        return replace(self, hard_positive_threshold=tp, hard_negative_threshold=tn)


@dataclass
class Pool:
    indices: np.ndarray   # dataset row of each pool position
    labels: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass
class TupleSet:
    pool: Pool
    anchors: np.ndarray          # pool positions
    positives: np.ndarray
    negatives: np.ndarray
    second_negatives: np.ndarray | None = None
    d_ap: np.ndarray | None = None
    d_an: np.ndarray | None = None

    def __len__(self):
        return len(self.anchors)

    @property
    def anchor_classes(self) -> np.ndarray:
        return self.pool.labels[self.anchors]

    def as_tuples(self) -> list[tuple]:
        cols = [self.anchors, self.positives, self.negatives]
        if self.second_negatives is not None:
            cols.append(self.second_negatives)
        return [tuple(int(v) for v in row) for row in zip(*cols)]

    def subset(self, rows) -> "TupleSet":
        rows = np.asarray(rows, dtype=int)
        pick = lambda a: None if a is None else a[rows]
        return TupleSet(self.pool, self.anchors[rows], self.positives[rows],
                        self.negatives[rows], pick(self.second_negatives),
                        pick(self.d_ap), pick(self.d_an))

    def write_csv(self, path) -> None:
        quad = self.second_negatives is not None
        header = ["anchor_idx", "pos_idx", "neg_idx"] + (["neg2_idx"] if quad else []) + ["D_ap", "D_an"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            ds = self.pool.indices
            for i in range(len(self)):
                row = [ds[self.anchors[i]], ds[self.positives[i]], ds[self.negatives[i]]]
                if quad:
                    row.append(ds[self.second_negatives[i]])
                row += [repr(float(self.d_ap[i])), repr(float(self.d_an[i]))]
                w.writerow(row)


def build_pool(dataset: LabeledDataset, config: MiningConfig, rng=None) -> Pool:
    """Sample ``min(b, class size)`` rows per class without replacement."""
    classes = dataset.classes
    if len(classes) < 2:
        raise InvalidInput("mining needs at least two classes")
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    picks = []
    for c in classes:
        idx = np.flatnonzero(dataset.labels == c)
        take = min(config.images_per_class, len(idx))
        picks.append(np.sort(rng.choice(idx, size=take, replace=False)))
    indices = np.concatenate(picks)
    return Pool(indices, dataset.labels[indices])


def _pair_masks(labels):
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(labels), dtype=bool)
    return same & off_diag, ~same


def resolve_thresholds(embeddings, pool: Pool, config: MiningConfig) -> tuple[float, float]:
    """Absolute ``(t_p, t_n)``.

    Percentile specs use numpy's linear interpolation over the unordered
    intra-class (for ``t_p``) and inter-class (for ``t_n``) squared distances.
    """
    D = pairwise_distances(embeddings, embeddings)
    labels = np.asarray(pool.labels)
    iu = np.triu_indices(len(labels), k=1)
    same = (labels[:, None] == labels[None, :])[iu]
    intra, inter = D[iu][same], D[iu][~same]
    if intra.size == 0:
        raise InvalidInput("pool has no positive pairs")
    if inter.size == 0:
        raise InvalidInput("pool has no negative pairs")

    def resolve(spec, values):
        if isinstance(spec, Percentile):
            return float(np.percentile(values, spec.q))
        return float(spec)

    return (resolve(config.hard_positive_threshold, intra),
            resolve(config.hard_negative_threshold, inter))


def _second_negative_table(D, labels):
    """``table[a, j]``: nearest sample to ``a`` outside the anchor class and class ``classes[j]``.

    Entries are -1 where no such sample exists.
    """
    classes = np.unique(labels)
    table = np.full((len(labels), len(classes)), -1, dtype=int)
    idx = np.arange(len(labels))
    for a in range(len(labels)):
        order = np.lexsort((idx, D[a]))
        order = order[labels[order] != labels[a]]
        for j, c in enumerate(classes):
            cand = order[labels[order] != c]
            if cand.size:
                table[a, j] = cand[0]
    return classes, table


def mine_hard_tuples(embeddings, pool: Pool, config: MiningConfig,
                     thresholds: tuple[float, float] | None = None, rng=None) -> TupleSet:
    """Mine tuples from pool embeddings (rows aligned with ``pool``).

    With hard mining enabled, each anchor contributes its hardest
    ``max_per_anchor`` positives (largest distance first) crossed with its
    hardest ``max_per_anchor`` negatives (smallest distance first), ties by
    pool position. With hard mining disabled, a uniform random subset of
    ``fill_size`` tuples is drawn from all valid combinations. Quadruplets
    attach the nearest sample of a third class as the second negative.

    Raises :class:`EmptyMiningResult` when nothing is mined.
    """
    E = np.asarray(embeddings, dtype=float)
    labels = np.asarray(pool.labels)
    if len(E) != len(labels):
        raise InvalidInput("embeddings are not aligned with the pool")
    if config.quadruplet_mode and len(np.unique(labels)) < 3:
        raise InvalidInput("quadruplet mining needs at least three classes in the pool")
    D = pairwise_distances(E, E)
    pos_mask, neg_mask = _pair_masks(labels)

    anchors, positives, negatives = [], [], []
    if config.hard_mining_enabled:
        t_p, t_n = resolve_thresholds(E, pool, config) if thresholds is None else thresholds
        cap = config.max_per_anchor
        for a in range(len(labels)):
            hp = np.flatnonzero(pos_mask[a] & (D[a] > t_p))
            hn = np.flatnonzero(neg_mask[a] & (D[a] < t_n))
            if hp.size == 0 or hn.size == 0:
                continue
            if cap is not None:
                hp = hp[np.lexsort((hp, -D[a, hp]))[:cap]]
                hn = hn[np.lexsort((hn, D[a, hn]))[:cap]]
            pp, nn = np.meshgrid(np.sort(hp), np.sort(hn), indexing="ij")
            anchors.append(np.full(pp.size, a))
            positives.append(pp.ravel())
            negatives.append(nn.ravel())
    else:
        rng = np.random.default_rng(config.rng_seed) if rng is None else rng
        n_pos = pos_mask.sum(axis=1)
        n_neg = neg_mask.sum(axis=1)
        per_anchor = n_pos * n_neg
        total = int(per_anchor.sum())
        if total > 0:
            flat = np.sort(rng.choice(total, size=min(config.fill_size, total), replace=False))
            starts = np.concatenate([[0], np.cumsum(per_anchor)[:-1]])
            a = np.searchsorted(np.cumsum(per_anchor), flat, side="right")
            offset = flat - starts[a]
            pi, ni = np.divmod(offset, n_neg[a])
            pos_lists = [np.flatnonzero(r) for r in pos_mask]
            neg_lists = [np.flatnonzero(r) for r in neg_mask]
            anchors.append(a)
            positives.append(np.array([pos_lists[x][i] for x, i in zip(a, pi)], dtype=int))
            negatives.append(np.array([neg_lists[x][i] for x, i in zip(a, ni)], dtype=int))

    if not anchors or sum(len(x) for x in anchors) == 0:
        raise EmptyMiningResult("no tuples satisfy the mining thresholds")
    A = np.concatenate(anchors).astype(int)
    P = np.concatenate(positives).astype(int)
    N = np.concatenate(negatives).astype(int)
    order = np.lexsort((N, P, A))
    A, P, N = A[order], P[order], N[order]
    N2 = None
    if config.quadruplet_mode:
        classes, table = _second_negative_table(D, labels)
        N2 = table[A, np.searchsorted(classes, labels[N])]
    return TupleSet(pool, A, P, N, N2, D[A, P], D[A, N])
