"""Rank-K identification and Recall@K retrieval in embedding space.

Distances are squared Euclidean (from :mod:`densemetric.losses`); equal
distances are ordered by ascending gallery index so every metric is
deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .datakit import LabeledDataset
from .embedder import EmbeddingModel, forward
from .errors import InvalidInput
from .losses import pairwise_distances


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (1, 10)
    gallery_source: str = "train_split"
    tie_break: str = "lowest_index"

    def __post_init__(self):
        if list(self.ks) != sorted(self.ks) or any(k < 1 for k in self.ks):
            raise InvalidInput("ks must be positive and ascending")
        if self.gallery_source not in ("train_split", "explicit"):
            raise InvalidInput("gallery_source must be train_split or explicit")
        if self.tie_break != "lowest_index":
            raise InvalidInput("only lowest_index tie-breaking is supported")


@dataclass
class MatchTable:
    order: np.ndarray       # (n_probe, n_gallery) gallery indices, nearest first
    distances: np.ndarray   # distances in that order

    def __len__(self):
        return self.order.shape[0]


def embed(model: EmbeddingModel | None, data) -> np.ndarray:
    X = data.vectors if isinstance(data, LabeledDataset) else np.asarray(data, dtype=float)
    if model is None:
        return X
    return forward(model, X)


def match_table_from_embeddings(probe_emb, gallery_emb, exclude_self=False) -> MatchTable:
    D = pairwise_distances(probe_emb, gallery_emb)
    if exclude_self:
        if D.shape[0] != D.shape[1]:
            raise InvalidInput("self-exclusion needs queries identical to the database")
        np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    return MatchTable(order, np.take_along_axis(D, order, axis=1))


def build_match_table(probes, gallery, model=None) -> MatchTable:
    pe, ge = embed(model, probes), embed(model, gallery)
    if len(pe) == 0 or len(ge) == 0:
        raise InvalidInput("probe and gallery sets must be non-empty")
    return match_table_from_embeddings(pe, ge)


def hits_at_k(table: MatchTable, probe_labels, gallery_labels, k: int) -> np.ndarray:
    """Per-probe 0/1 indicator: true class among the first ``k`` matches."""
    top = np.asarray(gallery_labels)[table.order[:, :k]]
    return (top == np.asarray(probe_labels)[:, None]).any(axis=1)


def score_embeddings(pe, pl, ge, gl, ks, exclude_self):
    n_candidates = len(ge) - (1 if exclude_self else 0)
    if len(pe) == 0 or n_candidates < 1:
        raise InvalidInput("probe and gallery sets must be non-empty")
    for k in ks:
        if k < 1 or k > n_candidates:
            raise InvalidInput(f"k={k} exceeds the {n_candidates} available gallery items")
    table = match_table_from_embeddings(pe, ge, exclude_self)
    return {k: float(hits_at_k(table, pl, gl, k).mean()) for k in ks}


def rank_k_accuracy(probes: LabeledDataset, gallery: LabeledDataset, model=None, k=1) -> float:
    """Fraction of probes whose class appears among the ``k`` nearest gallery items."""
    return score_embeddings(embed(model, probes), probes.labels, embed(model, gallery),
                  gallery.labels, [k], False)[k]


def recall_at_k(queries: LabeledDataset, database: LabeledDataset, model=None, k=1,
                exclude_self: bool | None = None) -> float:
    """Mean 0/1 retrieval indicator at depth ``k``.

    When the queries are the database (``exclude_self`` defaults to
    ``queries is database``) each query is removed from its own candidates.
    """
    if exclude_self is None:
        exclude_self = queries is database
    return score_embeddings(embed(model, queries), queries.labels, embed(model, database),
                  database.labels, [k], exclude_self)[k]


def recall_at_ks(queries, database, model=None, ks=(1, 10), exclude_self=None) -> dict[int, float]:
    if exclude_self is None:
        exclude_self = queries is database
    return score_embeddings(embed(model, queries), queries.labels, embed(model, database),
                  database.labels, list(ks), exclude_self)


def metrics_report(metric: str, values: dict[int, float], probe_count: int,
                   gallery_count: int, seed=None) -> list[dict]:
    return [
        {"metric": metric, "k": int(k), "value": float(v), "probe_count": int(probe_count),
         "gallery_count": int(gallery_count), "seed": seed}
        for k, v in sorted(values.items())
    ]


def write_metrics_json(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")
