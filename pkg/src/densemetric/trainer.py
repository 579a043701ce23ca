"""Epoch loop for density-aware (and baseline) tuple-loss training.

Each epoch: sample a pool, embed it, mine tuples, compute and shift the
class centers from the full training split, then run minibatch momentum SGD
over the tuples. Validation recall@1 drives early stopping, learning-rate
decay and the switch from random to hard tuple mining.

Random streams are derived from ``rng_seed`` as
``numpy.random.default_rng([rng_seed, STREAMS[name], epoch])`` so each
stochastic choice has its own reproducible stream.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datakit import LabeledDataset, split
from .density_center import ShiftConfig, center_records, mean_total_shift, shift_all_centers
from .embedder import (EmbeddingModel, GradientBuffer, OptimizerState, apply_gradients,
                       backward, forward, forward_pass)
from .errors import EmptyMiningResult, InvalidInput, TrainingStalled
from .evalkit import hits_at_k, match_table_from_embeddings
from .losses import LossConfig, batch_tuple_loss
from .mining import MiningConfig, build_pool, mine_hard_tuples

log = logging.getLogger(__name__)

STREAMS = {"split": 1, "pool": 2, "tuples": 3, "shuffle": 4}
HARD_MINING_POLICIES = ("plateau", "always", "never")
VALIDATION_METRICS = ("recall_at_1", "rank_1")
STALL_LIMIT = 3


def stream(seed: int, name: str, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], int(epoch)])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 60
    loss: LossConfig = field(default_factory=LossConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    learning_rate: float = 1e-3
    decay_factor: float = 0.5
    min_learning_rate: float = 1e-7
    momentum: float = 0.9
    patience_epochs: int = 50
    plateau_epochs: int = 10
    hard_mining: str = "plateau"
    validation_fraction: float = 0.1
    validation_metric: str = "recall_at_1"
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInput("epochs and batch_size must be positive")
        if self.patience_epochs < 1 or self.plateau_epochs < 1:
            raise InvalidInput("patience windows must be positive")
        if self.hard_mining not in HARD_MINING_POLICIES:
            raise InvalidInput(f"hard_mining must be one of {HARD_MINING_POLICIES}")
        if self.validation_metric not in VALIDATION_METRICS:
            raise InvalidInput(f"validation_metric must be one of {VALIDATION_METRICS}")
        if not 0 < self.validation_fraction < 1:
            raise InvalidInput("validation_fraction must lie in (0, 1)")
        if self.rng_seed < 0:
            raise InvalidInput("rng_seed must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    validation_score: float
    mean_center_shift_norm: float
    tuples_mined: int
    hard_mining_active: bool
    learning_rate: float
    wall_ms: float = 0.0

    def to_json(self) -> dict:
        """Deterministic fields only; wall time is reported separately."""
        d = asdict(self)
        d.pop("wall_ms")
        return d


@dataclass
class RunReport:
    records: list[EpochRecord] = field(default_factory=list)
    stopping_reason: str = "epochs_exhausted"
    best_epoch: int = 0
    center_log: list[dict] = field(default_factory=list, repr=False)

    @property
    def best_score(self) -> float:
        return self.records[self.best_epoch - 1].validation_score

    def scores(self) -> list[float]:
        return [r.validation_score for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.records)

    def summary(self) -> dict:
        return {
            "epochs_run": len(self.records),
            "best_epoch": self.best_epoch,
            "best_validation_score": self.best_score if self.records else None,
            "stopping_reason": self.stopping_reason,
            "total_tuples": int(sum(r.tuples_mined for r in self.records)),
        }

    def timings(self) -> list[dict]:
        return [{"epoch": r.epoch, "wall_ms": r.wall_ms} for r in self.records]


def validate(model: EmbeddingModel | None, validation: LabeledDataset, gallery: LabeledDataset,
             metric: str = "recall_at_1") -> float:
    """Top-1 score of the validation split against the training-split gallery.

    Validation and gallery are disjoint, so recall@1 and rank-1 coincide.
    """
    if metric not in VALIDATION_METRICS:
        raise InvalidInput(f"unknown validation metric {metric!r}")
    if len(validation) == 0:
        raise InvalidInput("empty validation split")
    if len(gallery) == 0:
        raise InvalidInput("empty gallery")
    ve = validation.vectors if model is None else forward(model, validation.vectors)
    ge = gallery.vectors if model is None else forward(model, gallery.vectors)
    table = match_table_from_embeddings(ve, ge)
    return float(hits_at_k(table, validation.labels, gallery.labels, 1).mean())


def epochs_to_convergence(report: RunReport, target: float):
    for r in report.records:
        if r.validation_score >= target:
            return r.epoch
    return None


def _anchor_table(centers, classes, use_shifted):
    """Per-class anchor vectors indexed by position in ``classes``."""
    rows = []
    for c in classes:
        cc = centers[int(c)]
        rows.append(cc.center if use_shifted else cc.centroid)
    return np.array(rows)


def _train_batch(model, buffer, opt, X_pool, pool_labels, tuples, rows, loss_cfg,
                 anchors_by_class, class_pos):
    A = tuples.anchors[rows]
    P = tuples.positives[rows]
    N = tuples.negatives[rows]
    N2 = None if tuples.second_negatives is None else tuples.second_negatives[rows]
    parts = [P, N] if loss_cfg.uses_center else [A, P, N]
    if N2 is not None:
        parts.append(N2)
    uniq, inv = np.unique(np.concatenate(parts), return_inverse=True)
    emb, record = forward_pass(model, X_pool[uniq])
    slots = np.split(inv, len(parts))
    if loss_cfg.uses_center:
        ip, in1 = slots[0], slots[1]
        anchor_vecs = anchors_by_class[class_pos[pool_labels[A]]]
    else:
        ia, ip, in1 = slots[0], slots[1], slots[2]
        anchor_vecs = emb[ia]
    in2 = slots[-1] if N2 is not None else None
    a1, a2 = loss_cfg.margins()
    values, grads = batch_tuple_loss(anchor_vecs, emb[ip], emb[in1],
                                     None if in2 is None else emb[in2], a1, a2)
    upstream = np.zeros_like(emb)
    np.add.at(upstream, ip, grads["positive"])
    np.add.at(upstream, in1, grads["negative"])
    if in2 is not None:
        np.add.at(upstream, in2, grads["second_negative"])
    if not loss_cfg.uses_center:
        np.add.at(upstream, ia, grads["anchor"])
    backward(model, record, upstream, buffer, count=len(rows))
    apply_gradients(model, buffer, opt)
    return values


def train(model: EmbeddingModel, data: LabeledDataset, config: TrainConfig = TrainConfig(),
          validation: LabeledDataset | None = None):
    """Train a copy of ``model``; returns ``(best_model, report)``.

    ``data`` is split into training and validation parts unless an explicit
    ``validation`` set is given. The returned model is the parameters at
    the best validation epoch.
    """
    seed = config.rng_seed
    if validation is None:
        train_ds, val_ds = split(data, config.validation_fraction, int(stream(seed, "split").integers(2**32)))
    else:
        train_ds, val_ds = data, validation
    counts = train_ds.class_counts()
    if len(counts) < 2 or min(counts.values()) < 2:
        raise InvalidInput("training split needs >= 2 classes with >= 2 samples each")

    model = model.copy()
    loss_cfg = config.loss
    opt = OptimizerState(config.learning_rate, config.decay_factor,
                         config.min_learning_rate, config.momentum)
    buffer = GradientBuffer.for_model(model)
    classes = train_ds.classes
    class_pos = np.full(int(classes.max()) + 1, -1)
    class_pos[classes] = np.arange(len(classes))

    report = RunReport()
    best_model, best_score = model.copy(), -np.inf
    hard_active = config.hard_mining == "always"
    stalled = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        mcfg = replace(config.mining, hard_mining_enabled=hard_active,
                       quadruplet_mode=loss_cfg.quadruplet)
        pool = build_pool(train_ds, mcfg, rng=stream(seed, "pool", epoch))
        X_pool = train_ds.vectors[pool.indices]
        pool_emb = forward(model, X_pool)
        tuples = None
        for attempt, cfg in enumerate((mcfg, mcfg.relaxed(10.0))):
            try:
                tuples = mine_hard_tuples(pool_emb, pool, cfg, rng=stream(seed, "tuples", epoch))
                break
            except EmptyMiningResult:
                log.info("epoch %d: empty mining result (attempt %d)", epoch, attempt + 1)
        if tuples is None:
            stalled += 1
            if stalled >= STALL_LIMIT:
                raise TrainingStalled(f"no tuples mined for {stalled} consecutive epochs")
        else:
            stalled = 0

        # centers are frozen for the whole epoch
        all_emb = forward(model, train_ds.vectors)
        centers = shift_all_centers(all_emb, train_ds.labels, config.shift)
        anchors_by_class = _anchor_table(centers, classes, loss_cfg.variant != "triplet_center")
        report.center_log += center_records(centers, epoch)

        losses = []
        if tuples is not None:
            perm = stream(seed, "shuffle", epoch).permutation(len(tuples))
            for s in range(0, len(perm), config.batch_size):
                losses.append(_train_batch(model, buffer, opt, X_pool, pool.labels, tuples,
                                           perm[s:s + config.batch_size], loss_cfg,
                                           anchors_by_class, class_pos))
        score = validate(model, val_ds, train_ds, config.validation_metric)
        if score > best_score:
            best_score, best_model = score, model.copy()
            report.best_epoch = epoch
        report.records.append(EpochRecord(
            epoch=epoch,
            mean_loss=float(np.concatenate(losses).mean()) if losses else 0.0,
            validation_score=score,
            mean_center_shift_norm=mean_total_shift(centers),
            tuples_mined=0 if tuples is None else len(tuples),
            hard_mining_active=hard_active,
            learning_rate=opt.learning_rate,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))
        since = epoch - report.best_epoch
        if since >= config.patience_epochs:
            report.stopping_reason = "patience_exhausted"
            break
        if since and since % config.plateau_epochs == 0:
            if config.hard_mining == "plateau" and not hard_active:
                log.info("epoch %d: validation plateau, enabling hard mining", epoch)
                hard_active = True
            opt.decay()
    return best_model, report
