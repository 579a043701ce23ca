"""Benchmark runs shared by the CLI and the acceptance suite.

The ``reference-bench`` configuration (``configs/reference_bench.json``) fixes
the synthetic data and the training hyperparameters every comparison uses.
Training runs on a corrupted copy of the data; scores are measured on a
clean held-out sample drawn around the same class means.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .datakit import LabeledDataset, SynthSpec, generate, sample_core
from .density_center import EnclosureSpec, ShiftConfig
from .embedder import EmbeddingModel, init_model
from .errors import InvalidInput
from .evalkit import recall_at_ks
from .losses import VARIANTS, LossConfig
from .mining import MiningConfig, Percentile
from .trainer import RunReport, TrainConfig, epochs_to_convergence, train

DEFAULT_LOSSES = ("triplet_vanilla", "triplet_center", "datl", "daql")
DEFAULT_FRACTIONS = (0.10, 0.17, 0.25, 0.40)


def load_bench_config(name_or_path="reference-bench") -> dict:
    if name_or_path == "reference-bench":
        text = resources.files("densemetric").joinpath("configs/reference_bench.json").read_text()
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def bench_data(cfg: dict, seed: int, corruption: float | None = None):
    """``(train, test, means)`` for one benchmark seed; ``test`` is always clean."""
    frac = cfg["corruption"] if corruption is None else corruption
    spec = SynthSpec(
        num_classes=cfg["num_classes"], samples_per_class=cfg["samples_per_class"],
        dim=cfg["dim"], class_mean_scale=cfg["class_mean_scale"],
        core_sigma=cfg["core_sigma"], outlier_fraction=frac,
        outlier_offset_sigma=cfg["outlier_offset_sigma"], rng_seed=seed,
    )
    train_ds, means = generate(spec)
    test = sample_core(means, cfg["test_samples_per_class"], cfg["core_sigma"],
                       rng_seed=[seed, 7], name=f"synth-{seed}-test")
    return train_ds, test, means


def make_model(cfg: dict, input_dim: int, seed: int) -> EmbeddingModel:
    dims = [input_dim, *cfg["hidden_dims"], cfg["embedding_dim"]]
    return init_model(seed, dims, cfg.get("activation", "relu"), cfg["normalize_output"])


def train_config(cfg: dict, variant: str, seed: int, **overrides) -> TrainConfig:
    """Build a :class:`TrainConfig` from a flat bench config plus overrides."""
    c = {**cfg, **{k: v for k, v in overrides.items() if v is not None}}
    loss = LossConfig(variant=variant, margin_alpha=c["margin"], margin_alpha1=c["margin"],
                      margin_alpha2=c["margin2"])
    mining = MiningConfig(
        images_per_class=c["images_per_class"],
        hard_positive_threshold=Percentile(c["hard_positive_percentile"]),
        hard_negative_threshold=Percentile(c["hard_negative_percentile"]),
        fill_size=c["fill_size"], max_per_anchor=c["max_per_anchor"],
    )
    frac = c["enclosure_fraction"]
    shift = ShiftConfig(max_iterations=c["shift_iters"], tolerance=c["shift_tolerance"],
                        enclosure=EnclosureSpec(mode="fraction", fraction=frac))
    return TrainConfig(
        epochs=c["epochs"], batch_size=c["batch_size"], loss=loss, mining=mining, shift=shift,
        learning_rate=c["learning_rate"], decay_factor=c["decay_factor"],
        min_learning_rate=c["min_learning_rate"], momentum=c["momentum"],
        patience_epochs=c["patience_epochs"], plateau_epochs=c["plateau_epochs"],
        hard_mining=c["hard_mining"], validation_fraction=c["validation_fraction"],
        rng_seed=seed,
    )


@dataclass
class RunResult:
    variant: str
    seed: int
    model: EmbeddingModel
    report: RunReport
    recall: dict[int, float]
    enclosure_fraction: float

    def row(self, target=None) -> dict:
        etc = None if target is None else epochs_to_convergence(self.report, target)
        return {
            "seed": self.seed, "loss": self.variant,
            "enclosure_fraction": self.enclosure_fraction,
            "recall@1": self.recall[1], "recall@10": self.recall[10],
            "epochs_to_convergence": etc,
            "total_tuples": self.report.summary()["total_tuples"],
            "best_epoch": self.report.best_epoch, "epochs_run": len(self.report.records),
        }


def run_bench(cfg: dict, variant: str, seed: int, corruption: float | None = None,
              **overrides) -> RunResult:
    if variant not in VARIANTS:
        raise InvalidInput(f"unknown loss variant {variant!r}; valid: {', '.join(VARIANTS)}")
    train_ds, test, _ = bench_data(cfg, seed, corruption)
    tc = train_config(cfg, variant, seed, **overrides)
    model = make_model(cfg, train_ds.dim, seed)
    best, report = train(model, train_ds, tc)
    recall = recall_at_ks(test, test, best, (1, 10))
    return RunResult(variant, seed, best, report, recall, tc.shift.enclosure.fraction)


def clean_ceiling(cfg: dict, seed: int) -> float:
    """Best validation score of vanilla triplet training on uncorrupted data."""
    return run_bench(cfg, "triplet_vanilla", seed, corruption=0.0).report.best_score


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DENSEMETRIC_THREADS", "1")))
    except ValueError:
        return 1


def _run_job(job):
    cfg, variant, seed, corruption, overrides = job
    if variant == "__ceiling__":
        return clean_ceiling(cfg, seed)
    return run_bench(cfg, variant, seed, corruption, **overrides)


def _map(jobs):
    n = _workers()
    if n == 1 or len(jobs) == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(_run_job, jobs))


def median_or_none(values):
    """Median where unreached convergence (None) counts as +inf."""
    vals = [np.inf if v is None else v for v in values]
    m = float(np.median(vals))
    return None if np.isinf(m) else m


def compare_losses(cfg: dict, seeds, losses=DEFAULT_LOSSES, corruption=None,
                   ceiling_fraction=0.9, **overrides):
    """Train every loss on identical data per seed.

    Returns ``(per_run_rows, summary_rows, results)``; summaries are medians
    over seeds.
    """
    seeds = list(seeds)
    ceilings = _map([(cfg, "__ceiling__", s, None, {}) for s in seeds])
    targets = {s: ceiling_fraction * c for s, c in zip(seeds, ceilings)}
    jobs = [(cfg, v, s, corruption, overrides) for s in seeds for v in losses]
    results = _map(jobs)
    rows = [r.row(targets[r.seed]) for r in results]
    summary = []
    for v in losses:
        mine = [r for r in rows if r["loss"] == v]
        summary.append({
            "loss": v,
            "recall@1": float(np.median([r["recall@1"] for r in mine])),
            "recall@10": float(np.median([r["recall@10"] for r in mine])),
            "epochs_to_convergence": median_or_none([r["epochs_to_convergence"] for r in mine]),
            "total_tuples": float(np.median([r["total_tuples"] for r in mine])),
        })
    return rows, summary, results


def sweep_enclosure(cfg: dict, seeds, fractions=DEFAULT_FRACTIONS, variant="datl",
                    corruption=None, ceiling_fraction=0.9, **overrides):
    """One training run per (seed, enclosure fraction); medians per fraction."""
    seeds = list(seeds)
    ceilings = _map([(cfg, "__ceiling__", s, None, {}) for s in seeds])
    targets = {s: ceiling_fraction * c for s, c in zip(seeds, ceilings)}
    jobs = [(cfg, variant, s, corruption, {**overrides, "enclosure_fraction": f})
            for s in seeds for f in fractions]
    results = _map(jobs)
    rows = [r.row(targets[r.seed]) for r in results]
    summary = []
    for f in fractions:
        mine = [r for r in rows if r["enclosure_fraction"] == f]
        summary.append({
            "fraction": f,
            "recall@1": float(np.median([r["recall@1"] for r in mine])),
            "recall@10": float(np.median([r["recall@10"] for r in mine])),
            "epochs_to_convergence": median_or_none([r["epochs_to_convergence"] for r in mine]),
        })
    return rows, summary, results
