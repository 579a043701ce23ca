"""Labelled vector datasets: synthetic generation, CSV I/O and stratified splits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationFailed, InvalidInput, ParseError


@dataclass
class LabeledDataset:
    vectors: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    outlier_mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.vectors.ndim != 2:
            raise InvalidInput("vectors must be a 2-d array")
        if len(self.vectors) != len(self.labels):
            raise InvalidInput("vectors and labels differ in length")
        if self.outlier_mask is not None:
            self.outlier_mask = np.asarray(self.outlier_mask, dtype=bool)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_counts(self) -> dict[int, int]:
        cls, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(cls.tolist(), counts.tolist()))

    def subset(self, indices, name=None) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        mask = None if self.outlier_mask is None else self.outlier_mask[idx]
        return LabeledDataset(self.vectors[idx], self.labels[idx], name or self.name, mask)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 5
    samples_per_class: int = 100
    dim: int = 32
    class_mean_scale: float = 10.0
    core_sigma: float = 1.0
    outlier_fraction: float = 0.0
    outlier_offset_sigma: float = 10.0
    rng_seed: int = 0
    min_separation_sigma: float = 6.0

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1 or self.dim < 1:
            raise InvalidInput("class count, sample count and dim must be positive")
        if not (self.class_mean_scale > 0 and self.core_sigma > 0 and self.outlier_offset_sigma > 0):
            raise InvalidInput("scales must be positive")
        if not 0 <= self.outlier_fraction < 1:
            raise InvalidInput("outlier_fraction must lie in [0, 1)")

    @property
    def outliers_per_class(self) -> int:
        return int(round(self.outlier_fraction * self.samples_per_class))


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _class_means(spec: SynthSpec, rng) -> np.ndarray:
    min_sep = spec.min_separation_sigma * spec.core_sigma
    means = []
    for _ in range(1000):
        if len(means) == spec.num_classes:
            break
        m = spec.class_mean_scale * _unit(rng, spec.dim)
        if all(np.linalg.norm(m - other) >= min_sep for other in means):
            means.append(m)
    if len(means) < spec.num_classes:
        raise GenerationFailed(
            f"could not place {spec.num_classes} means {min_sep} apart on a "
            f"radius-{spec.class_mean_scale} sphere in {spec.dim} dims"
        )
    return np.array(means)


def generate(spec: SynthSpec) -> tuple[LabeledDataset, np.ndarray]:
    """Gaussian classes with a corrupted fraction pushed away from each core.

    Every class gets one random displacement direction; its outliers are
    core draws moved ``outlier_offset_sigma * core_sigma`` along it, so the
    corrupted samples form a coherent off-core clump that drags the class
    centroid. Returns the dataset and the uncorrupted class means.
    """
    rng = np.random.default_rng(spec.rng_seed)
    means = _class_means(spec, rng)
    n, k = spec.samples_per_class, spec.outliers_per_class
    vectors, labels, mask = [], [], []
    for c, mu in enumerate(means):
        X = mu + spec.core_sigma * rng.standard_normal((n, spec.dim))
        bad = np.zeros(n, dtype=bool)
        if k:
            bad[rng.choice(n, size=k, replace=False)] = True
            X[bad] += spec.outlier_offset_sigma * spec.core_sigma * _unit(rng, spec.dim)
        vectors.append(X)
        labels.append(np.full(n, c))
        mask.append(bad)
    ds = LabeledDataset(np.vstack(vectors), np.concatenate(labels),
                        f"synth-{spec.rng_seed}", np.concatenate(mask))
    return ds, means


def sample_core(means, samples_per_class: int, core_sigma: float, rng_seed: int,
                name="core") -> LabeledDataset:
    """Clean draws around given class means (used for held-out test sets)."""
    rng = np.random.default_rng(rng_seed)
    means = np.asarray(means, dtype=float)
    X = np.repeat(means, samples_per_class, axis=0)
    X = X + core_sigma * rng.standard_normal(X.shape)
    y = np.repeat(np.arange(len(means)), samples_per_class)
    return LabeledDataset(X, y, name, np.zeros(len(y), dtype=bool))


# -- CSV --------------------------------------------------------------------

def save_csv(dataset: LabeledDataset, path) -> None:
    """``# dim=S`` header then ``label,v1,...,vS`` rows with round-trip floats."""
    lines = [f"# dim={dataset.dim}"]
    for y, v in zip(dataset.labels, dataset.vectors):
        lines.append(",".join([str(int(y))] + [repr(float(a)) for a in v]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_csv(path, dim: int | None = None) -> LabeledDataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    vectors, labels = [], []
    for lineno, line in enumerate(text, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "dim":
                try:
                    header_dim = int(value)
                except ValueError:
                    raise ParseError(f"bad dim header {value!r}", lineno) from None
                if dim is not None and dim != header_dim:
                    raise ParseError(f"header dim {header_dim} != expected {dim}", lineno)
                dim = header_dim
            continue
        fields = line.split(",")
        if dim is None:
            dim = len(fields) - 1
        if len(fields) != dim + 1:
            raise ParseError(f"expected {dim + 1} fields, found {len(fields)}", lineno)
        try:
            labels.append(int(fields[0]))
            vectors.append([float(f) for f in fields[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    if not labels:
        raise InvalidInput(f"{path}: no data rows")
    if dim < 1:
        raise ParseError("rows carry no feature values", 1)
    if not np.all(np.isfinite(vectors)):
        raise InvalidInput(f"{path}: non-finite values")
    return LabeledDataset(np.array(vectors), np.array(labels), Path(path).stem)


# -- splitting --------------------------------------------------------------

def split_indices(dataset: LabeledDataset, fraction: float, seed: int):
    """Stratified ``(keep, holdout)`` index arrays, each sorted ascending."""
    if not 0 < fraction < 1:
        raise InvalidInput("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    keep, hold = [], []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        n_hold = int(math.floor(fraction * len(idx) + 0.5))
        if n_hold < 1 or n_hold > len(idx) - 1:
            raise InvalidInput(
                f"class {int(c)} has {len(idx)} sample(s); too few for a {fraction} split"
            )
        perm = rng.permutation(idx)
        hold.append(perm[:n_hold])
        keep.append(perm[n_hold:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(hold))


def split(dataset: LabeledDataset, fraction: float, seed: int):
    keep, hold = split_indices(dataset, fraction, seed)
    return (dataset.subset(keep, f"{dataset.name}-train"),
            dataset.subset(hold, f"{dataset.name}-holdout"))
