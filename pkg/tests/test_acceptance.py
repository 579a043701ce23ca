"""Acceptance gate on the shipped ``reference-bench``.

Each test prints one ``ACCEPTANCE Cn PASS|FAIL ...`` line and then asserts.
Run standalone with ``python tests/test_acceptance.py`` for just the lines.
Benchmark runs are shared between criteria 3, 7, 8 and 9 via a cache.
"""
from __future__ import annotations

import contextlib
import functools
import io
import hashlib
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import central_diff, rel_err  # noqa: E402
from densemetric import experiments as ex  # noqa: E402
from densemetric.cli import main as cli_main  # noqa: E402
from densemetric.datakit import LabeledDataset  # noqa: E402
from densemetric.density_center import (EnclosureSpec, KernelSpec, ShiftConfig,  # noqa: E402
                                        mean_shift_step, select_enclosure, shift_center)
from densemetric.embedder import GradientBuffer, backward, forward, forward_pass, init_model  # noqa: E402
from densemetric.errors import EmptyMiningResult  # noqa: E402
from densemetric.evalkit import rank_k_accuracy, recall_at_k  # noqa: E402
from densemetric.losses import (batch_tuple_loss, center_triplet_loss, daql_loss,  # noqa: E402
                                datl_loss, quadruplet_loss, triplet_loss)
from densemetric.mining import MiningConfig, Percentile, Pool, mine_hard_tuples, resolve_thresholds  # noqa: E402

# pinned tolerances and budgets
C1_RATIO, C1_SEEDS, C1_SECONDS = 0.5, 20, 1.0
C1_POINTS, C1_DIM = 5000, 8
C2_TOL, C2_CASES, C2_SECONDS = 1e-12, 1000, 1.0
C3_RATIO, C3_EPOCH, C3_SECONDS = 0.5, 50, 300.0
C4_REL, C4_CASES, C4_STEP, C4_SECONDS = 1e-4, 200, 1e-5, 10.0
C5_CASES, C5_MAX_POINTS, C5_SECONDS = 100, 30, 5.0
C6_CASES, C6_MAX_POINTS, C6_SECONDS = 100, 30, 5.0
C7_MARGIN, C7_SECONDS = 0.03, 1800.0
C8_CEILING_FRACTION = 0.9
C9_FRACTIONS, C9_TOL = (0.10, 0.17, 0.25, 0.40, 1.00), 1e-9
CORRUPTION = 0.15
LOSSES = ("triplet_vanilla", "triplet_center", "datl", "daql", "quadruplet_vanilla")

RESULTS: dict[str, bool] = {}
LINES: list[str] = []   # replayed by the terminal-summary hook in conftest.py


def emit(cid: str, passed: bool, detail: str) -> None:
    RESULTS[cid] = passed
    line = f"ACCEPTANCE {cid} {'PASS' if passed else 'FAIL'} {detail}"
    LINES.append(line)
    print(line)


@functools.lru_cache(maxsize=None)
def bench():
    return ex.load_bench_config("reference-bench")


@functools.lru_cache(maxsize=None)
def compare_runs():
    t0 = time.perf_counter()
    cfg = bench()
    rows, summary, results = ex.compare_losses(cfg, cfg["seeds"], LOSSES, corruption=CORRUPTION,
                                               ceiling_fraction=C8_CEILING_FRACTION)
    return rows, summary, results, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def sweep_runs():
    cfg = bench()
    return ex.sweep_enclosure(cfg, cfg["seeds"], C9_FRACTIONS, corruption=CORRUPTION)


# -- C1 ----------------------------------------------------------------------

def check_c1():
    t0 = time.perf_counter()
    ratios = []
    for seed in range(C1_SEEDS):
        rng = np.random.default_rng(seed)
        n_out = C1_POINTS // 10
        core = rng.standard_normal((C1_POINTS - n_out, C1_DIM))
        direction = rng.standard_normal(C1_DIM)
        direction /= np.linalg.norm(direction)
        outliers = rng.standard_normal((n_out, C1_DIM)) + 10.0 * direction
        c = shift_center(0, np.vstack([core, outliers]), ShiftConfig())
        true_mean = np.zeros(C1_DIM)
        ratios.append(np.linalg.norm(c.center - true_mean) / np.linalg.norm(c.centroid - true_mean))
    elapsed = time.perf_counter() - t0
    ok = sum(r < C1_RATIO for r in ratios)
    passed = ok == C1_SEEDS and elapsed < C1_SECONDS
    return passed, f"{ok}/{C1_SEEDS} seeds ratio<{C1_RATIO} (max {max(ratios):.3f}) in {elapsed:.2f}s"


# -- C2 ----------------------------------------------------------------------

def check_c2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(C2_CASES):
        n, dim = int(rng.integers(1, 60)), int(rng.integers(1, 9))
        P = rng.standard_normal((n, dim)) * rng.uniform(0.1, 20)
        spec = EnclosureSpec(mode="count", count=int(rng.integers(1, n + 1)))
        kernel = KernelSpec(weight_constant=float(rng.uniform(0.1, 10)))
        start = P[rng.integers(n)] + rng.standard_normal(dim)
        weighted, _ = mean_shift_step(start, P, spec, kernel)
        plain = P[select_enclosure(start, P, spec)].mean(axis=0)
        worst = max(worst, float(np.abs(weighted - plain).max()))
    elapsed = time.perf_counter() - t0
    passed = worst <= C2_TOL and elapsed < C2_SECONDS
    return passed, f"max |weighted-unweighted| {worst:.2e} over {C2_CASES} cases in {elapsed:.2f}s"


# -- C3 ----------------------------------------------------------------------

def check_c3():
    *_, results, elapsed = compare_runs()
    ratios = []
    for r in results:
        if r.variant != "datl":
            continue
        shifts = [rec.mean_center_shift_norm for rec in r.report.records]
        ratios.append(shifts[C3_EPOCH - 1] / shifts[0] if len(shifts) >= C3_EPOCH else np.inf)
    med = float(np.median(ratios))
    passed = med < C3_RATIO
    per_seed = ", ".join(f"{x:.3f}" for x in ratios)
    return passed, f"median shift(ep{C3_EPOCH})/shift(ep1) = {med:.3f} [{per_seed}]"


# -- C4 ----------------------------------------------------------------------

def _fd_case(rng):
    """Check every loss and one loss-composed embedder backward pass; returns max rel error."""
    worst = 0.0
    while True:
        dim = int(rng.integers(2, 17))
        a, p, n, m = rng.standard_normal((4, dim))
        al1, al2 = rng.uniform(0, 3, 2)
        f1 = ((a - p) ** 2).sum() - ((a - n) ** 2).sum()
        f2 = ((a - p) ** 2).sum() - ((a - m) ** 2).sum()
        if min(abs(f1 + al1), abs(f2 + al2)) > 1e-3:   # stay off the hinge kink
            break
    fns = {
        "triplet": (lambda: triplet_loss(a, p, n, al1), "apn"),
        "datl": (lambda: datl_loss(a, p, n, al1), "pn"),
        "triplet_center": (lambda: center_triplet_loss(a, p, n, al1), "pn"),
        "daql": (lambda: daql_loss(a, p, n, m, al1, al2), "pnm"),
        "quadruplet": (lambda: quadruplet_loss(a, p, n, m, al1, al2), "apnm"),
    }
    vec = {"a": a, "p": p, "n": n, "m": m}
    field = {"a": "grad_wrt_anchor", "p": "grad_wrt_positive", "n": "grad_wrt_negative",
             "m": "grad_wrt_second_negative"}
    for fn, args in fns.values():
        r = fn()
        for k in args:
            num = central_diff(lambda: fn().value, vec[k], C4_STEP)
            ana = getattr(r, field[k])
            if ana.any() or num.any():
                worst = max(worst, rel_err(ana, num))

    # embedder with a quadruplet-loss upstream gradient
    while True:
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(2, 9, size=depth + 1)]
        normalize = bool(rng.integers(2))
        act = "tanh" if normalize or rng.integers(2) else "relu"
        model = init_model(int(rng.integers(1 << 30)), dims, act, normalize)
        X = rng.standard_normal((4, dims[0]))
        emb, rec = forward_pass(model, X)
        if act == "relu" and any(np.abs(z).min() < 1e-3 for z in rec.pre_activations[:-1]):
            continue
        if not normalize and np.abs(rec.raw_output).max() == 0:
            continue
        vals, grads = batch_tuple_loss(emb[:1], emb[1:2], emb[2:3], emb[3:4], 0.5, 0.3)
        if vals[0] > 1e-3:
            break
    upstream = np.vstack([grads["anchor"], grads["positive"], grads["negative"],
                          grads["second_negative"]])
    buf = GradientBuffer.for_model(model)
    backward(model, rec, upstream, buf)

    def loss():
        e = forward(model, X)
        return float(batch_tuple_loss(e[:1], e[1:2], e[2:3], e[3:4], 0.5, 0.3)[0][0])

    for ana, param in zip(buf.weights + buf.biases, model.weights + model.biases):
        num = central_diff(loss, param, C4_STEP)
        if ana.any() or num.any():
            worst = max(worst, rel_err(ana, num))
    return worst


def check_c4():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = max(_fd_case(rng) for _ in range(C4_CASES))
    elapsed = time.perf_counter() - t0
    passed = worst < C4_REL and elapsed < C4_SECONDS
    return passed, f"max rel error {worst:.2e} over {C4_CASES} cases in {elapsed:.2f}s"


# -- C5 ----------------------------------------------------------------------

def check_c5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    mismatches = 0
    for case in range(C5_CASES):
        n_cls = int(rng.integers(2, 6))
        extra = rng.integers(0, n_cls, size=int(rng.integers(0, C5_MAX_POINTS - 2 * n_cls + 1)))
        labels = rng.permutation(np.concatenate([np.repeat(np.arange(n_cls), 2), extra]))
        E = rng.standard_normal((len(labels), int(rng.integers(1, 5))))
        qp, qn = (50.0, 50.0) if case % 2 else tuple(rng.uniform(5, 95, 2))
        quad = n_cls >= 3 and case % 3 != 0
        cfg = MiningConfig(hard_positive_threshold=Percentile(qp),
                           hard_negative_threshold=Percentile(qn), quadruplet_mode=quad)
        pool = Pool(np.arange(len(labels)), labels)
        t_p, t_n = resolve_thresholds(E, pool, cfg)
        o_tp, o_tn = oracles.thresholds(E.tolist(), labels.tolist(), qp, qn)
        expected = oracles.mine(E.tolist(), labels.tolist(), t_p, t_n, 8, quad)
        try:
            got = mine_hard_tuples(E, pool, cfg).as_tuples()
        except EmptyMiningResult:
            got = []
        thresholds_ok = np.isclose(t_p, o_tp, rtol=1e-12, atol=0) and np.isclose(t_n, o_tn, rtol=1e-12, atol=0)
        mismatches += (got != expected) or not thresholds_ok
    elapsed = time.perf_counter() - t0
    passed = mismatches == 0 and elapsed < C5_SECONDS
    return passed, f"{C5_CASES - mismatches}/{C5_CASES} pools equal the oracle in {elapsed:.2f}s"


# -- C6 ----------------------------------------------------------------------

def check_c6():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(C6_CASES):
        n_g = int(rng.integers(2, C6_MAX_POINTS // 2 + 1))
        n_p = int(rng.integers(1, C6_MAX_POINTS - n_g + 1))
        dim = int(rng.integers(1, 4))
        G = rng.integers(-3, 4, size=(n_g, dim)).astype(float)
        P = rng.integers(-3, 4, size=(n_p, dim)).astype(float)
        gl, pl = rng.integers(0, 3, n_g), rng.integers(0, 3, n_p)
        probes, gallery = LabeledDataset(P, pl), LabeledDataset(G, gl)
        for k in range(1, n_g + 1):
            mismatches += rank_k_accuracy(probes, gallery, k=k) != oracles.top_k_hits(P, pl, G, gl, k)
        for k in range(1, n_g):
            got = recall_at_k(gallery, gallery, k=k)
            mismatches += got != oracles.top_k_hits(G, gl, G, gl, k, exclude_self=True)
    elapsed = time.perf_counter() - t0
    passed = mismatches == 0 and elapsed < C6_SECONDS
    return passed, f"{mismatches} mismatches over {C6_CASES} instances in {elapsed:.2f}s"


# -- C7 / C8 -----------------------------------------------------------------

def _median(rows, loss, key):
    return float(np.median([r[key] for r in rows if r["loss"] == loss]))


def check_c7():
    rows, _, _, elapsed = compare_runs()
    r = {v: _median(rows, v, "recall@1") for v in LOSSES}
    gap_t = r["datl"] - r["triplet_vanilla"]
    gap_q = r["daql"] - r["quadruplet_vanilla"]
    passed = gap_t >= C7_MARGIN and gap_q >= C7_MARGIN and elapsed < C7_SECONDS
    detail = (f"median recall@1 datl {r['datl']:.3f} vs triplet {r['triplet_vanilla']:.3f} "
              f"(gap {gap_t:+.3f}); daql {r['daql']:.3f} vs quadruplet "
              f"{r['quadruplet_vanilla']:.3f} (gap {gap_q:+.3f}); need >= {C7_MARGIN}; "
              f"{elapsed:.0f}s")
    return passed, detail


def check_c8():
    rows, *_ = compare_runs()
    med = {v: ex.median_or_none([r["epochs_to_convergence"] for r in rows if r["loss"] == v])
           for v in ("datl", "triplet_vanilla")}
    d, t = med["datl"], med["triplet_vanilla"]
    passed = d is not None and (t is None or d <= t)
    return passed, f"median epochs to {C8_CEILING_FRACTION}x ceiling: datl {d} vs triplet {t}"


# -- C9 ----------------------------------------------------------------------

def check_c9():
    rows, summary, results = sweep_runs()
    scores = {s["fraction"]: s["recall@1"] for s in summary}
    best = max(scores.values())
    argmax = sorted(f for f, v in scores.items() if v == best)
    interior = 1.0 not in argmax
    # fraction 1.00 against direct centroid-baseline runs at equal seeds
    _, _, compare_results, _ = compare_runs()
    baseline = {r.seed: r for r in compare_results if r.variant == "triplet_center"}
    worst = 0.0
    for r in results:
        if r.enclosure_fraction != 1.0:
            continue
        b = baseline[r.seed]
        worst = max(worst, abs(r.recall[1] - b.recall[1]))
        if len(r.report.records) != len(b.report.records):
            worst = np.inf
            continue
        for x, y in zip(r.report.records, b.report.records):
            worst = max(worst, abs(x.mean_loss - y.mean_loss), abs(x.validation_score - y.validation_score))
    reproduces = worst <= C9_TOL
    table = ", ".join(f"{f:.2f}:{v:.3f}" for f, v in scores.items())
    passed = interior and reproduces
    return passed, (f"median recall@1 {{{table}}} argmax {argmax} (interior required); "
                    f"1.00 vs centroid baseline max diff {worst:.1e}")


# -- C10 ---------------------------------------------------------------------

TINY = {"samples_per_class": 20, "test_samples_per_class": 10, "dim": 8, "hidden_dims": [8],
        "embedding_dim": 4, "epochs": 4, "patience_epochs": 5}


def _digest(folder: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.iterdir()) if p.name != "timing.jsonl"}


def check_c10():
    diffs = []
    with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stdout(io.StringIO()):
        tmp = Path(tmp)
        cfg = tmp / "tiny.json"
        cfg.write_text(json.dumps(TINY))
        cli_main(["gen-data", "--config", str(cfg), "--seed", "3", "--out", str(tmp / "data")])
        data = tmp / "data"
        commands = {
            "gen-data": ["gen-data", "--config", str(cfg), "--seed", "3"],
            "train": ["train", "--config", str(cfg), "--data", str(data / "train.csv"), "--seed", "9",
                      "--loss", "daql"],
            "compare-losses": ["compare-losses", "--config", str(cfg), "--seeds", "1,2"],
            "sweep-enclosure": ["sweep-enclosure", "--config", str(cfg), "--seeds", "1",
                                "--fractions", "0.17,1.0"],
        }
        for name, argv in commands.items():
            outs = []
            for i in range(2):
                out = tmp / f"{name}-{i}"
                if cli_main(argv + ["--out", str(out)]) != 0:
                    diffs.append(f"{name} failed")
                outs.append(_digest(out))
            if outs[0] != outs[1]:
                diffs.append(name)
        ckpt = tmp / "train-0" / "model.ckpt"
        evals = []
        for i in range(2):
            cli_main(["eval", "--model", str(ckpt), "--data", str(data / "test.csv"),
                      "--out", str(tmp / f"eval-{i}")])
            evals.append(_digest(tmp / f"eval-{i}"))
        if evals[0] != evals[1]:
            diffs.append("eval")
    # one full benchmark run against the cached copy
    cached = next(r for r in compare_runs()[2] if r.variant == "datl" and r.seed == bench()["seeds"][0])
    again = ex.run_bench(bench(), "datl", cached.seed, corruption=CORRUPTION)
    if again.report.to_jsonl() != cached.report.to_jsonl():
        diffs.append("bench datl run")
    passed = not diffs
    return passed, "all reports byte-identical" if passed else f"differences in {diffs}"


CHECKS = {"C1": check_c1, "C2": check_c2, "C3": check_c3, "C4": check_c4, "C5": check_c5,
          "C6": check_c6, "C7": check_c7, "C8": check_c8, "C9": check_c9, "C10": check_c10}


@pytest.mark.parametrize("cid", list(CHECKS))
def test_acceptance(cid):
    passed, detail = CHECKS[cid]()
    emit(cid, passed, detail)
    assert passed, detail


if __name__ == "__main__":
    for cid, check in CHECKS.items():
        emit(cid, *check())
    sys.exit(0 if all(RESULTS.values()) else 1)
