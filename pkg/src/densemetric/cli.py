"""Command-line entry point: ``densemetric <command> [flags]``.

Exit codes: 0 success, 2 configuration/input error, 3 training stall.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .datakit import load_csv, save_csv
from .density_center import write_centers_csv
from .embedder import load_checkpoint, save_checkpoint
from .errors import DensemetricError, InvalidInput, TrainingStalled
from .evalkit import embed, metrics_report, recall_at_ks, score_embeddings, write_metrics_json
from .losses import VARIANTS
from .trainer import train

log = logging.getLogger("densemetric")

# flag name -> bench config key
FLAG_KEYS = {
    "epochs": "epochs", "batch_size": "batch_size", "enclosure_fraction": "enclosure_fraction",
    "shift_iters": "shift_iters", "margin": "margin", "margin2": "margin2",
}


def prepare_out_dir(path) -> Path:
    """Create ``path``; if it already holds files use ``path-1``, ``path-2``, ..."""
    base = Path(path)
    candidate, n = base, 0
    while candidate.exists() and any(candidate.iterdir()):
        n += 1
        candidate = base.with_name(f"{base.name}-{n}")
    candidate.mkdir(parents=True, exist_ok=True)
    return candidate


def _resolve_config(args) -> dict:
    cfg = ex.load_bench_config("reference-bench")
    if args.config:
        cfg.update(ex.load_bench_config(args.config))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    # file-level keys for paths/seed/loss, flags win
    for key in ("data", "out", "loss", "seed"):
        if getattr(args, key, None) is None and key in cfg:
            setattr(args, key, cfg[key])
    return cfg


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    seed = 1 if args.seed is None else args.seed
    train_ds, test, means = ex.bench_data(cfg, seed, args.corruption)
    out = prepare_out_dir(args.out or "data")
    save_csv(train_ds, out / "train.csv")
    save_csv(test, out / "test.csv")
    meta = {"seed": seed, "corruption": cfg["corruption"] if args.corruption is None else args.corruption,
            "outliers": [int(i) for i in train_ds.outlier_mask.nonzero()[0]],
            "class_means": [[float(v) for v in m] for m in means]}
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if not args.data:
        raise InvalidInput("train needs --data")
    seed = 0 if args.seed is None else args.seed
    data = load_csv(args.data)
    tc = ex.train_config(cfg, args.loss or "datl", seed)
    model = ex.make_model(cfg, data.dim, seed)
    out = prepare_out_dir(args.out or "runs")
    best, report = train(model, data, tc)
    save_checkpoint(best, out / "model.ckpt")
    (out / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=1, sort_keys=True) + "\n",
                                      encoding="utf-8")
    (out / "timing.jsonl").write_text(
        "".join(json.dumps(t) + "\n" for t in report.timings()), encoding="utf-8")
    write_centers_csv(out / "centers.csv", report.center_log)
    print(out)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    data = load_csv(args.data)
    ks = _int_list(args.ks)
    if args.gallery:
        gallery = load_csv(args.gallery)
        values = score_embeddings(embed(model, data), data.labels, embed(model, gallery),
                        gallery.labels, ks, False)
        records = metrics_report("rank_k", values, len(data), len(gallery), args.seed)
    else:
        values = recall_at_ks(data, data, model, ks)
        records = metrics_report("recall_at_k", values, len(data), len(data), args.seed)
    out = prepare_out_dir(args.out or "eval")
    write_metrics_json(out / "metrics.json", records)
    print(out)
    return 0


def _seeds(args, cfg):
    return _int_list(args.seeds) if args.seeds else list(cfg["seeds"])


def cmd_sweep_enclosure(args) -> int:
    cfg = _resolve_config(args)
    fractions = _float_list(args.fractions) if args.fractions else list(ex.DEFAULT_FRACTIONS)
    rows, summary, _ = ex.sweep_enclosure(cfg, _seeds(args, cfg), fractions,
                                          variant=args.loss or "datl", corruption=args.corruption)
    out = prepare_out_dir(args.out or "sweep")
    _write_csv(out / "sweep.csv", summary)
    _write_csv(out / "sweep_runs.csv", rows)
    print(out)
    return 0


def cmd_compare_losses(args) -> int:
    cfg = _resolve_config(args)
    losses = args.losses.split(",") if args.losses else list(ex.DEFAULT_LOSSES)
    for v in losses:
        if v not in VARIANTS:
            raise InvalidInput(f"unknown loss variant {v!r}; valid: {', '.join(VARIANTS)}")
    rows, summary, _ = ex.compare_losses(cfg, _seeds(args, cfg), losses, corruption=args.corruption)
    out = prepare_out_dir(args.out or "compare")
    _write_csv(out / "compare.csv", summary)
    _write_csv(out / "compare_runs.csv", rows)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densemetric",
                                     description="Density-aware metric learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, training=True):
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="JSON file of bench/training keys, or 'reference-bench'")
        if training:
            p.add_argument("--loss", choices=VARIANTS)
            p.add_argument("--epochs", type=int)
            p.add_argument("--batch-size", type=int)
            p.add_argument("--enclosure-fraction", type=float)
            p.add_argument("--shift-iters", type=int)
            p.add_argument("--margin", type=float)
            p.add_argument("--margin2", type=float)

    p = sub.add_parser("gen-data", help="write a synthetic benchmark as CSV")
    common(p, training=False)
    p.add_argument("--corruption", type=float)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a CSV dataset")
    common(p)
    p.add_argument("--data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank-K / recall@K of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gallery")
    p.add_argument("--ks", default="1,10")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-enclosure", help="train DATL over several enclosure fractions")
    common(p)
    p.add_argument("--fractions")
    p.add_argument("--seeds")
    p.add_argument("--corruption", type=float)
    p.set_defaults(func=cmd_sweep_enclosure)

    p = sub.add_parser("compare-losses", help="train several losses on identical data")
    common(p)
    p.add_argument("--losses")
    p.add_argument("--seeds")
    p.add_argument("--corruption", type=float)
    p.set_defaults(func=cmd_compare_losses)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingStalled as exc:
        print(f"training stalled: {exc}", file=sys.stderr)
        return 3
    except (DensemetricError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
