import csv
import hashlib
import json

import pytest

from densemetric.cli import main

TINY = {"samples_per_class": 20, "test_samples_per_class": 10, "dim": 8, "hidden_dims": [8],
        "embedding_dim": 4, "epochs": 3, "patience_epochs": 5}


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return str(p)


@pytest.fixture
def bench(tmp_path, tiny_cfg):
    assert main(["gen-data", "--config", tiny_cfg, "--seed", "2", "--out", str(tmp_path / "d")]) == 0
    return tmp_path / "d"


def sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


def test_gen_data_stable_hash(tmp_path, tiny_cfg, bench):
    assert main(["gen-data", "--config", tiny_cfg, "--seed", "2", "--out", str(tmp_path / "d")]) == 0
    again = tmp_path / "d-1"   # non-empty target gets a suffix
    assert sha(bench / "train.csv") == sha(again / "train.csv")
    meta = json.loads((bench / "meta.json").read_text())
    assert len(meta["outliers"]) == 5 * 3


def test_train_outputs_and_determinism(tmp_path, tiny_cfg, bench):
    data = bench / "train.csv"
    before = sha(data)
    for _ in range(2):
        assert main(["train", "--config", tiny_cfg, "--loss", "datl", "--data", str(data),
                     "--seed", "9", "--out", str(tmp_path / "runs")]) == 0
    first, second = tmp_path / "runs", tmp_path / "runs-1"
    for name in ("report.jsonl", "model.ckpt", "centers.csv", "summary.json"):
        assert (first / name).exists()
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert sha(data) == before
    lines = (first / "report.jsonl").read_text().splitlines()
    assert len(lines) == 3 and "wall_ms" not in lines[0]


def test_invalid_loss_exit_2(tmp_path, bench, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--loss", "bogus", "--data", str(bench / "train.csv")])
    assert exc.value.code == 2
    assert "datl" in capsys.readouterr().err


def test_invalid_loss_in_config_exit_2(tmp_path, bench, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({**TINY, "loss": "bogus"}))
    code = main(["train", "--config", str(cfg), "--data", str(bench / "train.csv"),
                 "--out", str(tmp_path / "r")])
    assert code == 2
    assert "triplet_vanilla" in capsys.readouterr().err


def test_missing_data_exit_2(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.csv")]) == 2


def test_eval(tmp_path, tiny_cfg, bench, capsys):
    main(["train", "--config", tiny_cfg, "--data", str(bench / "train.csv"), "--out",
          str(tmp_path / "r")])
    model = str(tmp_path / "r" / "model.ckpt")
    assert main(["eval", "--model", model, "--data", str(bench / "test.csv"), "--ks", "1,5",
                 "--out", str(tmp_path / "e")]) == 0
    recs = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert [r["k"] for r in recs] == [1, 5]
    assert main(["eval", "--model", model, "--data", str(bench / "test.csv"),
                 "--gallery", str(bench / "train.csv"), "--ks", "1", "--out", str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "metrics.json").read_text())[0]["metric"] == "rank_k"
    assert main(["eval", "--model", model, "--data", str(bench / "test.csv"), "--ks", "10000"]) == 2
    assert "exceeds" in capsys.readouterr().err


def test_stall_exit_3(tmp_path, tiny_cfg):
    data = tmp_path / "flat.csv"
    data.write_text("".join(f"{c},{c + 1}.0,{2 - c}.5\n" for c in (0, 1, 2) for _ in range(4)))
    cfg = tmp_path / "stall.json"
    cfg.write_text(json.dumps({**TINY, "hard_mining": "always", "validation_fraction": 0.25}))
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r")]) == 3


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sweep_and_compare_rows(tmp_path, tiny_cfg):
    assert main(["sweep-enclosure", "--config", tiny_cfg, "--seeds", "1",
                 "--out", str(tmp_path / "s")]) == 0
    assert len(read_rows(tmp_path / "s" / "sweep.csv")) == 4
    assert main(["compare-losses", "--config", tiny_cfg, "--seeds", "1",
                 "--out", str(tmp_path / "c")]) == 0
    rows = read_rows(tmp_path / "c" / "compare.csv")
    assert [r["loss"] for r in rows] == ["triplet_vanilla", "triplet_center", "datl", "daql"]


def test_sweep_fraction_one_matches_centroid_baseline(tmp_path, tiny_cfg):
    main(["sweep-enclosure", "--config", tiny_cfg, "--seeds", "1", "--fractions", "1.0",
          "--out", str(tmp_path / "s")])
    main(["compare-losses", "--config", tiny_cfg, "--seeds", "1", "--losses", "triplet_center",
          "--out", str(tmp_path / "c")])
    s = read_rows(tmp_path / "s" / "sweep_runs.csv")[0]
    c = read_rows(tmp_path / "c" / "compare_runs.csv")[0]
    assert s["recall@1"] == c["recall@1"] and s["total_tuples"] == c["total_tuples"]
