import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from kgatt.cli import main


@pytest.fixture
def data(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "data"
    d.mkdir()
    names = [f"e{k}" for k in range(25)]
    rows = sorted({(names[a], f"r{rng.integers(3)}", names[b])
                   for a, b in rng.integers(0, 25, size=(140, 2)) if a != b})
    train, valid, test = rows[:100], rows[100:110], rows[110:120]
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        (d / f"{name}.txt").write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in part))
    return d


def files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.name != "config.json"}


def test_prepare_deterministic(data, tmp_path):
    for run in ("a", "b"):
        assert main(["prepare", "--data", str(data), "--condition", "half", "--seed", "7",
                     "--out", str(tmp_path / run)]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    ca = json.loads((tmp_path / "a" / "config.json").read_text())
    assert ca["seed"] == 7 and ca["condition"] == "half" and ca["command"] == "prepare"


def test_prepare_sweep(data, tmp_path):
    assert main(["prepare", "--data", str(data), "--condition", "sweep", "--fraction", "0.3",
                 "--out", str(tmp_path / "s")]) == 0
    doc = json.loads((tmp_path / "s" / "condition.json").read_text())
    assert doc["input_edges"] == 100 and doc["adjacency_edges"] == 130
    assert len((tmp_path / "s" / "train.txt").read_text().splitlines()) == 130


def test_invalid_condition(data, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["prepare", "--data", str(data), "--condition", "bogus", "--out", str(tmp_path)])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "full" in err and "noised" in err and "sweep" in err


def test_gen_dd(tmp_path, capsys):
    assert main(["gen-dd", "--p", "0.75", "--q", "0.0", "--nodes", "200", "--out",
                 str(tmp_path / "dd")]) == 0
    line = capsys.readouterr().out
    stats = json.loads((tmp_path / "dd" / "dd_stats.json").read_text())
    assert stats["nodes"] == 200 and f"edge_vertex_ratio={stats['edge_vertex_ratio']:.4f}" in line
    assert len((tmp_path / "dd" / "dd_edges.tsv").read_text().splitlines()) == stats["edges"]


def test_pipeline(data, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--dim", "8", "--epochs", "3",
                 "--out", str(run)]) == 0
    assert (run / "train_log.csv").read_text().startswith("epoch,loss,val_mrr\n")
    ck = ["--data", str(data), "--checkpoint", str(run)]

    assert main(["evaluate", *ck, "--out", str(tmp_path / "ev")]) == 0
    m = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    for key in ("mrr_raw", "mrr_filtered", "hits@1_filtered", "hits@3_filtered", "hits@10_filtered"):
        assert key in m

    assert main(["export-weights", *ck, "--checkpoint", str(run), "--flag-decile", "0.1",
                 "--out", str(tmp_path / "ex")]) == 0
    assert len((tmp_path / "ex" / "weights.csv").read_text().splitlines()) == 1 + 200
    summary = json.loads((tmp_path / "ex" / "summary.json").read_text())
    assert summary["flagged"] == 20 and summary["self_similarity_r"] == pytest.approx(1.0)

    assert main(["interrogate", *ck, "e1", "r0", "e2", "--out", str(tmp_path / "in")]) == 0
    assert (tmp_path / "in" / "occlusion.csv").exists()
    assert main(["influencers", *ck, "e1", "-k", "3", "--out", str(tmp_path / "inf")]) == 0
    assert (tmp_path / "inf" / "influencers.csv").exists()


def test_config_file_and_override(data, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"condition": "skip", "seed": 3}))
    assert main(["prepare", "--config", str(cfg), "--data", str(data), "--seed", "4",
                 "--out", str(tmp_path / "o")]) == 0
    echo = json.loads((tmp_path / "o" / "config.json").read_text())
    assert echo["condition"] == "skip" and echo["seed"] == 4


def test_unknown_config_key(data, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rate": 1}))
    assert main(["prepare", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_missing_checkpoint(data, tmp_path, capsys):
    assert main(["evaluate", "--data", str(data), "--checkpoint", str(tmp_path / "nope.npz"),
                 "--out", str(tmp_path / "e")]) == 1
    assert "checkpoint not found" in capsys.readouterr().err


def test_missing_graph(tmp_path, capsys):
    assert main(["train", "--graph", str(tmp_path / "none"), "--out", str(tmp_path / "t")]) == 1
    assert "graph snapshot not found" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("kgatt") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["kgatt", "gen-dd", "--nodes", "50", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "edge_vertex_ratio=" in res.stdout


def test_module_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "kgatt.cli", "prepare", "--condition", "x"],
                         capture_output=True, text=True)
    assert res.returncode == 2
