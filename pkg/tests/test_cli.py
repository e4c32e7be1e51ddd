import csv
import json

import numpy as np
import pytest

from md2ga.cli import main

SMALL = ["--set", "data.J=3", "--set", "data.D=2", "--set", "data.T_p=4", "--set", "data.T_f=4",
         "--set", "data.count=20", "--set", "train.K=2", "--set", "train.batch_size=8",
         "--set", "train.hidden=8", "--set", "train.head_hidden=8", "--set", "train.gate_hidden=8",
         "--set", "train.embed_hidden=8"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_schedule_table(capsys):
    assert main(["schedule", "--tp", "10", "--tf", "10", "--k", "6"]) == 0
    rows = read_lines(capsys.readouterr().out)
    assert rows[0] == ["k", "L_k", "future_frames"]
    assert [int(r[1]) for r in rows[1:]] == [11, 12, 14, 16, 18, 20]
    assert [int(r[2]) for r in rows[1:]] == [1, 2, 4, 6, 8, 10]


def read_lines(text):
    return [line.split(",") for line in text.strip().splitlines()]


def test_schedule_rejects_k1(capsys):
    assert main(["schedule", "--tp", "10", "--tf", "10", "--k", "1"]) != 0
    err = json.loads(capsys.readouterr().err)
    assert "K >= 2" in err["message"]


def test_schedule_full_all(capsys):
    assert main(["schedule", "--tp", "10", "--tf", "10", "--k", "3", "--mode", "full-all"]) == 0
    rows = read_lines(capsys.readouterr().out)[1:]
    assert all(r[1] == "20" for r in rows)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "gen" / "data.csv"
    assert main(["gen-data", "--out", str(root / "gen")] + SMALL) == 0
    common = SMALL + ["--data", str(data)]
    assert main(["train", "--out", str(root / "train"), "--epochs", "3"] + common) == 0
    ckpt = str(root / "train" / "checkpoint.json")
    for cmd in ("eval", "consistency", "attention"):
        assert main([cmd, "--out", str(root / cmd), "--checkpoint", ckpt] + common) == 0
    return root


def test_every_command_writes_manifest(pipeline):
    for cmd in ("gen", "train", "eval", "consistency", "attention"):
        manifest = json.loads((pipeline / cmd / "manifest.json").read_text())
        assert manifest["checksums"]
        assert set(manifest["outputs"]) == set(manifest["checksums"])


def test_history_csv(pipeline):
    rows = read_csv(pipeline / "train" / "history.csv")
    assert rows[0] == ["epoch", "l1", "l2", "total", "val_mpjpe"]
    assert len(rows) == 4
    assert all(np.isfinite(float(v)) for r in rows[1:] for v in r)


def test_eval_emits_both_modes(pipeline):
    rows = read_csv(pipeline / "eval" / "eval.csv")
    assert [r[0] for r in rows[1:]] == ["blended", "last_decoder_only", "zero-velocity"]
    frames = read_csv(pipeline / "eval" / "eval_frames.csv")
    by_mode = {}
    for mode, frame, v in frames[1:]:
        by_mode.setdefault(mode, {})[int(frame)] = float(v)
    # with K=2 and T_p=T_f=4 the first decoder stops at frame 5
    for t in (6, 7, 8):
        assert by_mode["blended"][t] == by_mode["last_decoder_only"][t]


def test_consistency_csv(pipeline):
    rows = read_csv(pipeline / "consistency" / "consistency.csv")
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert mat.shape == (2, 2)
    assert np.array_equal(mat, mat.T) and np.all(np.diag(mat) == 0)


def test_attention_columns_sum_to_one(pipeline):
    rows = read_csv(pipeline / "attention" / "attention.csv")[1:]
    sums = {}
    for action, k, t, a in rows:
        sums[(action, t)] = sums.get((action, t), 0.0) + float(a)
    assert all(abs(s - 1.0) < 1e-12 for s in sums.values())
    logged = read_csv(pipeline / "attention" / "attention_log.csv")[1:]
    raw = {(a, k, t): float(v) for a, k, t, v in rows}
    for a, k, t, v in logged:
        assert float(v) == pytest.approx(np.log(raw[(a, k, t)]), abs=1e-15)


def test_ablate_has_eight_rows(tmp_path):
    out = tmp_path / "ablate"
    assert main(["ablate", "--out", str(out), "--epochs", "1",
                 "--set", "ablate.seeds=[0]"] + SMALL) == 0
    rows = read_csv(out / "ablation.csv")
    assert [r[0] for r in rows[1:]] == ["full", "single", "no_l1", "no_l2", "no_ga",
                                        "full-all", "disjoint", "zero-velocity"]


def test_fig1_command(tmp_path):
    out = tmp_path / "fig1"
    assert main(["fig1", "--out", str(out), "--epochs", "1", "--set", "fig1.pre=[1,3]",
                 "--set", "fig1.seeds=[0]"] + SMALL) == 0
    rows = read_csv(out / "fig1.csv")[1:]
    assert sum(r[0] == "Pre-1" for r in rows) == 1
    assert sum(r[0] == "Pre-3" for r in rows) == 3


def test_rerun_is_idempotent(tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--out", str(tmp_path / name), "--epochs", "2"] + SMALL) == 0
    for f in ("history.csv", "checkpoint.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 5}}))
    out = tmp_path / "t"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--epochs", "1"] + SMALL) == 0
    assert len(read_csv(out / "history.csv")) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["train"]["epochs"] == 1


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MD2GA_OUT", str(tmp_path / "root"))
    assert main(["gen-data"] + SMALL) == 0
    assert (tmp_path / "root" / "gen-data" / "data.csv").exists()


def test_missing_checkpoint_is_structured_error(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path), "--checkpoint",
                 str(tmp_path / "nope.json")] + SMALL) != 0
    assert "error" in json.loads(capsys.readouterr().err)


def test_malformed_data_is_structured_error(tmp_path, capsys):
    gen = tmp_path / "gen"
    assert main(["gen-data", "--out", str(gen)] + SMALL) == 0
    path = gen / "data.csv"
    path.write_text(path.read_text()[:500])
    assert main(["train", "--out", str(tmp_path / "t"), "--data", str(path)] + SMALL) != 0
    assert json.loads(capsys.readouterr().err)["error"] == "CsvParseError"
