"""
cli.py のテスト
- サブコマンドの入出力と終了コード（0 成功 / 1 使い方 / 2 実行時エラー）
- 小さなモデル設定で train → eval → report を通す
"""

import json

import pytest

from missformer.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from missformer.corpus import load_corpus, load_observations, read_config_header
from missformer.evaluation import read_records
from missformer.models import Trajectory

TINY_TOML = """
[model]
d_model = 8
n_head = 1
n_layer = 1
d_ff = 16

[train]
epochs = 2
batch_size = 16

[eval]
n_samples = 20
seed = 1
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML, encoding="utf-8")
    return path


@pytest.fixture
def trained(tmp_path, cfg_path):
    out_dir = tmp_path / "train"
    code = run(["train", "--config", str(cfg_path), "--samples", "30", "--out-dir", str(out_dir), "--seed", "3"])
    assert code == EXIT_OK
    return out_dir


# ----------------------------------------
# generate / corrupt
# ----------------------------------------
def test_generate_count_contract(tmp_path):
    out = tmp_path / "corpus.txt"
    assert run(["generate", "--regime", "object", "--n", "1000", "--seed", "7", "--out", str(out)]) == EXIT_OK
    header = read_config_header(out)
    assert header["generator"]["seed"] == 7 and header["n"] == 1000
    lines = [line for line in out.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    assert len(lines) == 1000
    assert all(8 <= Trajectory.from_line(line).k <= 20 for line in lines[:50])


def test_generate_length_flags(tmp_path):
    out = tmp_path / "ped.txt"
    args = ["generate", "--regime", "pedestrian", "--n", "20", "--min-len", "20", "--max-len", "20", "--out", str(out)]
    assert run(args) == EXIT_OK
    corpus = load_corpus(out)
    assert {t.k for t in corpus} == {20}
    assert corpus[0].dt == pytest.approx(0.4)


def test_corrupt_writes_observations(tmp_path):
    corpus = tmp_path / "c.txt"
    run(["generate", "--n", "10", "--out", str(corpus)])
    out = tmp_path / "obs.txt"
    args = ["corrupt", "--corpus", str(corpus), "--missing", "0.5", "--mode", "offsets", "--out", str(out)]
    assert run(args) == EXIT_OK
    observations = load_observations(out)
    assert len(observations) == 10
    assert all(o.mode == "offsets" for o in observations)
    header = read_config_header(out)
    assert header["corrupt"]["missing_prob"] == 0.5 and header["mode"] == "offsets"


def test_broken_corpus_line(tmp_path):
    corpus = tmp_path / "c.txt"
    run(["generate", "--n", "5", "--out", str(corpus)])
    with corpus.open("a", encoding="utf-8") as f:
        f.write("3 1.0 0 0 1\n")
    out = tmp_path / "obs.txt"
    assert run(["corrupt", "--corpus", str(corpus), "--out", str(out)]) == EXIT_RUNTIME
    assert run(["corrupt", "--corpus", str(corpus), "--lenient", "--out", str(out)]) == EXIT_OK
    assert len(load_observations(out)) == 5


# ----------------------------------------
# 終了コード
# ----------------------------------------
@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["generate", "--n", "3"],
        ["eval", "--samples", "5"],
        ["eval", "--baseline", "linear", "--ckpt", "m.bin"],
        ["eval", "--baseline", "linear", "--samples", "5", "--missing", "1.5"],
        ["report"],
    ],
)
def test_usage_errors(argv, capsys):
    assert run(argv) == EXIT_USAGE
    assert capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run(["generate", "--n", "3", "--out", str(tmp_path / "x"), "--config", str(tmp_path / "none.toml")]) == EXIT_USAGE


def test_unreadable_checkpoint(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint\n")
    assert run(["eval", "--ckpt", str(bad), "--samples", "5"]) == EXIT_RUNTIME
    assert run(["eval", "--ckpt", str(tmp_path / "none.bin"), "--samples", "5"]) == EXIT_RUNTIME


# ----------------------------------------
# train → eval → report
# ----------------------------------------
def test_train_outputs(trained):
    assert (trained / "model.bin").exists()
    log = (trained / "train.log").read_text(encoding="utf-8").splitlines()
    assert [line.split()[0] for line in log] == ["0", "1"]
    manifest = json.loads((trained / "run.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "finished"
    assert manifest["config"]["model"]["d_model"] == 8


def test_eval_and_report(trained, tmp_path, cfg_path, capsys):
    records = tmp_path / "eval.txt"
    args = ["eval", "--config", str(cfg_path), "--ckpt", str(trained / "model.bin"), "--records", str(records)]
    assert run(args) == EXIT_OK
    reports = read_records(records)
    assert len(reports) == 1 and reports[0].n_samples == 20
    assert records.read_text(encoding="utf-8").startswith("# ")

    capsys.readouterr()
    assert run(["report", "--records", str(records)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "measured" in out and "cited, not reproduced" in out


def test_eval_baselines(cfg_path):
    for name in ("linear", "kalman", "identity"):
        args = ["eval", "--config", str(cfg_path), "--baseline", name, "--samples", "10", "--noise", "0.5"]
        assert run(args) == EXIT_OK


def test_eval_prediction_task(cfg_path):
    args = ["eval", "--config", str(cfg_path), "--baseline", "linear", "--task", "prediction", "--samples", "10"]
    assert run(args) == EXIT_OK


def test_predict_appends_horizon(trained, tmp_path, cfg_path):
    out = tmp_path / "pred.txt"
    args = [
        "predict", "--config", str(cfg_path), "--ckpt", str(trained / "model.bin"),
        "--samples", "5", "--sample", "2", "--horizon", "4", "--out", str(out),
    ]
    assert run(args) == EXIT_OK
    pred = load_corpus(out)[0]
    assert read_config_header(out)["horizon"] == 4
    assert 8 <= pred.k <= 20

    too_far = args[:-4] + ["--horizon", "30"]
    assert run(too_far) == EXIT_USAGE


def test_plot_commands(trained, tmp_path, cfg_path):
    attn = tmp_path / "attn.svg"
    args = ["plot-attn", "--config", str(cfg_path), "--ckpt", str(trained / "model.bin"),
            "--samples", "5", "--sample", "3", "--missing", "0.3", "--out", str(attn)]
    assert run(args) == EXIT_OK
    assert attn.exists()
    sidecar = json.loads(attn.with_suffix(".json").read_text(encoding="utf-8"))
    assert sidecar["kind"] == "attention" and len(sidecar["layers"]) == 1

    traj = tmp_path / "traj.svg"
    args = ["plot-traj", "--config", str(cfg_path), "--baseline", "linear",
            "--samples", "5", "--missing", "0.4", "--out", str(traj)]
    assert run(args) == EXIT_OK
    sidecar = json.loads(traj.with_suffix(".json").read_text(encoding="utf-8"))
    assert len(sidecar["crosses"]) + len(sidecar["observed"]) == len(sidecar["truth"])

    assert run(args[:-2] + ["--sample", "99", "--out", str(traj)]) == EXIT_USAGE
