"""
corpus.py / meta.py のテスト
"""

import numpy as np
import pytest

from missformer import corpus as corpus_mod
from missformer.config import CorruptionConfig
from missformer.corpus import load_corpus, load_observations, read_config_header, save_corpus, save_observations
from missformer.corrupt import corrupt_many, to_offsets
from missformer.errors import ParseError
from missformer.meta import RunMeta
from missformer.models import EvalReport


# ----------------------------------------
# コーパスファイル
# ----------------------------------------
def test_corpus_file_round_trip(tmp_path, object_corpus):
    path = tmp_path / "corpus.txt"
    assert save_corpus(object_corpus, path) == len(object_corpus)
    loaded = load_corpus(path)
    assert len(loaded) == len(object_corpus)
    for a, b in zip(object_corpus, loaded):
        np.testing.assert_array_equal(a.positions, b.positions)
        assert a.dt == b.dt


def test_broken_line_strict_and_lenient(tmp_path, object_corpus, caplog):
    path = tmp_path / "corpus.txt"
    save_corpus(object_corpus[:3], path)
    lines = path.read_text(encoding="utf-8").splitlines()
    lines.insert(1, "# コメント行")
    lines.insert(2, "4 1.0 0 0 1 1")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    with pytest.raises(ParseError) as e:
        load_corpus(path)
    assert e.value.line_no == 3

    with caplog.at_level("WARNING"):
        assert len(load_corpus(path, lenient=True)) == 3
    assert any("スキップ" in r.message for r in caplog.records)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "none.txt")


def test_cache_is_keyed_by_mtime(tmp_path, object_corpus, monkeypatch):
    path = tmp_path / "corpus.txt"
    save_corpus(object_corpus[:4], path)
    calls = []
    original = corpus_mod._read_records

    def counting(*args, **kwargs):
        calls.append(args[0])
        return original(*args, **kwargs)

    monkeypatch.setattr(corpus_mod, "_read_records", counting)
    load_corpus(path)
    load_corpus(path)
    assert len(calls) == 1
    load_corpus(path, force_reload=True)
    assert len(calls) == 2


def test_observation_file_round_trip(tmp_path, object_corpus):
    obs = corrupt_many(object_corpus[:5], CorruptionConfig(noise_std=0.2, missing_prob=0.3, seed=2))
    obs = [to_offsets(o) for o in obs]
    path = tmp_path / "obs.txt"
    save_observations(obs, path)
    loaded = load_observations(path, dt=1.0)
    for a, b in zip(obs, loaded):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.missing, b.missing)
        assert b.mode == "offsets"


# ----------------------------------------
# run manifest
# ----------------------------------------
def test_manifest_skeleton_and_updates(tmp_path):
    meta = RunMeta(tmp_path / "run" / "run.json").load()
    assert meta.status == "running" and meta.last_finite_epoch is None
    meta.set_command("eval", {"task": "filtering"})
    meta.record_epoch(0, 1.5, 0.0, 12.0)
    meta.record_report(EvalReport.from_errors("filtering", [0.1, 0.3], [0.2, 0.4]))
    meta.record_artifact("records", tmp_path / "eval.txt")
    meta.finish("finished")
    meta.save()

    again = RunMeta(tmp_path / "run" / "run.json").load()
    assert again.status == "finished"
    assert again.last_finite_epoch == 0
    assert again.meta["reports"][0]["ade"] == pytest.approx(0.2)
    assert "per_sample" not in again.meta["reports"][0]
    assert again.meta["artifacts"]["records"].endswith("eval.txt")
    assert again.meta["created_at"] <= again.meta["updated_at"]


def test_config_header_is_written_and_skipped(tmp_path, object_corpus):
    path = tmp_path / "corpus.txt"
    header = {"generator": {"regime": "object", "seed": 11}, "n": 3}
    assert save_corpus(object_corpus[:3], path, config=header) == 3
    assert path.read_text(encoding="utf-8").startswith("# config: ")
    assert read_config_header(path) == header
    assert len(load_corpus(path)) == 3

    plain = tmp_path / "plain.txt"
    save_corpus(object_corpus[:3], plain)
    assert read_config_header(plain) is None


def test_broken_config_header(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("# config: {not json\n", encoding="utf-8")
    with pytest.raises(ParseError) as e:
        read_config_header(path)
    assert e.value.line_no == 1
