"""
evaluation.py のテスト
- ADE / FDE の値
- 線形 / 恒等ベースライン
- タスク別の評価ループ
- leave-one-out とレポート出力
"""

import numpy as np
import pytest

from missformer.config import CorruptionConfig, EvalConfig, GeneratorConfig
from missformer.corrupt import corrupt
from missformer.errors import ConfigError, ModeError, ShapeError
from missformer.evaluation import (
    CITED_NOTE,
    Estimator,
    IdentityBaseline,
    LinearBaseline,
    ade,
    build_eval_inputs,
    evaluate,
    evaluate_windows,
    fde,
    leave_one_out,
    linear_baseline,
    loo_frame,
    read_records,
    render_table,
    results_frame,
    write_records,
)
from missformer.models import EvalReport, SampleSet, Trajectory
from missformer.network import MissFormerModel
from missformer.tasks import CITED_RESULTS, SPLITS
from missformer.trajgen import generate


# ----------------------------------------
# 指標
# ----------------------------------------
def test_ade_identical_is_zero(line_trajectory):
    assert ade(line_trajectory, line_trajectory) == 0.0


def test_ade_three_four_five(line_trajectory):
    shifted = line_trajectory.positions + np.array([3.0, 4.0])
    assert ade(shifted, line_trajectory) == pytest.approx(5.0)


def test_ade_matches_loop_oracle(rng):
    a, b = rng.normal(size=(9, 2)), rng.normal(size=(9, 2))
    expected = sum(np.sqrt((a[i, 0] - b[i, 0]) ** 2 + (a[i, 1] - b[i, 1]) ** 2) for i in range(9)) / 9
    assert ade(a, b) == pytest.approx(expected, abs=1e-12)


def test_ade_eval_range(rng):
    a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    d = np.linalg.norm(a - b, axis=1)
    assert ade(a, b, slice(2, 6)) == pytest.approx(d[2:].mean())
    assert ade(a, b, [0, 5]) == pytest.approx((d[0] + d[5]) / 2)
    with pytest.raises(ShapeError):
        ade(a, b, slice(6, 6))
    with pytest.raises(ShapeError):
        ade(a, b[:5])


def test_ade_translation_invariant(rng):
    a, b = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    c = np.array([123.0, -45.0])
    assert ade(a + c, b + c) == pytest.approx(ade(a, b), abs=1e-10)


def test_fde_examples(line_trajectory):
    assert fde(line_trajectory, line_trajectory) == 0.0
    est = line_trajectory.positions.copy()
    est[-1] += [0.0, 2.0]
    assert fde(est, line_trajectory) == pytest.approx(2.0)


def test_report_std_is_population_std():
    report = EvalReport.from_errors("reconstruction", [1.0, 3.0], [2.0, 4.0])
    assert report.ade == 2.0 and report.ade_std == 1.0 and report.fde == 3.0
    assert report.n_samples == 2


# ----------------------------------------
# ベースライン
# ----------------------------------------
def test_linear_baseline_exact_on_linear_truth(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig())
    assert ade(LinearBaseline().estimate(obs), line_trajectory) == pytest.approx(0.0, abs=1e-10)


def test_linear_baseline_extrapolates(obs_factory):
    obs = obs_factory([[0, 0], [1, 0], [2, 0]], [0, 0, 0])
    pred = linear_baseline(obs, horizon=2)
    np.testing.assert_allclose(pred.positions[3:], [[3, 0], [4, 0]], atol=1e-12)


def test_linear_baseline_uses_observed_steps_only(rng, obs_factory):
    values = rng.normal(size=(6, 2))
    missing = np.array([0, 0, 1, 0, 0, 1])
    obs = obs_factory(values, missing)
    t = np.flatnonzero(missing == 0).astype(float)
    a = np.stack([np.ones_like(t), t], axis=1)
    coef = np.linalg.solve(a.T @ a, a.T @ values[missing == 0])
    expected = coef[0] + np.arange(6)[:, None] * coef[1]
    np.testing.assert_allclose(linear_baseline(obs).positions, expected, atol=1e-10)


def test_linear_baseline_needs_two_observations(obs_factory):
    with pytest.raises(ShapeError):
        linear_baseline(obs_factory([[1, 1], [0, 0], [0, 0]], [0, 1, 1]))


def test_linear_baseline_rejects_offsets(obs_factory):
    from missformer.corrupt import to_offsets

    with pytest.raises(ModeError):
        linear_baseline(to_offsets(obs_factory([[0, 0], [1, 0], [2, 0]], [0, 0, 0])))


def test_identity_baseline_holds_last_value(obs_factory):
    obs = obs_factory([[0, 0], [0, 0], [2, 2], [0, 0]], [1, 0, 0, 1])
    out = IdentityBaseline().estimate(obs)
    np.testing.assert_array_equal(out, [[0, 0], [0, 0], [2, 2], [2, 2]])


def test_estimator_protocol():
    assert isinstance(LinearBaseline(), Estimator)
    assert isinstance(IdentityBaseline(), Estimator)
    assert isinstance(MissFormerModel.__new__(MissFormerModel), Estimator)


# ----------------------------------------
# 評価ループ
# ----------------------------------------
class _Oracle:
    """評価コーパスの真値をそのまま返すスタブ"""

    def __init__(self, corpus):
        self._it = iter(corpus)

    def estimate(self, obs):
        truth = next(self._it)
        assert truth.k == obs.k
        return truth.positions.copy()


class _Zeros:
    def estimate(self, obs):
        return np.zeros((obs.k, 2))


@pytest.mark.parametrize("task", ["reconstruction", "filtering", "prediction"])
def test_oracle_scores_zero(task):
    corpus = generate(GeneratorConfig.object_regime(length_range=(14, 20), seed=4), 20)
    cfg = CorruptionConfig(noise_std=1.0, missing_prob=0.1, seed=3)
    report = evaluate(_Oracle(corpus), corpus, cfg, task=task)
    assert report.ade == 0.0 and report.fde == 0.0
    assert report.n_samples == 20 and report.task == task


def test_prediction_scores_only_the_tail():
    corpus = generate(GeneratorConfig.object_regime(length_range=(14, 20), seed=8), 15)
    cfg = CorruptionConfig(seed=1)
    eval_cfg = EvalConfig(task="prediction", obs_range=(8, 14), pred_range=(6, 12), seed=2)
    _, n_preds = build_eval_inputs(corpus, cfg, eval_cfg)
    assert all(6 <= n <= 12 and t.k - n >= 8 for n, t in zip(n_preds, corpus))

    report = evaluate(_Zeros(), corpus, cfg, task="prediction", eval_config=eval_cfg)
    expected = [
        np.linalg.norm(t.positions[t.k - n:], axis=1).mean() for t, n in zip(corpus, n_preds)
    ]
    assert report.ade == pytest.approx(np.mean(expected))
    assert report.ade_std == pytest.approx(np.std(expected))


def test_eval_inputs_are_reproducible(object_corpus):
    cfg = CorruptionConfig(noise_std=0.5, missing_prob=0.2, seed=6)
    a, _ = build_eval_inputs(object_corpus, cfg, EvalConfig())
    b, _ = build_eval_inputs(object_corpus, cfg, EvalConfig())
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
        np.testing.assert_array_equal(x.missing, y.missing)


def test_short_trajectories_still_predict_a_tail():
    # 長さ 8 では 観測 8 以上 + 予測 6 以上 を満たせない
    corpus = generate(GeneratorConfig.object_regime(length_range=(8, 8), seed=5), 20)
    eval_cfg = EvalConfig(task="prediction", obs_range=(8, 14), pred_range=(6, 12))
    observations, n_preds = build_eval_inputs(corpus, CorruptionConfig(), eval_cfg)
    assert all(1 <= n <= 7 for n in n_preds)
    for obs, n in zip(observations, n_preds):
        assert obs.missing[-n:].all() and not obs.missing[:-n].any()

    report = evaluate(IdentityBaseline(), corpus, CorruptionConfig(), task="prediction")
    assert report.ade > 0.0 and report.fde > 0.0


def test_evaluation_is_bit_exact_across_runs(tiny_config):
    corpus = generate(GeneratorConfig.object_regime(length_range=(14, 20), seed=9), 30)
    cfg = CorruptionConfig(noise_std=0.3, missing_prob=0.1, seed=4)
    model = MissFormerModel(tiny_config)
    for task in ("reconstruction", "filtering", "prediction"):
        first = evaluate(model, corpus, cfg, task=task)
        second = evaluate(model, corpus, cfg, task=task)
        assert first == second


def test_eval_seed_changes_tail_lengths():
    corpus = generate(GeneratorConfig.object_regime(length_range=(14, 20), seed=9), 30)
    cfg = CorruptionConfig(seed=4)
    _, a = build_eval_inputs(corpus, cfg, EvalConfig(task="prediction", obs_range=(8, 14), seed=1))
    _, b = build_eval_inputs(corpus, cfg, EvalConfig(task="prediction", obs_range=(8, 14), seed=2))
    _, again = build_eval_inputs(corpus, cfg, EvalConfig(task="prediction", obs_range=(8, 14), seed=1))
    assert a == again
    assert a != b


def test_evaluate_model_batches(tiny_config, object_corpus):
    model = MissFormerModel(tiny_config)
    report = evaluate(model, object_corpus, CorruptionConfig(missing_prob=0.1), label="untrained")
    assert report.n_samples == len(object_corpus)
    assert np.isfinite(report.ade) and report.label == "untrained"


def test_evaluate_empty_corpus():
    with pytest.raises(ShapeError):
        evaluate(LinearBaseline(), [], CorruptionConfig())


# ----------------------------------------
# leave-one-out
# ----------------------------------------
def _linear_windows(split, n, velocity):
    t = np.arange(20, dtype=float)[:, None]
    windows = np.stack([np.array([i, -i], dtype=float) + t * velocity for i in range(n)])
    return SampleSet(windows, split=split)


@pytest.fixture
def five_splits():
    return {s: _linear_windows(s, 3 + i, np.array([0.4, 0.1 * i])) for i, s in enumerate(SPLITS)}


def test_leave_one_out_linear_is_exact(five_splits):
    seen = []

    def train_fn(held_out, training):
        seen.append((held_out, sorted(ss.split for ss in training)))
        return LinearBaseline()

    result = leave_one_out(five_splits, train_fn, label="Linear interpolation")
    assert [h for h, _ in seen] == list(SPLITS)
    for held_out, names in seen:
        assert held_out not in names and len(names) == 4
    assert result.average_ade == pytest.approx(0.0, abs=1e-9)
    assert set(result.per_split) == set(SPLITS)
    assert result.to_dict()["average"]["fde"] == pytest.approx(0.0, abs=1e-9)


def test_leave_one_out_average_is_mean_of_splits(five_splits):
    result = leave_one_out(five_splits, lambda h, tr: _Zeros())
    expected = np.mean([result.per_split[s].ade for s in SPLITS])
    assert result.average_ade == pytest.approx(expected)


def test_leave_one_out_missing_split(five_splits):
    del five_splits["hotel"]
    with pytest.raises(ConfigError):
        leave_one_out(five_splits, lambda h, tr: LinearBaseline())


def test_leave_one_out_protocol_mismatch(five_splits):
    five_splits["eth"] = SampleSet(np.zeros((1, 16, 2)), obs_len=8, pred_len=8, split="eth")
    with pytest.raises(ConfigError):
        leave_one_out(five_splits, lambda h, tr: LinearBaseline())


def test_evaluate_windows_hides_prediction_part():
    windows = _linear_windows("eth", 2, np.array([1.0, 0.0])).windows
    windows[:, 8:] += 100.0  # 予測部分だけ大きくずらす
    report = evaluate_windows(IdentityBaseline(), SampleSet(windows))
    # 恒等ベースラインは観測最後の値 (7, .) を保持する
    assert report.fde == pytest.approx(np.linalg.norm(windows[0, -1] - windows[0, 7]))


# ----------------------------------------
# レポート
# ----------------------------------------
def test_records_round_trip(tmp_path):
    reports = [
        EvalReport.from_errors("reconstruction", [0.1, 0.2], [0.3, 0.4]),
        EvalReport.from_errors("prediction", [1.5], [2.5]),
    ]
    path = write_records(reports, tmp_path / "out" / "eval.txt", header="model: d_model=8\nseed: 1")
    text = path.read_text(encoding="utf-8").splitlines()
    assert text[:2] == ["# model: d_model=8", "# seed: 1"]
    back = read_records(path)
    assert [(r.task, r.n_samples, r.ade, r.ade_std, r.fde) for r in back] == [
        (r.task, r.n_samples, r.ade, r.ade_std, r.fde) for r in reports
    ]


def test_results_frame_marks_cited_rows():
    frame = results_frame([EvalReport.from_errors("filtering", [0.2], [0.3], label="run")])
    assert frame.iloc[0]["source"] == "measured"
    cited = frame[frame["source"] == CITED_NOTE]
    assert len(cited) == 4 and set(cited["task"]) == {"filtering"}
    assert "run" in render_table(frame)

    only = results_frame([EvalReport.from_errors("filtering", [0.2], [0.3])], include_reference=False)
    assert len(only) == 1


def test_loo_frame_layout(five_splits):
    result = leave_one_out(five_splits, lambda h, tr: LinearBaseline(), label="mine")
    frame = loo_frame([result])
    assert len(frame) == len(CITED_RESULTS) + 1
    assert frame.iloc[-1]["approach"] == "mine"
    assert frame.iloc[-1]["source"] == "measured"
    assert frame.iloc[0]["BIWI:ETH"] == "1.33/2.94"
