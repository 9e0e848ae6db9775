"""
テスト共通のフィクスチャ
========================

- 乱数は必ず種を固定した Generator を使う
- 小さなモデル設定（d_model=8）と小さな合成コーパス
- ファイル出力は tmp_path の下だけ
"""

import os
from pathlib import Path

import numpy as np
import pytest

from missformer.config import CorruptionConfig, GeneratorConfig, ModelConfig
from missformer.corpus import clear_cache
from missformer.models import ObservedSequence, Trajectory
from missformer.trajgen import generate

DATA_DIR_ENV = "MISSFORMER_DATA_DIR"


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=8, n_head=1, n_layer=1, d_ff=16, k_max=20, seed=3)


@pytest.fixture
def object_corpus():
    return generate(GeneratorConfig.object_regime(seed=11), 40)


@pytest.fixture
def line_trajectory():
    """(0,0), (5,0), (10,0), ... の等速直線"""
    k = 10
    positions = np.stack([np.arange(k) * 5.0, np.zeros(k)], axis=1)
    return Trajectory(positions, dt=1.0)


@pytest.fixture
def clean():
    return CorruptionConfig()


def make_obs(values, missing, mode="positions"):
    values = np.asarray(values, dtype=np.float64)
    missing = np.asarray(missing, dtype=np.uint8)
    values = values.copy()
    values[missing == 1] = 0.0
    return ObservedSequence(values, missing, mode=mode)


@pytest.fixture
def obs_factory():
    return make_obs


@pytest.fixture(autouse=True)
def _isolate(monkeypatch, tmp_path):
    # 既定の出力先を一時ディレクトリへ、コーパスキャッシュは毎回空にする
    monkeypatch.setenv("MISSFORMER_OUTPUT_DIR", str(tmp_path / "runs"))
    clear_cache()
    yield
    clear_cache()


@pytest.fixture
def data_dir():
    value = os.environ.get(DATA_DIR_ENV)
    if not value or not Path(value).is_dir():
        pytest.skip(f"{DATA_DIR_ENV} が設定されていないため実データのテストを省略")
    return Path(value)
