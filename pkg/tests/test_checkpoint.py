"""
checkpoint.py のテスト
"""

import numpy as np
import pytest

from missformer.checkpoint import MAGIC, load_checkpoint, read_header, save_checkpoint
from missformer.config import ModelConfig
from missformer.errors import CheckpointError
from missformer.network import MissFormerModel


@pytest.fixture
def model():
    return MissFormerModel(ModelConfig(d_model=8, n_head=2, n_layer=2, d_ff=12, input_mode="offsets", seed=4))


def test_save_and_load_preserve_parameters(model, tmp_path, rng):
    path = save_checkpoint(model, tmp_path / "m.bin", extra={"epochs": 3, "note": "test", "skip": None})
    loaded, extra = load_checkpoint(path)
    assert loaded.config == model.config
    for name, arr in model.state_arrays().items():
        np.testing.assert_array_equal(loaded.state_arrays()[name], arr)
    assert extra == {"epochs": 3, "note": "test"}

    inputs = np.concatenate([rng.normal(size=(2, 6, 2)), np.zeros((2, 6, 1))], axis=-1)
    np.testing.assert_array_equal(
        model.forward(inputs, track=False)[0].data,
        loaded.forward(inputs, track=False)[0].data,
    )


def test_header_is_self_describing(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.bin")
    assert path.read_bytes().startswith(f"{MAGIC} 1 ".encode("ascii"))
    header, payload = read_header(path)
    assert header["model"]["n_layer"] == 2
    assert header["params"]["names"][0] == "embed.weight"
    assert len(payload) == model.num_parameters * 8


def test_bad_magic_and_version(tmp_path, model):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAMODEL 1 10\nxxxxxxxxxx")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)

    path = save_checkpoint(model, tmp_path / "m.bin")
    raw = path.read_bytes()
    path.write_bytes(raw.replace(f"{MAGIC} 1 ".encode(), f"{MAGIC} 9 ".encode(), 1))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_payload(tmp_path, model):
    path = save_checkpoint(model, tmp_path / "m.bin")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "none.bin")
