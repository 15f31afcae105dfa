"""Checkpoint format tests: byte layout, round trips, mismatch errors."""

import struct

import numpy as np
import pytest
import torch

from spikekit import build_model, load_checkpoint, load_model, save_checkpoint
from spikekit.checkpoint import (
    config_from_vector,
    config_to_vector,
    read_records,
    restore_state,
)
from spikekit.model import ModelConfig


def tiny_config():
    return ModelConfig(
        timesteps=2, depth=1, dim=8, heads=2, height=32, width=32,
        num_classes=4, sps_channels=(1, 2, 4, 8),
    )


class TestFormat:
    def test_magic_version_and_config_record(self, tmp_path):
        model = build_model(tiny_config(), seed=1)
        path = tmp_path / "m.sdtf"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        assert blob[:4] == b"SDTF"
        (version,) = struct.unpack_from("<I", blob, 4)
        assert version == 1
        (name_len,) = struct.unpack_from("<I", blob, 8)
        name = blob[12 : 12 + name_len].decode()
        assert name == "__config"
        (rank,) = struct.unpack_from("<I", blob, 12 + name_len)
        assert rank == 1
        (dim0,) = struct.unpack_from("<I", blob, 16 + name_len)
        assert dim0 == 17

    def test_values_little_endian_f32(self, tmp_path):
        model = build_model(tiny_config(), seed=1)
        path = tmp_path / "m.sdtf"
        save_checkpoint(path, model)
        records = read_records(path)
        vec = records["__config"]
        assert vec.dtype == np.float32
        assert vec[0] == 2 and vec[1] == 1 and vec[2] == 8  # timesteps, depth, dim

    def test_config_vector_round_trip(self):
        cfg = tiny_config()
        assert config_from_vector(config_to_vector(cfg)) == cfg

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.sdtf"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            read_records(path)


class TestRoundTrip:
    def test_model_state_round_trip(self, tmp_path):
        model = build_model(tiny_config(), seed=9)
        path = tmp_path / "m.sdtf"
        save_checkpoint(path, model)
        loaded, extras = load_model(path)
        assert extras == {}
        assert loaded.cfg == model.cfg
        for (ka, va), (kb, vb) in zip(
            model.state_dict().items(), loaded.state_dict().items()
        ):
            assert ka == kb
            assert torch.equal(va.float(), vb.float())

    def test_resave_byte_identical(self, tmp_path):
        model = build_model(tiny_config(), seed=2)
        first = tmp_path / "a.sdtf"
        second = tmp_path / "b.sdtf"
        save_checkpoint(first, model)
        loaded, _ = load_model(first)
        save_checkpoint(second, loaded)
        assert first.read_bytes() == second.read_bytes()

    def test_forward_identical_after_reload(self, tmp_path):
        model = build_model(tiny_config(), seed=3)
        path = tmp_path / "m.sdtf"
        save_checkpoint(path, model)
        loaded, _ = load_model(path)
        x = torch.randn(2, 3, 32, 32)
        model.eval(), loaded.eval()
        with torch.no_grad():
            assert torch.equal(model(x), loaded(x))

    def test_extra_records_round_trip(self, tmp_path):
        model = build_model(tiny_config(), seed=4)
        path = tmp_path / "m.sdtf"
        extra = {"__train_state": np.array([7.0, 2.0]), "__momentum.head.bias": np.ones(4)}
        save_checkpoint(path, model, extra)
        _, _, extras = load_checkpoint(path)
        assert set(extras) == set(extra)
        np.testing.assert_array_equal(extras["__train_state"], [7.0, 2.0])

    def test_mismatched_records_rejected(self, tmp_path):
        model = build_model(tiny_config(), seed=5)
        path = tmp_path / "m.sdtf"
        save_checkpoint(path, model)
        _, records, _ = load_checkpoint(path)
        records.pop("head.bias")
        with pytest.raises(ValueError, match="head.bias"):
            restore_state(model, records)
