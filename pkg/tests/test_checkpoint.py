import struct

import numpy as np
import pytest

from avae.checkpoint import MAGIC, VERSION, Checkpoint, CheckpointMeta, _Reader, load_checkpoint, save_checkpoint
from avae.errors import FormatError, UsageError


def sample_checkpoint() -> Checkpoint:
    rng = np.random.default_rng(0)
    tensors = {
        "vae.encoder.w": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
        "bias": rng.standard_normal(5).astype(np.float32),
        "scalar": np.array(np.float32(0.1)),
    }
    meta = CheckpointMeta(iteration=12, seed=3, controller={"k": 0.1 + 0.2}, extra={"note": "ok"})
    return Checkpoint(meta=meta, tensors=tensors)


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path):
        original = sample_checkpoint()
        loaded = load_checkpoint(save_checkpoint(tmp_path / "run.avae", original))
        assert loaded.meta == original.meta
        assert loaded.meta.controller["k"] == 0.1 + 0.2
        assert loaded.tensors.keys() == original.tensors.keys()
        for name, array in original.tensors.items():
            assert loaded.tensors[name].dtype == np.float32
            assert loaded.tensors[name].shape == array.shape
            assert loaded.tensors[name].tobytes() == array.tobytes()

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(tmp_path / "run.avae", sample_checkpoint())
        assert [p.name for p in tmp_path.iterdir()] == ["run.avae"]

    def test_overwrite(self, tmp_path):
        path = tmp_path / "run.avae"
        save_checkpoint(path, sample_checkpoint())
        checkpoint = sample_checkpoint()
        checkpoint.meta.iteration = 99
        save_checkpoint(path, checkpoint)
        assert load_checkpoint(path).meta.iteration == 99

    def test_bad_magic(self, tmp_path):
        path = save_checkpoint(tmp_path / "run.avae", sample_checkpoint())
        path.write_bytes(b"NOPE" + path.read_bytes()[len(MAGIC):])
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = save_checkpoint(tmp_path / "run.avae", sample_checkpoint())
        payload = bytearray(path.read_bytes())
        payload[4:8] = (7).to_bytes(4, "little")
        path.write_bytes(bytes(payload))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = save_checkpoint(tmp_path / "run.avae", sample_checkpoint())
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_oversized_dims(self, tmp_path):
        meta = CheckpointMeta().model_dump_json().encode("utf-8")
        payload = (
            MAGIC
            + struct.pack("<II", VERSION, len(meta))
            + meta
            + struct.pack("<I", 1)
            + struct.pack("<H", 1) + b"w"
            + struct.pack("<III", 2, 0xFFFFFFFF, 0x80000001)
            + b"\x00" * 16
        )
        path = tmp_path / "huge.avae"
        path.write_bytes(payload)
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_negative_length_rejected(self, tmp_path):
        reader = _Reader(b"AVAE", tmp_path / "x.avae")
        with pytest.raises(FormatError):
            reader.take(-4)

    def test_trailing_bytes(self, tmp_path):
        path = save_checkpoint(tmp_path / "run.avae", sample_checkpoint())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            load_checkpoint(tmp_path / "absent.avae")
