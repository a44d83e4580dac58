import struct

import numpy as np
import pytest

from pccomplete import checkpoint as ckpt
from pccomplete.errors import CheckpointError


@pytest.fixture
def tensors(rng):
    return {"G/w": rng.standard_normal((3, 4)), "G/b": rng.standard_normal(4),
            "D/scalar": np.array(2.5), "optim/G/m/w": np.zeros((3, 4))}


class TestContainer:
    @pytest.mark.parametrize("width", [4, 8])
    def test_round_trip(self, tensors, width, tmp_path):
        path = tmp_path / "c.pckp"
        ckpt.save(path, tensors, {"step": 7}, width)
        out, meta, w = ckpt.load(path)
        assert meta == {"step": 7} and w == width
        assert set(out) == set(tensors)
        for k, v in tensors.items():
            expect = v.astype(np.float32) if width == 4 else v
            assert out[k].shape == v.shape
            assert out[k].astype(expect.dtype).tobytes() == expect.tobytes()

    def test_header_layout(self, tensors):
        raw = ckpt.encode(tensors, {}, 8)
        magic, version, width, count, meta_len = struct.unpack_from("<4sIIII", raw)
        assert (magic, version, width, count) == (b"PCKP", ckpt.FORMAT_VERSION, 8, 4)
        assert raw[20:20 + meta_len] == b"{}"

    def test_deterministic_bytes(self, tensors):
        assert ckpt.encode(tensors, {"a": 1, "b": 2}) == ckpt.encode(dict(reversed(list(tensors.items()))), {"b": 2, "a": 1})

    def test_empty_container(self):
        assert ckpt.decode(ckpt.encode({}, None)) == ({}, {}, 8)

    def test_bad_width(self, tensors):
        with pytest.raises(CheckpointError):
            ckpt.encode(tensors, width=2)


class TestCorruption:
    @pytest.mark.parametrize("cut", [0, 10, 30, -9, -1])
    def test_truncated(self, tensors, cut):
        raw = ckpt.encode(tensors, {"x": 1})
        with pytest.raises(CheckpointError):
            ckpt.decode(raw[:cut] if cut else b"")

    def test_flipped_byte(self, tensors):
        raw = bytearray(ckpt.encode(tensors))
        raw[len(raw) // 2] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            ckpt.decode(bytes(raw))

    def test_bad_magic(self, tensors):
        raw = b"XXXX" + ckpt.encode(tensors)[4:]
        with pytest.raises(CheckpointError, match="magic"):
            ckpt.decode(raw)

    def test_version_mismatch(self, tensors):
        raw = bytearray(ckpt.encode(tensors))
        struct.pack_into("<I", raw, 4, ckpt.FORMAT_VERSION + 1)
        with pytest.raises(CheckpointError, match="version"):
            ckpt.decode(bytes(raw))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            ckpt.load(tmp_path / "nope.pckp")


class TestAtomicWrite:
    def test_failed_write_leaves_old_file(self, tmp_path, monkeypatch):
        path = tmp_path / "c.pckp"
        ckpt.save(path, {"a": np.ones(2)})
        before = path.read_bytes()

        def boom(*args):
            raise OSError("disk full")

        monkeypatch.setattr(ckpt.os, "replace", boom)
        with pytest.raises(OSError):
            ckpt.save(path, {"a": np.zeros(2)})
        assert path.read_bytes() == before
        assert [p.name for p in tmp_path.iterdir()] == ["c.pckp"]

    def test_digest(self, tmp_path):
        ckpt.save(tmp_path / "a", {"a": np.ones(2)})
        ckpt.save(tmp_path / "b", {"a": np.ones(2)})
        assert ckpt.file_digest(tmp_path / "a") == ckpt.file_digest(tmp_path / "b")
