"""
DMAP, SCNW and PGM artifacts: layout, determinism and corruption handling.
"""

import struct
from collections import OrderedDict

import numpy as np
import pytest

from segcrowd.errors import FormatError
from segcrowd.formats import (
    decode_checkpoint,
    decode_dmap,
    encode_checkpoint,
    encode_dmap,
    normalize_to_uint8,
    read_checkpoint,
    read_dmap,
    read_pgm,
    read_sidecar,
    sidecar_path,
    to_uint8,
    write_checkpoint,
    write_dmap,
    write_pgm,
)


class TestDmap:
    def test_header_layout(self):
        data = encode_dmap(np.arange(6, dtype=float).reshape(2, 3))
        assert data[:4] == b"DMAP"
        assert struct.unpack("<II", data[4:12]) == (2, 3)
        assert len(data) == 12 + 6 * 8
        assert struct.unpack("<d", data[12 + 8:12 + 16])[0] == 1.0

    def test_file_round_trip(self, tmp_path, rng):
        grid = rng.random((5, 7))
        path = write_dmap(tmp_path / "nested" / "a.dmap", grid)
        np.testing.assert_array_equal(read_dmap(path), grid)
        assert encode_dmap(read_dmap(path)) == path.read_bytes()

    def test_bad_magic(self):
        data = b"DMAQ" + encode_dmap(np.zeros((1, 1)))[4:]
        with pytest.raises(FormatError, match="bad magic"):
            decode_dmap(data)

    def test_truncated(self):
        data = encode_dmap(np.zeros((3, 3)))
        with pytest.raises(FormatError, match="needs"):
            decode_dmap(data[:-1])
        with pytest.raises(FormatError, match="header"):
            decode_dmap(data[:5])

    def test_rejects_non_grid(self):
        with pytest.raises(FormatError):
            encode_dmap(np.zeros(4))


class TestCheckpoint:
    @pytest.fixture
    def arrays(self, rng):
        return OrderedDict([
            ("conv.weight", rng.normal(size=(2, 1, 3, 3))),
            ("conv.bias", np.zeros(2)),
            ("scale", np.array(1.5)),
        ])

    def test_round_trip_keeps_order(self, arrays):
        decoded = decode_checkpoint(encode_checkpoint(arrays))
        assert list(decoded) == list(arrays)
        for name in arrays:
            np.testing.assert_array_equal(decoded[name], arrays[name])
        assert decoded["scale"].shape == ()

    def test_deterministic(self, arrays):
        assert encode_checkpoint(arrays) == encode_checkpoint(OrderedDict(arrays))

    def test_header(self, arrays):
        data = encode_checkpoint(arrays)
        assert data[:4] == b"SCNW"
        assert struct.unpack("<I", data[4:8]) == (1,)

    def test_bad_magic_and_version(self, arrays):
        data = encode_checkpoint(arrays)
        with pytest.raises(FormatError, match="bad magic"):
            decode_checkpoint(b"XXXX" + data[4:])
        with pytest.raises(FormatError, match="version 9"):
            decode_checkpoint(data[:4] + struct.pack("<I", 9) + data[8:])

    def test_truncated(self, arrays):
        data = encode_checkpoint(arrays)
        with pytest.raises(FormatError, match="truncated"):
            decode_checkpoint(data[:-3])
        with pytest.raises(FormatError, match="truncated"):
            decode_checkpoint(data[:9])

    def test_duplicate_name(self):
        one = encode_checkpoint({"w": np.ones(2)})
        with pytest.raises(FormatError, match="duplicate parameter w"):
            decode_checkpoint(one + one[8:])

    def test_sidecar(self, tmp_path, arrays):
        path = write_checkpoint(tmp_path / "m.scnw", arrays, metadata={"iteration": 3, "config": {"a": 1}})
        assert sidecar_path(path).name == "m.scnw.yaml"
        assert read_sidecar(path) == {"iteration": 3, "config": {"a": 1}}
        assert list(read_checkpoint(path)) == list(arrays)

    def test_missing_sidecar(self, tmp_path, arrays):
        path = write_checkpoint(tmp_path / "m.scnw", arrays)
        assert not sidecar_path(path).exists()
        with pytest.raises(FormatError, match="sidecar"):
            read_sidecar(path)


class TestPgm:
    def test_levels_round_trip(self, tmp_path):
        levels = np.arange(256, dtype=np.uint8).reshape(16, 16)
        path = write_pgm(tmp_path / "ramp.pgm", levels)
        assert path.read_bytes()[:2] == b"P5"
        np.testing.assert_array_equal(np.round(read_pgm(path) * 255).astype(np.uint8), levels)

    def test_float_pixels(self, tmp_path):
        path = write_pgm(tmp_path / "f.pgm", np.array([[0.0, 0.5, 1.0, 2.0]]))
        np.testing.assert_array_equal(np.round(read_pgm(path) * 255), [[0, 128, 255, 255]])

    def test_not_an_image(self, tmp_path):
        path = tmp_path / "junk.pgm"
        path.write_bytes(b"hello")
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_to_uint8_passthrough(self):
        levels = np.array([[3, 250]], dtype=np.uint8)
        assert to_uint8(levels) is levels

    def test_normalize(self):
        np.testing.assert_array_equal(normalize_to_uint8(np.array([[1.0, 2.0, 3.0]])), [[0, 128, 255]])
        assert not normalize_to_uint8(np.full((3, 3), 4.2)).any()

    def test_normalize_stretches_offset_range(self):
        seg = np.array([[0.25, 0.375, 0.5]])
        np.testing.assert_array_equal(normalize_to_uint8(seg), [[0, 128, 255]])

    def test_normalize_empty(self):
        assert normalize_to_uint8(np.zeros((0, 4))).shape == (0, 4)
