import numpy as np
import pytest

from cbct import arrayio
from cbct.geometry import make_geometry


def test_save_load_round_trip(tmp_path, rng):
    g = make_geometry(8, 4, 10.0, 10.0)
    data = rng.standard_normal((8, 8, 8)).astype(np.float32)
    cfg = {"n": 8, "seed": 1}
    arrayio.save_array(tmp_path / "vol", data, kind="volume", units="cm^-1",
                       geometry=g, config=cfg)
    loaded, meta = arrayio.load_array(tmp_path / "vol")
    assert loaded.dtype == np.float64
    assert np.array_equal(loaded.astype(np.float32), data)
    assert meta["kind"] == "volume"
    assert meta["units"] == "cm^-1"
    assert meta["config_hash"] == arrayio.config_hash(cfg)
    assert arrayio.load_geometry(meta) == g


def test_raw_file_is_little_endian_float32(tmp_path):
    g = make_geometry(8, 4, 10.0, 10.0)
    data = np.arange(8**3, dtype=np.float64).reshape(8, 8, 8)
    raw_path = arrayio.save_array(tmp_path / "vol", data, kind="volume", geometry=g)
    raw = np.fromfile(raw_path, dtype="<f4")
    assert raw.size == 8**3
    assert raw[1] == 1.0


def test_config_hash_is_order_insensitive():
    assert arrayio.config_hash({"a": 1, "b": 2}) == arrayio.config_hash({"b": 2, "a": 1})
    assert arrayio.config_hash({"a": 1}) != arrayio.config_hash({"a": 2})


def test_load_rejects_unknown_format(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "something-else", "shape": [1]}')
    (tmp_path / "x.raw").write_bytes(b"\x00\x00\x80?")
    with pytest.raises(ValueError):
        arrayio.load_array(tmp_path / "x")
