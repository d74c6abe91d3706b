import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from vid2ode.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint


@given(st.dictionaries(st.text("abcxyz/_", min_size=1, max_size=8),
                       arrays(float, array_shapes(min_dims=0, max_dims=3, max_side=4),
                              elements=st.floats(allow_nan=False, width=64)), max_size=4))
def test_round_trip(tmp_path_factory, arrays_in):
    path = tmp_path_factory.mktemp("ck") / "c.bin"
    save_checkpoint(path, arrays_in, {"k": 1})
    out, meta = load_checkpoint(path)
    assert meta == {"k": 1} and list(out) == list(arrays_in)
    for k, v in arrays_in.items():
        assert out[k].shape == v.shape and out[k].tobytes() == np.ascontiguousarray(v).tobytes()


def test_layout_starts_with_magic(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"a": np.arange(3.0)})
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == MAGIC
    assert np.frombuffer(raw[-24:], "<f8").tolist() == [0.0, 1.0, 2.0]


def test_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.bin")


def test_truncated(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"a": np.ones((4, 4))})
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.bin")
