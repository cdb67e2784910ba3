"""Checkpoint container: byte-exact round trips and corruption handling."""

import numpy as np
import pytest

from rasm import checkpoint as C
from rasm.errors import CheckpointError
from rasm.tensor import Tensor


def _payload(rng):
    params = {
        "enc.w": Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
                        requires_grad=True),
        "enc.b": Tensor(rng.standard_normal(4).astype(np.float32),
                        requires_grad=True),
        "head.gamma": Tensor(rng.standard_normal(7)),  # float64 record
    }
    opt = {"step": 17,
           "m": {k: rng.standard_normal(p.shape).astype(p.dtype)
                 for k, p in params.items()},
           "v": {k: np.abs(rng.standard_normal(p.shape)).astype(p.dtype)
                 for k, p in params.items()}}
    return params, opt


def test_round_trip_values_and_metadata(tmp_path, rng):
    params, opt = _payload(rng)
    p = str(tmp_path / "a.rasm")
    C.save_checkpoint(p, params, "model.depth = 2\n", 123, opt)
    ck = C.load_checkpoint(p)
    assert ck.config_text == "model.depth = 2\n"
    assert ck.step == 123
    assert list(ck.params) == list(params)  # insertion order preserved
    for k, t in params.items():
        assert ck.params[k].dtype == t.data.dtype
        assert np.array_equal(ck.params[k], t.data)
    assert ck.optimizer_state["step"] == 17
    for group in ("m", "v"):
        for k in params:
            assert np.array_equal(ck.optimizer_state[group][k], opt[group][k])


def test_save_load_save_is_byte_identical(tmp_path, rng):
    params, opt = _payload(rng)
    p1 = str(tmp_path / "a.rasm")
    p2 = str(tmp_path / "b.rasm")
    C.save_checkpoint(p1, params, "cfg", 9, opt)
    ck = C.load_checkpoint(p1)
    C.save_checkpoint(p2, ck.params, ck.config_text, ck.step,
                      ck.optimizer_state)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_round_trip_without_optimizer(tmp_path, rng):
    params, _ = _payload(rng)
    p = str(tmp_path / "a.rasm")
    C.save_checkpoint(p, params, "", 0)
    ck = C.load_checkpoint(p)
    assert ck.optimizer_state is None
    assert ck.step == 0


def test_scalar_and_unicode_paths_survive(tmp_path):
    params = {"s": np.float64(3.25), "läyer.W": np.ones((2, 2), np.float32)}
    p = str(tmp_path / "u.rasm")
    C.save_checkpoint(p, params, "# cfg\n", 1)
    ck = C.load_checkpoint(p)
    assert ck.params["s"].shape == ()
    assert float(ck.params["s"]) == 3.25
    assert "läyer.W" in ck.params


def test_bad_magic(tmp_path):
    p = tmp_path / "x.rasm"
    p.write_bytes(b"JUNKxxxxxxxxxxxxxxxx")
    with pytest.raises(CheckpointError) as exc:
        C.load_checkpoint(str(p))
    assert "magic" in str(exc.value)


def test_wrong_version(tmp_path, rng):
    params, _ = _payload(rng)
    p = tmp_path / "x.rasm"
    C.save_checkpoint(str(p), params, "", 0)
    raw = bytearray(p.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError) as exc:
        C.load_checkpoint(str(p))
    assert "version" in str(exc.value)


def test_truncation_at_every_prefix_is_detected(tmp_path):
    params = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
    p = tmp_path / "x.rasm"
    C.save_checkpoint(str(p), params, "cfg", 5,
                      {"step": 1, "m": {"w": np.zeros((2, 3), np.float32)},
                       "v": {"w": np.zeros((2, 3), np.float32)}})
    raw = p.read_bytes()
    stride = max(1, len(raw) // 40)
    for cut in range(0, len(raw), stride):
        p.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            C.load_checkpoint(str(p))


def test_trailing_bytes_rejected(tmp_path):
    params = {"w": np.zeros(2, np.float32)}
    p = tmp_path / "x.rasm"
    C.save_checkpoint(str(p), params, "", 0)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError) as exc:
        C.load_checkpoint(str(p))
    assert "trailing" in str(exc.value)


def test_duplicate_parameter_path_rejected(tmp_path):
    # two records with the same path cannot come from save_checkpoint, so
    # craft the file by splicing a saved single-record body
    params = {"w": np.zeros(2, np.float32)}
    p = tmp_path / "x.rasm"
    C.save_checkpoint(str(p), params, "", 0)
    raw = p.read_bytes()
    head = raw[:4 + 4 + 8 + 0]  # magic, version, config len (config empty)
    count_off = len(head)
    record = raw[count_off + 8:-9]  # one tensor record, between count and tail
    tail = raw[-9:]
    doubled = head + (2).to_bytes(8, "little") + record + record + tail
    p.write_bytes(doubled)
    with pytest.raises(CheckpointError) as exc:
        C.load_checkpoint(str(p))
    assert "duplicate" in str(exc.value)


def test_unknown_dtype_tag_rejected(tmp_path):
    params = {"w": np.zeros(2, np.float32)}
    p = tmp_path / "x.rasm"
    C.save_checkpoint(str(p), params, "", 0)
    raw = bytearray(p.read_bytes())
    # tensor record starts after magic(4) version(4) cfglen(8) count(8):
    # path_len(2) 'w'(1) then the dtype tag byte
    tag_off = 4 + 4 + 8 + 8 + 2 + 1
    raw[tag_off] = 42
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError) as exc:
        C.load_checkpoint(str(p))
    assert "dtype tag" in str(exc.value)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        C.load_checkpoint(str(tmp_path / "absent.rasm"))


def test_integer_params_rejected_on_save(tmp_path):
    with pytest.raises(CheckpointError):
        C.save_checkpoint(str(tmp_path / "x.rasm"),
                          {"w": np.arange(3)}, "", 0)
