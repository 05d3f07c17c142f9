import numpy as np
import pytest

from disencodec import modelio
from disencodec import tensor as T
from disencodec.layers import ParamTable
from disencodec.optim import Adam
from disencodec.tensor import Tensor


def quad_loss(params, target):
    diff = T.add(params["x"], T.constant(-target))
    return T.tsum(T.mul(diff, diff))


def test_adam_first_step_size():
    params = ParamTable()
    params.add("x", np.array([10.0, -4.0]))
    opt = Adam(params, lr=0.1)
    quad_loss(params, np.zeros(2)).backward()
    before = params["x"].data.copy()
    opt.step()
    # bias correction makes the first update lr * sign(grad) up to eps
    assert np.allclose(np.abs(params["x"].data - before), 0.1, atol=1e-6)


def test_adam_converges_on_quadratic():
    params = ParamTable()
    params.add("x", np.array([3.0, -2.0, 0.5]))
    target = np.array([1.0, 1.0, 1.0])
    opt = Adam(params, lr=0.05)
    for _ in range(400):
        opt.zero_grad()
        quad_loss(params, target).backward()
        opt.step()
    assert np.allclose(params["x"].data, target, atol=1e-3)


def test_adam_skips_frozen_and_gradless():
    params = ParamTable()
    params.add("x", np.array([1.0]))
    params.add("frozen", np.array([5.0]), trainable=False)
    opt = Adam(params)
    T.tsum(params["x"] * 2.0 + params["frozen"] * 3.0).backward()
    opt.step()
    assert params["frozen"].data[0] == 5.0
    params.zero_grad()
    opt.step()  # no gradients anywhere: a no-op
    assert "x" in opt.m


def test_adam_state_round_trip():
    params = ParamTable()
    params.add("x", np.array([2.0, 2.0]))
    opt = Adam(params, lr=0.01)
    for _ in range(3):
        opt.zero_grad()
        quad_loss(params, np.zeros(2)).backward()
        opt.step()
    saved = {k: v.copy() for k, v in opt.state_entries().items()}

    params2 = ParamTable()
    params2.add("x", params["x"].data.copy())
    opt2 = Adam(params2, lr=0.01)
    opt2.load_state_entries(saved)
    assert opt2.step_count == 3

    for o, p in ((opt, params), (opt2, params2)):
        o.zero_grad()
        quad_loss(p, np.zeros(2)).backward()
        o.step()
    assert np.array_equal(params["x"].data, params2["x"].data)


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    entries = {
        "enc.w": rng.standard_normal((3, 4, 2)),
        "enc.b": np.zeros(4),
        "scalar": np.array(7.5),
        "config.k": np.array([1024.0]),
    }
    opt_entries = {"adam.step": np.array([12.0]), "adam.m.enc.w": rng.standard_normal((3, 4, 2))}
    path = tmp_path / "m.dtfm"
    h = modelio.save_model(path, entries, opt_entries)
    loaded, opt, h2 = modelio.load_model(path)
    assert h == h2 and len(h) == 8
    assert list(loaded) == list(entries)
    for k in entries:
        assert np.array_equal(loaded[k], np.asarray(entries[k], dtype=float))
        assert loaded[k].shape == np.asarray(entries[k]).shape
    assert np.array_equal(opt["adam.m.enc.w"], opt_entries["adam.m.enc.w"])


def test_model_file_without_optimizer_section(tmp_path):
    path = tmp_path / "m.dtfm"
    modelio.save_model(path, {"a": np.ones(2)})
    entries, opt, _ = modelio.load_model(path)
    assert opt == {} and np.array_equal(entries["a"], np.ones(2))


def test_model_hash_tracks_content(tmp_path):
    blob = modelio.serialize_entries({"a": np.ones(3)})
    h1 = modelio.model_hash(blob)
    corrupted = bytearray(blob)
    corrupted[-1] ^= 0x01
    assert modelio.model_hash(bytes(corrupted)) != h1


def test_model_format_errors():
    good = modelio.serialize_entries({"a": np.ones(2)})
    with pytest.raises(modelio.ModelFormatError):
        modelio.deserialize_entries(b"XXXX" + good[4:])
    bad_version = bytearray(good)
    bad_version[4] = 99
    with pytest.raises(modelio.ModelFormatError):
        modelio.deserialize_entries(bytes(bad_version))
    with pytest.raises(modelio.ModelFormatError):
        modelio.deserialize_entries(good[:-3])
    with pytest.raises(modelio.ModelFormatError):
        modelio.deserialize_entries(good + b"\x00")
    dup = modelio.serialize_entries({"a": np.ones(1)})
    # handcraft a duplicate by doubling the entry and patching the count
    entry = dup[10:]
    twice = dup[:6] + (2).to_bytes(4, "little") + entry + entry
    with pytest.raises(modelio.ModelFormatError):
        modelio.deserialize_entries(twice)
