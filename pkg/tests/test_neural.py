import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import gradcheck, near_kink, random_case
from pdpgnet.errors import DimensionError, ParseError, SchemaError
from pdpgnet.neural import (AdamState, MlpParams, MlpSpec, Optimizer, adam_step, backward, forward, init,
                            load_checkpoint, save_checkpoint, sgd_step, soft_update)


def test_init_deterministic_and_glorot():
    spec = MlpSpec((6, 50, 100, 4), output_activation="tanh")
    a = init(spec, np.random.default_rng(3))
    b = init(spec, np.random.default_rng(3))
    assert a.theta.tobytes() == b.theta.tobytes()
    for w, bias in a.layers:
        assert np.all(bias == 0)
        lim = np.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= lim


@pytest.mark.parametrize("out", ["tanh", "linear"])
def test_zero_input_gives_zero_output(out):
    p = init(MlpSpec((5, 7, 3), output_activation=out), np.random.default_rng(0))
    np.testing.assert_array_equal(forward(p, np.zeros(5)), np.zeros(3))


def test_identity_network():
    p = MlpParams(MlpSpec((3, 3, 3)))
    for w, _ in p.layers:
        w[...] = np.eye(3)
    x = np.array([0.5, 2.0, 7.0])
    np.testing.assert_array_equal(forward(p, x), x)


def test_tanh_range_and_purity():
    p = init(MlpSpec((4, 8, 2), output_activation="tanh"), np.random.default_rng(1))
    p.theta *= 50
    x = np.random.default_rng(2).normal(size=(100, 4)) * 10
    y = forward(p, x)
    assert np.all(np.abs(y) <= 1.0)
    assert forward(p, x).tobytes() == y.tobytes()


def test_shape_mismatch():
    p = init(MlpSpec((4, 3)), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        forward(p, np.zeros(5))
    with pytest.raises(DimensionError):
        backward(p, np.zeros(4), np.zeros(2))


def test_zero_output_grad():
    p = init(MlpSpec((4, 6, 2)), np.random.default_rng(0))
    g, gin = backward(p, np.ones(4), np.zeros(2))
    assert not g.any() and not gin.any()


def test_linear_layer_input_grad():
    p = init(MlpSpec((4, 3)), np.random.default_rng(0))
    go = np.array([1.0, -2.0, 0.5])
    _, gin = backward(p, np.ones(4), go)
    np.testing.assert_allclose(gin, p.layers[0][0].T @ go, rtol=1e-12)


def test_backward_does_not_mutate():
    p = init(MlpSpec((3, 5, 2)), np.random.default_rng(0))
    before = p.theta.copy()
    backward(p, np.ones(3), np.ones(2))
    assert p.theta.tobytes() == before.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradcheck(seed):
    rng = np.random.default_rng(seed)
    params, x, g = random_case(rng)
    if near_kink(params, x):
        return
    assert gradcheck(params, x, g) < 1e-4


def test_sgd():
    p = MlpParams(MlpSpec((1, 1)), [3.0, 0.0])
    sgd_step(p, np.array([1.0, 0.0]), 0.1)
    assert p.theta[0] == pytest.approx(2.9, rel=1e-12)
    sgd_step(p, np.array([5.0, 5.0]), 0.0)
    assert p.theta[0] == pytest.approx(2.9, rel=1e-12)


@pytest.mark.parametrize("g", [1e-4, 1.0, 250.0, -3.0])
def test_adam_first_step_is_lr(g):
    p = MlpParams(MlpSpec((1, 1)), [0.0, 0.0])
    adam_step(p, np.array([g, 0.0]), AdamState(2), 0.01)
    # m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
    assert p.theta[0] == pytest.approx(-0.01 * np.sign(g) * abs(g) / (abs(g) + 1e-8), rel=1e-9)
    assert p.theta[1] == 0.0


def test_optimizer_kinds():
    p = MlpParams(MlpSpec((1, 1)), [1.0, 1.0])
    Optimizer(p, "sgd", 0.5).step(np.array([1.0, 2.0]))
    np.testing.assert_allclose(p.theta, [0.5, 0.0])
    with pytest.raises(ValueError):
        Optimizer(p, "rmsprop")


def test_soft_update_geometric():
    spec = MlpSpec((2, 3, 1))
    online = init(spec, np.random.default_rng(0))
    target = init(spec, np.random.default_rng(1))
    tau = 0.01
    gap = np.abs(online.theta - target.theta).max()
    for _ in range(50):
        soft_update(online, target, tau)
        new_gap = np.abs(online.theta - target.theta).max()
        assert new_gap / gap == pytest.approx(1 - tau, abs=1e-12)
        gap = new_gap
    with pytest.raises(DimensionError):
        soft_update(online, init(MlpSpec((2, 4, 1)), np.random.default_rng(0)), tau)


def test_checkpoint_round_trip(tmp_path):
    nets = {"actor": init(MlpSpec((8, 5, 3), output_activation="tanh"), np.random.default_rng(0)),
            "critic0": init(MlpSpec((11, 4, 1)), np.random.default_rng(1))}
    save_checkpoint(tmp_path / "c.bin", nets, {"kind": "pdpg", "seed": 3})
    back, meta = load_checkpoint(tmp_path / "c.bin")
    assert meta == {"kind": "pdpg", "seed": 3}
    for k in nets:
        assert back[k].spec == nets[k].spec
        assert back[k].theta.tobytes() == nets[k].theta.tobytes()


def test_checkpoint_corruption(tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(p, {"a": init(MlpSpec((2, 2)), np.random.default_rng(0))})
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(ParseError):
        load_checkpoint(p)
    p.write_bytes(data + b"x")
    with pytest.raises(ParseError):
        load_checkpoint(p)
    p.write_bytes(b"nope" * 10)
    with pytest.raises(ParseError):
        load_checkpoint(p)
    bad = bytearray(data)
    bad[8:12] = (99).to_bytes(4, "little")
    p.write_bytes(bytes(bad))
    with pytest.raises(SchemaError):
        load_checkpoint(p)
