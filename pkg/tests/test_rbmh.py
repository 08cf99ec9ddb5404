import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nip.errors import DimError, NumericalDivergence, OracleTooLarge
from nip.postproc import unpack_bits
from nip.rbmh import (
    RbmParams,
    TrainConfig,
    cd_update,
    exact_ll_grad,
    fit_rbmh,
    hash_bits,
    hash_codes,
    hidden_probs,
    init_rbm,
    log_likelihood,
    regularizer,
    regularizer_grad,
    sample_targets,
    sigmoid,
    train,
    visible_probs,
)


def random_rbm(rng, I=4, J=3, scale=1.0):
    return RbmParams(scale * rng.standard_normal((J, I)), scale * rng.standard_normal(J), scale * rng.standard_normal(I))


def fd_grad(f, p: RbmParams, step=1e-5):
    """Central differences of f over every parameter."""
    out = []
    for name in ("W", "b", "c"):
        arr = getattr(p, name)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = f(p)
            arr[idx] = old - step
            down = f(p)
            arr[idx] = old
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# --- basics -------------------------------------------------------------------------------


def test_init_deterministic():
    a, b = init_rbm(4, 3, 7), init_rbm(4, 3, 7)
    assert np.array_equal(a.W, b.W)
    assert not np.any(a.b) and not np.any(a.c)
    assert init_rbm(512, 256, 1).W.shape == (256, 512)
    assert 0.005 < init_rbm(512, 256, 1).W.std() < 0.015


def test_hidden_probs_examples():
    p = RbmParams(np.zeros((3, 2)), np.zeros(3), np.zeros(2))
    assert hidden_probs(p, [1.0, -4.0]).tolist() == [0.5] * 3
    p = RbmParams(np.array([[1.0, 0.0]]), np.array([math.log(3) - 2.0]), np.zeros(2))
    assert hidden_probs(p, [2.0, 9.0])[0] == pytest.approx(0.75, abs=1e-15)
    p.b[:] = -math.log(3) - 2.0
    assert hidden_probs(p, [2.0, 9.0])[0] == pytest.approx(0.25, abs=1e-15)


def test_visible_probs_examples():
    p = RbmParams(np.zeros((2, 3)), np.zeros(2), np.zeros(3))
    assert visible_probs(p, [1.0, 0.0]).tolist() == [0.5] * 3
    p = RbmParams(np.array([[2.0]]), np.zeros(1), np.array([-2.0]))
    assert visible_probs(p, [1.0]).tolist() == [0.5]
    p.c[:] = math.log(3) - 2.0
    assert visible_probs(p, [1.0])[0] == pytest.approx(0.75, abs=1e-15)


@given(st.floats(-36, 36))
def test_sigmoid_symmetry(u):
    s = sigmoid(u)
    assert 0 < s < 1
    assert abs(sigmoid(-u) - (1 - s)) < 1e-12


def test_targets(rng):
    t = sample_targets(10_000, 32, rng)
    assert t.min() > 0 and t.max() < 1
    col_sigma = math.sqrt(1 / 12 / 10_000)
    assert np.all(np.abs(t.mean(axis=0) - 0.5) < 4 * col_sigma)
    row_means = t.mean(axis=1)
    row_sigma = math.sqrt(1 / 12 / 32)
    assert abs(row_means.mean() - 0.5) < 4 * row_sigma / math.sqrt(10_000)
    assert row_means.std() == pytest.approx(row_sigma, rel=0.05)
    t1 = sample_targets(5, 4, np.random.default_rng(3))
    t2 = sample_targets(5, 4, np.random.default_rng(3))
    assert np.array_equal(t1, t2)


def test_regularizer_examples():
    assert regularizer([[0.5]], [[0.5]]) == pytest.approx(math.log(0.5), abs=1e-15)
    assert regularizer([[1 - 1e-7]], [[1 - 1e-7]]) == pytest.approx(0.0, abs=2e-6)
    # z = 1 exactly is clamped, so the value stays finite
    assert math.isfinite(regularizer([[1.0, 0.0]], [[0.3, 0.6]]))


@given(st.floats(0.01, 0.99))
def test_regularizer_maximized_at_target(t):
    zs = np.linspace(0.001, 0.999, 999)
    values = [regularizer([[z]], [[t]]) for z in zs]
    assert abs(zs[int(np.argmax(values))] - t) <= 0.001 + 1e-12


def test_regularizer_grad_matches_fd(rng):
    for _ in range(10):
        p = random_rbm(rng, 5, 4, 0.5)
        x = rng.random((6, 5))
        t = sample_targets(6, 4, rng)
        dW, db = regularizer_grad(p, x, t)
        fW, fb, _ = fd_grad(lambda q: regularizer(hidden_probs(q, x), t), p)
        assert rel_err(dW, fW) < 1e-5 and rel_err(db, fb) < 1e-5


# --- exact likelihood oracle --------------------------------------------------------------


def test_exact_grad_matches_fd(rng):
    for _ in range(5):
        p = random_rbm(rng)
        x = (rng.random((7, 4)) < 0.5).astype(float)
        fW, fb, fc = fd_grad(lambda q: log_likelihood(q, x), p)
        dW, db, dc = exact_ll_grad(p, x)
        assert rel_err(dW, fW) < 1e-4 and rel_err(db, fb) < 1e-4 and rel_err(dc, fc) < 1e-4


def test_exact_grad_at_zero_params(rng):
    p = RbmParams(np.zeros((3, 4)), np.zeros(3), np.zeros(4))
    x = (rng.random((9, 4)) < 0.3).astype(float)
    _, _, dc = exact_ll_grad(p, x)
    np.testing.assert_allclose(dc, (x - 0.5).sum(axis=0), atol=1e-12)


@pytest.mark.parametrize("w, b, c, x", [(0.7, -0.3, 0.4, 1.0), (-1.2, 0.5, -0.8, 0.0), (2.0, 1.0, -3.0, 1.0)])
def test_exact_grad_one_by_one(w, b, c, x):
    # hand derivation: Z = 1 + e^b + e^c + e^(b+c+w),  log P(x) = c x + log(1 + e^(b+w x)) - log Z
    Z = 1 + math.exp(b) + math.exp(c) + math.exp(b + c + w)
    s = 1 / (1 + math.exp(-(b + w * x)))
    want_w = x * s - math.exp(b + c + w) / Z
    want_b = s - (math.exp(b) + math.exp(b + c + w)) / Z
    want_c = x - (math.exp(c) + math.exp(b + c + w)) / Z
    dW, db, dc = exact_ll_grad(RbmParams(np.array([[w]]), np.array([b]), np.array([c])), [[x]])
    assert dW[0, 0] == pytest.approx(want_w, abs=1e-13)
    assert db[0] == pytest.approx(want_b, abs=1e-13)
    assert dc[0] == pytest.approx(want_c, abs=1e-13)
    assert log_likelihood(RbmParams(np.array([[w]]), np.array([b]), np.array([c])), [[x]]) == pytest.approx(
        c * x + math.log(1 + math.exp(b + w * x)) - math.log(Z), abs=1e-13
    )


def test_oracle_size_limit():
    with pytest.raises(OracleTooLarge):
        exact_ll_grad(init_rbm(13, 2, 0), np.zeros((1, 13)))
    with pytest.raises(OracleTooLarge):
        log_likelihood(init_rbm(2, 13, 0), np.zeros((1, 2)))


# --- updates ------------------------------------------------------------------------------


def test_cd1_on_zero_batch_from_zero_params():
    p = RbmParams(np.zeros((3, 4)), np.zeros(3), np.zeros(4))
    cfg = TrainConfig(learning_rate=0.1, lam=0.0, momentum=0.0, weight_decay=0.0, batch_size=5)
    new, stats = cd_update(p, np.zeros((5, 4)), cfg, np.random.default_rng(0))
    # positive phase is zero; negative phase sees v = z = 0.5 everywhere
    np.testing.assert_allclose(new.W, -0.1 * 0.25)
    np.testing.assert_allclose(new.c, -0.1 * 0.5)
    np.testing.assert_allclose(new.b, 0.0)
    assert np.all(visible_probs(new, np.zeros(3)) < 0.5)


def test_regularizer_moves_hidden_bias_towards_targets(rng):
    p = random_rbm(rng, 6, 5, 0.3)
    x = rng.random((8, 6))
    base = TrainConfig(learning_rate=0.01, lam=0.0, momentum=0.0, weight_decay=0.0, batch_size=8)
    reg = TrainConfig(learning_rate=0.01, lam=2.0, momentum=0.0, weight_decay=0.0, batch_size=8)
    without, _ = cd_update(p, x, base, np.random.default_rng(5))
    with_reg, _ = cd_update(p, x, reg, np.random.default_rng(5))
    # identical streams: the difference is exactly the regularizer step
    t = sample_targets(8, 5, np.random.default_rng(5))
    delta = (t - hidden_probs(p, x)).sum(axis=0)
    np.testing.assert_allclose(with_reg.b - without.b, 0.01 * 2.0 * delta / 8, atol=1e-15)
    assert np.all(np.sign(with_reg.b - without.b) == np.sign(delta))


def test_cd_update_deterministic(rng):
    p = random_rbm(rng, 6, 4, 0.1)
    x = rng.random((10, 6))
    cfg = TrainConfig(batch_size=10)
    a, _ = cd_update(p, x, cfg, np.random.default_rng(9))
    b, _ = cd_update(p, x, cfg, np.random.default_rng(9))
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in "Wbc")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected():
    p = RbmParams(np.full((2, 2), 1e308), np.zeros(2), np.zeros(2))
    cfg = TrainConfig(learning_rate=1e308, batch_size=2, weight_decay=1.0)
    with pytest.raises(NumericalDivergence):
        cd_update(p, np.ones((2, 2)), cfg, np.random.default_rng(0))


def test_train_zero_epochs(rng):
    p = random_rbm(rng, 5, 3)
    out, hist = train(p, rng.random((20, 5)), TrainConfig(epochs=0, batch_size=10))
    assert len(hist) == 0 and np.array_equal(out.W, p.W)


def test_train_history_and_determinism(rng):
    X = rng.random((50, 6))
    cfg = TrainConfig(epochs=4, batch_size=16, seed=11)
    p1, h1 = train(init_rbm(6, 4, 1), X, cfg)
    p2, h2 = train(init_rbm(6, 4, 1), X, cfg)
    assert len(h1) == 4 and len(h1.bit_means[0]) == 4
    assert h1.recon_error == h2.recon_error and h1.reg_value == h2.reg_value
    assert np.array_equal(p1.W, p2.W)


def test_train_checks_sizes(rng):
    with pytest.raises(DimError):
        train(init_rbm(6, 4, 1), rng.random((5, 6)), TrainConfig(batch_size=10))
    with pytest.raises(DimError):
        train(init_rbm(6, 4, 1), rng.random((20, 5)), TrainConfig(batch_size=10))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1, lam=0.1)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    TrainConfig(batch_size=1, lam=0.0)


# --- hashing ------------------------------------------------------------------------------


def test_hash_examples():
    p = RbmParams(np.zeros((32, 512)), np.zeros(32), np.zeros(512))
    codes = hash_codes(p, np.ones(512))
    assert codes.shape == (4,) and not np.any(codes)
    p.b[5] = 1.0
    assert unpack_bits(hash_codes(p, np.ones(512)), 32).nonzero()[0].tolist() == [5]
    with pytest.raises(DimError):
        hash_codes(p, np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hash_is_probability_threshold(seed):
    rng = np.random.default_rng(seed)
    p = random_rbm(rng, 8, 16)
    d = rng.standard_normal((5, 8))
    np.testing.assert_array_equal(hash_bits(p, d), hidden_probs(p, d) > 0.5)
    np.testing.assert_array_equal(hash_bits(p, d), np.log(hidden_probs(p, d)) > math.log(0.5))


def test_fit_rbmh_scales_inputs(rng):
    X = rng.random((60, 5)) * 7 + 3
    model, hist = fit_rbmh(X, 8, TrainConfig(epochs=2, batch_size=20))
    Z = model.scale(X)
    assert Z.min() == 0.0 and Z.max() == 1.0
    assert model.hash(X).shape == (60, 1) and len(hist) == 2
