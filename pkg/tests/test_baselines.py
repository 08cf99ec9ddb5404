import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nip.baselines import ItqModel, itq_fit, lsh_fit, lsh_hash, pcahash_fit, pcahash_hash, quantization_loss
from nip.errors import DimError
from nip.postproc import unpack_bits


def test_lsh_deterministic_and_shaped():
    a, b = lsh_fit(512, 256, 4), lsh_fit(512, 256, 4)
    assert a.projections.shape == (256, 512)
    assert np.array_equal(a.projections, b.projections)
    assert not np.array_equal(a.projections, lsh_fit(512, 256, 5).projections)


def test_lsh_projections_look_standard_normal():
    p = lsh_fit(512, 256, 0).projections.ravel()
    n = p.size
    assert abs(p.mean()) < 4 / np.sqrt(n)
    # var of the sample variance of N(0,1) is 2/n
    assert abs(p.var() - 1) < 4 * np.sqrt(2 / n)


def test_lsh_zero_vector_hashes_to_zero():
    m = lsh_fit(16, 32, 1)
    assert not np.any(lsh_hash(m, np.zeros(16)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_lsh_sign_and_scale(seed, alpha):
    rng = np.random.default_rng(seed)
    m = lsh_fit(12, 24, seed)
    d = rng.standard_normal(12)
    bits = unpack_bits(lsh_hash(m, d), 24)
    # ties at exactly zero have probability zero for a Gaussian projection
    assert np.array_equal(unpack_bits(lsh_hash(m, -d), 24), ~bits)
    assert np.array_equal(unpack_bits(lsh_hash(m, alpha * d), 24), bits)


def test_pcahash_mean_is_all_zero(rng):
    X = rng.standard_normal((50, 8))
    m = pcahash_fit(X, 4)
    assert not np.any(pcahash_hash(m, X.mean(axis=0)))


def test_pcahash_splits_a_line_at_its_mean():
    t = np.linspace(-1, 1, 11)
    X = np.outer(t, [3.0, 4.0]) + [1.0, 1.0]
    bits = unpack_bits(pcahash_hash(pcahash_fit(X, 1), X), 1)[:, 0]
    # one side of the midpoint gets 1, the other 0, the midpoint itself 0
    assert bits[5] == 0
    assert len(set(bits[:5])) == 1 and len(set(bits[6:])) == 1 and bits[0] != bits[-1]


def test_pcahash_is_itq_without_rotation(rng):
    X = rng.standard_normal((80, 10))
    pca = pcahash_fit(X, 6)
    ident = ItqModel(pca, np.eye(6), 0)
    assert np.array_equal(ident.hash(X), pcahash_hash(pca, X))


def test_itq_loss_non_increasing(rng):
    X = rng.standard_normal((300, 20)) @ rng.standard_normal((20, 20))
    m = itq_fit(X, 8, iterations=30, seed=2)
    assert len(m.losses) == 31
    assert np.all(np.diff(m.losses) <= 1e-9 * m.losses[0])


def test_itq_rotation_orthogonal(rng):
    m = itq_fit(rng.standard_normal((200, 12)), 8, iterations=10)
    np.testing.assert_allclose(m.rotation.T @ m.rotation, np.eye(8), atol=1e-8)
    V = rng.standard_normal((5, 8))
    assert quantization_loss(V, np.eye(8)) >= 0


def test_itq_errors(rng):
    with pytest.raises(ValueError):
        itq_fit(rng.standard_normal((20, 4)), 2, iterations=0)
    m = itq_fit(rng.standard_normal((20, 4)), 2, iterations=1)
    with pytest.raises(DimError):
        m.hash(np.zeros(5))


def test_itq_512_to_256(rng):
    X = rng.random((400, 512))
    m = itq_fit(X, 256, iterations=3)
    assert m.hash(X[:3]).shape == (3, 32) and m.n_bits == 256 and m.in_dim == 512
