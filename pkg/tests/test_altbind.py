import numpy as np
import pytest

from holobind.altbind import (
    VtbSecret,
    hilbert_decode,
    hilbert_encode,
    hilbert_hrr_bind,
    hilbert_hrr_unbind,
    hilbert_map,
    ivtb_secret,
    vtb_bind,
    vtb_secret,
    vtb_unbind,
)
from holobind.errors import ShapeError
from holobind.tensor import RngStream
from holobind.vsa import cosine, sample_secret


# ----------------------------------------------------------------------- VTB

def test_vtb_identity_block():
    y = VtbSecret(4 ** -0.25 * np.eye(2).reshape(-1))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(vtb_bind(x, y), x, atol=1e-12)
    assert np.allclose(vtb_unbind(x, y), x, atol=1e-12)


def test_vtb_permutation_block():
    y = VtbSecret(4 ** -0.25 * np.array([[0.0, 1.0], [1.0, 0.0]]).reshape(-1))
    z = vtb_bind(np.array([1.0, 2.0, 3.0, 4.0]), y)
    assert np.allclose(z, [2.0, 1.0, 4.0, 3.0], atol=1e-12)


def test_vtb_matches_dense_block_diagonal_oracle():
    d, m = 16, 4
    y, _ = vtb_secret(d, RngStream(5))
    x = np.random.default_rng(5).normal(size=d)
    dense = np.zeros((d, d))
    for j in range(m):
        dense[j * m:(j + 1) * m, j * m:(j + 1) * m] = y.block
    assert np.max(np.abs(vtb_bind(x, y) - dense @ x)) <= 1e-10


def test_vtb_linear_in_x():
    d = 16
    y, _ = vtb_secret(d, RngStream(6))
    g = np.random.default_rng(6)
    x, z = g.normal(size=d), g.normal(size=d)
    lhs = vtb_bind(2.0 * x - 0.5 * z, y)
    rhs = 2.0 * vtb_bind(x, y) - 0.5 * vtb_bind(z, y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_vtb_rejects_non_square_dimension():
    with pytest.raises(ShapeError):
        vtb_secret(10, RngStream(1))
    y, _ = vtb_secret(16, RngStream(1))
    with pytest.raises(ShapeError):
        vtb_bind(np.zeros(10), y)


def test_plain_vtb_reconstruction_noisy_but_correlated():
    # calibrated band: reconstruction correlates but is far from exact
    for seed in range(100):
        x = np.random.default_rng(seed).normal(size=64)
        y, _ = vtb_secret(64, RngStream(seed))
        c = cosine(vtb_unbind(vtb_bind(x, y), y), x)
        assert 0.3 < c < 0.95


# ---------------------------------------------------------------------- iVTB

def test_ivtb_block_orthogonal():
    y, _ = ivtb_secret(4, RngStream(2))
    assert y.orthogonal
    assert np.max(np.abs(y.block.T @ y.block - np.eye(2))) <= 1e-12


def test_ivtb_deterministic():
    a, _ = ivtb_secret(64, RngStream(9))
    b, _ = ivtb_secret(64, RngStream(9))
    assert np.array_equal(a.vector, b.vector)


def test_ivtb_determinant_is_unit():
    for seed in range(10):
        y, _ = ivtb_secret(64, RngStream(seed))
        assert abs(abs(np.linalg.det(y.block)) - 1.0) <= 1e-9


@pytest.mark.parametrize("d", [4, 16, 64, 256])
def test_ivtb_exact_round_trip(d):
    x = np.random.default_rng(d).normal(size=d)
    y, _ = ivtb_secret(d, RngStream(d))
    assert np.max(np.abs(vtb_unbind(vtb_bind(x, y), y) - x)) <= 1e-9


def test_plain_vtb_error_exceeds_ivtb_on_matched_seeds():
    for seed in range(20):
        x = np.random.default_rng(seed).normal(size=64)
        plain, _ = vtb_secret(64, RngStream(seed))
        ortho, _ = ivtb_secret(64, RngStream(seed))
        err_plain = np.max(np.abs(vtb_unbind(vtb_bind(x, plain), plain) - x))
        err_ortho = np.max(np.abs(vtb_unbind(vtb_bind(x, ortho), ortho) - x))
        assert err_plain > err_ortho


# ------------------------------------------------------------------- Hilbert

def test_hilbert_order1_visit_order():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    img = np.array([[a, b], [d, c]])
    assert np.array_equal(hilbert_encode(img), [a, b, c, d])


def test_hilbert_bijection_bitwise():
    img = np.random.default_rng(3).normal(size=(4, 4))
    assert np.array_equal(hilbert_decode(hilbert_encode(img)), img)


@pytest.mark.parametrize("order", range(1, 7))
def test_hilbert_permutation_properties(order):
    m = hilbert_map(order)
    side = 1 << order
    # bijection: inverse of forward is the identity ranking
    ranks = m.inverse[m.forward[:, 0], m.forward[:, 1]]
    assert np.array_equal(ranks, np.arange(side * side))
    # adjacency: consecutive ranks are 4-neighbours
    steps = np.abs(np.diff(m.forward, axis=0)).sum(axis=1)
    assert np.all(steps == 1)


def test_hilbert_padding_round_trip():
    img = np.random.default_rng(4).normal(size=(28, 28))
    vec = hilbert_encode(img)
    assert vec.size == 32 * 32
    assert np.array_equal(hilbert_decode(vec, dims=(28, 28)), img)


def test_hilbert_hrr_round_trip():
    img = np.random.default_rng(5).normal(size=(16, 16))
    s, _ = sample_secret([256], RngStream(5))
    bound = hilbert_hrr_bind(img, s)
    back = hilbert_hrr_unbind(bound, s, (16, 16))
    assert np.max(np.abs(back - img)) <= 1e-9


def test_hilbert_hrr_per_channel_independent():
    img = np.random.default_rng(6).normal(size=(16, 16, 3))
    s, _ = sample_secret([256], RngStream(6))
    bound = hilbert_hrr_bind(img, s)
    assert bound.shape == (256, 3)
    for c in range(3):
        expected = hilbert_hrr_bind(img[..., c], s)
        assert np.array_equal(bound[..., c], expected)
    back = hilbert_hrr_unbind(bound, s, (16, 16))
    assert np.max(np.abs(back - img)) <= 1e-9


def test_hilbert_hrr_bound_vector_structureless():
    ok = 0
    n = 200
    for seed in range(n):
        g = np.random.default_rng(seed)
        img = g.normal(size=(16, 16))
        s, _ = sample_secret([256], RngStream(7000 + seed))
        bound = hilbert_hrr_bind(img, s)
        ok += abs(cosine(hilbert_encode(img), bound)) < 0.15
    assert ok / n >= 0.90


def test_hilbert_hrr_length_mismatch():
    s, _ = sample_secret([64], RngStream(8))
    with pytest.raises(ShapeError):
        hilbert_hrr_bind(np.zeros((16, 16)), s)
