import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fastica_asym.gain import align, gain_matrix, to_extraction_coords
from fastica_asym.linalg import inv_sqrt
from fastica_asym.seeding import derive_rng, random_orthonormal
from fastica_asym.sources import random_mixing


def brute_force(G):
    """Best row-of-source assignment and objective by exhaustive search."""
    d = G.shape[0]
    best, arg = -np.inf, None
    for perm in itertools.permutations(range(d)):
        val = sum(abs(G[perm[i], i]) for i in range(d))
        if val > best:
            best, arg = val, perm
    return np.array(arg), best


def test_identity_gain():
    np.testing.assert_array_equal(gain_matrix(np.eye(3), np.eye(3), np.eye(3)), np.eye(3))


def test_exact_whitening_gain_is_orthogonal():
    H = random_mixing(3, 1)
    W = random_orthonormal(3, derive_rng(2))
    G = gain_matrix(W, inv_sqrt(H @ H.T), H)
    np.testing.assert_allclose(G @ G.T, np.eye(3), atol=1e-12)


def test_perfect_solution_gives_identity():
    H = random_mixing(3, 3)
    C = H @ H.T
    # columns of C^{1/2} B are orthonormal and give G = I
    from fastica_asym.linalg import sqrtm_spd
    W = sqrtm_spd(C) @ np.linalg.inv(H).T
    np.testing.assert_allclose(gain_matrix(W, inv_sqrt(C), H), np.eye(3), atol=1e-12)


def test_gain_is_linear_in_each_factor():
    rng = derive_rng(4)
    W, S, H = (rng.standard_normal((3, 3)) for _ in range(3))
    np.testing.assert_allclose(gain_matrix(W, S, 2.5 * H), 2.5 * gain_matrix(W, S, H), rtol=1e-14)
    np.testing.assert_allclose(gain_matrix(-3 * W, S, H), -3 * gain_matrix(W, S, H), rtol=1e-14)


def test_align_sign_example():
    s = align(np.diag([-1.0, 1.0, 1.0]))
    np.testing.assert_array_equal(s.signs, [-1, 1, 1])
    np.testing.assert_array_equal(s.G_aligned, np.eye(3))


def test_align_undoes_row_swap():
    G = np.eye(3)[[1, 0, 2]]
    s = align(G)
    np.testing.assert_array_equal(s.G_aligned, np.eye(3))
    assert list(s.row_of_source) == [1, 0, 2]
    assert s.extraction_order == (1, 0, 2)


def test_near_identity_keeps_identity_permutation():
    rng = derive_rng(5)
    for _ in range(50):
        E = rng.uniform(-0.03, 0.03, size=(3, 3))
        s = align(np.eye(3) + E)
        assert list(s.row_of_source) == [0, 1, 2]
        assert np.all(s.signs == 1)
        assert list(brute_force(np.eye(3) + E)[0]) == [0, 1, 2]


@pytest.mark.parametrize("d", [2, 3, 4])
def test_hungarian_equals_exhaustive_search(d):
    rng = derive_rng(6, d)
    for _ in range(1000):
        G = rng.standard_normal((d, d))
        s = align(G)
        perm, best = brute_force(G)
        assert s.objective == pytest.approx(best, rel=1e-12)
        if not s.ambiguous:
            assert list(s.row_of_source) == list(perm)


def test_runner_up_against_brute_force():
    rng = derive_rng(7)
    for _ in range(200):
        G = rng.standard_normal((3, 3))
        s = align(G)
        vals = sorted((sum(abs(G[p[i], i]) for i in range(3)) for p in itertools.permutations(range(3))),
                      reverse=True)
        assert s.runner_up == pytest.approx(vals[1], rel=1e-12)


def test_ambiguous_alignment_flagged():
    G = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert align(G).ambiguous
    assert not align(np.eye(2)).ambiguous


@given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
def test_aligned_diagonal_positive_and_idempotent(G):
    s = align(G)
    assert sorted(s.row_of_source) == [0, 1, 2]
    assert np.all(np.diag(s.G_aligned) >= 0)
    np.testing.assert_array_equal(s.G_aligned, (s.signs[:, None] * G[s.row_of_source]))
    if not s.ambiguous:
        again = align(s.G_aligned)
        np.testing.assert_array_equal(again.G_aligned, s.G_aligned)
        assert list(again.row_of_source) == [0, 1, 2]


def test_scaled_errors():
    G = np.eye(3) + 0.01
    s = align(G, n_samples=400)
    np.testing.assert_allclose(s.errors_scaled, 20 * (s.G_aligned - np.eye(3)))


def test_extraction_coordinates():
    M = np.arange(9.0).reshape(3, 3)
    E = to_extraction_coords(M, (2, 0, 1))
    assert E[0, 1] == M[2, 0] and E[1, 2] == M[0, 1] and E[2, 2] == M[1, 1]
