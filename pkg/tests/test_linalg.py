import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fastica_asym.linalg import SingularCovarianceError, covariance, inv_sqrt, sqrtm_spd, sym_orth
from fastica_asym.seeding import derive_rng, random_orthonormal
from fastica_asym.sources import MixingModel, default_bimodal, generate_observations, random_mixing


def random_spd(d, seed, spread=3.0):
    rng = derive_rng(seed)
    Q = random_orthonormal(d, rng)
    lam = 10 ** rng.uniform(-spread / 2, spread / 2, size=d)
    return (Q * lam) @ Q.T


def polar_svd(W):
    U, _, Vt = np.linalg.svd(W)
    return U @ Vt


def test_inv_sqrt_examples():
    np.testing.assert_array_equal(inv_sqrt(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), rtol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_inv_sqrt_residual_symmetry_commutation(seed):
    d = 2 + seed % 6
    A = random_spd(d, seed)
    R = inv_sqrt(A)
    assert np.max(np.abs(R @ A @ R - np.eye(d))) < 1e-10
    assert np.array_equal(R, R.T)
    assert np.max(np.abs(R @ A - A @ R)) < 1e-10 * np.max(np.abs(A))


def test_inv_sqrt_rejects_singular_and_asymmetric():
    with pytest.raises(SingularCovarianceError):
        inv_sqrt(np.diag([1.0, 0.0]))
    with pytest.raises(SingularCovarianceError):
        inv_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(SingularCovarianceError):
        inv_sqrt(np.diag([1.0, 0.5]), eig_floor=0.6)
    with pytest.raises(ValueError):
        inv_sqrt(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_sqrtm_is_inverse_of_inv_sqrt():
    A = random_spd(4, 99)
    np.testing.assert_allclose(sqrtm_spd(A) @ inv_sqrt(A), np.eye(4), atol=1e-12)


def test_sym_orth_examples():
    Q = random_orthonormal(4, derive_rng(1))
    assert np.max(np.abs(sym_orth(Q) - Q)) < 1e-12
    np.testing.assert_allclose(sym_orth(2 * np.eye(3)), np.eye(3), atol=1e-15)
    with pytest.raises(np.linalg.LinAlgError):
        sym_orth(np.array([[1.0, 2.0], [2.0, 4.0]]))


@pytest.mark.parametrize("seed", range(100))
def test_sym_orth_matches_svd_polar_factor(seed):
    rng = derive_rng(seed, 77)
    d = 2 + seed % 5
    W = rng.standard_normal((d, d))
    O = sym_orth(W)
    assert np.max(np.abs(O - polar_svd(W))) < 1e-10
    assert np.max(np.abs(O @ O.T - np.eye(d))) < 1e-10


@given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10)))
def test_sym_orth_is_closest_orthogonal_matrix(W):
    if np.linalg.cond(W) > 1e6:
        return
    O = sym_orth(W)
    best = np.linalg.norm(W - O)
    for seed in range(5):
        Q = random_orthonormal(3, derive_rng(seed))
        assert best <= np.linalg.norm(W - Q) + 1e-9


def test_covariance_examples():
    const = np.tile(np.array([[2.0], [-1.0]]), (1, 5))
    np.testing.assert_array_equal(covariance(const, np.array([2.0, -1.0])), np.zeros((2, 2)))
    two = np.array([[1.0, -1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(covariance(two), np.diag([1.0, 0.0]))


def test_covariance_uses_one_over_n():
    y = derive_rng(4).standard_normal((3, 10))
    C = covariance(y)
    np.testing.assert_allclose(C, np.cov(y, bias=True), rtol=1e-13)
    np.testing.assert_allclose(C * 10 / 9, np.cov(y), rtol=1e-13)
    assert not np.allclose(C, np.cov(y))


def test_covariance_about_given_center():
    y = derive_rng(5).standard_normal((2, 50)) + 1.0
    c = np.array([1.0, 1.0])
    expected = (y - c[:, None]) @ (y - c[:, None]).T / 50
    np.testing.assert_allclose(covariance(y, c), expected, rtol=1e-13)
    with pytest.raises(ValueError):
        covariance(y, "median")


def test_covariance_population_oracle():
    H = random_mixing(3, 8)
    y = generate_observations(MixingModel(H, [default_bimodal()] * 3), 200_000, 8)
    P = H @ H.T
    rel = np.abs(covariance(y) - P) / np.sqrt(np.outer(np.diag(P), np.diag(P)))
    assert rel.max() < 0.02
