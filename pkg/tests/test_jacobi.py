import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnlab import DimensionError, NumericalError
from attnlab.jacobi import MAX_SWEEPS, jacobi_eigh, off_diagonal_norm


def random_symmetric(rng, n, scale=1.0):
    M = rng.standard_normal((n, n)) * scale
    return (M + M.T) / 2.0


def check_against_numpy(A, tol=1e-10):
    evals, V = jacobi_eigh(A)
    ref = np.sort(np.linalg.eigvalsh(A))[::-1]
    denom = max(1.0, float(np.abs(ref).max()))
    assert np.abs(evals - ref).max() / denom < tol
    n = A.shape[0]
    assert np.abs(V.T @ V - np.eye(n)).max() < 1e-10
    assert np.abs(V @ np.diag(evals) @ V.T - A).max() / denom < tol


def test_matches_numpy_across_sizes_and_scales():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3, 5, 8, 13, 21, 32):
        for scale in (1e-6, 1.0, 1e6):
            check_against_numpy(random_symmetric(rng, n, scale))


def test_eigenvalues_sorted_descending():
    rng = np.random.default_rng(1)
    evals, _ = jacobi_eigh(random_symmetric(rng, 9))
    assert (np.diff(evals) <= 1e-12).all()


def test_diagonal_input_is_exact():
    d = np.array([3.0, -1.0, 7.5, 0.0])
    evals, V = jacobi_eigh(np.diag(d))
    assert np.array_equal(evals, np.sort(d)[::-1])
    assert np.allclose(np.abs(V.T @ V), np.eye(4))


def test_rank_deficient_psd():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((10, 3))
    evals, _ = jacobi_eigh(B @ B.T)
    assert evals[3:].max() < 1e-10 * evals[0]
    assert (evals > -1e-10 * evals[0]).all()


def test_zero_and_single_element():
    evals, V = jacobi_eigh(np.zeros((5, 5)))
    assert np.array_equal(evals, np.zeros(5))
    evals1, V1 = jacobi_eigh(np.array([[4.0]]))
    assert evals1[0] == 4.0 and V1[0, 0] == 1.0


def test_extreme_eigenvalue_spread_stays_finite():
    # diagonal spans ~18 orders of magnitude with tiny couplings: the
    # rotation formula must neither overflow nor produce NaN
    A = np.diag(10.0 ** np.arange(0, 18, 3))
    A[0, 5] = A[5, 0] = 1e-290
    A[1, 3] = A[3, 1] = 1e-12
    evals, V = jacobi_eigh(A)
    assert np.isfinite(evals).all() and np.isfinite(V).all()
    ref = np.sort(np.linalg.eigvalsh(A))[::-1]
    assert np.abs(evals - ref).max() / ref.max() < 1e-12


def test_rejects_nonsquare_and_asymmetric():
    with pytest.raises(DimensionError):
        jacobi_eigh(np.zeros((3, 4)))
    bad = np.array([[1.0, 2.0], [0.5, 1.0]])
    with pytest.raises(DimensionError):
        jacobi_eigh(bad)


def test_tolerates_roundoff_asymmetry():
    rng = np.random.default_rng(3)
    A = random_symmetric(rng, 6)
    A[0, 1] += 1e-13  # below the symmetry slack
    check_against_numpy((A + A.T) / 2.0)
    jacobi_eigh(A)  # must not raise


def test_nonconvergence_is_reported():
    rng = np.random.default_rng(4)
    A = random_symmetric(rng, 8)
    with pytest.raises(NumericalError):
        jacobi_eigh(A, max_sweeps=0)


def test_off_diagonal_norm():
    assert off_diagonal_norm(np.diag([1.0, 2.0, 3.0])) == 0.0
    A = np.array([[1.0, 3.0], [3.0, 2.0]])
    assert off_diagonal_norm(A) == pytest.approx(np.sqrt(18.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_reconstruction_property(n, seed):
    A = random_symmetric(np.random.default_rng(seed), n)
    check_against_numpy(A)
