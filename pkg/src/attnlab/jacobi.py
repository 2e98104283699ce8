"""Cyclic Jacobi eigendecomposition for small symmetric matrices.

The spectral analysis in this package runs on matrices no bigger than a few
hundred on a side (head-count Gram matrices, d_h x d_h squares of
projections), where Jacobi sweeps are plenty fast, fully deterministic, and
easy to audit. Rotations are applied with vectorized row/column updates;
convergence is declared when the off-diagonal Frobenius norm drops below a
relative threshold.

Written by hand on purpose — the rest of the package treats this as its
eigensolver of record, and the test suite cross-checks it against an
independent library implementation.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericalError

REL_TOL = 1e-12
MAX_SWEEPS = 60
# Asymmetry beyond this (relative to the largest entry) is a caller bug,
# not roundoff, and is rejected rather than silently symmetrized.
SYMMETRY_SLACK = 1e-8


def off_diagonal_norm(a: np.ndarray) -> float:
    """Frobenius norm of the off-diagonal part."""
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(
    A: np.ndarray, rel_tol: float = REL_TOL, max_sweeps: int = MAX_SWEEPS
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of symmetric A.

    Returns (evals, V) with A ≈ V @ diag(evals) @ V.T and V's columns the
    eigenvectors. Convergence: off-diagonal Frobenius norm below
    rel_tol * ||A||_F (exact zero for the empty and 1x1 cases).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > 0:
        scale = max(1.0, float(np.max(np.abs(A))))
        asym = float(np.max(np.abs(A - A.T)))
        if asym > SYMMETRY_SLACK * scale:
            raise DimensionError(
                f"matrix is not symmetric: max |A - A.T| = {asym:g}"
            )
    a = (A + A.T) / 2.0
    V = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), V

    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return np.zeros(n), V
    threshold = rel_tol * norm

    for _ in range(max_sweeps):
        if off_diagonal_norm(a) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # Rotation angle that zeroes a[p, q] (stable tan formula).
                diff = a[q, q] - a[p, p]
                if diff == 0.0:
                    t = 1.0
                elif abs(apq) < abs(diff) * 1e-280:
                    # theta would overflow; use the large-angle limit 1/(2*theta).
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0

                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if off_diagonal_norm(a) > threshold:
            raise NumericalError(
                f"Jacobi sweeps did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off_diagonal_norm(a):g}, threshold {threshold:g})"
            )

    evals = np.diag(a).copy()
    order = np.argsort(evals)[::-1]
    return evals[order], V[:, order]
