"""Head-diversity analytics on the gauge-invariant bilinear forms.

A head's attention logits are determined by A_h = Wq[h] (W_h^K)^T alone:
rotating Wq[h] and W_h^K by the same orthogonal matrix changes neither A_h
nor anything downstream. All similarity analysis therefore runs on the
A_h, never on raw projection factors.

The forms are d x d and never need to be materialized to compare them:

    <A_i, A_j>_F = tr((W_i^K)^T W_j^K (W_j^Q)^T W_i^Q)

turns each inner product into two d_h x d_h products, which is how ``gram``
always evaluates it (``BilinearFormSet.form`` materializes a single A_h on
demand for tests and small-d cross-checks).

Spectral summaries follow the kernel-PCA recipe: cosine-normalize the Gram,
double-center it, take the eigenvalues (cyclic Jacobi), and report the
exp-entropy effective rank — a smooth count of independent directions the
heads actually span around their mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AttentionConfig, Mechanism
from .errors import (
    DegenerateHeadError,
    DimensionError,
    NumericalError,
    ParameterError,
    UnsupportedMechanismError,
)
from .jacobi import jacobi_eigh
from .weights import WeightSet, effective_kv_weights

# Eigenvalues of a PSD Gram this far below zero are roundoff; further is not.
EIGENVALUE_CLIP = -1e-10
CUMULATIVE_TARGET = 0.90


@dataclass(frozen=True)
class BilinearFormSet:
    """Per-head bilinear forms, stored as factors (wq[h], effective wk[h])."""

    wq: tuple[np.ndarray, ...]
    wk: tuple[np.ndarray, ...]
    H: int
    d: int
    d_h: int

    def form(self, h: int) -> np.ndarray:
        """Materialize A_h = Wq[h] (W_h^K)^T as a d x d matrix."""
        return self.wq[h] @ self.wk[h].T


@dataclass(frozen=True)
class GramMatrix:
    """Pairwise Frobenius inner products of the head forms."""

    G: np.ndarray
    normalized: bool
    centered: bool

    @property
    def H(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalue summary of a Gram matrix.

    ``effective_rank_pct`` is the effective rank as a fraction of the head
    count. A fully degenerate (all-zero) spectrum reports effective rank 0
    with ``degenerate`` set, so identical heads read as "no variance around
    the mean" rather than as an error.
    """

    eigenvalues: np.ndarray
    variance_fractions: np.ndarray
    cumulative_variance: np.ndarray
    effective_rank_abs: float
    effective_rank_pct: float
    n_components_for_90pct: int
    degenerate: bool = False


def bilinear_forms(w: WeightSet, config: AttentionConfig) -> BilinearFormSet:
    """Resolve each head's (Wq, effective W^K) factor pair."""
    wks = []
    for h in range(config.H):
        wk, _ = effective_kv_weights(w, config, h)
        wks.append(wk)
    for h in range(config.H):
        if not (np.isfinite(w.wq[h]).all() and np.isfinite(wks[h]).all()):
            raise NumericalError(f"non-finite projection factors at head {h}")
    return BilinearFormSet(
        wq=tuple(w.wq), wk=tuple(wks), H=config.H, d=config.d, d_h=config.d_h
    )


def _form_inner(forms: BilinearFormSet, i: int, j: int) -> float:
    # tr(A_i^T A_j) via the small side: two d_h x d_h products instead of
    # two d x d forms. tr(PQ) = sum(P * Q.T).
    P = forms.wk[i].T @ forms.wk[j]
    Q = forms.wq[j].T @ forms.wq[i]
    return float(np.sum(P * Q.T))


def gram(forms: BilinearFormSet, normalize: bool) -> GramMatrix:
    """Gram matrix of the head forms under the Frobenius inner product.

    With ``normalize`` the entries are cosine similarities s_ij in [-1, 1];
    a head whose form has zero norm cannot be normalized and raises
    DegenerateHeadError naming it.
    """
    H = forms.H
    G = np.empty((H, H), dtype=np.float64)
    for i in range(H):
        for j in range(i, H):
            G[i, j] = _form_inner(forms, i, j)
            G[j, i] = G[i, j]
    if not normalize:
        return GramMatrix(G=G, normalized=False, centered=False)
    sq = np.clip(np.diag(G), 0.0, None)
    norms = np.sqrt(sq)
    for h in range(H):
        if norms[h] == 0.0:
            raise DegenerateHeadError(
                f"head {h} has a zero-norm bilinear form; cosine similarity undefined"
            )
    G = G / np.outer(norms, norms)
    return GramMatrix(G=G, normalized=True, centered=False)


def center_gram(g: GramMatrix) -> GramMatrix:
    """Double-center: subtract row and column means, add back the grand mean.

    Removes the heads' mean direction before spectral analysis, so the
    spectrum measures variance *around* the mean form. Idempotent.
    """
    G = g.G
    row = G.mean(axis=1, keepdims=True)
    col = G.mean(axis=0, keepdims=True)
    grand = G.mean()
    return GramMatrix(G=G - row - col + grand, normalized=g.normalized, centered=True)


def spectrum(g: GramMatrix) -> SpectrumReport:
    """Eigenvalues, variance fractions, and exp-entropy effective rank.

    Slightly negative eigenvalues (roundoff on a PSD matrix) are floored to
    zero; anything materially negative means the input was not a Gram
    matrix and raises NumericalError.
    """
    evals, _ = jacobi_eigh(g.G)
    if evals.size and float(evals.min()) < EIGENVALUE_CLIP:
        raise NumericalError(
            f"Gram spectrum has eigenvalue {evals.min():g} below {EIGENVALUE_CLIP:g}"
        )
    evals = np.clip(evals, 0.0, None)
    H = evals.size
    total = float(evals.sum())
    if total == 0.0:
        zeros = np.zeros(H)
        return SpectrumReport(
            eigenvalues=evals,
            variance_fractions=zeros,
            cumulative_variance=zeros,
            effective_rank_abs=0.0,
            effective_rank_pct=0.0,
            n_components_for_90pct=0,
            degenerate=True,
        )
    v = evals / total
    pos = v[v > 0.0]
    entropy = float(-np.sum(pos * np.log(pos)))
    eff = float(np.exp(entropy))
    cumulative = np.cumsum(v)
    n90 = int(np.argmax(cumulative >= CUMULATIVE_TARGET - 1e-12)) + 1
    return SpectrumReport(
        eigenvalues=evals,
        variance_fractions=v,
        cumulative_variance=cumulative,
        effective_rank_abs=eff,
        effective_rank_pct=eff / H,
        n_components_for_90pct=n90,
    )


def _normalized_gram_tolerant(forms: BilinearFormSet) -> tuple[GramMatrix, tuple[int, ...]]:
    """Normalized Gram that flags zero-norm heads instead of raising.

    Degenerate heads get unit denominators, leaving their rows/columns at
    the raw (zero) inner products.
    """
    raw = gram(forms, normalize=False)
    sq = np.clip(np.diag(raw.G), 0.0, None)
    norms = np.sqrt(sq)
    degenerate = tuple(int(h) for h in np.flatnonzero(norms == 0.0))
    safe = np.where(norms == 0.0, 1.0, norms)
    G = raw.G / np.outer(safe, safe)
    return GramMatrix(G=G, normalized=True, centered=False), degenerate


def diversity_report(w: WeightSet, config: AttentionConfig) -> dict:
    """Full similarity/spectrum summary for one layer's heads.

    Returns a dict with the normalized similarity matrix, the uncentered
    and centered SpectrumReports, and any degenerate (zero-form) heads.
    Degenerate heads are reported, not raised.
    """
    forms = bilinear_forms(w, config)
    sim, degenerate_heads = _normalized_gram_tolerant(forms)
    uncentered = spectrum(sim)
    centered = spectrum(center_gram(sim))
    return {
        "H": config.H,
        "similarity": sim.G,
        "uncentered": uncentered,
        "centered": centered,
        "degenerate_heads": degenerate_heads,
    }


@dataclass(frozen=True)
class MagnitudeReport:
    """Frobenius norms of shared base, per-head residual, and their sum.

    ``cosine_*`` is the Frobenius-inner-product cosine between the shared
    base and each head's residual (0.0 when either side is zero).
    """

    shared_k: float
    residual_k: np.ndarray
    total_k: np.ndarray
    cosine_k: np.ndarray
    shared_v: float
    residual_v: np.ndarray
    total_v: np.ndarray
    cosine_v: np.ndarray


def _magnitude_path(shared, us, bs, H):
    shared_norm = float(np.linalg.norm(shared))
    residual = np.empty(H)
    total = np.empty(H)
    cosine = np.empty(H)
    for h in range(H):
        R = us[h] @ bs[h].T
        residual[h] = np.linalg.norm(R)
        total[h] = np.linalg.norm(shared + R)
        denom = shared_norm * residual[h]
        if denom == 0.0:
            cosine[h] = 0.0
        else:
            cosine[h] = float(np.clip(np.sum(shared * R) / denom, -1.0, 1.0))
    return shared_norm, residual, total, cosine


def magnitude_report(w: WeightSet, config: AttentionConfig) -> MagnitudeReport:
    """Shared/residual/total norms and alignment, K and V paths separately."""
    if config.mechanism is not Mechanism.LRKV:
        raise UnsupportedMechanismError(
            f"magnitude_report is defined for lrkv only, got {config.mechanism.value}"
        )
    sk, rk, tk, ck = _magnitude_path(w.wk_shared, w.uk, w.bk, config.H)
    sv, rv, tv, cv = _magnitude_path(w.wv_shared, w.uv, w.bv, config.H)
    return MagnitudeReport(
        shared_k=sk, residual_k=rk, total_k=tk, cosine_k=ck,
        shared_v=sv, residual_v=rv, total_v=tv, cosine_v=cv,
    )


def svd_truncate(W: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Best rank-r factors of W and the optimal residual error.

    Returns (U, B, err) with U (d, r) absorbing the singular values,
    B (d_h, r) orthonormal columns, U @ B.T the best rank-r Frobenius
    approximation, and err = sqrt(sum of the discarded singular values
    squared). Computed from the symmetric eigendecomposition of W^T W.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise DimensionError(f"W must be 2-D, got shape {W.shape}")
    d, d_h = W.shape
    if not (0 <= r <= min(d, d_h)):
        raise ParameterError(
            f"rank {r} outside [0, {min(d, d_h)}] for a {d}x{d_h} matrix"
        )
    evals, V = jacobi_eigh(W.T @ W)
    evals = np.clip(evals, 0.0, None)
    B = V[:, :r]
    U = W @ B
    err = float(np.sqrt(evals[r:].sum()))
    return U, B, err


def factorization_gap(
    w: WeightSet,
    config: AttentionConfig,
    reference: WeightSet,
    r: int | None = None,
) -> list[dict]:
    """How close each head's learned residual is to the rank-r optimum.

    ``reference`` supplies per-head target projections (independent K/V per
    head); ``w`` is a low-rank weight set over the same dims. Per head and
    path, reports the learned approximation error, the truncated-SVD
    optimum for the same shared base, and their ratio (>= 1 up to
    roundoff).
    """
    if config.mechanism is not Mechanism.LRKV:
        raise UnsupportedMechanismError(
            f"factorization_gap compares lrkv weights, got {config.mechanism.value}"
        )
    if reference.wk is None or reference.wv is None or len(reference.wk) != config.H:
        raise ParameterError(
            "reference must carry independent per-head K/V projections "
            f"for H={config.H} heads"
        )
    expected = (config.d, config.d_h)
    for h in range(config.H):
        if reference.wk[h].shape != expected or reference.wv[h].shape != expected:
            raise ParameterError(
                f"reference head {h} has shape {reference.wk[h].shape}, "
                f"expected {expected}"
            )
    if r is None:
        r = config.r
    rows: list[dict] = []
    paths = (
        ("k", reference.wk, w.wk_shared, w.uk, w.bk),
        ("v", reference.wv, w.wv_shared, w.uv, w.bv),
    )
    for path, refs, shared, us, bs in paths:
        for h in range(config.H):
            target = refs[h]
            learned = shared + us[h] @ bs[h].T
            e_learned = float(np.linalg.norm(target - learned))
            D = target - shared
            _, _, e_opt = svd_truncate(D, r)
            eps = 1e-12 * max(1.0, float(np.linalg.norm(D)))
            if e_opt < eps:
                ratio = 1.0 if e_learned < eps else float("inf")
            else:
                ratio = e_learned / e_opt
            rows.append({
                "head": h,
                "path": path,
                "e_learned": e_learned,
                "e_opt": e_opt,
                "ratio": ratio,
            })
    return rows
