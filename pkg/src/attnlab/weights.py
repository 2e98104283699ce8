"""Weight parameterizations for the five attention mechanisms.

Every mechanism keeps full-rank per-head query projections Wq[h] (d, d_h).
The K/V side is where they differ:

    MHA   Wk[h], Wv[h]            independent per head
    MQA   Wk_shared, Wv_shared    one pair for all heads
    GQA   Wk[g], Wv[g]            one pair per group, head -> group g(h)
    MLA   Wdown (d, d_c) with per-head up-projections WupK[h], WupV[h] (d_c, d_h)
    LRKV  Wk_shared + Uk[h] Bk[h]^T  (and the same for V):
          a dense shared base plus a head-specific rank-r residual

The LRKV residual keeps the projection shape (d, d_h): Uk[h] is (d, r) and
Bk[h] is (d_h, r), so Uk[h] @ Bk[h].T is a (d, d_h) update of rank <= r.

Initialization is Kaiming-style N(0, 2/fan_in) with fan_in = d (fan_in = d_c
for the MLA up-projections). The LRKV factor pair is drawn and then U is
rescaled so that ||U_h B_h^T||_F = 0.1 * ||W_shared||_F holds exactly per
head and per path: the model starts close to the fully shared baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import AttentionConfig, Mechanism, RngSpec
from .errors import DimensionError, UnsupportedMechanismError

DTYPE = np.float64

# Fraction of the shared base's Frobenius norm given to each initial residual.
RESIDUAL_INIT_FRACTION = 0.1


def gqa_group(head: int, H: int, G: int) -> int:
    """Head -> KV-group map for GQA: contiguous blocks, g(h) = floor(h*G/H)."""
    return (head * G) // H


@dataclass(frozen=True)
class WeightSet:
    """Projection weights for one attention layer.

    ``wq`` is always present, one (d, d_h) matrix per head. Exactly one
    mechanism payload is populated; the rest stay None. ``config`` records
    the configuration the weights were generated for (serialization
    convenience; operations take their config explicitly).
    """

    wq: tuple[np.ndarray, ...]
    # MHA (per head) / GQA (per group)
    wk: tuple[np.ndarray, ...] | None = None
    wv: tuple[np.ndarray, ...] | None = None
    # MQA / LRKV shared base
    wk_shared: np.ndarray | None = None
    wv_shared: np.ndarray | None = None
    # LRKV low-rank factors, per head
    uk: tuple[np.ndarray, ...] | None = None
    bk: tuple[np.ndarray, ...] | None = None
    uv: tuple[np.ndarray, ...] | None = None
    bv: tuple[np.ndarray, ...] | None = None
    # MLA latent projections
    wdown: np.ndarray | None = None
    wup_k: tuple[np.ndarray, ...] | None = None
    wup_v: tuple[np.ndarray, ...] | None = None
    config: AttentionConfig | None = None

    def astype(self, dtype) -> "WeightSet":
        """Return a copy with every tensor cast to ``dtype``."""

        def cast(x):
            if x is None:
                return None
            if isinstance(x, tuple):
                return tuple(a.astype(dtype) for a in x)
            return x.astype(dtype)

        return replace(
            self,
            wq=cast(self.wq),
            wk=cast(self.wk),
            wv=cast(self.wv),
            wk_shared=cast(self.wk_shared),
            wv_shared=cast(self.wv_shared),
            uk=cast(self.uk),
            bk=cast(self.bk),
            uv=cast(self.uv),
            bv=cast(self.bv),
            wdown=cast(self.wdown),
            wup_k=cast(self.wup_k),
            wup_v=cast(self.wup_v),
        )

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> tensor view of the populated payload (fixed order)."""
        out: dict[str, np.ndarray] = {}
        for h, m in enumerate(self.wq):
            out[f"wq.{h}"] = m
        singles = (("wk_shared", self.wk_shared), ("wv_shared", self.wv_shared),
                   ("wdown", self.wdown))
        for name, m in singles:
            if m is not None:
                out[name] = m
        stacks = (("wk", self.wk), ("wv", self.wv), ("uk", self.uk),
                  ("bk", self.bk), ("uv", self.uv), ("bv", self.bv),
                  ("wup_k", self.wup_k), ("wup_v", self.wup_v))
        for name, tensors in stacks:
            if tensors is not None:
                for i, m in enumerate(tensors):
                    out[f"{name}.{i}"] = m
        return out


@dataclass(frozen=True)
class ProjectionGrad:
    """Analytic gradient of the LRKV factorized projection (one path)."""

    dWshared: np.ndarray  # (d, d_h) — this head's contribution
    dU: np.ndarray        # (d, r)
    dB: np.ndarray        # (d_h, r)


def init_weights(config: AttentionConfig, rng: RngSpec) -> WeightSet:
    """Draw a WeightSet deterministically from (seed, config).

    Draw order is fixed (queries head-by-head, then the mechanism payload),
    so identical (seed, config) pairs produce byte-identical weights.
    """
    gen = np.random.Generator(np.random.PCG64(rng.seed))
    d, H, d_h = config.d, config.H, config.d_h
    std = np.sqrt(2.0 / d)

    def draw(rows: int, cols: int, scale: float) -> np.ndarray:
        return gen.normal(0.0, scale, size=(rows, cols)).astype(DTYPE, copy=False)

    wq = tuple(draw(d, d_h, std) for _ in range(H))
    m = config.mechanism

    if m is Mechanism.MHA:
        wk = tuple(draw(d, d_h, std) for _ in range(H))
        wv = tuple(draw(d, d_h, std) for _ in range(H))
        return WeightSet(wq=wq, wk=wk, wv=wv, config=config)

    if m is Mechanism.MQA:
        return WeightSet(
            wq=wq,
            wk_shared=draw(d, d_h, std),
            wv_shared=draw(d, d_h, std),
            config=config,
        )

    if m is Mechanism.GQA:
        wk = tuple(draw(d, d_h, std) for _ in range(config.G))
        wv = tuple(draw(d, d_h, std) for _ in range(config.G))
        return WeightSet(wq=wq, wk=wk, wv=wv, config=config)

    if m is Mechanism.MLA:
        wdown = draw(d, config.d_c, std)
        up_std = np.sqrt(2.0 / config.d_c)
        wup_k = tuple(draw(config.d_c, d_h, up_std) for _ in range(H))
        wup_v = tuple(draw(config.d_c, d_h, up_std) for _ in range(H))
        return WeightSet(wq=wq, wdown=wdown, wup_k=wup_k, wup_v=wup_v, config=config)

    # LRKV: shared bases first, then per-head (U, B) pairs for K then V.
    r = config.r
    wk_shared = draw(d, d_h, std)
    wv_shared = draw(d, d_h, std)

    def residual_pair(shared: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if r == 0:
            return (np.zeros((d, 0), dtype=DTYPE), np.zeros((d_h, 0), dtype=DTYPE))
        u = draw(d, r, std)
        b = draw(d_h, r, np.sqrt(1.0 / r))
        # Rescale U (only U) so the residual magnitude is exact, not approximate.
        res_norm = np.linalg.norm(u @ b.T)
        target = RESIDUAL_INIT_FRACTION * np.linalg.norm(shared)
        u = u * (target / res_norm)
        return u, b

    uk, bk, uv, bv = [], [], [], []
    for _ in range(H):
        u, b = residual_pair(wk_shared)
        uk.append(u)
        bk.append(b)
    for _ in range(H):
        u, b = residual_pair(wv_shared)
        uv.append(u)
        bv.append(b)
    return WeightSet(
        wq=wq,
        wk_shared=wk_shared,
        wv_shared=wv_shared,
        uk=tuple(uk),
        bk=tuple(bk),
        uv=tuple(uv),
        bv=tuple(bv),
        config=config,
    )


def effective_kv_weights(
    w: WeightSet, config: AttentionConfig, head: int
) -> tuple[np.ndarray, np.ndarray]:
    """Resolve (W_h^K, W_h^V), both (d, d_h), for any mechanism.

    For LRKV with r = 0 (or an exactly empty residual) the shared arrays are
    returned as-is — no arithmetic — so complete sharing is bitwise identical
    to the MQA path.
    """
    if not (0 <= head < config.H):
        raise IndexError(f"head {head} out of range for H={config.H}")
    m = config.mechanism
    if m is Mechanism.MHA:
        return w.wk[head], w.wv[head]
    if m is Mechanism.MQA:
        return w.wk_shared, w.wv_shared
    if m is Mechanism.GQA:
        g = gqa_group(head, config.H, config.G)
        return w.wk[g], w.wv[g]
    if m is Mechanism.MLA:
        return w.wdown @ w.wup_k[head], w.wdown @ w.wup_v[head]
    # LRKV
    if config.r == 0:
        return w.wk_shared, w.wv_shared
    wk = w.wk_shared + w.uk[head] @ w.bk[head].T
    wv = w.wv_shared + w.uv[head] @ w.bv[head].T
    return wk, wv


def projection_backward(
    w: WeightSet,
    config: AttentionConfig,
    X: np.ndarray,
    dK: np.ndarray,
    head: int,
    path: str = "k",
) -> ProjectionGrad:
    """Gradients of K_head = X @ (W_shared + U B^T) w.r.t. the three factors.

        dWshared = X^T dK
        dU       = X^T dK B
        dB       = dK^T X U

    The shared and residual paths see the same upstream gradient because the
    parameterization is additive; dWshared here is this head's contribution,
    and the total shared gradient is the sum over heads. ``path`` selects the
    K or V factor pair (the structure is identical).
    """
    if config.mechanism is not Mechanism.LRKV:
        raise UnsupportedMechanismError(
            f"projection_backward is defined for lrkv only, got {config.mechanism.value}"
        )
    if path == "k":
        U, B = w.uk[head], w.bk[head]
    elif path == "v":
        U, B = w.uv[head], w.bv[head]
    else:
        raise DimensionError(f"path must be 'k' or 'v', got {path!r}")
    X = np.asarray(X)
    dK = np.asarray(dK)
    if X.ndim != 2 or dK.ndim != 2:
        raise DimensionError("X and dK must be 2-D")
    T, d = X.shape
    if d != config.d:
        raise DimensionError(f"X has width {d}, config.d={config.d}")
    if dK.shape != (T, config.d_h):
        raise DimensionError(
            f"dK shape {dK.shape} does not match (T={T}, d_h={config.d_h})"
        )
    dWshared = X.T @ dK
    dU = X.T @ (dK @ B)
    dB = dK.T @ (X @ U)
    return ProjectionGrad(dWshared=dWshared, dU=dU, dB=dB)
