"""Finite-difference validation of the factorized-projection gradients.

The loss probed here is the generic linear functional

    f = sum_h <G_h, X (W_shared + U_h B_h^T)>_F

with fixed random cotangents G_h — exactly the contraction any downstream
gradient flows through, so agreement on it validates projection_backward
for arbitrary upstream gradients. The shared base receives the sum of all
heads' contributions, which is checked as a whole.

Small tensors are checked entry by entry with central differences; tensors
above ``max_elements`` fall back to directional derivatives along random
unit directions (still central differences, just projected), which keeps
the check tractable at large widths. Each row reports which mode ran.
"""

from __future__ import annotations

import numpy as np

from .config import AttentionConfig, Mechanism, RngSpec
from .errors import UnsupportedMechanismError
from .weights import init_weights, projection_backward

_MASK64 = (1 << 64) - 1

GRADCHECK_TOL = 1e-4
DEFAULT_EPS = 1e-6
DEFAULT_T = 4
N_DIRECTIONS = 8


def _loss(X, cotangents, shared, us, bs):
    total = 0.0
    for h in range(len(cotangents)):
        K = X @ (shared + us[h] @ bs[h].T)
        total += float(np.sum(cotangents[h] * K))
    return total


def _fd_elementwise(loss_at, param, eps):
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + eps
        up = loss_at()
        param[idx] = orig - eps
        down = loss_at()
        param[idx] = orig
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def _relative_error(analytic, fd):
    denom = max(float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / denom


def _directional_error(loss_at, param, analytic, eps, gen):
    base = param.copy()
    worst = 0.0
    for _ in range(N_DIRECTIONS):
        delta = gen.standard_normal(param.shape)
        delta /= np.linalg.norm(delta)
        analytic_dd = float(np.sum(analytic * delta))
        param[...] = base + eps * delta
        up = loss_at()
        param[...] = base - eps * delta
        down = loss_at()
        param[...] = base
        fd_dd = (up - down) / (2.0 * eps)
        worst = max(worst, abs(analytic_dd - fd_dd) / max(abs(fd_dd), 1e-12))
    return worst


def gradcheck_rows(
    config: AttentionConfig,
    seed: RngSpec,
    instances: int = 20,
    eps: float = DEFAULT_EPS,
    T: int = DEFAULT_T,
    max_elements: int = 4096,
) -> list[dict]:
    """Compare projection_backward against central differences.

    One row per (instance, path, parameter tensor) with the relative error
    and the finite-difference mode used. The shared-base row checks the
    per-head-summed gradient.
    """
    if config.mechanism is not Mechanism.LRKV:
        raise UnsupportedMechanismError(
            f"gradcheck probes the factorized projection; got {config.mechanism.value}"
        )
    rows: list[dict] = []
    for instance in range(instances):
        inst_seed = (seed.seed + instance) & _MASK64
        w = init_weights(config, RngSpec(seed=inst_seed))
        gen = np.random.Generator(np.random.PCG64(inst_seed).jumped())
        X = gen.standard_normal((T, config.d))
        for path in ("k", "v"):
            if path == "k":
                shared = w.wk_shared.copy()
                us = [u.copy() for u in w.uk]
                bs = [b.copy() for b in w.bk]
            else:
                shared = w.wv_shared.copy()
                us = [u.copy() for u in w.uv]
                bs = [b.copy() for b in w.bv]
            cotangents = [
                gen.standard_normal((T, config.d_h)) for _ in range(config.H)
            ]

            analytic_shared = np.zeros_like(shared)
            analytic_us = []
            analytic_bs = []
            for h in range(config.H):
                g = projection_backward(w, config, X, cotangents[h], h, path=path)
                analytic_shared += g.dWshared
                analytic_us.append(g.dU)
                analytic_bs.append(g.dB)

            def loss_at():
                return _loss(X, cotangents, shared, us, bs)

            targets = [("w_shared", shared, analytic_shared)]
            for h in range(config.H):
                targets.append((f"u.{h}", us[h], analytic_us[h]))
                targets.append((f"b.{h}", bs[h], analytic_bs[h]))
            for name, param, analytic in targets:
                if param.size == 0:
                    continue
                if param.size <= max_elements:
                    fd = _fd_elementwise(loss_at, param, eps)
                    rel = _relative_error(analytic, fd)
                    mode = "elementwise"
                else:
                    rel = _directional_error(loss_at, param, analytic, eps, gen)
                    mode = "directional"
                rows.append({
                    "instance": instance,
                    "path": path,
                    "target": name,
                    "fd_mode": mode,
                    "rel_err": rel,
                })
    return rows
