"""Closed-form cost accounting: cache bytes, decode FLOPs, parameter counts.

All formulas are exact counts, not asymptotics. Conventions, used everywhere
and echoed in CLI output:

    - A reported "MiB" is 2**20 bytes.
    - One multiply-add is 2 FLOPs; softmax costs 5 FLOPs per position
      (max-scan, subtract, exp, sum, divide).
    - FLOP counts are per decode step, per layer, attention only, with the
      new token's Q/K/V (or latent) projections included. T is the number
      of cached positions the step attends over, the new token included.
    - The latent mechanism can be costed along either decode path:
      "reconstruct" (materialize per-head K/V from the latent each step)
      or "factored" (fold the up-projections into query and weights).
      The low-rank mechanism is always costed along its factored path.
    - ``flops_overhead_vs_mha`` compares only the attention-scan arithmetic
      (dot products over cached state, per-step reconstruction, and factor
      lifts) against the full-cache baseline's scan; new-token projections
      and softmax are excluded. For the low-rank mechanism this overhead is
      r/d_h + r/T, which converges to r/d_h for long prefixes.

The number of latent streams the latent mechanism caches (one shared or
separate K and V streams) is an accounting knob; two streams is the
default. A DecodeCache always holds the single shared stream, so measured
bytes match single-stream queries.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .cache import DecodeCache
from .config import AttentionConfig, Mechanism
from .errors import ConfigurationError, UnsupportedMechanismError

MIB = 2**20
VALID_BYTES_PER_ELEMENT = (1, 2, 4, 8)
DEFAULT_MLA_STREAMS = 2

FLOPS_PER_MULTIPLY_ADD = 2
SOFTMAX_FLOPS_PER_POSITION = 5

MLA_PATHS = ("reconstruct", "factored")


@dataclass(frozen=True)
class CostQuery:
    """A cache/FLOP accounting question: config plus deployment shape."""

    config: AttentionConfig
    T: int
    batch: int = 1
    bytes_per_element: int = 2
    mla_latent_streams: int = DEFAULT_MLA_STREAMS

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ConfigurationError(f"T must be >= 0, got {self.T}")
        if self.batch < 1:
            raise ConfigurationError(f"batch must be >= 1, got {self.batch}")
        if self.bytes_per_element not in VALID_BYTES_PER_ELEMENT:
            raise ConfigurationError(
                f"bytes_per_element must be one of {VALID_BYTES_PER_ELEMENT}, "
                f"got {self.bytes_per_element}"
            )
        if self.mla_latent_streams not in (1, 2):
            raise ConfigurationError(
                f"mla_latent_streams must be 1 or 2, got {self.mla_latent_streams}"
            )


@dataclass(frozen=True)
class CostReport:
    """One mechanism's costs for one query.

    ``cache_ratio_vs_mha`` is always the byte ratio against the full-cache
    baseline under the identical query (same H, d_h, T, batch, precision).
    """

    cache_bytes: int
    cache_ratio_vs_mha: float
    decode_flops_per_step: int
    flops_overhead_vs_mha: float
    kv_param_count: int


def cache_bytes(q: CostQuery) -> int:
    """KV-cache footprint in bytes for the whole model (all layers)."""
    c = q.config
    n = c.n_layers * q.batch * q.T * q.bytes_per_element
    m = c.mechanism
    if m is Mechanism.MHA:
        return 2 * n * c.H * c.d_h
    if m is Mechanism.MQA:
        return 2 * n * c.d_h
    if m is Mechanism.GQA:
        return 2 * n * c.G * c.d_h
    if m is Mechanism.MLA:
        return q.mla_latent_streams * n * c.d_c
    return 2 * n * (c.d_h + c.H * c.r)  # LRKV


def cache_ratio(
    config: AttentionConfig, mla_latent_streams: int = DEFAULT_MLA_STREAMS
) -> float:
    """Cache size relative to the full-cache baseline, in closed form.

    T, batch, and precision cancel, so this is a pure function of the
    config: 1 for MHA, 1/H for MQA, G/H for GQA, streams*d_c/(2*H*d_h) for
    the latent mechanism, and 1/H + r/d_h for the low-rank mechanism.
    """
    m = config.mechanism
    if m is Mechanism.MHA:
        return 1.0
    if m is Mechanism.MQA:
        return 1.0 / config.H
    if m is Mechanism.GQA:
        return config.G / config.H
    if m is Mechanism.MLA:
        return mla_latent_streams * config.d_c / (2.0 * config.H * config.d_h)
    return 1.0 / config.H + config.r / config.d_h


def kv_param_count(config: AttentionConfig) -> int:
    """K/V projection parameters per layer (queries excluded)."""
    c = config
    m = c.mechanism
    if m is Mechanism.MHA:
        return 2 * c.H * c.d * c.d_h
    if m is Mechanism.MQA:
        return 2 * c.d * c.d_h
    if m is Mechanism.GQA:
        return 2 * c.G * c.d * c.d_h
    if m is Mechanism.MLA:
        return c.d * c.d_c + 2 * c.H * c.d_c * c.d_h
    return 2 * c.d * c.d_h + 2 * c.H * c.r * (c.d + c.d_h)


def decode_flops_breakdown(q: CostQuery, mla_path: str = "reconstruct") -> dict[str, int]:
    """Per-layer FLOPs of one decode step, split by role.

    Components (each already summed over heads):
      proj_new_token  projecting the incoming token (queries, K/V rows,
                      latent rows)
      reconstruct     per-step materialization of per-head K/V from cached
                      latents (the latent mechanism's explicit path only)
      scan            Q.K and attn.V dot products over cached state, at the
                      width actually scanned
      lift            T-independent factor work (query/weight pushes through
                      the small factors)
      softmax         5 FLOPs per cached position per head

    The sum over components is the total returned by ``decode_flops``.
    """
    if mla_path not in MLA_PATHS:
        raise ConfigurationError(f"mla_path must be one of {MLA_PATHS}, got {mla_path!r}")
    c = q.config
    T, H, d, d_h = q.T, c.H, c.d, c.d_h
    ma = FLOPS_PER_MULTIPLY_ADD
    softmax = SOFTMAX_FLOPS_PER_POSITION * T * H
    m = c.mechanism
    if m is Mechanism.MHA:
        proj = H * (ma * d * d_h + 2 * ma * d * d_h)
        rec, scan, lift = 0, H * 2 * ma * T * d_h, 0
    elif m is Mechanism.MQA:
        proj = H * ma * d * d_h + 2 * ma * d * d_h
        rec, scan, lift = 0, H * 2 * ma * T * d_h, 0
    elif m is Mechanism.GQA:
        proj = H * ma * d * d_h + 2 * ma * c.G * d * d_h
        rec, scan, lift = 0, H * 2 * ma * T * d_h, 0
    elif m is Mechanism.MLA:
        proj = H * ma * d * d_h + ma * d * c.d_c
        if mla_path == "reconstruct":
            rec = H * 2 * ma * T * c.d_c * d_h
            scan = H * 2 * ma * T * d_h
            lift = 0
        else:
            rec = 0
            scan = H * 2 * ma * T * c.d_c
            lift = H * 2 * ma * c.d_c * d_h
    else:  # LRKV, factored path
        proj = H * ma * d * d_h + 2 * ma * d * d_h + H * 2 * ma * d * c.r
        rec = 0
        scan = H * (2 * ma * T * d_h + 2 * ma * T * c.r)
        lift = H * 2 * ma * c.r * d_h
    return {
        "proj_new_token": proj,
        "reconstruct": rec,
        "scan": scan,
        "lift": lift,
        "softmax": softmax,
    }


def decode_flops(q: CostQuery, mla_path: str = "reconstruct") -> tuple[int, float]:
    """(total FLOPs per decode step per layer, scan overhead vs baseline).

    The overhead compares scan + reconstruct + lift against the full-cache
    baseline's scan (2*ma*T*d_h per head); projections and softmax are
    excluded from the ratio. See the module docstring for why.
    """
    parts = decode_flops_breakdown(q, mla_path=mla_path)
    total = sum(parts.values())
    if q.T == 0:
        return total, 0.0
    mha_scan = q.config.H * 2 * FLOPS_PER_MULTIPLY_ADD * q.T * q.config.d_h
    attn_only = parts["scan"] + parts["reconstruct"] + parts["lift"]
    return total, (attn_only - mha_scan) / mha_scan


def measured_cache_bytes(cache: DecodeCache, bytes_per_element: int) -> int:
    """Bytes the cache's payload would occupy at the given element width.

    Counts elements at full capacity (dense preallocation), so it equals
    ``cache_bytes`` for the single-layer, batch-1 query with T = capacity —
    for the latent mechanism, the single-stream query, since a DecodeCache
    holds one shared latent stream.
    """
    if bytes_per_element not in VALID_BYTES_PER_ELEMENT:
        raise ConfigurationError(
            f"bytes_per_element must be one of {VALID_BYTES_PER_ELEMENT}, "
            f"got {bytes_per_element}"
        )
    elements = 0
    for buf in (cache.k, cache.v, cache.k_shared, cache.v_shared,
                cache.z, cache.rk, cache.rv):
        if buf is not None:
            elements += buf.size
    return elements * bytes_per_element


def ablation_table(
    base: AttentionConfig, ranks: list[int], T: int
) -> list[dict]:
    """Sweep the residual rank of a low-rank config; one row per rank.

    Rows carry the closed-form cache ratio (and its percent form), cache
    bytes at (T, batch 1, 2-byte elements), K/V parameter count, and the
    long-prefix scan overhead. Rank 0 is the fully shared end of the
    family; ranks above d_h buy nothing but are costed faithfully.
    """
    if base.mechanism is not Mechanism.LRKV:
        raise UnsupportedMechanismError(
            f"ablation_table sweeps lrkv ranks, got {base.mechanism.value}"
        )
    rows: list[dict] = []
    for r in ranks:
        cfg = replace(base, r=r)
        q = CostQuery(config=cfg, T=T, batch=1, bytes_per_element=2)
        ratio = cache_ratio(cfg)
        flops, overhead = decode_flops(q)
        rows.append({
            "r": r,
            "cache_ratio": ratio,
            "cache_pct": 100.0 * ratio,
            "cache_bytes": cache_bytes(q),
            "kv_param_count": kv_param_count(cfg),
            "decode_flops": flops,
            "flops_overhead_vs_mha": overhead,
        })
    return rows


def cost_report(q: CostQuery, mla_path: str = "reconstruct") -> CostReport:
    """Assemble the full report for one query (byte ratio vs baseline)."""
    bytes_self = cache_bytes(q)
    mha_q = replace(q, config=replace(q.config, mechanism=Mechanism.MHA))
    bytes_mha = cache_bytes(mha_q)
    flops, overhead = decode_flops(q, mla_path=mla_path)
    return CostReport(
        cache_bytes=bytes_self,
        cache_ratio_vs_mha=bytes_self / bytes_mha if bytes_mha else 0.0,
        decode_flops_per_step=flops,
        flops_overhead_vs_mha=overhead,
        kv_param_count=kv_param_count(q.config),
    )
