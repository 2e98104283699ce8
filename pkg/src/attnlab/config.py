"""Attention mechanism configuration: the single source of shape truth.

Five mechanisms share one config record. A field is only meaningful for the
mechanisms that use it (r for LRKV, d_c for MLA, G for GQA); operations must
never read a field that is irrelevant to the configured mechanism, and
validation follows the same rule — an MHA config with a nonsensical ``r`` is
legal because nothing will ever look at it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigurationError


class Mechanism(str, Enum):
    MHA = "mha"
    MQA = "mqa"
    GQA = "gqa"
    MLA = "mla"
    LRKV = "lrkv"

    @classmethod
    def parse(cls, name: str) -> "Mechanism":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown mechanism {name!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class AttentionConfig:
    """Dimensions and flags for one attention layer.

    d:     model width
    H:     head count
    d_h:   head dimension (d = H * d_h)
    n_layers: layer count N — read only by the cost model
    r:     LRKV residual rank (0 = complete KV sharing)
    d_c:   MLA latent dimension
    G:     GQA KV-head (group) count
    qk_norm: RMSNorm on Q and K rows after projection
    softmax_scale: logit scale, defaults to 1/sqrt(d_h)
    """

    mechanism: Mechanism
    d: int
    H: int
    d_h: int
    n_layers: int = 1
    r: int = 0
    d_c: int = 1
    G: int = 1
    qk_norm: bool = False
    softmax_scale: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.mechanism, Mechanism):
            object.__setattr__(self, "mechanism", Mechanism.parse(str(self.mechanism)))
        for name in ("d", "H", "d_h", "n_layers"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"{name} must be a positive int, got {v!r}")
        if self.d != self.H * self.d_h:
            raise ConfigurationError(
                f"d must equal H * d_h: d={self.d}, H={self.H}, d_h={self.d_h}"
            )
        m = self.mechanism
        if m is Mechanism.GQA:
            if not isinstance(self.G, int) or self.G < 1:
                raise ConfigurationError(f"G must be a positive int, got {self.G!r}")
            if self.H % self.G != 0:
                raise ConfigurationError(
                    f"GQA requires H mod G = 0: H={self.H}, G={self.G}"
                )
        if m is Mechanism.LRKV:
            if not isinstance(self.r, int) or self.r < 0:
                raise ConfigurationError(f"r must be a non-negative int, got {self.r!r}")
            if self.r > self.d:
                raise ConfigurationError(
                    f"LRKV requires r <= d: r={self.r}, d={self.d}"
                )
        if m is Mechanism.MLA:
            if not isinstance(self.d_c, int) or not (1 <= self.d_c <= self.d):
                raise ConfigurationError(
                    f"MLA requires 1 <= d_c <= d: d_c={self.d_c!r}, d={self.d}"
                )
        if self.softmax_scale is None:
            object.__setattr__(self, "softmax_scale", 1.0 / math.sqrt(self.d_h))
        else:
            s = float(self.softmax_scale)
            if not math.isfinite(s) or s <= 0.0:
                raise ConfigurationError(
                    f"softmax_scale must be finite and positive, got {self.softmax_scale!r}"
                )
            object.__setattr__(self, "softmax_scale", s)

    def to_json_dict(self) -> dict:
        return {
            "mechanism": self.mechanism.value,
            "d": self.d,
            "H": self.H,
            "d_h": self.d_h,
            "n_layers": self.n_layers,
            "r": self.r,
            "d_c": self.d_c,
            "G": self.G,
            "qk_norm": self.qk_norm,
            "softmax_scale": self.softmax_scale,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "AttentionConfig":
        if "mechanism" not in obj:
            raise ConfigurationError("config JSON is missing the 'mechanism' field")
        known = {
            "mechanism", "d", "H", "d_h", "n_layers", "r", "d_c", "G",
            "qk_norm", "softmax_scale",
        }
        extra = set(obj) - known
        if extra:
            raise ConfigurationError(f"unknown config fields: {sorted(extra)}")
        kwargs = dict(obj)
        kwargs["mechanism"] = Mechanism.parse(str(obj["mechanism"]))
        return cls(**kwargs)


RNG_ALGORITHM = "pcg64"


@dataclass(frozen=True)
class RngSpec:
    """Seed plus generator tag; (seed, config) fully determines a WeightSet."""

    seed: int
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int) or not (0 <= self.seed < 2**64):
            raise ConfigurationError(
                f"seed must be an unsigned 64-bit int, got {self.seed!r}"
            )
        if self.algorithm != RNG_ALGORITHM:
            raise ConfigurationError(
                f"unsupported rng algorithm {self.algorithm!r}; "
                f"this build only provides {RNG_ALGORITHM!r}"
            )
