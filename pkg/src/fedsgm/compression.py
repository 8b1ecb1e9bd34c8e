"""Contractive compressors and the error-feedback steps built on them.

A compressor ``C`` is contractive with accuracy ``q`` when
``E||C(v) - v||^2 <= (1 - q) ||v||^2``. Top-k and the uniform quantizer are
deterministic; rand-k draws its support from the generator passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, check_dims
from . import rng as rngmod

KINDS = ("identity", "top_k", "rand_k", "uniform_quant")

VALUE_BYTES = 8
INDEX_BYTES = 4


class CompressionError(ValueError):
    pass


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    dim: int
    k: int | None = None
    bits: int | None = None
    q: float | None = None
    certified: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CompressionError(f"unknown compressor kind {self.kind!r}")
        if self.dim < 1:
            raise CompressionError("dimension must be >= 1")
        if self.kind in ("top_k", "rand_k"):
            if self.k is None or not 1 <= self.k <= self.dim:
                raise CompressionError(f"{self.kind} needs 1 <= k <= d (k={self.k}, d={self.dim})")
        if self.kind == "uniform_quant" and (self.bits is None or self.bits < 2):
            raise CompressionError("uniform_quant needs bits >= 2")
        if self.q is not None and not 0.0 < self.q <= 1.0:
            raise CompressionError(f"contraction q must lie in (0, 1], got {self.q}")

    @classmethod
    def identity(cls, dim: int) -> "CompressorSpec":
        return cls("identity", dim)

    @classmethod
    def top_k(cls, dim: int, k: int) -> "CompressorSpec":
        return cls("top_k", dim, k=k)

    @classmethod
    def rand_k(cls, dim: int, k: int) -> "CompressorSpec":
        return cls("rand_k", dim, k=k)

    @classmethod
    def uniform_quant(cls, dim: int, bits: int, q: float | None = None) -> "CompressorSpec":
        if q is not None:
            return cls("uniform_quant", dim, bits=bits, q=q)
        q_cert, certified = calibrate_quant_q(dim, bits)
        return cls("uniform_quant", dim, bits=bits, q=q_cert, certified=certified)

    @property
    def contraction_q(self) -> float:
        if self.kind == "identity":
            return 1.0
        if self.kind in ("top_k", "rand_k"):
            return self.k / self.dim
        return self.q

    @property
    def deterministic(self) -> bool:
        return self.kind != "rand_k"

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.k is not None:
            out["k"] = self.k
        if self.bits is not None:
            out["bits"] = self.bits
            out["q"] = self.q
        return out


def _quantize(v: np.ndarray, bits: int) -> np.ndarray:
    top = float(np.max(np.abs(v)))
    if top == 0.0:
        return v.copy()
    intervals = 2**bits - 1
    step = 2.0 * top / intervals
    idx = np.clip(np.rint((v + top) / step), 0, intervals)
    out = -top + idx * step
    # keep the extreme levels exact so the max-abs entry is never distorted
    out[idx == intervals] = top
    out[idx == 0] = -top
    return out


def calibrate_quant_q(dim: int, bits: int, samples: int = 2000, seed: int = 0) -> tuple[float, bool]:
    """Accuracy ``q`` for the uniform quantizer on ``dim``-vectors.

    Each coordinate moves by at most half a grid step, ``maxabs / (2^bits - 1)``,
    and the max-abs coordinate does not move, so
    ``1 - q <= (dim - 1) / (2^bits - 1)^2``. When that bound is informative it
    is returned as certified; otherwise the worst ratio seen on a calibration
    set is returned and flagged uncertified.
    """
    intervals = 2**bits - 1
    worst = (dim - 1) / intervals**2
    if worst < 1.0:
        return 1.0 - worst, True
    gen = rngmod.stream(seed, "calibrate", dim, bits)
    ratio = 0.0
    for _ in range(samples):
        v = gen.standard_normal(dim)
        err = _quantize(v, bits) - v
        ratio = max(ratio, float(err @ err) / float(v @ v))
    if ratio >= 1.0:
        raise CompressionError(f"uniform_quant with {bits} bits is not contractive in dimension {dim}")
    return 1.0 - ratio, False


def compress(spec: CompressorSpec, v: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    if v.shape[0] != spec.dim:
        raise DimensionError(f"compressor built for d={spec.dim}, got vector of length {v.shape[0]}")
    if spec.kind == "identity":
        return v.copy()
    if not np.any(v):
        return v.copy()
    if spec.kind == "top_k":
        # stable sort on -|v|: among equal magnitudes the lowest index comes first
        keep = np.argsort(-np.abs(v), kind="stable")[: spec.k]
    elif spec.kind == "rand_k":
        if rng is None:
            raise CompressionError("rand_k needs a random generator")
        keep = rng.permutation(spec.dim)[: spec.k]
    else:
        return _quantize(v, spec.bits)
    out = np.zeros_like(v)
    out[keep] = v[keep]
    return out


def uplink_ef_step(residual: np.ndarray, delta: np.ndarray, spec: CompressorSpec,
                   rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """EF14 client step: send ``C(e + delta)``, keep what was dropped."""
    check_dims(residual, delta)
    corrected = residual + delta
    sent = compress(spec, corrected, rng)
    return sent, corrected - sent


def downlink_ef_step(server_model: np.ndarray, broadcast_base: np.ndarray, spec: CompressorSpec,
                     rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Primal EF21 server step: compress the model difference, advance the broadcast copy."""
    check_dims(server_model, broadcast_base)
    message = compress(spec, server_model - broadcast_base, rng)
    if spec.kind == "identity":
        # w + (x - w) can differ from x by an ulp; an uncompressed downlink delivers x itself
        return message, server_model.copy()
    return message, broadcast_base + message


def message_bytes(spec: CompressorSpec, d: int) -> int:
    if d < 1:
        raise CompressionError("d must be >= 1")
    if spec.kind == "identity":
        return VALUE_BYTES * d
    if spec.kind in ("top_k", "rand_k"):
        return spec.k * (VALUE_BYTES + INDEX_BYTES)
    return math.ceil(d * spec.bits / 8) + VALUE_BYTES
