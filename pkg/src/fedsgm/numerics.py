"""Vector helpers and compact convex domains with closed-form projection.

Model vectors are plain 1-D ``float64`` numpy arrays. Every sum over clients
goes through :func:`ordered_mean` so results do not depend on how work was
scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when vectors of different dimension are combined."""


class DomainError(ValueError):
    pass


def as_vector(x, d: int | None = None) -> np.ndarray:
    v = np.array(x, dtype=np.float64).reshape(-1)
    if d is not None and v.shape[0] != d:
        raise DimensionError(f"expected dimension {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("vector has non-finite entries")
    return v


def check_dims(*vectors: np.ndarray) -> int:
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


def ordered_sum(vectors: Iterable[np.ndarray]) -> np.ndarray:
    """Left-to-right sum; the caller fixes the order."""
    it = iter(vectors)
    total = np.array(next(it), dtype=np.float64, copy=True)
    for v in it:
        total += v
    return total


def ordered_mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError("mean of an empty collection")
    return ordered_sum(vectors) / len(vectors)


def ordered_scalar_mean(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("mean of an empty collection")
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


@dataclass(frozen=True)
class Domain:
    """The feasible set X: ``unbounded``, an axis-aligned ``box`` or a Euclidean ``ball``."""

    kind: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind == "box":
            if self.lower is None or self.upper is None:
                raise DomainError("box needs lower and upper")
            check_dims(self.lower, self.upper)
            if np.any(self.lower > self.upper):
                raise DomainError("box requires lower <= upper elementwise")
        elif self.kind == "ball":
            if self.center is None or self.radius is None:
                raise DomainError("ball needs center and radius")
            if not (math.isfinite(self.radius) and self.radius > 0):
                raise DomainError(f"ball radius must be finite and positive, got {self.radius}")
        elif self.kind != "unbounded":
            raise DomainError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def box(cls, lower, upper) -> "Domain":
        return cls("box", lower=as_vector(lower), upper=as_vector(upper))

    @classmethod
    def cube(cls, d: int, half_width: float) -> "Domain":
        return cls.box(np.full(d, -half_width), np.full(d, half_width))

    @classmethod
    def ball(cls, center, radius: float) -> "Domain":
        return cls("ball", center=as_vector(center), radius=float(radius))

    @classmethod
    def unbounded(cls) -> "Domain":
        return cls("unbounded")

    @property
    def dim(self) -> int | None:
        if self.kind == "box":
            return self.lower.shape[0]
        if self.kind == "ball":
            return self.center.shape[0]
        return None

    @property
    def compact(self) -> bool:
        return self.kind != "unbounded"

    def contains(self, x: np.ndarray) -> bool:
        if self.kind == "box":
            return bool(np.all(x >= self.lower) and np.all(x <= self.upper))
        if self.kind == "ball":
            return float(np.linalg.norm(x - self.center)) <= self.radius
        return True

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return self.lower, self.upper
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        raise DomainError("unbounded domain has no bounding box")

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if self.kind == "ball":
            return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}
        return {"kind": "unbounded"}


def project(x: np.ndarray, dom: Domain) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``dom``.

    Points already inside are returned unchanged (bit for bit), which also
    makes the map exactly idempotent.
    """
    if dom.dim is not None and x.shape[0] != dom.dim:
        raise DimensionError(f"point has dimension {x.shape[0]}, domain {dom.dim}")
    if dom.kind == "unbounded":
        return x.copy()
    if dom.kind == "box":
        return np.minimum(np.maximum(x, dom.lower), dom.upper)
    offset = x - dom.center
    dist = float(np.linalg.norm(offset))
    if dist <= dom.radius:
        return x.copy()
    scale = dom.radius / dist
    y = dom.center + offset * scale
    # rounding can leave y a few ulps outside; shrink until it is inside
    while float(np.linalg.norm(y - dom.center)) > dom.radius:
        scale = np.nextafter(scale, 0.0)
        y = dom.center + offset * scale
    return y


def diameter(dom: Domain) -> float:
    if dom.kind == "box":
        return float(np.linalg.norm(dom.upper - dom.lower))
    if dom.kind == "ball":
        return 2.0 * dom.radius
    raise DomainError("unbounded domain has no finite diameter")


def max_norm(dom: Domain) -> float:
    """sup of ||w|| over the domain (used to certify Lipschitz constants)."""
    if dom.kind == "box":
        return float(np.linalg.norm(np.maximum(np.abs(dom.lower), np.abs(dom.upper))))
    if dom.kind == "ball":
        return float(np.linalg.norm(dom.center)) + dom.radius
    raise DomainError("unbounded domain has no finite norm bound")


def sample_points(dom: Domain, count: int, rng: np.random.Generator, d: int | None = None) -> np.ndarray:
    """Uniform random points in a compact domain, or standard normals when unbounded."""
    if dom.kind == "box":
        return rng.uniform(dom.lower, dom.upper, size=(count, dom.dim))
    if dom.kind == "ball":
        dim = dom.dim
        z = rng.standard_normal((count, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = dom.radius * rng.random(count) ** (1.0 / dim)
        pts = dom.center + z * r[:, None]
        return np.array([project(p, dom) for p in pts])
    if d is None:
        raise DomainError("dimension required to sample from an unbounded domain")
    return rng.standard_normal((count, d))


VALUE_BYTES_PER_ENTRY = 8
