"""Inside/outside classification, CSG trees, delta bands and cut detection.

Every predicate exposes ``contains(points) -> bool array`` over ``(m, d)``
coordinates. Analytic leaves are closed sets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cloud import OrientedPointCloud, SpatialIndex, pca_planes


def _as_points(q) -> np.ndarray:
    return np.atleast_2d(np.asarray(q, dtype=float))


def half_space_votes(index: SpatialIndex, queries, n_votes: int) -> np.ndarray:
    """Count, per query, how many of its ``n_votes`` nearest samples vote inside."""
    Q = _as_points(queries)
    idx, _ = index.query_indices(Q, n_votes)
    p = index.cloud.positions[idx]
    n = index.cloud.normals[idx]
    d = np.einsum("mkd,mkd->mk", p - Q[:, None, :], n)
    return np.count_nonzero(d >= 0.0, axis=1)


def is_inside_single(index: SpatialIndex, q) -> bool:
    """Closest-sample half-space test."""
    return bool(half_space_votes(index, q, 1)[0] == 1)


def is_inside_voting(index: SpatialIndex, q, n_votes: int) -> bool:
    """Majority vote over the ``n_votes`` nearest samples; a tie counts as inside."""
    if n_votes < 1:
        raise ValueError("n_votes must be >= 1")
    k = min(n_votes, len(index))
    votes = half_space_votes(index, q, n_votes)[0]
    return bool(2 * votes >= k)


class Predicate:
    dimension: Optional[int] = None

    def contains(self, points) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, q) -> bool:
        return bool(self.contains(_as_points(q))[0])

    def __or__(self, other):
        return CsgNode("union", self, other)

    def __and__(self, other):
        return CsgNode("intersection", self, other)

    def __sub__(self, other):
        return CsgNode("difference", self, other)

    def __invert__(self):
        return Complement(self)


class CloudLeaf(Predicate):
    """Membership from an oriented point cloud."""

    def __init__(self, source, n_votes: int = 1):
        if n_votes < 1:
            raise ValueError("n_votes must be >= 1")
        self.index = source if isinstance(source, SpatialIndex) else SpatialIndex(source)
        self.n_votes = int(n_votes)
        self.dimension = self.index.dimension

    @property
    def cloud(self) -> OrientedPointCloud:
        return self.index.cloud

    def contains(self, points):
        k = min(self.n_votes, len(self.index))
        votes = half_space_votes(self.index, points, k)
        return 2 * votes >= k


@dataclass
class Ball(Predicate):
    """Closed disk (2D) or ball (3D)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.dimension = self.center.size

    def contains(self, points):
        P = _as_points(points)
        return np.sum((P - self.center) ** 2, axis=1) <= self.radius**2


Circle = Ball


@dataclass
class Ellipse(Predicate):
    a: float
    b: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.dimension = 2

    def contains(self, points):
        P = _as_points(points) - self.center
        return (P[:, 0] / self.a) ** 2 + (P[:, 1] / self.b) ** 2 <= 1.0


@dataclass
class Box(Predicate):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise ValueError("invalid box bounds")
        self.dimension = self.lo.size

    @classmethod
    def around(cls, cloud: OrientedPointCloud, pad: float = 0.0) -> "Box":
        """Bounding box of a cloud's positions."""
        lo, hi = cloud.bounds
        return cls(lo - pad, hi + pad)

    def contains(self, points):
        P = _as_points(points)
        return np.all((P >= self.lo) & (P <= self.hi), axis=1)


@dataclass
class HalfSpace(Predicate):
    """``{x : (x - point) . normal <= 0}``; ``normal`` points out of the set."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        self.normal = np.asarray(self.normal, dtype=float)
        self.dimension = self.point.size

    def contains(self, points):
        P = _as_points(points)
        return (P - self.point) @ self.normal <= 0.0


class Complement(Predicate):
    def __init__(self, child: Predicate):
        self.child = child
        self.dimension = child.dimension

    def contains(self, points):
        return ~self.child.contains(points)


_OPS = {
    "union": np.logical_or,
    "intersection": np.logical_and,
    "difference": lambda a, b: a & ~b,
}


class CsgNode(Predicate):
    def __init__(self, op: str, left: Predicate, right: Predicate):
        if op not in _OPS:
            raise ValueError(f"unknown CSG operator {op!r}")
        if left.dimension and right.dimension and left.dimension != right.dimension:
            raise ValueError("CSG children differ in dimension")
        self.op = op
        self.left = left
        self.right = right
        self.dimension = left.dimension or right.dimension

    def contains(self, points):
        P = _as_points(points)
        return _OPS[self.op](self.left.contains(P), self.right.contains(P))


def classify(predicate: Predicate, q) -> bool:
    return predicate(q)


def regularized_delta(x, epsilon: float):
    """Cosine-bump regularization of the 1D Dirac delta with half-width ``epsilon``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=float)
    val = np.where(
        np.abs(x) <= epsilon,
        (1.0 + np.cos(np.pi * x / epsilon)) / (2.0 * epsilon),
        0.0,
    )
    return val if val.ndim else float(val)


class DeltaBand:
    """Regularized surface delta around a boundary point subset.

    The distance of a query is measured to the PCA plane of the ``n_neigh``
    nearest samples around the query's closest sample. Planes are computed
    once per sample at construction.
    """

    def __init__(self, boundary, epsilon: float, n_neigh: int = 6):
        index = boundary if isinstance(boundary, SpatialIndex) else SpatialIndex(boundary)
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        d = index.dimension
        if n_neigh < d:
            raise ValueError(f"n_neigh must be >= {d}")
        self.index = index
        self.epsilon = float(epsilon)
        self.n_neigh = int(n_neigh)
        cloud = index.cloud
        nb, _ = index.query_indices(cloud.positions, self.n_neigh)
        self.centroids, self.plane_normals = pca_planes(cloud.positions[nb], cloud.normals[nb])
        self.spacing = index.sample_spacing()

    @property
    def cloud(self) -> OrientedPointCloud:
        return self.index.cloud

    @property
    def dimension(self) -> int:
        return self.index.dimension

    def nearest_sample(self, points) -> np.ndarray:
        return self.index.nearest_index(_as_points(points))

    def distance(self, points, nearest=None) -> np.ndarray:
        P = _as_points(points)
        if nearest is None:
            nearest = self.nearest_sample(P)
        return np.abs(np.einsum("md,md->m", P - self.centroids[nearest], self.plane_normals[nearest]))

    def delta(self, points, nearest=None) -> np.ndarray:
        return regularized_delta(self.distance(points, nearest), self.epsilon)

    def reach(self) -> float:
        """Radius around the samples outside of which the field vanishes."""
        return self.epsilon + 2.0 * self.spacing


def distance_to_point_set(band: DeltaBand, q) -> float:
    return float(band.distance(q)[0])


def delta_field(band: DeltaBand, q) -> float:
    return float(band.delta(q)[0])


class CutState(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    CUT = "cut"


def seed_grid(lo, hi, m: int) -> np.ndarray:
    """``m`` points per axis, corners included; returns ``(m**d, d)``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.linspace(lo[i], hi[i], m) for i in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def cut_states(predicate: Predicate, lo, hi, m: int) -> np.ndarray:
    """Vectorized cut detection for ``b`` boxes given by ``(b, d)`` corners.

    Returns an int array: 1 inside, 0 outside, -1 cut.
    """
    if m < 2:
        raise ValueError("seeds per axis must be >= 2")
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    ref = seed_grid(np.zeros(lo.shape[1]), np.ones(lo.shape[1]), m)
    pts = lo[:, None, :] + ref[None, :, :] * (hi - lo)[:, None, :]
    inside = predicate.contains(pts.reshape(-1, lo.shape[1])).reshape(len(lo), -1)
    n_in = inside.sum(axis=1)
    out = np.full(len(lo), -1, dtype=np.int8)
    out[n_in == inside.shape[1]] = 1
    out[n_in == 0] = 0
    return out


_STATE = {1: CutState.INSIDE, 0: CutState.OUTSIDE, -1: CutState.CUT}


def cut_state(predicate: Predicate, lo, hi, m: int) -> CutState:
    return _STATE[int(cut_states(predicate, lo, hi, m)[0])]
