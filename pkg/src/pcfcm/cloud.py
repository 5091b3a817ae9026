"""Oriented point clouds: storage, text ingestion, k-d tree queries, PCA planes
and synthetic generators.

Normals follow one convention throughout the package: they point from the
material into the fictitious domain (outward from the solid).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, TextIO, Union

import numpy as np
from scipy.spatial import cKDTree

HOLE = "hole"
SOLID = "solid"


class CloudFormatError(ValueError):
    """Raised when a cloud file cannot be parsed."""


class SingularNeighborhoodError(ValueError):
    """Raised when a PCA neighborhood collapses to a single location."""


class OrientedPoint(NamedTuple):
    position: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class OrientedPointCloud:
    """Immutable set of surface samples with unit normals.

    Attributes:
        positions: ``(n, d)`` sample coordinates.
        normals: ``(n, d)`` unit normals, material -> fictitious.
    """

    positions: np.ndarray
    normals: np.ndarray
    bounds: tuple = field(init=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True)
        nrm = np.array(self.normals, dtype=float, copy=True)
        if pos.ndim != 2 or pos.shape[0] == 0:
            raise CloudFormatError("empty cloud")
        if pos.shape != nrm.shape:
            raise CloudFormatError("positions and normals differ in shape")
        if pos.shape[1] not in (2, 3):
            raise CloudFormatError(f"unsupported dimension {pos.shape[1]}")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(nrm)):
            raise CloudFormatError("non-finite coordinates")
        length = np.linalg.norm(nrm, axis=1)
        if np.any(length == 0.0):
            raise CloudFormatError("zero-length normal")
        nrm /= length[:, None]
        pos.setflags(write=False)
        nrm.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "bounds", (pos.min(axis=0), pos.max(axis=0)))

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i) -> OrientedPoint:
        return OrientedPoint(self.positions[i], self.normals[i])

    @property
    def points(self) -> list:
        return [self[i] for i in range(len(self))]

    def subset(self, mask) -> "OrientedPointCloud":
        return OrientedPointCloud(self.positions[mask], self.normals[mask])

    def merged(self, other: "OrientedPointCloud") -> "OrientedPointCloud":
        return OrientedPointCloud(
            np.vstack([self.positions, other.positions]),
            np.vstack([self.normals, other.normals]),
        )


def load_cloud(source: Union[str, os.PathLike, TextIO], dimension: int) -> OrientedPointCloud:
    """Parse a whitespace text cloud, one ``position normal`` record per line.

    ``source`` may be a path or an open text stream. Lines starting with ``#``
    and blank lines are skipped; LF and CRLF endings are both accepted.
    """
    if dimension not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", newline=None) as fh:
            return load_cloud(fh, dimension)

    rows = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 2 * dimension:
            raise CloudFormatError(
                f"line {lineno}: expected {2 * dimension} values, got {len(tokens)}"
            )
        try:
            values = [float(t) for t in tokens]
        except ValueError as exc:
            raise CloudFormatError(f"line {lineno}: {exc}") from None
        if not all(np.isfinite(values)):
            raise CloudFormatError(f"line {lineno}: non-finite value")
        if not any(values[dimension:]):
            raise CloudFormatError(f"line {lineno}: zero-length normal")
        rows.append(values)
    if not rows:
        raise CloudFormatError("empty cloud")
    data = np.asarray(rows)
    return OrientedPointCloud(data[:, :dimension], data[:, dimension:])


def loads_cloud(text: str, dimension: int) -> OrientedPointCloud:
    return load_cloud(io.StringIO(text), dimension)


def save_cloud(cloud: OrientedPointCloud, path) -> None:
    data = np.hstack([cloud.positions, cloud.normals])
    np.savetxt(path, data, fmt="%.17g", header="x y [z] nx ny [nz]")


class SpatialIndex:
    """Static k-d tree over cloud positions.

    Results are ordered by squared distance, ties by ascending point index, so
    they coincide with a brute-force scan.
    """

    def __init__(self, cloud: OrientedPointCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.positions)

    def __len__(self) -> int:
        return len(self.cloud)

    @property
    def dimension(self) -> int:
        return self.cloud.dimension

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.dimension:
            raise ValueError(
                f"query dimension {q.shape[-1]} does not match cloud dimension {self.dimension}"
            )
        return q

    def query_indices(self, queries, k: int):
        """Batched nearest-neighbor search.

        Args:
            queries: ``(m, d)`` query coordinates.
            k: neighbors per query.

        Returns:
            ``(indices, sqdist)``, both ``(m, min(k, n))``.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        Q = np.atleast_2d(self._check(queries))
        n = len(self)
        k = min(k, n)
        kk = min(n, k + 2)
        dist, idx = self._tree.query(Q, k=kk)
        dist = dist.reshape(len(Q), kk)
        idx = idx.reshape(len(Q), kk)
        if kk < n:
            # candidates past the k-th may tie with it; widen those rows
            unsafe = dist[:, kk - 1] <= dist[:, k - 1] * (1.0 + 1e-9) + 1e-300
        else:
            unsafe = np.zeros(len(Q), dtype=bool)
        pos = self.cloud.positions
        d2 = np.sum((pos[idx] - Q[:, None, :]) ** 2, axis=-1)
        order = np.lexsort((idx, d2), axis=-1)[:, :k]
        out_idx = np.take_along_axis(idx, order, axis=1)
        out_d2 = np.take_along_axis(d2, order, axis=1)
        for row in np.flatnonzero(unsafe):
            out_idx[row], out_d2[row] = self._exact_row(Q[row], k)
        return out_idx, out_d2

    def _exact_row(self, q, k):
        n = len(self)
        kk = min(n, 2 * k + 2)
        while True:
            dist, idx = self._tree.query(q, k=kk)
            dist = np.atleast_1d(dist)
            idx = np.atleast_1d(idx)
            if kk == n or dist[-1] > dist[k - 1] * (1.0 + 1e-9) + 1e-300:
                break
            kk = min(n, 2 * kk)
        d2 = np.sum((self.cloud.positions[idx] - q) ** 2, axis=-1)
        order = np.lexsort((idx, d2))[:k]
        return idx[order], d2[order]

    def nearest(self, q, k: int = 1) -> list:
        """Return ``[(OrientedPoint, squared distance), ...]`` for one query."""
        q = self._check(q)
        if q.ndim != 1:
            raise ValueError("nearest expects a single coordinate vector")
        idx, d2 = self.query_indices(q[None, :], k)
        return [(self.cloud[i], float(s)) for i, s in zip(idx[0], d2[0])]

    def nearest_index(self, queries) -> np.ndarray:
        return self.query_indices(queries, 1)[0][:, 0]

    def sample_spacing(self) -> float:
        """Median distance from each sample to its closest other sample."""
        if len(self) < 2:
            return 0.0
        dist, _ = self._tree.query(self.cloud.positions, k=2)
        return float(np.median(dist[:, 1]))


def brute_force_nearest(positions, q, k):
    """Linear-scan reference used by the tests."""
    d2 = np.sum((np.asarray(positions) - np.asarray(q)) ** 2, axis=1)
    order = np.lexsort((np.arange(len(d2)), d2))[:k]
    return order, d2[order]


def _orient(normals, reference):
    """Flip plane normals so that they agree with ``reference`` where possible."""
    normals = np.array(normals, copy=True)
    if reference is not None:
        dots = np.einsum("...i,...i->...", normals, reference)
        flip = dots < 0
        normals[flip] *= -1.0
        undecided = dots == 0
    else:
        undecided = np.ones(normals.shape[:-1], dtype=bool)
    if np.any(undecided):
        # lexicographic positivity: first nonzero component positive
        sub = normals[undecided]
        nz = np.abs(sub) > 1e-14
        first = np.argmax(nz, axis=-1)
        lead = np.take_along_axis(sub, first[..., None], axis=-1)[..., 0]
        sub[lead < 0] *= -1.0
        normals[undecided] = sub
    return normals


def pca_plane(points, normals: Optional[np.ndarray] = None):
    """Best-fit hyperplane through a point set.

    Args:
        points: ``(m, d)`` coordinates, ``m >= d``.
        normals: optional stored normals of the same points, used only to pick
            the sign of the plane normal.

    Returns:
        ``(centroid, unit plane normal)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < pts.shape[1]:
        raise ValueError("pca_plane needs at least d points")
    centroid, normal = pca_planes(pts[None], None if normals is None else np.asarray(normals)[None])
    return centroid[0], normal[0]


def pca_planes(neighborhoods, normals=None):
    """Vectorized :func:`pca_plane` over ``(b, m, d)`` neighborhoods."""
    nb = np.asarray(neighborhoods, dtype=float)
    centroid = nb.mean(axis=1)
    centered = nb - centroid[:, None, :]
    cov = np.einsum("bmi,bmj->bij", centered, centered) / nb.shape[1]
    scale = np.einsum("bii->b", cov)
    extent = np.max(np.abs(nb), axis=(1, 2))
    degenerate = scale <= (1e-28 * np.maximum(extent, 1.0) ** 2)
    if np.any(degenerate):
        raise SingularNeighborhoodError(
            f"{int(degenerate.sum())} neighborhood(s) collapse to a single point"
        )
    _, vecs = np.linalg.eigh(cov)
    plane_n = vecs[:, :, 0]
    ref = None if normals is None else np.asarray(normals, dtype=float).mean(axis=1)
    return centroid, _orient(plane_n, ref)


def _check_orientation(orientation):
    if orientation not in (HOLE, SOLID):
        raise ValueError(f"orientation must be '{HOLE}' or '{SOLID}'")


def generate_circle_cloud(center, radius: float, n: int, orientation: str = HOLE) -> OrientedPointCloud:
    """Uniformly sample a circle starting at angle 0.

    In ``hole`` mode the material lies outside the circle and normals point
    toward the center; in ``solid`` mode they point radially outward.
    """
    if n < 3 or radius <= 0:
        raise ValueError("need n >= 3 and radius > 0")
    _check_orientation(orientation)
    theta = 2.0 * np.pi * np.arange(n) / n
    radial = np.column_stack([np.cos(theta), np.sin(theta)])
    pos = np.asarray(center, dtype=float) + radius * radial
    sign = -1.0 if orientation == HOLE else 1.0
    return OrientedPointCloud(pos, sign * radial)


def generate_ellipse_cloud(a: float, b: float, n: int, orientation: str = HOLE, center=(0.0, 0.0)):
    """Sample ``(a cos t, b sin t)`` at ``t = 2 pi j / n`` with analytic normals."""
    if n < 3 or a <= 0 or b <= 0:
        raise ValueError("need n >= 3 and positive semi-axes")
    _check_orientation(orientation)
    theta = 2.0 * np.pi * np.arange(n) / n
    c, s = np.cos(theta), np.sin(theta)
    pos = np.asarray(center, dtype=float) + np.column_stack([a * c, b * s])
    nrm = np.column_stack([c / a, s / b])
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    sign = -1.0 if orientation == HOLE else 1.0
    return OrientedPointCloud(pos, sign * nrm)


def generate_sphere_cloud(center, radius: float, n: int, orientation: str = SOLID) -> OrientedPointCloud:
    """Fibonacci-lattice sampling of a sphere."""
    if n < 4 or radius <= 0:
        raise ValueError("need n >= 4 and radius > 0")
    _check_orientation(orientation)
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    radial = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    pos = np.asarray(center, dtype=float) + radius * radial
    sign = -1.0 if orientation == HOLE else 1.0
    return OrientedPointCloud(pos, sign * radial)


def generate_segment_cloud(start, end, n: int, normal) -> OrientedPointCloud:
    """``n`` samples on a straight segment (endpoints included), constant normal."""
    if n < 2:
        raise ValueError("need n >= 2")
    t = np.linspace(0.0, 1.0, n)[:, None]
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    pos = start + t * (end - start)
    return OrientedPointCloud(pos, np.tile(np.asarray(normal, dtype=float), (n, 1)))


def chord_spacing(radius: float, n: int) -> float:
    return 2.0 * radius * np.sin(np.pi / n)

