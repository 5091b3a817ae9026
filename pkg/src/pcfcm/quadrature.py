"""Gauss-Legendre rules and spacetree integration of cut cells.

Trees are built breadth-first over whole levels at once so membership
queries are batched. Leaves are kept in cell-local coordinates ``[-1, 1]^d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .basis import CellGeometry
from .membership import Predicate, cut_states


@dataclass(frozen=True)
class GaussRule1D:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> GaussRule1D:
    if not 1 <= n <= 64:
        raise ValueError("rule size must be in 1..64")
    x, w = np.polynomial.legendre.leggauss(n)
    order = np.argsort(x)
    x, w = x[order], w[order]
    x.setflags(write=False)
    w.setflags(write=False)
    return GaussRule1D(x, w)


@lru_cache(maxsize=None)
def tensor_rule(n: int, d: int = 2):
    """Tensor Gauss points on ``[-1, 1]^d``, first axis fastest."""
    r = gauss_rule(n)
    grids = np.meshgrid(*([r.nodes] * d), indexing="ij")
    wgrids = np.meshgrid(*([r.weights] * d), indexing="ij")
    pts = np.column_stack([g.T.ravel() for g in grids])
    w = np.prod(np.column_stack([g.T.ravel() for g in wgrids]), axis=1)
    return pts, w


@dataclass(frozen=True)
class IntegrationLeaf:
    level: int
    lo: np.ndarray
    hi: np.ndarray
    cut: bool


@dataclass
class SpaceTree:
    """Leaves of one cell's integration tree, stored as arrays."""

    lo: np.ndarray
    level: np.ndarray
    cut: np.ndarray

    @property
    def size(self) -> np.ndarray:
        return 2.0 * 0.5 ** self.level

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.size[:, None]

    def __len__(self) -> int:
        return len(self.level)

    @property
    def leaves(self) -> list:
        hi = self.hi
        return [
            IntegrationLeaf(int(l), self.lo[i], hi[i], bool(c))
            for i, (l, c) in enumerate(zip(self.level, self.cut))
        ]

    def measure(self) -> float:
        """Summed leaf volume in local coordinates (``2^d`` for a full tiling)."""
        d = self.lo.shape[1]
        return float(np.sum(self.size**d))


def _children(lo, size):
    d = lo.shape[1]
    half = 0.5 * size
    offs = np.array(np.meshgrid(*([[0.0, 1.0]] * d), indexing="ij")).reshape(d, -1).T
    child_lo = lo[:, None, :] + offs[None, :, :] * half[:, None, None]
    return child_lo.reshape(-1, d), np.repeat(half, len(offs))


def refine_tree(
    cell: CellGeometry,
    k: int,
    split: Callable[[np.ndarray, np.ndarray, int], np.ndarray],
    keep: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
) -> SpaceTree:
    """Generic breadth-first subdivision in cell-local coordinates.

    Args:
        cell: the parent cell.
        k: maximum depth.
        split: ``split(lo, hi, level)`` on physical box arrays, returning a
            bool array of boxes to subdivide. At depth ``k`` the result is
            only recorded as the leaves' cut flag.
        keep: optional filter on final leaves (physical boxes); dropped leaves
            contribute nothing.
    """
    if k < 0:
        raise ValueError("depth must be >= 0")
    d = len(cell.lo)
    lo = -np.ones((1, d))
    size = np.array([2.0])
    out_lo, out_lvl, out_cut = [], [], []
    scale = cell.size / 2.0
    for level in range(k + 1):
        plo = cell.lo + (lo + 1.0) * scale
        phi = plo + size[:, None] * scale
        flag = np.asarray(split(plo, phi, level), dtype=bool)
        stop = ~flag if level < k else np.ones(len(lo), dtype=bool)
        if np.any(stop):
            mask = np.ones(int(stop.sum()), dtype=bool)
            if keep is not None:
                mask = keep(plo[stop], phi[stop])
            out_lo.append(lo[stop][mask])
            out_lvl.append(np.full(int(mask.sum()), level, dtype=np.int64))
            out_cut.append(flag[stop][mask])
        if level == k or not np.any(flag):
            break
        lo, size = _children(lo[flag], size[flag])
    if not out_lo:
        return SpaceTree(np.empty((0, d)), np.empty(0, dtype=np.int64), np.empty(0, dtype=bool))
    return SpaceTree(np.vstack(out_lo), np.concatenate(out_lvl), np.concatenate(out_cut))


def build_space_tree(
    predicate: Predicate,
    cell: CellGeometry,
    k: int,
    seeds: int = 3,
    top_seeds: Optional[int] = None,
) -> SpaceTree:
    """Subdivide boxes whose seed grid shows mixed membership, up to depth ``k``.

    ``top_seeds`` (default ``seeds``) is used for the level-0 cell only.
    """
    top = seeds if top_seeds is None else top_seeds

    def split(plo, phi, level):
        return cut_states(predicate, plo, phi, top if level == 0 else seeds) == -1

    return refine_tree(cell, k, split)


def leaf_points(tree: SpaceTree, n: int, cell: CellGeometry):
    """Composed Gauss points of all leaves.

    Returns:
        ``(local, physical, weights)`` where ``weights`` include the leaf
        scaling and the cell Jacobian, so they sum to the leaf area.
    """
    d = len(cell.lo)
    ref, w = tensor_rule(n, d)
    half = 0.5 * tree.size
    centers = tree.lo + half[:, None]
    local = (centers[:, None, :] + ref[None, :, :] * half[:, None, None]).reshape(-1, d)
    weights = (w[None, :] * (half**d)[:, None]).reshape(-1) * cell.det_j
    return local, cell.to_physical(local), weights


def cell_points(cell: CellGeometry, n: int):
    """Plain tensor Gauss rule over a whole cell."""
    d = len(cell.lo)
    ref, w = tensor_rule(n, d)
    return ref.copy(), cell.to_physical(ref), w * cell.det_j
