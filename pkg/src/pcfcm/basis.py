"""Hierarchic integrated-Legendre shape functions on a regular 2D cell grid.

Local 1D modes are ordered ``[N1, N2, N3, ..., N_{p+1}]`` with the two
vertex modes first. 2D local function ``(i, j)`` is ``N_i(xi) * N_j(eta)``
stored at flat position ``i + (p + 1) * j``.

Because every cell is an axis-aligned box whose local axes run with the
global axes, the global C0 space is the tensor product of two global 1D
spaces. Shared vertex and edge modes then fall out of the 1D numbering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

FACES = ("xmin", "xmax", "ymin", "ymax")


def legendre_table(n: int, x):
    """``P_0 .. P_n`` at ``x``; shape ``x.shape + (n + 1,)``."""
    x = np.asarray(x, dtype=float)
    P = np.empty(x.shape + (n + 1,))
    P[..., 0] = 1.0
    if n >= 1:
        P[..., 1] = x
    for k in range(2, n + 1):
        P[..., k] = ((2 * k - 1) * x * P[..., k - 1] - (k - 1) * P[..., k - 2]) / k
    return P


def eval_shape_1d(p: int, xi):
    """Values and derivatives of the ``p + 1`` 1D modes.

    Mode ``i >= 3`` is ``sqrt((2i - 3) / 2) * int_{-1}^{xi} P_{i-2}``, written
    in closed form as ``(P_{i-1} - P_{i-3}) / sqrt(2 (2i - 3))``.
    """
    if p < 1:
        raise ValueError("order must be >= 1")
    xi = np.asarray(xi, dtype=float)
    P = legendre_table(p, xi)
    N = np.empty(xi.shape + (p + 1,))
    dN = np.empty_like(N)
    N[..., 0] = 0.5 * (1.0 - xi)
    N[..., 1] = 0.5 * (1.0 + xi)
    dN[..., 0] = -0.5
    dN[..., 1] = 0.5
    for i in range(3, p + 2):
        N[..., i - 1] = (P[..., i - 2 + 1] - P[..., i - 3]) / np.sqrt(2.0 * (2 * i - 3))
        dN[..., i - 1] = np.sqrt((2 * i - 3) / 2.0) * P[..., i - 2]
    return N, dN


def eval_basis_2d(p: int, xi, eta):
    """Tensor-product values ``(m, (p+1)^2)`` and local gradients ``(m, (p+1)^2, 2)``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    Nx, dNx = eval_shape_1d(p, xi)
    Ny, dNy = eval_shape_1d(p, eta)
    m = xi.shape[0]
    vals = (Nx[:, None, :] * Ny[:, :, None]).reshape(m, -1)
    grads = np.empty((m, (p + 1) ** 2, 2))
    grads[..., 0] = (dNx[:, None, :] * Ny[:, :, None]).reshape(m, -1)
    grads[..., 1] = (Nx[:, None, :] * dNy[:, :, None]).reshape(m, -1)
    return vals, grads


def eval_values_2d(p: int, xi, eta) -> np.ndarray:
    """Tensor-product values only, ``(m, (p+1)^2)``."""
    Nx, _ = eval_shape_1d(p, np.atleast_1d(xi))
    Ny, _ = eval_shape_1d(p, np.atleast_1d(eta))
    return (Nx[:, None, :] * Ny[:, :, None]).reshape(len(Nx), -1)


def global_1d_map(n_cells: int, p: int) -> np.ndarray:
    """``(n_cells, p + 1)`` global 1D indices; vertices first, then internal modes."""
    table = np.empty((n_cells, p + 1), dtype=np.int64)
    c = np.arange(n_cells)
    table[:, 0] = c
    table[:, 1] = c + 1
    if p > 1:
        table[:, 2:] = n_cells + 1 + c[:, None] * (p - 1) + np.arange(p - 1)[None, :]
    return table


@dataclass(frozen=True)
class DofMap:
    nx: int
    ny: int
    p: int

    @property
    def n_1d(self):
        return self.nx * self.p + 1, self.ny * self.p + 1

    @property
    def n_scalar(self) -> int:
        ax, ay = self.n_1d
        return ax * ay

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_scalar

    @cached_property
    def scalar_connectivity(self) -> np.ndarray:
        """``(nx * ny, (p+1)^2)`` global scalar index per local function.

        Cell ``c = cx + nx * cy``.
        """
        ax, _ = self.n_1d
        gx = global_1d_map(self.nx, self.p)
        gy = global_1d_map(self.ny, self.p)
        conn = gx[None, :, None, :] + ax * gy[:, None, :, None]
        return conn.reshape(self.nx * self.ny, -1)

    @cached_property
    def connectivity(self) -> np.ndarray:
        """Interleaved displacement DOFs ``[ux_0, uy_0, ux_1, ...]`` per cell."""
        s = self.scalar_connectivity
        return np.stack([2 * s, 2 * s + 1], axis=-1).reshape(s.shape[0], -1)

    def face_scalar_modes(self, face: str) -> np.ndarray:
        """Global scalar modes with a nonzero trace on an embedding-box face."""
        ax, ay = self.n_1d
        if face in ("xmin", "xmax"):
            vx = 0 if face == "xmin" else self.nx
            return vx + ax * np.arange(ay)
        if face in ("ymin", "ymax"):
            vy = 0 if face == "ymin" else self.ny
            return np.arange(ax) + ax * vy
        raise ValueError(f"unknown face {face!r}")


def build_dof_map(nx: int, ny: int, p: int) -> DofMap:
    if nx < 1 or ny < 1 or p < 1:
        raise ValueError("need nx, ny, p >= 1")
    return DofMap(nx, ny, p)


@dataclass(frozen=True)
class CellGeometry:
    index: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def det_j(self) -> float:
        return float(np.prod(self.size)) / 2.0 ** len(self.lo)

    @property
    def inv_j(self) -> np.ndarray:
        """Diagonal of the inverse Jacobian, d(xi)/dx per axis."""
        return 2.0 / self.size

    @property
    def area(self) -> float:
        return float(np.prod(self.size))

    def to_physical(self, local):
        local = np.asarray(local, dtype=float)
        return self.lo + 0.5 * (local + 1.0) * self.size

    def to_local(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * (x - self.lo) / self.size - 1.0


class EmbeddingMesh:
    """Regular ``nx x ny`` grid of order-``p`` cells over a box."""

    def __init__(self, lo, hi, nx: int, ny: int, p: int):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != (2,) or np.any(self.hi <= self.lo):
            raise ValueError("embedding box must be a nondegenerate 2D box")
        self.dofs = build_dof_map(nx, ny, p)
        self.nx, self.ny, self.p = nx, ny, p
        self.h = (self.hi - self.lo) / np.array([nx, ny])

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_dofs(self) -> int:
        return self.dofs.n_dofs

    @property
    def n_scalar(self) -> int:
        return self.dofs.n_scalar

    def cell(self, c: int) -> CellGeometry:
        cx, cy = c % self.nx, c // self.nx
        lo = self.lo + self.h * np.array([cx, cy])
        return CellGeometry(c, lo, lo + self.h)

    def cells(self):
        return [self.cell(c) for c in range(self.n_cells)]

    def cell_bounds(self):
        """``(lo, hi)`` arrays of shape ``(n_cells, 2)``."""
        c = np.arange(self.n_cells)
        ij = np.column_stack([c % self.nx, c // self.nx])
        lo = self.lo + self.h * ij
        return lo, lo + self.h

    def locate(self, x) -> np.ndarray:
        """Cell index for each point; points on shared edges go to the upper cell."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        tol = 1e-12 * np.max(self.hi - self.lo)
        if np.any(X < self.lo - tol) or np.any(X > self.hi + tol):
            raise ValueError("point outside the embedding box")
        ij = np.floor((X - self.lo) / self.h).astype(np.int64)
        ij[:, 0] = np.clip(ij[:, 0], 0, self.nx - 1)
        ij[:, 1] = np.clip(ij[:, 1], 0, self.ny - 1)
        return ij[:, 0] + self.nx * ij[:, 1]

    def face_cells(self, face: str) -> np.ndarray:
        c = np.arange(self.n_cells)
        cx, cy = c % self.nx, c // self.nx
        sel = {
            "xmin": cx == 0,
            "xmax": cx == self.nx - 1,
            "ymin": cy == 0,
            "ymax": cy == self.ny - 1,
        }
        if face not in sel:
            raise ValueError(f"unknown face {face!r}")
        return c[sel[face]]

    def face_dofs(self, face: str, components=(0, 1)) -> np.ndarray:
        s = self.dofs.face_scalar_modes(face)
        return np.sort(np.concatenate([2 * s + c for c in components]))
