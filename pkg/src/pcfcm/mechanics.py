"""Finite cell assembly for 2D linear elasticity.

The stiffness integrand is scaled by ``alpha = 1`` in the material and
``10**-q`` in the fictitious domain. Cut cells are integrated on spacetree
leaves; uncut cells reuse a single reference matrix since all cells of the
embedding grid are congruent.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .basis import FACES, CellGeometry, EmbeddingMesh, eval_basis_2d, eval_values_2d
from .membership import DeltaBand, Predicate, cut_states
from .quadrature import build_space_tree, cell_points, gauss_rule, leaf_points, refine_tree

log = logging.getLogger(__name__)

# Voigt slot of d(u_c)/d(x_r): VOIGT[c][r]
VOIGT = ((0, 2), (2, 1))


def constitutive_plane_stress(E: float, nu: float) -> np.ndarray:
    return E / (1.0 - nu**2) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]
    )


def constitutive_plane_strain(E: float, nu: float) -> np.ndarray:
    f = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return f * np.array(
        [[1.0 - nu, nu, 0.0], [nu, 1.0 - nu, 0.0], [0.0, 0.0, 0.5 - nu]]
    )


@dataclass(frozen=True)
class Material:
    E: float
    nu: float
    q: float = 12.0
    plane_stress: bool = True

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if not 6.0 <= self.q <= 12.0:
            warnings.warn(f"alpha exponent q={self.q} outside the usual 6..12 range")

    @property
    def alpha_fict(self) -> float:
        return 10.0 ** (-self.q)

    @property
    def C(self) -> np.ndarray:
        if self.plane_stress:
            return constitutive_plane_stress(self.E, self.nu)
        return constitutive_plane_strain(self.E, self.nu)


def alpha_at(predicate: Predicate, x, q: float):
    inside = predicate.contains(np.atleast_2d(x))
    alpha = np.where(inside, 1.0, 10.0 ** (-q))
    return float(alpha[0]) if np.ndim(x) == 1 else alpha


@dataclass(frozen=True)
class DirichletFace:
    """Homogeneous displacement constraint on an embedding-box face."""

    face: str
    components: tuple = (0, 1)


@dataclass(frozen=True)
class ConformingTraction:
    face: str
    traction: tuple


@dataclass
class DeltaNeumann:
    """Traction spread over the regularized band of a boundary point subset.

    Give either a constant ``traction`` vector or a ``pressure`` magnitude;
    pressure acts along minus the nearest sample's normal.
    """

    band: DeltaBand
    traction: Optional[Sequence[float]] = None
    pressure: Optional[float] = None

    def __post_init__(self):
        if (self.traction is None) == (self.pressure is None):
            raise ValueError("give exactly one of traction or pressure")


BoundaryCondition = Union[DirichletFace, ConformingTraction, DeltaNeumann]


@dataclass
class IntegrationParams:
    """Quadrature settings.

    ``rule`` defaults to ``p + 1`` Gauss points per axis and leaf; ``seeds``
    (top-level cut detection) to ``max(p + 1, 4)``.
    """

    k: int = 4
    rule: Optional[int] = None
    seeds: Optional[int] = None
    sub_seeds: int = 3
    band_k: int = 8
    band_rule: int = 10


@dataclass
class ProblemDefinition:
    mesh: EmbeddingMesh
    domain: Predicate
    material: Material
    bcs: list = field(default_factory=list)
    body_force: Optional[Sequence[float]] = None
    integration: IntegrationParams = field(default_factory=IntegrationParams)

    def __post_init__(self):
        if self.domain.dimension not in (None, 2):
            raise ValueError("the elasticity solver is two-dimensional")
        dirichlet = {bc.face for bc in self.bcs if isinstance(bc, DirichletFace)}
        neumann = {bc.face for bc in self.bcs if isinstance(bc, ConformingTraction)}
        for face in dirichlet | neumann:
            if face not in FACES:
                raise ValueError(f"unknown face {face!r}")
        if dirichlet & neumann:
            raise ValueError(f"faces {sorted(dirichlet & neumann)} carry both Dirichlet and Neumann data")

    @property
    def rule(self) -> int:
        return self.integration.rule or self.mesh.p + 1

    @property
    def top_seeds(self) -> int:
        return self.integration.seeds or max(self.mesh.p + 1, 4)


@dataclass
class LinearSystem:
    """``K u = f`` with optional record of eliminated DOFs.

    ``K_full`` keeps the unconstrained stiffness for energy evaluation.
    """

    K: sp.csr_matrix
    f: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    K_full: Optional[sp.csr_matrix] = None
    stats: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]


def stiffness_from_points(p: int, local, weights, inv_j, C, chunk: int = 16384) -> np.ndarray:
    """``sum_i w_i B_i^T C B_i`` over the given cell-local points.

    ``weights`` must already contain alpha and all mapping factors. DOFs are
    interleaved per scalar function.
    """
    nf = (p + 1) ** 2
    A = np.zeros((2, 2, nf, nf))
    for s in range(0, len(weights), chunk):
        loc = local[s : s + chunk]
        w = weights[s : s + chunk]
        _, g = eval_basis_2d(p, loc[:, 0], loc[:, 1])
        gx = g[..., 0] * inv_j[0]
        gy = g[..., 1] * inv_j[1]
        wgx = gx * w[:, None]
        A[0, 0] += wgx.T @ gx
        A[0, 1] += wgx.T @ gy
        A[1, 1] += (gy * w[:, None]).T @ gy
    A[1, 0] = A[0, 1].T
    K = np.zeros((nf, 2, nf, 2))
    for c in range(2):
        for e in range(2):
            for r in range(2):
                for s_ in range(2):
                    K[:, c, :, e] += C[VOIGT[c][r], VOIGT[e][s_]] * A[r, s_]
    K = K.reshape(2 * nf, 2 * nf)
    return 0.5 * (K + K.T)


@dataclass
class CellQuadrature:
    local: np.ndarray
    physical: np.ndarray
    weights: np.ndarray
    inside: np.ndarray
    n_leaves: int


def cut_cell_quadrature(problem: ProblemDefinition, cell: CellGeometry) -> CellQuadrature:
    ip = problem.integration
    tree = build_space_tree(problem.domain, cell, ip.k, ip.sub_seeds, problem.top_seeds)
    local, phys, w = leaf_points(tree, problem.rule, cell)
    inside = problem.domain.contains(phys)
    return CellQuadrature(local, phys, w, inside, len(tree))


def cell_states(problem: ProblemDefinition) -> np.ndarray:
    """Top-level cut state per cell (1 inside, 0 outside, -1 cut)."""
    lo, hi = problem.mesh.cell_bounds()
    return cut_states(problem.domain, lo, hi, problem.top_seeds)


def _reference_stiffness(problem: ProblemDefinition) -> np.ndarray:
    cell = problem.mesh.cell(0)
    local, _, w = cell_points(cell, problem.rule)
    return stiffness_from_points(problem.mesh.p, local, w, cell.inv_j, problem.material.C)


def element_stiffness(problem: ProblemDefinition, c: int, state: Optional[int] = None):
    """Element matrix of cell ``c`` and its integration statistics."""
    mesh, mat = problem.mesh, problem.material
    cell = mesh.cell(c)
    if state is None:
        state = int(cut_states(problem.domain, cell.lo[None], cell.hi[None], problem.top_seeds)[0])
    if state != -1:
        ke = _reference_stiffness(problem)
        n_pts = problem.rule**2
        return (ke if state == 1 else mat.alpha_fict * ke), {"state": state, "leaves": 1, "points": n_pts}
    quad = cut_cell_quadrature(problem, cell)
    wa = quad.weights * np.where(quad.inside, 1.0, mat.alpha_fict)
    ke = stiffness_from_points(mesh.p, quad.local, wa, cell.inv_j, mat.C)
    return ke, {"state": state, "leaves": quad.n_leaves, "points": len(quad.weights)}


def assemble_global(problem: ProblemDefinition) -> LinearSystem:
    mesh = problem.mesh
    conn = mesh.dofs.connectivity
    states = cell_states(problem)
    ref = None
    rows, cols, vals = [], [], []
    per_cell = []
    for c in range(mesh.n_cells):
        if states[c] != -1:
            if ref is None:
                ref = _reference_stiffness(problem)
            ke = ref if states[c] == 1 else problem.material.alpha_fict * ref
            info = {"state": int(states[c]), "leaves": 1, "points": problem.rule**2}
        else:
            ke, info = element_stiffness(problem, c, state=-1)
        per_cell.append(info)
        d = conn[c]
        rows.append(np.repeat(d, len(d)))
        cols.append(np.tile(d, len(d)))
        vals.append(ke.ravel())
    n = mesh.n_dofs
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    K.sum_duplicates()
    stats = {
        "cells": per_cell,
        "cut_cells": int(np.sum(states == -1)),
        "leaves": int(sum(i["leaves"] for i in per_cell)),
        "quadrature_points": int(sum(i["points"] for i in per_cell)),
    }
    log.debug("assembled %d dofs, %d cut cells", n, stats["cut_cells"])
    return LinearSystem(K, np.zeros(n), K_full=K, stats=stats)


def _scatter(f, dofs, values):
    np.add.at(f, dofs, values)


def conforming_traction_load(problem: ProblemDefinition, face: str, traction) -> np.ndarray:
    """Exact face integral of ``N^T t`` along an embedding-box face."""
    mesh = problem.mesh
    t = np.asarray(traction, dtype=float)
    f = np.zeros(mesh.n_dofs)
    rule = gauss_rule(problem.rule)
    axis = 1 if face in ("xmin", "xmax") else 0
    fixed = -1.0 if face in ("xmin", "ymin") else 1.0
    conn = mesh.dofs.connectivity
    for c in mesh.face_cells(face):
        cell = mesh.cell(c)
        loc = np.empty((rule.n, 2))
        loc[:, axis] = rule.nodes
        loc[:, 1 - axis] = fixed
        N, _ = eval_basis_2d(mesh.p, loc[:, 0], loc[:, 1])
        w = rule.weights * 0.5 * cell.size[axis]
        integral = w @ N
        fe = (integral[:, None] * t[None, :]).ravel()
        _scatter(f, conn[c], fe)
    return f


def body_force_load(problem: ProblemDefinition, b) -> np.ndarray:
    """``int_{material} N^T b``; fictitious points contribute nothing."""
    mesh = problem.mesh
    b = np.asarray(b, dtype=float)
    f = np.zeros(mesh.n_dofs)
    if not np.any(b):
        return f
    states = cell_states(problem)
    conn = mesh.dofs.connectivity
    for c in range(mesh.n_cells):
        if states[c] == 0:
            continue
        cell = mesh.cell(c)
        if states[c] == 1:
            local, _, w = cell_points(cell, problem.rule)
        else:
            quad = cut_cell_quadrature(problem, cell)
            local, w = quad.local, quad.weights * quad.inside
        N, _ = eval_basis_2d(mesh.p, local[:, 0], local[:, 1])
        integral = w @ N
        _scatter(f, conn[c], (integral[:, None] * b[None, :]).ravel())
    return f


def band_cells(mesh: EmbeddingMesh, band: DeltaBand) -> np.ndarray:
    """Cells whose box may intersect the support of the band."""
    lo, hi = mesh.cell_bounds()
    return np.flatnonzero(_boxes_near_band(band, lo, hi))


def _boxes_near_band(band: DeltaBand, lo, hi):
    center = 0.5 * (lo + hi)
    half_diag = 0.5 * np.linalg.norm(hi - lo, axis=1)
    _, d2 = band.index.query_indices(center, 1)
    return np.sqrt(d2[:, 0]) <= half_diag + band.reach()


def band_tree(band: DeltaBand, cell: CellGeometry, k: int):
    """Spacetree refined everywhere inside the band support, leaves outside dropped."""

    def near(plo, phi, level=None):
        return _boxes_near_band(band, plo, phi)

    return refine_tree(cell, k, near, keep=near)


def delta_neumann_load(problem: ProblemDefinition, dn: DeltaNeumann, chunk: int = 65536) -> np.ndarray:
    """Volume form of a boundary traction through the regularized delta band."""
    mesh = problem.mesh
    band = dn.band
    ip = problem.integration
    f = np.zeros(mesh.n_dofs)
    conn = mesh.dofs.connectivity
    for c in band_cells(mesh, band):
        cell = mesh.cell(c)
        tree = band_tree(band, cell, ip.band_k)
        if len(tree) == 0:
            continue
        local, phys, w = leaf_points(tree, ip.band_rule, cell)
        fe = np.zeros(((mesh.p + 1) ** 2, 2))
        for s in range(0, len(w), chunk):
            x = phys[s : s + chunk]
            nearest = band.nearest_sample(x)
            delta = band.delta(x, nearest)
            live = delta > 0.0
            if not np.any(live):
                continue
            loc = local[s : s + chunk][live]
            wd = w[s : s + chunk][live] * delta[live]
            if dn.traction is not None:
                t = np.broadcast_to(np.asarray(dn.traction, dtype=float), (len(wd), 2))
            else:
                t = -float(dn.pressure) * band.cloud.normals[nearest[live]]
            N = eval_values_2d(mesh.p, loc[:, 0], loc[:, 1])
            fe += N.T @ (wd[:, None] * t)
        _scatter(f, conn[c], fe.ravel())
    return f


def assemble_loads(problem: ProblemDefinition) -> np.ndarray:
    f = np.zeros(problem.mesh.n_dofs)
    for bc in problem.bcs:
        if isinstance(bc, ConformingTraction):
            f += conforming_traction_load(problem, bc.face, bc.traction)
        elif isinstance(bc, DeltaNeumann):
            f += delta_neumann_load(problem, bc)
    if problem.body_force is not None:
        f += body_force_load(problem, problem.body_force)
    return f


def dirichlet_dofs(mesh: EmbeddingMesh, constraints: Sequence[DirichletFace]) -> np.ndarray:
    dofs = [mesh.face_dofs(bc.face, bc.components) for bc in constraints]
    if not dofs:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(dofs))


def apply_dirichlet(system: LinearSystem, dofs) -> LinearSystem:
    """Eliminate homogeneous constraints: zero rows and columns, unit diagonal."""
    dofs = np.unique(np.asarray(dofs, dtype=np.int64))
    n = system.n_dofs
    if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
        raise ValueError("constrained DOF out of range")
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    K = (D @ system.K @ D + sp.diags(1.0 - keep)).tocsr()
    f = system.f * keep
    K_full = system.K_full if system.K_full is not None else system.K
    constrained = np.union1d(system.constrained, dofs)
    return LinearSystem(K, f, constrained, K_full, dict(system.stats))


def build_system(problem: ProblemDefinition) -> LinearSystem:
    """Stiffness, loads and Dirichlet elimination in one call."""
    system = assemble_global(problem)
    system.f = assemble_loads(problem)
    constraints = [bc for bc in problem.bcs if isinstance(bc, DirichletFace)]
    return apply_dirichlet(system, dirichlet_dofs(problem.mesh, constraints))
