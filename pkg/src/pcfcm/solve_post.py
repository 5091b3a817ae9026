"""Linear solve, energies and pointwise field evaluation/export."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import eval_basis_2d
from .mechanics import LinearSystem, ProblemDefinition

log = logging.getLogger(__name__)

DENSE_LIMIT = 6000


class IllConditionedSystemError(RuntimeError):
    """Factorization hit a non-positive pivot and CG did not converge."""

    def __init__(self, message, pivot=None, iterations=None):
        super().__init__(message)
        self.pivot = pivot
        self.iterations = iterations


@dataclass
class FieldSolution:
    u: np.ndarray
    problem: Optional[ProblemDefinition] = None
    residual: float = 0.0
    method: str = "cholesky"
    info: dict = field(default_factory=dict)


def _relative_residual(K, u, f):
    r = K @ u - f
    nf = np.linalg.norm(f)
    return float(np.linalg.norm(r) / nf) if nf > 0 else float(np.linalg.norm(r))


def _direct(K):
    """Symmetric factorization; returns a solve callable or raises ``LinAlgError``."""
    n = K.shape[0]
    if n <= DENSE_LIMIT:
        factor = sla.cho_factor(K.toarray(), lower=True, check_finite=False)
        return lambda b: sla.cho_solve(factor, b, check_finite=False)
    lu = spla.splu(
        sp.csc_matrix(K),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    piv = lu.U.diagonal()
    if np.any(piv <= 0):
        bad = int(np.argmin(piv))
        raise np.linalg.LinAlgError(f"non-positive pivot {piv[bad]:.3e} at position {bad}")
    return lu.solve


def _pcg(K, f, tol=1e-10, maxiter=None):
    n = K.shape[0]
    maxiter = maxiter or 20 * n
    d = K.diagonal()
    if np.any(d <= 0):
        return None, 0
    M = sp.diags(1.0 / d)
    count = {"it": 0}

    def cb(_):
        count["it"] += 1

    u, info = spla.cg(K, f, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    return (u if info == 0 else None), count["it"]


def solve_spd(system: LinearSystem, problem: Optional[ProblemDefinition] = None) -> FieldSolution:
    """Solve the constrained system, Cholesky first and Jacobi-CG as fallback."""
    K, f = system.K, system.f
    try:
        solve = _direct(K)
        u = solve(f)
        method = "cholesky"
        if not np.all(np.isfinite(u)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError as exc:
        log.warning("direct factorization failed (%s), trying CG", exc)
        u, its = _pcg(K, f)
        if u is None:
            raise IllConditionedSystemError(
                f"matrix is not positive definite ({exc}) and CG did not converge "
                f"after {its} iterations; check constraints and alpha",
                pivot=str(exc),
                iterations=its,
            ) from None
        method = "cg"
    if system.constrained.size:
        u[system.constrained] = 0.0
    res = _relative_residual(K, u, f)
    if res > 1e-8:
        log.warning("relative residual %.2e exceeds 1e-8", res)
    return FieldSolution(u, problem, res, method)


def strain_energy(system: LinearSystem, solution: FieldSolution) -> float:
    """``0.5 u^T K u`` with the unconstrained stiffness."""
    K = system.K_full if system.K_full is not None else system.K
    u = solution.u
    return float(0.5 * u @ (K @ u))


def relative_energy_error(u_num: float, u_ref: float) -> float:
    if u_ref == 0:
        raise ValueError("reference energy must be nonzero")
    return abs(u_ref - u_num) / abs(u_ref)


def von_mises(stress) -> np.ndarray:
    s = np.asarray(stress, dtype=float)
    sx, sy, txy = s[..., 0], s[..., 1], s[..., 2]
    return np.sqrt(sx**2 - sx * sy + sy**2 + 3.0 * txy**2)


def principal_stresses(stress):
    """Closed-form 2x2 eigen decomposition.

    Returns:
        ``(s1, s2, angle)`` with ``s1 >= s2`` and ``angle`` the direction of
        ``s1`` measured from the x axis.
    """
    s = np.asarray(stress, dtype=float)
    sx, sy, txy = s[..., 0], s[..., 1], s[..., 2]
    mean = 0.5 * (sx + sy)
    radius = np.hypot(0.5 * (sx - sy), txy)
    angle = 0.5 * np.arctan2(2.0 * txy, sx - sy)
    return mean + radius, mean - radius, angle


@dataclass
class StressState:
    strain: np.ndarray
    stress: np.ndarray
    von_mises: float
    principal: tuple
    directions: np.ndarray

    @classmethod
    def from_stress(cls, strain, stress):
        s1, s2, ang = principal_stresses(stress)
        d1 = np.array([np.cos(ang), np.sin(ang)])
        d2 = np.array([-np.sin(ang), np.cos(ang)])
        return cls(
            np.asarray(strain),
            np.asarray(stress),
            float(von_mises(stress)),
            (float(s1), float(s2)),
            np.vstack([d1, d2]),
        )


@dataclass
class FieldSample:
    """Vectorized field values at ``m`` points."""

    displacement: np.ndarray
    strain: np.ndarray
    stress: np.ndarray
    raw_stress: np.ndarray
    alpha: np.ndarray
    inside: np.ndarray

    @property
    def von_mises(self):
        return von_mises(self.stress)

    @property
    def principal(self):
        return principal_stresses(self.stress)


def evaluate_fields(solution: FieldSolution, points) -> FieldSample:
    problem = solution.problem
    mesh = problem.mesh
    X = np.atleast_2d(np.asarray(points, dtype=float))
    cells = mesh.locate(X)
    p = mesh.p
    nf = (p + 1) ** 2
    conn = mesh.dofs.connectivity
    disp = np.zeros((len(X), 2))
    strain = np.zeros((len(X), 3))
    for c in np.unique(cells):
        sel = cells == c
        cell = mesh.cell(int(c))
        loc = np.clip(cell.to_local(X[sel]), -1.0, 1.0)
        N, g = eval_basis_2d(p, loc[:, 0], loc[:, 1])
        ue = solution.u[conn[c]].reshape(nf, 2)
        disp[sel] = N @ ue
        gx = g[..., 0] * cell.inv_j[0]
        gy = g[..., 1] * cell.inv_j[1]
        strain[sel, 0] = gx @ ue[:, 0]
        strain[sel, 1] = gy @ ue[:, 1]
        strain[sel, 2] = gy @ ue[:, 0] + gx @ ue[:, 1]
    inside = problem.domain.contains(X)
    alpha = np.where(inside, 1.0, problem.material.alpha_fict)
    raw = strain @ problem.material.C.T
    return FieldSample(disp, strain, raw * alpha[:, None], raw, alpha, inside)


def evaluate_solution(solution: FieldSolution, x):
    """Displacement, stress state and material flag at one point."""
    s = evaluate_fields(solution, np.asarray(x, dtype=float)[None, :])
    state = StressState.from_stress(s.strain[0], s.stress[0])
    return s.displacement[0], state, bool(s.inside[0])


def export_field_grid(solution: FieldSolution, resolution, path):
    """Write a legacy-VTK structured-points file and a CSV with the same values.

    Points are ordered with x fastest. ``path`` may carry a ``.vtk`` suffix;
    the CSV goes next to it.
    """
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise ValueError("need at least 2 samples per axis")
    mesh = solution.problem.mesh
    xs = np.linspace(mesh.lo[0], mesh.hi[0], nx)
    ys = np.linspace(mesh.lo[1], mesh.hi[1], ny)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    s = evaluate_fields(solution, pts)
    vm = s.von_mises
    s1, s2, _ = s.principal
    raw_vm = von_mises(s.raw_stress)
    mask = s.inside.astype(int)

    base, ext = os.path.splitext(os.fspath(path))
    vtk_path = base + (ext if ext else ".vtk")
    csv_path = base + ".csv"
    spacing = ((xs[-1] - xs[0]) / (nx - 1), (ys[-1] - ys[0]) / (ny - 1))
    lines = [
        "# vtk DataFile Version 3.0",
        "pcfcm field export",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {float(xs[0])!r} {float(ys[0])!r} 0",
        f"SPACING {float(spacing[0])!r} {float(spacing[1])!r} 1",
        f"POINT_DATA {nx * ny}",
        "VECTORS displacement double",
    ]
    lines += [f"{float(u)!r} {float(v)!r} 0" for u, v in s.displacement]
    for name, data in (
        ("von_mises", vm),
        ("principal_max", s1),
        ("principal_min", s2),
        ("von_mises_raw", raw_vm),
    ):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in data]
    lines += ["SCALARS alpha_mask int 1", "LOOKUP_TABLE default"]
    lines += [str(int(v)) for v in mask]
    with open(vtk_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["x", "y", "ux", "uy", "von_mises", "principal_max", "principal_min", "von_mises_raw", "alpha_mask"]
        )
        for i in range(len(pts)):
            w.writerow(
                [
                    repr(float(pts[i, 0])),
                    repr(float(pts[i, 1])),
                    repr(float(s.displacement[i, 0])),
                    repr(float(s.displacement[i, 1])),
                    repr(float(vm[i])),
                    repr(float(s1[i])),
                    repr(float(s2[i])),
                    repr(float(raw_vm[i])),
                    int(mask[i]),
                ]
            )
    return vtk_path, csv_path
