"""Analysis driver, benchmark setups, convergence sweeps and the outlier demo."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .cloud import HOLE, SOLID, OrientedPointCloud, SpatialIndex, chord_spacing, generate_circle_cloud
from .config import RunConfig, build_problem, get_path, set_path
from .membership import Ball, CloudLeaf
from .mechanics import apply_dirichlet, assemble_global, assemble_loads, dirichlet_dofs, DirichletFace
from .solve_post import export_field_grid, relative_energy_error, solve_spd, strain_energy

log = logging.getLogger(__name__)

CIRCLE_U_REF = 0.7021812127
ELLIPSE_U_REF = 44.28375067893


def run_problem(cfg: RunConfig, write_outputs: bool = True) -> dict:
    """Assemble, load, constrain, solve and post-process one configuration."""
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    t_build = time.perf_counter()
    system = assemble_global(problem)
    t_stiff = time.perf_counter()
    system.f = assemble_loads(problem)
    t_load = time.perf_counter()
    constraints = [bc for bc in problem.bcs if isinstance(bc, DirichletFace)]
    system = apply_dirichlet(system, dirichlet_dofs(problem.mesh, constraints))
    solution = solve_spd(system, problem)
    t_solve = time.perf_counter()
    energy = strain_energy(system, solution)
    report = {
        "name": cfg.name,
        "energy": energy,
        "dofs": problem.mesh.n_dofs,
        "cut_cells": system.stats["cut_cells"],
        "leaves": system.stats["leaves"],
        "quadrature_points": system.stats["quadrature_points"],
        "solver": solution.method,
        "residual": solution.residual,
        "timings": {
            "setup": t_build - t0,
            "stiffness": t_stiff - t_build,
            "loads": t_load - t_stiff,
            "solve": t_solve - t_load,
        },
    }
    if cfg.reference_energy is not None:
        report["reference_energy"] = cfg.reference_energy
        report["error"] = relative_energy_error(energy, cfg.reference_energy)
    out = cfg.outputs
    if write_outputs and out.vtk:
        vtk, csv_path = export_field_grid(solution, out.grid_resolution, _resolve(cfg, out.vtk))
        report["outputs"] = {"vtk": vtk, "csv": csv_path}
    report["timings"]["total"] = time.perf_counter() - t0
    report["config"] = cfg.to_dict()
    if write_outputs and out.summary:
        with open(_resolve(cfg, out.summary), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    report["_solution"] = solution
    report["_system"] = system
    return report


def _resolve(cfg, path):
    return path if os.path.isabs(path) else os.path.join(cfg.base_dir, path)


def circular_hole_config(n_points: int = 4096, p: int = 12, k: int = 8, q: float = 12.0) -> RunConfig:
    """Square plate of side 4 with a centered hole of radius 1 under uniaxial tension.

    Rollers on the left and bottom faces, 100 MPa on the top face; the hole
    is a solid-oriented circle cloud subtracted from the plate.
    """
    return RunConfig.from_dict(
        {
            "name": "plate-circular-hole",
            "geometry": {
                "type": "difference",
                "left": {"type": "box", "lo": [0.0, 0.0], "hi": [4.0, 4.0]},
                "right": {
                    "type": "circle_cloud",
                    "center": [2.0, 2.0],
                    "radius": 1.0,
                    "n": n_points,
                    "orientation": SOLID,
                },
            },
            "mesh": {"lo": [0.0, 0.0], "hi": [4.0, 4.0], "cells": [2, 2], "p": p},
            "material": {"E": 2.069e5, "nu": 0.29, "q": q, "plane_stress": True},
            "integration": {"k": k},
            "bcs": [
                {"type": "dirichlet", "face": "xmin", "components": [0]},
                {"type": "dirichlet", "face": "ymin", "components": [1]},
                {"type": "traction", "face": "ymax", "traction": [0.0, 100.0]},
            ],
            "reference_energy": CIRCLE_U_REF,
        }
    )


def elliptical_hole_config(
    n_points: int = 4096, p: int = 8, k: int = 10, band_k: int = 8, epsilon: float = 0.0625
) -> RunConfig:
    """Square plate of side 14, centered elliptical hole (axes 7 x 3.5) under unit pressure.

    Unit modulus, nu = 0.3, rollers on the left and bottom faces. The pressure
    enters through the regularized delta band of the hole cloud.
    """
    hole = {
        "type": "ellipse_cloud",
        "center": [7.0, 7.0],
        "a": 3.5,
        "b": 1.75,
        "n": n_points,
        "orientation": HOLE,
    }
    return RunConfig.from_dict(
        {
            "name": "plate-elliptical-hole",
            "geometry": {
                "type": "intersection",
                "left": {"type": "box", "lo": [0.0, 0.0], "hi": [14.0, 14.0]},
                "right": hole,
            },
            "mesh": {"lo": [0.0, 0.0], "hi": [14.0, 14.0], "cells": [6, 6], "p": p},
            "material": {"E": 1.0, "nu": 0.3, "q": 12.0, "plane_stress": True},
            "integration": {"k": k, "band_k": band_k, "band_rule": 10},
            "bcs": [
                {"type": "dirichlet", "face": "xmin", "components": [0]},
                {"type": "dirichlet", "face": "ymin", "components": [1]},
                {
                    "type": "delta_neumann",
                    "boundary": hole,
                    "pressure": 1.0,
                    "epsilon": epsilon,
                    "n_neigh": 6,
                },
            ],
            "reference_energy": ELLIPSE_U_REF,
        }
    )


@dataclass
class ConvergenceRecord:
    variable: str
    value: float
    energy: float
    error: Optional[float]
    wall_time: float
    dofs: int
    quadrature_points: int


def _record(variable, value, report) -> ConvergenceRecord:
    return ConvergenceRecord(
        variable,
        value,
        report["energy"],
        report.get("error"),
        report["timings"]["total"],
        report["dofs"],
        report["quadrature_points"],
    )


def bench_plate_circular_hole(n_points: int, p: int = 12, k: int = 8) -> ConvergenceRecord:
    report = run_problem(circular_hole_config(n_points, p, k), write_outputs=False)
    return _record("n", n_points, report)


def bench_plate_elliptical_hole(n_points: int, p: int = 8, k: int = 10) -> ConvergenceRecord:
    report = run_problem(elliptical_hole_config(n_points, p, k), write_outputs=False)
    return _record("p", p, report)


def fit_loglog_slope(x, y, window: Optional[Sequence[int]] = None):
    """Least-squares slope and R^2 of ``log y`` over ``log x``.

    ``window`` is a ``[start, stop)`` index range into the sorted data.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        x = x[window[0] : window[1]]
        y = y[window[0] : window[1]]
    if len(x) < 2:
        raise ValueError("need at least two points to fit a slope")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError("degenerate sweep: all abscissae equal")
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


CSV_FIELDS = ("variable", "value", "energy", "error", "dofs", "quadrature_points")


def write_records(records, path, timings: bool = False) -> None:
    """Write a convergence table. Wall times are left out unless asked for so
    reruns produce identical bytes."""
    cols = CSV_FIELDS + (("wall_time",) if timings else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            d = asdict(r)
            w.writerow(["" if d[c] is None else (repr(float(d[c])) if isinstance(d[c], float) else d[c]) for c in cols])


def run_convergence_study(base: RunConfig, sweep: dict, csv_path: Optional[str] = None) -> dict:
    """Run ``base`` once per sweep value.

    ``sweep`` holds ``keys`` (dotted config paths set to each value),
    ``values``, an optional ``label`` and an optional ``window`` for the fit.
    """
    values = list(sweep["values"])
    if len(values) < 3:
        raise ValueError("a convergence study needs at least 3 sweep values")
    keys = sweep["keys"] if isinstance(sweep.get("keys"), list) else [sweep["keys"]]
    label = sweep.get("label", keys[0])
    records = []
    for v in sorted(values):
        data = base.to_dict()
        for key in keys:
            get_path(data, key)
            set_path(data, key, v)
        cfg = RunConfig.from_dict(data, base.base_dir)
        records.append(_record(label, v, run_problem(cfg, write_outputs=False)))
        log.info("%s=%s error=%s", label, v, records[-1].error)
    result = {"records": records}
    errors = [r.error for r in records]
    if all(e is not None and e > 0 for e in errors):
        slope, r2 = fit_loglog_slope([r.value for r in records], errors, sweep.get("window"))
        result.update(slope=slope, r2=r2)
    if csv_path:
        write_records(records, csv_path, timings=sweep.get("timings", False))
        result["csv"] = csv_path
    return result


def outlier_scene(n: int = 90, radius: float = 1.0, outlier=(1.3, 1.3), outlier_normal=None) -> OrientedPointCloud:
    """Solid circle cloud plus one stray sample whose normal faces the center."""
    base = generate_circle_cloud((0.0, 0.0), radius, n, SOLID)
    if outlier is None:
        return base
    o = np.asarray(outlier, dtype=float)
    nrm = -o / np.linalg.norm(o) if outlier_normal is None else np.asarray(outlier_normal, dtype=float)
    return base.merged(OrientedPointCloud(o[None, :], nrm[None, :]))


def run_outlier_demo(
    out_dir: Optional[str] = None,
    n: int = 90,
    radius: float = 1.0,
    outlier=(1.3, 1.3),
    votes: Sequence[int] = (1, 3),
    resolution: int = 200,
    extent: float = 1.5,
) -> dict:
    """Classify a uniform grid with several vote counts and count errors.

    Misclassifications are measured against the exact disk; the band count
    excludes grid points within one chord spacing of the circle.
    """
    cloud = outlier_scene(n, radius, outlier)
    index = SpatialIndex(cloud)
    xs = np.linspace(-extent, extent, resolution)
    X, Y = np.meshgrid(xs, xs)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    truth = Ball((0.0, 0.0), radius).contains(pts)
    h = chord_spacing(radius, n)
    far = np.abs(np.linalg.norm(pts, axis=1) - radius) > h
    result = {"resolution": resolution, "spacing": h, "grids": {}, "misclassified": {}, "misclassified_outside_band": {}}
    for v in votes:
        inside = CloudLeaf(index, v).contains(pts)
        wrong = inside != truth
        result["grids"][v] = inside.reshape(resolution, resolution)
        result["misclassified"][v] = int(wrong.sum())
        result["misclassified_outside_band"][v] = int((wrong & far).sum())
        if out_dir:
            path = os.path.join(out_dir, f"outlier_votes{v}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", "inside"])
                for (x, y), b in zip(pts, inside):
                    w.writerow([repr(float(x)), repr(float(y)), int(b)])
    return result
