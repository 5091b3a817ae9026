"""JSON run configuration and its translation into a problem definition.

Geometry is a nested mapping. Leaves:

* ``{"type": "cloud", "path": ..., "n_votes": 1}``
* ``{"type": "circle_cloud", "center": [x, y], "radius": r, "n": n, "orientation": "hole"|"solid"}``
* ``{"type": "ellipse_cloud", "center": [x, y], "a": a, "b": b, "n": n, "orientation": ...}``
* ``{"type": "circle", "center": ..., "radius": ...}``, ``{"type": "ellipse", ...}``,
  ``{"type": "box", "lo": ..., "hi": ...}``, ``{"type": "halfspace", "point": ..., "normal": ...}``
* ``{"type": "cloud_bbox", "of": <cloud leaf>, "pad": 0.0}``

Nodes: ``{"type": "union"|"intersection"|"difference", "left": ..., "right": ...}`` and
``{"type": "complement", "child": ...}``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

from .basis import FACES, EmbeddingMesh
from .cloud import (
    OrientedPointCloud,
    SpatialIndex,
    generate_circle_cloud,
    generate_ellipse_cloud,
    load_cloud,
)
from .membership import Ball, Box, CloudLeaf, Complement, CsgNode, DeltaBand, Ellipse, HalfSpace, Predicate
from .mechanics import (
    ConformingTraction,
    DeltaNeumann,
    DirichletFace,
    IntegrationParams,
    Material,
    ProblemDefinition,
)

SCHEMA = "pcfcm.run/1"
CLOUD_TYPES = ("cloud", "circle_cloud", "ellipse_cloud")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class MeshConfig:
    lo: list = field(default_factory=lambda: [0.0, 0.0])
    hi: list = field(default_factory=lambda: [1.0, 1.0])
    cells: list = field(default_factory=lambda: [1, 1])
    p: int = 2


@dataclass
class MaterialConfig:
    E: float = 1.0
    nu: float = 0.3
    q: float = 12.0
    plane_stress: bool = True


@dataclass
class IntegrationConfig:
    k: int = 4
    rule: Optional[int] = None
    seeds: Optional[int] = None
    sub_seeds: int = 3
    band_k: int = 8
    band_rule: int = 10


@dataclass
class OutputConfig:
    summary: Optional[str] = None
    vtk: Optional[str] = None
    grid_resolution: list = field(default_factory=lambda: [101, 101])


@dataclass
class RunConfig:
    geometry: dict
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    bcs: list = field(default_factory=list)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    body_force: Optional[list] = None
    reference_energy: Optional[float] = None
    outputs: OutputConfig = field(default_factory=OutputConfig)
    name: str = "run"
    base_dir: str = field(default=".", compare=False, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return {"schema": SCHEMA, **d}

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "RunConfig":
        data = copy.deepcopy(data)
        schema = data.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported schema {schema!r}, expected {SCHEMA!r}")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "geometry" not in data:
            raise ConfigError("config needs a 'geometry' entry")
        sub = {
            "mesh": MeshConfig,
            "material": MaterialConfig,
            "integration": IntegrationConfig,
            "outputs": OutputConfig,
        }
        for key, typ in sub.items():
            if key in data:
                try:
                    data[key] = typ(**data[key])
                except TypeError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        cfg = cls(**data, base_dir=base_dir)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, base_dir: str = ".") -> "RunConfig":
        return cls.from_dict(json.loads(text), base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply ``{"dotted.key": value}`` overrides; list items use integer keys."""
        data = self.to_dict()
        for key, value in overrides.items():
            set_path(data, key, value)
        return RunConfig.from_dict(data, self.base_dir)

    def validate(self) -> None:
        m = self.mesh
        if not 1 <= int(m.p) <= 12:
            raise ConfigError(f"mesh.p must lie in 1..12, got {m.p}")
        if len(m.cells) != 2 or min(m.cells) < 1:
            raise ConfigError("mesh.cells must be two positive integers")
        if len(m.lo) != 2 or len(m.hi) != 2 or any(h <= l for l, h in zip(m.lo, m.hi)):
            raise ConfigError("mesh box must satisfy lo < hi in both axes")
        ig = self.integration
        if not 0 <= int(ig.k) <= 12 or not 0 <= int(ig.band_k) <= 12:
            raise ConfigError("integration depths must lie in 0..12")
        if ig.rule is not None and not 1 <= ig.rule <= 64:
            raise ConfigError("integration.rule must lie in 1..64")
        if self.material.E <= 0 or not 0 <= self.material.nu < 0.5:
            raise ConfigError("material needs E > 0 and 0 <= nu < 0.5")
        _validate_geometry(self.geometry, self.base_dir)
        faces = {"dirichlet": set(), "traction": set()}
        for i, bc in enumerate(self.bcs):
            kind = bc.get("type")
            if kind in ("dirichlet", "traction"):
                if bc.get("face") not in FACES:
                    raise ConfigError(f"bcs[{i}]: unknown face {bc.get('face')!r}")
                faces[kind].add(bc["face"])
                if kind == "traction" and len(bc.get("traction", [])) != 2:
                    raise ConfigError(f"bcs[{i}]: traction needs two components")
            elif kind == "delta_neumann":
                if bc.get("boundary", {}).get("type") not in CLOUD_TYPES:
                    raise ConfigError(f"bcs[{i}]: delta_neumann boundary must be a cloud leaf")
                _validate_geometry(bc["boundary"], self.base_dir)
                if ("pressure" in bc) == ("traction" in bc):
                    raise ConfigError(f"bcs[{i}]: give exactly one of pressure or traction")
                if bc.get("epsilon", 0) <= 0:
                    raise ConfigError(f"bcs[{i}]: epsilon must be positive")
            else:
                raise ConfigError(f"bcs[{i}]: unknown type {kind!r}")
        both = faces["dirichlet"] & faces["traction"]
        if both:
            raise ConfigError(f"faces {sorted(both)} carry both Dirichlet and traction data")
        if self.reference_energy is not None and self.reference_energy == 0:
            raise ConfigError("reference_energy must be nonzero")


def set_path(data: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    try:
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    except (IndexError, ValueError, TypeError, AttributeError):
        raise ConfigError(f"cannot set config key {dotted!r}") from None


def get_path(data: dict, dotted: str) -> Any:
    node = data
    try:
        for k in dotted.split("."):
            node = node[int(k)] if isinstance(node, list) else node[k]
    except (KeyError, IndexError, ValueError, TypeError):
        raise ConfigError(f"no config key {dotted!r}") from None
    return node


_LEAF_KEYS = {
    "cloud": {"path"},
    "circle_cloud": {"center", "radius", "n"},
    "ellipse_cloud": {"a", "b", "n"},
    "circle": {"center", "radius"},
    "ellipse": {"a", "b"},
    "box": {"lo", "hi"},
    "halfspace": {"point", "normal"},
    "cloud_bbox": {"of"},
    "union": {"left", "right"},
    "intersection": {"left", "right"},
    "difference": {"left", "right"},
    "complement": {"child"},
}


def _validate_geometry(g, base_dir, depth=0):
    if depth > 64:
        raise ConfigError("geometry tree too deep")
    if not isinstance(g, dict) or g.get("type") not in _LEAF_KEYS:
        raise ConfigError(f"unknown geometry node {g!r:.80}")
    missing = _LEAF_KEYS[g["type"]] - set(g)
    if missing:
        raise ConfigError(f"geometry '{g['type']}' is missing {sorted(missing)}")
    if g["type"] == "cloud":
        path = _resolve(g["path"], base_dir)
        if not os.path.exists(path):
            raise ConfigError(f"cloud file not found: {path}")
    if g.get("n_votes", 1) < 1:
        raise ConfigError("n_votes must be >= 1")
    for key in ("left", "right", "child", "of"):
        if key in g:
            _validate_geometry(g[key], base_dir, depth + 1)


def _resolve(path, base_dir):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


class GeometryBuilder:
    """Builds predicates, sharing one spatial index per distinct cloud spec."""

    def __init__(self, base_dir: str = "."):
        self.base_dir = base_dir
        self._indices: dict = {}

    def index(self, spec: dict) -> SpatialIndex:
        key = json.dumps({k: v for k, v in spec.items() if k != "n_votes"}, sort_keys=True)
        if key not in self._indices:
            self._indices[key] = SpatialIndex(self.cloud(spec))
        return self._indices[key]

    def cloud(self, spec: dict) -> OrientedPointCloud:
        kind = spec["type"]
        if kind == "cloud":
            return load_cloud(_resolve(spec["path"], self.base_dir), spec.get("dimension", 2))
        if kind == "circle_cloud":
            return generate_circle_cloud(
                spec["center"], spec["radius"], spec["n"], spec.get("orientation", "hole")
            )
        if kind == "ellipse_cloud":
            return generate_ellipse_cloud(
                spec["a"], spec["b"], spec["n"], spec.get("orientation", "hole"), spec.get("center", (0.0, 0.0))
            )
        raise ConfigError(f"{kind!r} is not a cloud")

    def predicate(self, g: dict) -> Predicate:
        kind = g["type"]
        if kind in CLOUD_TYPES:
            return CloudLeaf(self.index(g), g.get("n_votes", 1))
        if kind == "circle":
            return Ball(g["center"], g["radius"])
        if kind == "ellipse":
            return Ellipse(g["a"], g["b"], g.get("center", (0.0, 0.0)))
        if kind == "box":
            return Box(g["lo"], g["hi"])
        if kind == "halfspace":
            return HalfSpace(g["point"], g["normal"])
        if kind == "cloud_bbox":
            return Box.around(self.index(g["of"]).cloud, g.get("pad", 0.0))
        if kind == "complement":
            return Complement(self.predicate(g["child"]))
        return CsgNode(kind, self.predicate(g["left"]), self.predicate(g["right"]))


def build_problem(cfg: RunConfig) -> ProblemDefinition:
    builder = GeometryBuilder(cfg.base_dir)
    m = cfg.mesh
    mesh = EmbeddingMesh(m.lo, m.hi, int(m.cells[0]), int(m.cells[1]), int(m.p))
    domain = builder.predicate(cfg.geometry)
    bcs = []
    for bc in cfg.bcs:
        kind = bc["type"]
        if kind == "dirichlet":
            bcs.append(DirichletFace(bc["face"], tuple(bc.get("components", (0, 1)))))
        elif kind == "traction":
            bcs.append(ConformingTraction(bc["face"], tuple(bc["traction"])))
        else:
            band = DeltaBand(builder.index(bc["boundary"]), bc["epsilon"], bc.get("n_neigh", 6))
            bcs.append(DeltaNeumann(band, bc.get("traction"), bc.get("pressure")))
    mat = cfg.material
    return ProblemDefinition(
        mesh,
        domain,
        Material(mat.E, mat.nu, mat.q, mat.plane_stress),
        bcs,
        cfg.body_force,
        IntegrationParams(**asdict(cfg.integration)),
    )
