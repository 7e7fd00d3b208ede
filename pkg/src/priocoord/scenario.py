"""Scenario configuration: JSON documents, validation and shipped presets."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .dynamics import Kinodynamics
from .geometry import CROSSING, Footprint, PathSpec, pair_section

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_PATH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "origin", "direction", "length"],
    "properties": {
        "id": {"type": "string"},
        "origin": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "direction": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "length": {"type": "number", "minimum": 0},
        "x_entry": {"type": "number"},
        "x_exit": {"type": "number"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "preset": {"type": "string"},
        "paths": {"type": "array", "items": _PATH_SCHEMA, "minItems": 1},
        "diameter": {"type": "number", "exclusiveMinimum": 0},
        "kinodynamics": {
            "type": "object",
            "additionalProperties": False,
            "required": ["v_max", "u_min", "u_max"],
            "properties": {
                "v_max": {"type": "number", "exclusiveMinimum": 0},
                "u_min": {"type": "number", "exclusiveMaximum": 0},
                "u_max": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "arrival_rate": {
            "oneOf": [
                {"type": "number", "minimum": 0, "maximum": 1},
                {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
            ]
        },
        "p": {"type": "number", "minimum": 0, "maximum": 1},
        "q": {"type": "number", "minimum": 0, "maximum": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "update_period": {"type": "integer", "minimum": 1},
        "n_sub": {"type": "integer", "minimum": 1},
        "entry_offset": {"type": "number", "minimum": 0},
        "exit_offset": {"type": "number", "minimum": 0},
        "drain_after": {"type": ["integer", "null"], "minimum": 0},
        "overrides": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["slots"],
                "properties": {
                    "slots": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                    "robots": {
                        "oneOf": [
                            {"enum": ["all", "first-in-area"]},
                            {"type": "array", "items": {"type": "integer"}},
                        ]
                    },
                    "control": {"enum": ["brake", "throttle"]},
                },
            },
        },
        "initial_robots": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["path", "x"],
                "properties": {"path": {"type": "string"}, "x": {"type": "number"}, "v": {"type": "number", "minimum": 0}},
            },
        },
    },
}


@dataclass(frozen=True)
class Override:
    """Control override for slots ``start <= k < end``.

    ``brake`` replaces the law output with maximum brake, a perturbation the
    controller must tolerate.  ``throttle`` forces maximum throttle regardless
    of the law and exists to inject faults.
    """

    start: int
    end: int
    robots: object = "all"
    control: str = "brake"

    def active(self, k: int) -> bool:
        return self.start <= k < self.end


@dataclass(frozen=True)
class InitialRobot:
    path: str
    x: float
    v: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    paths: tuple[PathSpec, ...]
    diameter: float
    kin: Kinodynamics
    arrival_rate: dict
    p: float = 0.05
    q: float = 0.3
    horizon: int = 2000
    seed: int = 0
    update_period: int = 20
    n_sub: int = 16
    entry_offset: float = 6.0
    exit_offset: float = 6.0
    drain_after: int | None = None
    overrides: tuple[Override, ...] = ()
    initial_robots: tuple[InitialRobot, ...] = ()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def footprint(self) -> Footprint:
        return Footprint(self.diameter)

    def to_dict(self) -> dict:
        """Fully resolved document (paths carry their entry/exit markers)."""
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "paths": [p.to_dict() for p in self.paths],
            "diameter": self.diameter,
            "kinodynamics": {"v_max": self.kin.v_max, "u_min": self.kin.u_min, "u_max": self.kin.u_max},
            "arrival_rate": dict(self.arrival_rate),
            "p": self.p,
            "q": self.q,
            "horizon": self.horizon,
            "seed": self.seed,
            "update_period": self.update_period,
            "n_sub": self.n_sub,
            "entry_offset": self.entry_offset,
            "exit_offset": self.exit_offset,
            "drain_after": self.drain_after,
            "overrides": [
                {"slots": [o.start, o.end], "robots": o.robots, "control": o.control} for o in self.overrides
            ],
            "initial_robots": [{"path": r.path, "x": r.x, "v": r.v} for r in self.initial_robots],
        }

    def hash(self) -> str:
        doc = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()

    def replace(self, **changes) -> "ScenarioConfig":
        doc = self.to_dict()
        for k, v in changes.items():
            if v is not None or k == "drain_after":
                doc[k] = v
        return from_dict(doc)


def control_area(paths: list[dict], diameter: float, entry_offset: float, exit_offset: float) -> dict:
    """Entry/exit markers: ``entry_offset`` before the first crossing conflict, ``exit_offset`` after the last."""
    provisional = [
        PathSpec(
            id=str(p["id"]),
            origin=tuple(p["origin"]),
            direction=tuple(p["direction"]),
            length=float(p["length"]),
            x_entry=0.0,
            x_exit=float(p["length"]),
        )
        for p in paths
    ]
    fp = Footprint(diameter)
    out = {}
    for pi in provisional:
        lo, hi = math.inf, -math.inf
        for pj in provisional:
            if pj.id == pi.id:
                continue
            sec = pair_section(pi, pj, fp)
            if sec.kind == CROSSING:
                lo = min(lo, sec.box[0])
                hi = max(hi, sec.box[1])
        if lo == math.inf:
            out[pi.id] = (0.0, pi.length)
        else:
            out[pi.id] = (max(0.0, lo - entry_offset), min(pi.length, hi + exit_offset))
    return out


def _normalise_direction(d) -> tuple[float, float]:
    n = math.hypot(d[0], d[1])
    if n == 0:
        raise ConfigError("zero path direction")
    return (d[0] / n, d[1] / n)


def from_dict(doc: dict) -> ScenarioConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid scenario: {exc.message} at /{'/'.join(map(str, exc.absolute_path))}") from None
    doc = copy.deepcopy(doc)
    if "preset" in doc:
        base = load_preset(doc.pop("preset")).to_dict()
        if "paths" not in doc and {"diameter", "entry_offset", "exit_offset"} & set(doc):
            for p in base["paths"]:
                p.pop("x_entry")
                p.pop("x_exit")
        base.update(doc)
        doc = base
    for key in ("paths", "diameter", "kinodynamics"):
        if key not in doc:
            raise ConfigError(f"scenario needs '{key}' (or a preset)")
    D = float(doc["diameter"])
    entry_offset = float(doc.get("entry_offset", 6.0 * D))
    exit_offset = float(doc.get("exit_offset", 6.0 * D))
    raw_paths = []
    for p in doc["paths"]:
        p = dict(p)
        p["direction"] = _normalise_direction(p["direction"])
        raw_paths.append(p)
    ids = [p["id"] for p in raw_paths]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate path ids")
    area = control_area(raw_paths, D, entry_offset, exit_offset)
    try:
        paths = tuple(
            PathSpec(
                id=p["id"],
                origin=(float(p["origin"][0]), float(p["origin"][1])),
                direction=p["direction"],
                length=float(p["length"]),
                x_entry=float(p.get("x_entry", area[p["id"]][0])),
                x_exit=float(p.get("x_exit", area[p["id"]][1])),
            )
            for p in raw_paths
        )
        kd = doc["kinodynamics"]
        kin = Kinodynamics(float(kd["v_max"]), float(kd["u_min"]), float(kd["u_max"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rate = doc.get("arrival_rate", 0.0)
    if isinstance(rate, dict):
        unknown = set(rate) - set(ids)
        if unknown:
            raise ConfigError(f"arrival rates for unknown paths {sorted(unknown)}")
        rates = {i: float(rate.get(i, 0.0)) for i in ids}
    else:
        rates = {i: float(rate) for i in ids}
    overrides = tuple(
        Override(o["slots"][0], o["slots"][1], o.get("robots", "all"), o.get("control", "brake"))
        for o in doc.get("overrides", [])
    )
    inits = tuple(InitialRobot(r["path"], float(r["x"]), float(r.get("v", 0.0))) for r in doc.get("initial_robots", []))
    for r in inits:
        if r.path not in ids:
            raise ConfigError(f"initial robot on unknown path {r.path}")
        if r.v > kin.v_max:
            raise ConfigError("initial robot faster than v_max")
    cfg = ScenarioConfig(
        name=doc.get("name", "scenario"),
        paths=paths,
        diameter=D,
        kin=kin,
        arrival_rate=rates,
        p=float(doc.get("p", 0.05)),
        q=float(doc.get("q", 0.3)),
        horizon=int(doc.get("horizon", 2000)),
        seed=int(doc.get("seed", 0)),
        update_period=int(doc.get("update_period", 20)),
        n_sub=int(doc.get("n_sub", 16)),
        entry_offset=entry_offset,
        exit_offset=exit_offset,
        drain_after=doc.get("drain_after"),
        overrides=overrides,
        initial_robots=inits,
        raw=doc,
    )
    # surfaces overlapping parallel paths as configuration errors
    from .priority import WorldModel

    try:
        WorldModel(cfg.paths, cfg.footprint)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(doc)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("priocoord.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ScenarioConfig:
    f = resources.files("priocoord.presets") / f"{name}.json"
    if not f.is_file():
        raise ConfigError(f"unknown preset '{name}' (known: {', '.join(preset_names())})")
    return from_dict(json.loads(f.read_text()))


def resolve(spec: str) -> ScenarioConfig:
    """A preset name or a path to a JSON scenario file."""
    if Path(spec).suffix == ".json" or Path(spec).exists():
        return load(spec)
    return load_preset(spec)


def cross8_paths(lane_offsets=(0.75, 2.25), approach: float = 15.25, diameter: float = 1.0) -> list[dict]:
    """Four two-lane one-way approaches crossing at a common centre.

    Lanes keep to the right of their heading, ``lane_offsets`` (in units of
    ``diameter``) from the centre line.  Each path starts ``approach`` before
    the centre and ends as far beyond it.
    """
    headings = {"E": (1.0, 0.0), "N": (0.0, 1.0), "W": (-1.0, 0.0), "S": (0.0, -1.0)}
    out = []
    for name, (dx, dy) in headings.items():
        # right-hand normal of the heading
        nx, ny = dy, -dx
        for k, off in enumerate(lane_offsets):
            o = off * diameter
            origin = (-approach * dx + o * nx, -approach * dy + o * ny)
            out.append(
                {
                    "id": f"{name}{k + 1}",
                    "origin": [round(origin[0], 12) + 0.0, round(origin[1], 12) + 0.0],
                    "direction": [dx, dy],
                    "length": 2.0 * approach,
                }
            )
    return out
