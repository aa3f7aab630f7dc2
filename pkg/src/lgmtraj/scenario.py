"""Scenario files: JSON documents validated against a versioned schema."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from jsonschema import Draft202012Validator

from .dynamic import SecurityConfig
from .poly import DynamicsLimits, WaypointConstraint
from .sim import Gate, RaceConfig, default_circuit

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario failed validation; ``errors`` holds one ``path: message`` per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}


def _obj(properties, required=()):
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "additionalProperties": False,
    }


_SECURITY = _obj(
    {
        "c_security": {"type": "number", "minimum": 1},
        "n_smooth": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "minimum": 1},
        "min_time": _NONNEG,
        "lead_ratio": _NONNEG,
    }
)
_LIMITS = _obj({"v_max": _POS, "a_max": _POS}, ["v_max", "a_max"])

_GATE = _obj(
    {
        "id": {"type": ["integer", "string"]},
        "center": _VEC3,
        "normal": _VEC3,
        "axis": _VEC3,
        "half_width": _POS,
        "amplitude": _NONNEG,
        "speed": _NONNEG,
        "phase": _NUM,
    },
    ["center", "normal", "axis"],
)
_CIRCUIT = _obj({"half_width": _POS, "amplitude": _NONNEG, "speed": _NONNEG, "altitude": _NUM})

_COMMON = {
    "schema_version": {"const": SCHEMA_VERSION},
    "kind": {"enum": ["race", "trace"]},
    "seed": {"type": "integer", "minimum": 0},
    "timing": {"enum": ["wall", "virtual"]},
    "security": _SECURITY,
    "use_lgm": {"type": "boolean"},
    "description": {"type": "string"},
}

RACE_SCHEMA = _obj(
    {
        **_COMMON,
        "speed_limits": {"type": "array", "items": _POS, "minItems": 1},
        "inflations": {"type": "array", "items": _NONNEG, "minItems": 1},
        "gates": {"type": "array", "items": _GATE, "minItems": 1},
        "circuit": _CIRCUIT,
        "laps": {"type": "integer", "minimum": 1},
        "a_max": _POS,
        "gate_update_period": _POS,
        "pass_tolerance": _NONNEG,
        "sampler_rate": _POS,
        "tracker_lag": _NONNEG,
        "accel_limit": {"anyOf": [_POS, {"type": "null"}]},
        "start": _VEC3,
        "finish_distance": _NONNEG,
        "randomize_phase": {"type": "boolean"},
    },
    ["schema_version", "kind", "speed_limits"],
)

_MODIFICATION = _obj(
    {"t": _NONNEG, "waypoint": {"type": "integer", "minimum": 0}, "position": _VEC3},
    ["t", "waypoint", "position"],
)
_VEHICLE = _obj({"tracker_lag": _NONNEG, "accel_limit": {"anyOf": [_POS, {"type": "null"}]}})

TRACE_SCHEMA = _obj(
    {
        **_COMMON,
        "waypoints": {"type": "array", "items": _VEC3, "minItems": 2},
        "limits": _LIMITS,
        "modifications": {"type": "array", "items": _MODIFICATION},
        "rate": _POS,
        "inflation": _NONNEG,
        "vehicle": _VEHICLE,
    },
    ["schema_version", "kind", "waypoints", "limits"],
)

_HEAD = {
    "type": "object",
    "properties": {"schema_version": {"const": SCHEMA_VERSION}, "kind": {"enum": ["race", "trace"]}},
    "required": ["schema_version", "kind"],
}
SCHEMAS = {"race": RACE_SCHEMA, "trace": TRACE_SCHEMA}


def _path(err):
    out = "$"
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _check(doc, schema):
    errors = sorted(Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ScenarioError(f"{_path(e)}: {e.message}" for e in errors)


def validate(doc, kind=None):
    """Validate a parsed scenario and return it. Raises :class:`ScenarioError`."""
    _check(doc, _HEAD)
    if kind is not None and doc["kind"] != kind:
        raise ScenarioError([f"$.kind: expected {kind!r}, got {doc['kind']!r}"])
    _check(doc, SCHEMAS[doc["kind"]])
    if doc["kind"] == "race" and "gates" in doc and "circuit" in doc:
        raise ScenarioError(["$: 'gates' and 'circuit' are mutually exclusive"])
    if doc["kind"] == "trace":
        n = len(doc["waypoints"])
        for i, m in enumerate(doc.get("modifications", ())):
            if m["waypoint"] >= n:
                raise ScenarioError([f"$.modifications[{i}].waypoint: {m['waypoint']} is out of range for {n} waypoints"])
    return doc


def load(path, kind=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError([f"$: cannot read {path}: {exc.strerror}"]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"$: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return validate(doc, kind)


def config_hash(doc):
    """Short stable digest of a scenario, independent of key order and whitespace."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def security_config(doc):
    return SecurityConfig(**doc.get("security", {}))


def gates_from(doc):
    if "gates" in doc:
        return tuple(
            Gate(g.get("id", i), **{k: v for k, v in g.items() if k != "id"})
            for i, g in enumerate(doc["gates"])
        )
    return default_circuit(**doc.get("circuit", {}))


_RACE_FIELDS = (
    "laps", "a_max", "gate_update_period", "pass_tolerance", "sampler_rate",
    "tracker_lag", "accel_limit", "finish_distance", "randomize_phase", "use_lgm",
)


def race_configs(doc, timing=None):
    """One :class:`RaceConfig` per (speed limit, inflation) pair, speed-major."""
    base = {k: doc[k] for k in _RACE_FIELDS if k in doc}
    if "start" in doc:
        base["start"] = tuple(doc["start"])
    gates = gates_from(doc)
    security = security_config(doc)
    mode = timing or doc.get("timing", "virtual")
    return [
        RaceConfig(
            gates=gates, speed_limit=float(v), inflation=float(inf), security=security, timing=mode, **base
        )
        for v in doc["speed_limits"]
        for inf in doc.get("inflations", [0.0])
    ]


@dataclass(frozen=True)
class Modification:
    t: float
    waypoint: int
    position: tuple


@dataclass(frozen=True)
class TraceScenario:
    waypoints: list
    limits: DynamicsLimits
    modifications: list = field(default_factory=list)
    rate: float = 1000.0
    security: SecurityConfig = field(default_factory=SecurityConfig)
    inflation: float = 0.0
    use_lgm: bool = True
    timing: str = "virtual"
    vehicle: dict | None = None


def trace_scenario(doc, timing=None):
    mods = sorted(
        (Modification(float(m["t"]), m["waypoint"], tuple(m["position"])) for m in doc.get("modifications", ())),
        key=lambda m: m.t,
    )
    return TraceScenario(
        waypoints=[WaypointConstraint(p) for p in doc["waypoints"]],
        limits=DynamicsLimits(doc["limits"]["v_max"], doc["limits"]["a_max"]),
        modifications=mods,
        rate=float(doc.get("rate", 1000.0)),
        security=security_config(doc),
        inflation=float(doc.get("inflation", 0.0)),
        use_lgm=doc.get("use_lgm", True),
        timing=timing or doc.get("timing", "virtual"),
        vehicle=doc.get("vehicle"),
    )
