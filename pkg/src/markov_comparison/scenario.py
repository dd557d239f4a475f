"""Scenario files: JSON schema ``v1``, parsing and the bundled demo.

Every input problem is reported as a :class:`~markov_comparison.rates.Diagnostic`
whose pointer addresses the offending part of the scenario document.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .comparison import CHECKERS, DEFAULT_STEPS, DEFAULT_TOL, SUPPORT_EPS
from .errors import ConfigurationError
from .montecarlo import DEFAULT_PATHS, DEFAULT_Z_MAX
from .rates import (AffineRates, ConstantRates, Diagnostic, JumpSchedule, PiecewiseConstantRates,
                    ProcessSpec, SampledRates, validate)
from .states import FunctionCone, StateSpace, TestFunction, upset_generators

SCHEMA_VERSION = "v1"

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_times = {"type": "array", "minItems": 2, "items": {"type": "number"}}

_rates_schema = {
    "oneOf": [
        {"type": "object", "required": ["kind", "Q", "horizon"], "additionalProperties": False,
         "properties": {"kind": {"const": "constant"}, "Q": _matrix, "horizon": {"type": "number"}}},
        {"type": "object", "required": ["kind", "times", "pieces"], "additionalProperties": False,
         "properties": {"kind": {"const": "piecewise"}, "times": _times,
                        "pieces": {"type": "array", "minItems": 1, "items": _matrix}}},
        {"type": "object", "required": ["kind", "Qa", "Qb", "horizon"], "additionalProperties": False,
         "properties": {"kind": {"const": "affine"}, "Qa": _matrix, "Qb": _matrix,
                        "horizon": {"type": "number"}}},
        {"type": "object", "required": ["kind", "times", "samples"], "additionalProperties": False,
         "properties": {"kind": {"const": "sampled"}, "times": _times,
                        "samples": {"type": "array", "minItems": 2, "items": _matrix}}},
    ]
}

_spec_schema = {
    "type": "object",
    "required": ["rates", "initial"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "rates": _rates_schema,
        "initial": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "jumps": {
            "type": "object", "required": ["times", "kernels"], "additionalProperties": False,
            "properties": {"times": {"type": "array", "items": {"type": "number"}},
                           "kernels": {"type": "array", "items": _matrix}},
        },
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "markov-comparison scenario",
    "type": "object",
    "required": ["version", "specX", "specY", "t", "theorems"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "states": {
            "type": "object", "required": ["n"], "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "labels": {"type": "array", "items": {"type": "string"}},
                "order": {"oneOf": [
                    {"const": "total"},
                    {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                "items": {"type": "integer", "minimum": 0}}},
                ]},
            },
        },
        "specX": _spec_schema,
        "specY": _spec_schema,
        "functions": {
            "type": "array",
            "items": {"type": "object", "required": ["values"], "additionalProperties": False,
                      "properties": {"name": {"type": "string"},
                                     "values": {"type": "array", "minItems": 1, "items": {"type": "number"}}}},
        },
        "cone": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {"kind": {"enum": ["increasing", "all-bounded", "custom"]},
                           "generators": {"type": "array", "items": {
                               "type": "array", "minItems": 1, "items": {"type": "number"}}}},
        },
        "t": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "theorems": {"type": "array", "minItems": 1, "uniqueItems": True,
                     "items": {"enum": sorted(CHECKERS)}},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"steps": {"type": "integer", "minimum": 1}}},
        "montecarlo": {
            "type": "object", "additionalProperties": False,
            "properties": {"enabled": {"type": "boolean"},
                           "paths": {"type": "integer", "minimum": 2},
                           "z_max": {"type": "number", "exclusiveMinimum": 0},
                           "checkpoints": {"type": "integer", "minimum": 2},
                           "workers": {"type": "integer", "minimum": 1}},
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"condition": {"type": "number", "minimum": 0},
                           "support_eps": {"type": "number", "minimum": 0}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
    },
}


class ScenarioError(ConfigurationError):
    """Invalid scenario; ``diagnostics`` carries pointer-addressed messages."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(f"{d.pointer or '/'}: {d.message}" for d in diagnostics))


@dataclass(frozen=True)
class MonteCarloSettings:
    enabled: bool = False
    paths: int = DEFAULT_PATHS
    z_max: float = DEFAULT_Z_MAX
    checkpoints: int = 5
    workers: int = 1


@dataclass(eq=False)
class Scenario:
    space: StateSpace
    spec_x: ProcessSpec
    spec_y: ProcessSpec
    functions: list[TestFunction]
    cone: FunctionCone | None
    times: list[float]
    theorems: list[str]
    steps: int = DEFAULT_STEPS
    montecarlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    tol: float = DEFAULT_TOL
    support_eps: float = SUPPORT_EPS
    seed: int = 0
    output: str | None = None
    name: str = "scenario"


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _rate_model(doc: dict):
    kind = doc["kind"]
    if kind == "constant":
        return ConstantRates(np.array(doc["Q"], dtype=float), float(doc["horizon"]))
    if kind == "piecewise":
        return PiecewiseConstantRates(np.array(doc["times"], dtype=float), np.array(doc["pieces"], dtype=float))
    if kind == "affine":
        return AffineRates(np.array(doc["Qa"], dtype=float), np.array(doc["Qb"], dtype=float),
                           float(doc["horizon"]))
    return SampledRates(np.array(doc["times"], dtype=float), np.array(doc["samples"], dtype=float))


def _process_spec(doc: dict, key: str) -> tuple[ProcessSpec | None, list[Diagnostic]]:
    try:
        rates = _rate_model(doc["rates"])
    except (ConfigurationError, ValueError) as exc:
        return None, [Diagnostic("error", str(exc), f"/{key}/rates")]
    jumps = None
    if "jumps" in doc:
        try:
            jumps = JumpSchedule(np.array(doc["jumps"]["times"], dtype=float),
                                 np.array(doc["jumps"]["kernels"], dtype=float))
        except (ConfigurationError, ValueError) as exc:
            return None, [Diagnostic("error", str(exc), f"/{key}/jumps")]
    spec = ProcessSpec(rates, np.array(doc["initial"], dtype=float), jumps, name=doc.get("name", key))
    diags = [Diagnostic(d.severity, d.message, f"/{key}{d.pointer}") for d in validate(spec)]
    return spec, diags


def schema_errors(doc) -> list[Diagnostic]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    return [Diagnostic("error", e.message, _pointer(e.absolute_path)) for e in errors]


def parse_scenario(doc) -> Scenario:
    """Schema check, then semantic checks; raises :class:`ScenarioError`."""
    diags = schema_errors(doc)
    if diags:
        raise ScenarioError(diags)
    spec_x, dx = _process_spec(doc["specX"], "specX")
    spec_y, dy = _process_spec(doc["specY"], "specY")
    diags = [d for d in dx + dy if d.severity == "error"]
    if diags:
        raise ScenarioError(diags)
    n = spec_x.n
    if spec_y.n != n:
        raise ScenarioError([Diagnostic("error", f"specY has {spec_y.n} states, specX has {n}", "/specY/rates")])
    if abs(spec_x.horizon - spec_y.horizon) > 1e-12 * max(1.0, spec_x.horizon):
        raise ScenarioError([Diagnostic("error", "specX and specY have different horizons", "/specY/rates")])
    states = doc.get("states", {"n": n})
    if states["n"] != n:
        raise ScenarioError([Diagnostic("error", f"states.n = {states['n']} but the rates have {n} states",
                                        "/states/n")])
    order = states.get("order", "total")
    try:
        if order == "total":
            space = StateSpace.total(n, labels=states.get("labels"))
        else:
            space = StateSpace(n, labels=states.get("labels"), order=frozenset(map(tuple, order)))
    except ConfigurationError as exc:
        raise ScenarioError([Diagnostic("error", str(exc), "/states")]) from None

    functions = []
    for k, fdoc in enumerate(doc.get("functions", [])):
        if len(fdoc["values"]) != n:
            raise ScenarioError([Diagnostic("error", f"expected {n} values", f"/functions/{k}/values")])
        functions.append(TestFunction(np.array(fdoc["values"], dtype=float), name=fdoc.get("name", f"f{k}")))
    cone = None
    if "cone" in doc:
        cone = _cone(doc["cone"], space)
    if not functions and cone is None:
        raise ScenarioError([Diagnostic("error", "scenario needs functions or a cone", "/functions")])

    times = [float(t) for t in doc["t"]]
    for k, t in enumerate(times):
        if t > spec_x.horizon + 1e-12:
            raise ScenarioError([Diagnostic("error", f"t = {t} beyond the horizon {spec_x.horizon}", f"/t/{k}")])
    if "theorem10" in doc["theorems"]:
        if spec_x.epochs.shape != spec_y.epochs.shape or np.any(np.abs(spec_x.epochs - spec_y.epochs) > 1e-12):
            raise ScenarioError([Diagnostic("error", "theorem10 needs the same jump epochs for X and Y",
                                            "/specY/jumps")])
    mc = doc.get("montecarlo", {})
    tols = doc.get("tolerances", {})
    return Scenario(
        space=space, spec_x=spec_x, spec_y=spec_y, functions=functions, cone=cone, times=times,
        theorems=list(doc["theorems"]), steps=doc.get("grid", {}).get("steps", DEFAULT_STEPS),
        montecarlo=MonteCarloSettings(**mc), tol=tols.get("condition", DEFAULT_TOL),
        support_eps=tols.get("support_eps", SUPPORT_EPS), seed=doc.get("seed", 0),
        output=doc.get("output"), name=doc.get("name", "scenario"),
    )


def _cone(doc: dict, space: StateSpace) -> FunctionCone:
    kind = doc["kind"]
    n = space.n
    if kind == "increasing":
        try:
            return upset_generators(space)
        except ConfigurationError as exc:
            raise ScenarioError([Diagnostic("error", str(exc), "/cone")]) from None
    if kind == "all-bounded":
        gens = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            gens += [TestFunction(e, name=f"e{i}"), TestFunction(-e, name=f"-e{i}")]
        return FunctionCone("all-bounded", tuple(gens), space)
    raw = doc.get("generators")
    if not raw:
        raise ScenarioError([Diagnostic("error", "custom cone needs generators", "/cone/generators")])
    for k, g in enumerate(raw):
        if len(g) != n:
            raise ScenarioError([Diagnostic("error", f"expected {n} values", f"/cone/generators/{k}")])
    return FunctionCone("custom", tuple(TestFunction(np.array(g, float), name=f"g{k}") for k, g in enumerate(raw)),
                        space)


_DEMO = {
    "version": SCHEMA_VERSION,
    "name": "two-state demo",
    "states": {"n": 2, "labels": ["down", "up"], "order": "total"},
    "specX": {"name": "X", "rates": {"kind": "constant", "Q": [[-2.0, 2.0], [1.0, -1.0]], "horizon": 1.0},
              "initial": [1.0, 0.0]},
    "specY": {"name": "Y", "rates": {"kind": "constant", "Q": [[-1.0, 1.0], [1.0, -1.0]], "horizon": 1.0},
              "initial": [1.0, 0.0]},
    "functions": [{"name": "indicator_up", "values": [0.0, 1.0]}],
    "cone": {"kind": "increasing"},
    "t": [1.0],
    "theorems": ["theorem4", "theorem7", "theorem8", "theorem9"],
    "grid": {"steps": 256},
    "montecarlo": {"enabled": True, "paths": 100000, "z_max": 4.0, "checkpoints": 5},
    "seed": 20240601,
}


def demo_scenario() -> dict:
    """Two-state pair with ``X`` leaving state 0 twice as fast as ``Y``."""
    return copy.deepcopy(_DEMO)
