"""Run configuration: a single versioned JSON document.

Parsing happens in two stages: structural validation against the shipped
JSON schema, then semantic validation (guard margins on the declared
lattice, schedule sufficiency condition, catalog membership) before any
compute.  ``parse_config(emit_config(cfg)) == cfg`` holds because parsing
normalizes the document (defaults filled in) and equality compares the
normalized documents.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .constraints import ConstraintSet, DiffOperator
from .errors import ConfigError
from .free import QuadratureConfig
from .interaction import (ConstraintPenaltyLagrangian, CutoffSchedule, GrowthLaw,
                          Lagrangian, PolynomialLagrangian, ZeroLagrangian,
                          bound_lagrangian, check_schedule)
from .lattice import LatticeSpec, build_lattice
from .testfunctions import (BoundedRationalOuter, ClippedPolynomialOuter, CosineOuter,
                            CylindricalFunction, TestFunction)

__all__ = ["RunConfig", "parse_config", "emit_config", "load_config", "save_config"]

CONFIG_VERSION = 1

_QUAD_DEFAULTS = {"scheme": "lattice-momentum-sum", "abs_tol": 1e-10,
                  "rel_tol": 1e-8, "p_max": None}
_LAW_DEFAULTS = {"exponent": 0.0, "log_power": 0.0, "geo_base": 1.0}


def _schema():
    with resources.files("rpgauss").joinpath("schemas/config.schema.json").open() as fh:
        return json.load(fh)


@dataclass(eq=False)
class RunConfig:
    """Parsed configuration plus the constructed domain objects."""

    raw: dict
    spec: LatticeSpec
    seed: int
    quad: QuadratureConfig
    test_functions: dict
    observables: dict
    lagrangian: Lagrangian | None
    constraints: ConstraintSet | None
    schedule: CutoffSchedule | None
    mc_samples: int | None
    commands: dict = field(default_factory=dict)

    def emit(self) -> dict:
        return copy.deepcopy(self.raw)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.raw == other.raw

    def observable(self, name: str) -> CylindricalFunction:
        try:
            return self.observables[name]
        except KeyError:
            raise ConfigError(f"observables: unknown observable {name!r}") from None

    def test_function(self, name: str) -> TestFunction:
        try:
            return self.test_functions[name]
        except KeyError:
            raise ConfigError(f"test_functions: unknown test function {name!r}") from None

    def command_params(self, command: str) -> dict:
        return self.commands.get(command, {})


def _build_test_function(name, d, spec) -> TestFunction:
    d = dict(d)
    d.setdefault("amplitude", 1.0)
    d.setdefault("component", [1.0] + [0.0] * (spec.K - 1))
    try:
        tf = TestFunction(
            family=d["family"],
            center=tuple(float(c) for c in d["center"]),
            width=float(d["width"]),
            amplitude=float(d["amplitude"]),
            component=tuple(float(e) for e in d["component"]),
            support_radius=float(d["support_radius"]) if "support_radius" in d else None,
        )
        tf.validate_on(spec)
    except Exception as exc:
        raise ConfigError(f"test_functions.{name}: {exc}") from exc
    return tf, d


def _build_outer(name, d):
    d = dict(d)
    kind = d["kind"]
    try:
        if kind == "cosine":
            d.setdefault("amplitude", 1.0)
            d.setdefault("weights", [1.0])
            d.setdefault("bias", 0.0)
            return CosineOuter(amplitude=float(d["amplitude"]),
                               weights=tuple(float(w) for w in d["weights"]),
                               bias=float(d["bias"])), d
        if kind == "bounded-rational":
            d.setdefault("amplitude", 1.0)
            d.setdefault("weights", [1.0])
            return BoundedRationalOuter(amplitude=float(d["amplitude"]),
                                        weights=tuple(float(w) for w in d["weights"])), d
        if kind == "clipped-polynomial":
            d.setdefault("weights", [1.0])
            return ClippedPolynomialOuter(coeffs=tuple(float(c) for c in d["coeffs"]),
                                          bound=float(d["bound"]),
                                          weights=tuple(float(w) for w in d["weights"])), d
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"observables.{name}.outer: {exc}") from exc
    raise ConfigError(f"observables.{name}.outer: unknown kind {kind!r}")


def _build_constraints(d) -> ConstraintSet:
    d = dict(d)
    d.setdefault("tol", 1e-10)
    ops = []
    for i, od in enumerate(d["operators"]):
        try:
            terms = tuple(
                (tuple(int(a) for a in t["alpha"]),
                 tuple(tuple(float(x) for x in row) for row in t["matrix"]))
                for t in od["terms"]
            )
            ops.append(DiffOperator(name=od["name"], terms=terms))
        except Exception as exc:
            raise ConfigError(f"constraints.operators[{i}]: {exc}") from exc
    try:
        return ConstraintSet(ops=tuple(ops), tol=float(d["tol"])), d
    except Exception as exc:
        raise ConfigError(f"constraints: {exc}") from exc


def _build_lagrangian(d, constraints) -> Lagrangian:
    d = dict(d)
    kind = d["kind"]
    try:
        if kind == "zero":
            base = ZeroLagrangian()
        elif kind == "polynomial":
            d.setdefault("clip", None)
            d.setdefault("lower_bound", None)
            base = PolynomialLagrangian(
                [(int(j), int(c), int(p), float(a)) for j, c, p, a in d["terms"]],
                clip=d["clip"], lower_bound=d["lower_bound"],
            )
        elif kind == "constraint-penalty":
            if constraints is None:
                raise ConfigError("constraint-penalty Lagrangian needs a constraints block")
            d.setdefault("bounded", False)
            base = ConstraintPenaltyLagrangian(constraints, strength=float(d["strength"]),
                                               bounded=bool(d["bounded"]))
        else:
            raise ConfigError(f"unknown Lagrangian kind {kind!r}")
        d.setdefault("eps", 0.0)
        if d["eps"] > 0:
            return bound_lagrangian(base, float(d["eps"])), d
        return base, d
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"lagrangian: {exc}") from exc


def _build_law(d) -> GrowthLaw:
    d = {**_LAW_DEFAULTS, **d}
    return GrowthLaw(base=float(d["base"]), exponent=float(d["exponent"]),
                     log_power=float(d["log_power"]), geo_base=float(d["geo_base"])), d


def _build_schedule(d, D) -> CutoffSchedule:
    d = dict(d)
    laws = {}
    for key in ("r", "lam", "M", "a"):
        if key in d:
            laws[key], d[key] = _build_law(d[key])
    try:
        sched = CutoffSchedule(D=D, r=laws["r"], lam=laws["lam"], M=laws["M"],
                               a=laws.get("a"))
    except Exception as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    chk = check_schedule(sched)
    if not chk.passed:
        raise ConfigError(f"schedule: sufficiency condition fails: {chk.reason}")
    return sched, d


def parse_config(doc: dict) -> RunConfig:
    """Validate and construct a :class:`RunConfig` from a JSON document."""
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from exc

    raw = copy.deepcopy(doc)
    lat = raw["lattice"]
    try:
        spec = build_lattice(D=lat["D"], N=lat["N"], L=float(lat["L"]), K=lat["K"])
    except Exception as exc:
        raise ConfigError(f"lattice: {exc}") from exc
    raw["lattice"] = {"D": spec.D, "N": spec.N, "L": spec.L, "K": spec.K}

    raw["quadrature"] = {**_QUAD_DEFAULTS, **raw.get("quadrature", {})}
    qd = raw["quadrature"]
    try:
        quad = QuadratureConfig(
            scheme=qd["scheme"],
            lattice=spec if qd["scheme"] == "lattice-momentum-sum" else None,
            abs_tol=float(qd["abs_tol"]), rel_tol=float(qd["rel_tol"]),
            p_max=None if qd["p_max"] is None else float(qd["p_max"]),
        )
    except Exception as exc:
        raise ConfigError(f"quadrature: {exc}") from exc

    tfs = {}
    raw.setdefault("test_functions", {})
    for name, d in raw["test_functions"].items():
        tfs[name], raw["test_functions"][name] = _build_test_function(name, d, spec)

    obs = {}
    raw.setdefault("observables", {})
    for name, d in raw["observables"].items():
        d = dict(d)
        outer, d["outer"] = _build_outer(name, d["outer"])
        inner = tuple(tfs.get(n) for n in d["inner"])
        if any(g is None for g in inner):
            missing = [n for n in d["inner"] if n not in tfs]
            raise ConfigError(f"observables.{name}: unknown test functions {missing}")
        try:
            obs[name] = CylindricalFunction(outer=outer, inner=inner)
        except Exception as exc:
            raise ConfigError(f"observables.{name}: {exc}") from exc
        raw["observables"][name] = d

    constraints = None
    if "constraints" in raw:
        constraints, raw["constraints"] = _build_constraints(raw["constraints"])
        if constraints.ops and constraints.K != spec.K:
            raise ConfigError(
                f"constraints: operators act on K={constraints.K}, lattice has K={spec.K}"
            )

    lagrangian = None
    if "lagrangian" in raw:
        lagrangian, raw["lagrangian"] = _build_lagrangian(raw["lagrangian"], constraints)

    schedule = None
    if "schedule" in raw:
        schedule, raw["schedule"] = _build_schedule(raw["schedule"], spec.D)

    mc_samples = None
    if "mc" in raw:
        mc_samples = int(raw["mc"]["samples"])

    return RunConfig(
        raw=raw, spec=spec, seed=int(raw["seed"]), quad=quad,
        test_functions=tfs, observables=obs, lagrangian=lagrangian,
        constraints=constraints, schedule=schedule, mc_samples=mc_samples,
        commands=raw.get("commands", {}),
    )


def emit_config(cfg: RunConfig) -> dict:
    return cfg.emit()


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(doc)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.emit(), fh, indent=2, sort_keys=True)
        fh.write("\n")
