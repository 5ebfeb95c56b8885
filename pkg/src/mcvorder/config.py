"""Experiment configuration documents (TOML).

Parsing is total: a document either yields an :class:`ExperimentConfig` or
raises :class:`ConfigError` naming the offending line or field. Key names
are listed in the README and are part of the reproducibility contract.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .coefficients import (ASSUMPTION_II, EXAMPLE1_INITIAL, EXAMPLE2_INITIAL, RELATIONS,
                           CoefficientSet, builtin_model, expression_model)
from .expr import ExpressionError
from .measures import DEFAULT_STRIKE_COUNT, DEFAULT_Z
from .paths import KINDS, FunctionalSpec
from .scheme import REGULAR, TRUNCATED, SchemeConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


SECTIONS = ("scheme", "models", "functionals", "order_check", "bound_check", "order",
            "convergence", "outputs")
_SCHEME_KEYS = {"horizon", "steps", "particles", "p", "seed", "truncation", "allow_large_h"}
_MODEL_KEYS = {"builtin", "drift_rate", "vol", "drift", "diffusion", "lip_x_drift", "lip_x_diffusion",
               "lip_measure", "holder_t", "state_domain", "initial", "initial_std"}
_EXPRESSION_KEYS = {"drift", "diffusion", "lip_x_drift", "lip_x_diffusion", "lip_measure",
                    "holder_t", "state_domain"}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    model: CoefficientSet
    initial: float = 1.0
    initial_std: float = 0.0

    def initial_samples(self, n: int) -> np.ndarray:
        """Dirac at ``initial``, or a deterministic Gaussian quantile grid when ``initial_std > 0``."""
        if self.initial_std == 0:
            return np.full(n, self.initial)
        q = (np.arange(n) + 0.5) / n
        return self.initial + self.initial_std * special.ndtri(q)


@dataclass(frozen=True)
class OrderCheckSpec:
    strikes: int | tuple[float, ...] = DEFAULT_STRIKE_COUNT
    z: float = DEFAULT_Z


@dataclass(frozen=True)
class BoundCheckSpec:
    lower: str
    mid: str
    upper: str
    slack_z: float = 3.0


@dataclass(frozen=True)
class OrderSpec:
    lower: str
    upper: str
    relation: str = ASSUMPTION_II


@dataclass(frozen=True)
class ConvergenceSpec:
    model: str
    ladder: tuple[int, ...] = (25, 50, 100, 200)
    r: float = 1.0
    truncation: str = REGULAR
    coincidence_trials: int = 100_000


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    ensemble_csv: bool = True
    marginals_csv: bool = True
    svg: bool = True


@dataclass
class ExperimentConfig:
    scheme: SchemeConfig
    models: dict[str, ModelSpec]
    functionals: list[FunctionalSpec]
    order_check: OrderCheckSpec
    outputs: OutputSpec
    bound_check: BoundCheckSpec | None = None
    order: OrderSpec | None = None
    convergence: ConvergenceSpec | None = None
    raw: dict = field(default_factory=dict)

    def model(self, name: str) -> ModelSpec:
        if name not in self.models:
            raise ConfigError(f"unknown model {name!r}; defined: {sorted(self.models)}")
        return self.models[name]


def _table(doc: dict, key: str, where: str) -> dict:
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a table")
    return value


def _no_extra(table: dict, allowed: set, where: str) -> None:
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}; allowed: {sorted(allowed)}")


def _number(table: dict, key: str, where: str, default=None, *, integer: bool = False):
    if key not in table:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
    return int(value) if integer else float(value)


def _string(table: dict, key: str, where: str, default=None, choices=None) -> str:
    if key not in table:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    value = table[key]
    if not isinstance(value, str):
        raise ConfigError(f"{where}.{key}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{where}.{key}: must be one of {list(choices)}, got {value!r}")
    return value


def _bool(table: dict, key: str, where: str, default: bool) -> bool:
    value = table.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{where}.{key}: expected true or false, got {value!r}")
    return value


def _parse_scheme(doc: dict) -> SchemeConfig:
    t = _table(doc, "scheme", "scheme")
    _no_extra(t, _SCHEME_KEYS, "scheme")
    try:
        return SchemeConfig(
            horizon=_number(t, "horizon", "scheme", 1.0),
            steps=_number(t, "steps", "scheme", 100, integer=True),
            particles=_number(t, "particles", "scheme", 100_000, integer=True),
            p_exponent=_number(t, "p", "scheme", 2.0),
            seed=_number(t, "seed", "scheme", 0, integer=True),
            truncation=_string(t, "truncation", "scheme", TRUNCATED, (TRUNCATED, REGULAR)),
            allow_large_h=_bool(t, "allow_large_h", "scheme", False),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"scheme: {exc}") from None


def _parse_model(name: str, t: dict) -> ModelSpec:
    where = f"models.{name}"
    if not isinstance(t, dict):
        raise ConfigError(f"{where}: expected a table")
    _no_extra(t, _MODEL_KEYS, where)
    try:
        if "builtin" in t:
            clash = set(t) & _EXPRESSION_KEYS
            if clash:
                raise ConfigError(f"{where}: builtin models cannot also set {sorted(clash)}")
            builtin = _string(t, "builtin", where)
            params = {k: _number(t, k, where) for k in ("drift_rate", "vol") if k in t}
            model = builtin_model(builtin, **params)
            model = replace(model, label=name)
            default_initial = EXAMPLE2_INITIAL if builtin.startswith("example2") else EXAMPLE1_INITIAL
        else:
            if "drift_rate" in t or "vol" in t:
                raise ConfigError(f"{where}: drift_rate/vol apply to builtin gbm only")
            domain = t.get("state_domain", [-math.inf, math.inf])
            if not (isinstance(domain, list) and len(domain) == 2):
                raise ConfigError(f"{where}.state_domain: expected [lo, hi]")
            model = expression_model(
                _string(t, "drift", where), _string(t, "diffusion", where),
                lip_x_drift=_number(t, "lip_x_drift", where),
                lip_x_diffusion=_number(t, "lip_x_diffusion", where),
                lip_measure=_number(t, "lip_measure", where, 0.0),
                holder_t=_number(t, "holder_t", where, 1.0),
                label=name,
                state_domain=domain,
            )
            default_initial = 1.0
        initial = _number(t, "initial", where, default_initial)
        initial_std = _number(t, "initial_std", where, 0.0)
    except ConfigError:
        raise
    except (ValueError, KeyError, ExpressionError) as exc:
        raise ConfigError(f"{where}: {exc.args[0] if exc.args else exc}") from None
    if not math.isfinite(initial) or not (math.isfinite(initial_std) and initial_std >= 0):
        raise ConfigError(f"{where}: initial must be finite and initial_std non-negative")
    return ModelSpec(name, model, initial, initial_std)


def _parse_functionals(doc: dict) -> list[FunctionalSpec]:
    items = doc.get("functionals", [{"kind": "terminal_call_square", "name": "call_square"}])
    if not isinstance(items, list):
        raise ConfigError("functionals: expected an array of tables ([[functionals]])")
    out, names = [], set()
    for i, item in enumerate(items):
        where = f"functionals[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{where}: expected a table")
        _no_extra(item, {"kind", "name", "expression", "monotone_convex_declared"}, where)
        kind = _string(item, "kind", where, choices=KINDS)
        name = _string(item, "name", where, kind)
        if name in names:
            raise ConfigError(f"{where}.name: duplicate functional name {name!r}")
        names.add(name)
        try:
            out.append(FunctionalSpec(kind, item.get("expression"),
                                      _bool(item, "monotone_convex_declared", where, True), name))
        except (ValueError, ExpressionError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return out


def _parse_order_check(doc: dict) -> OrderCheckSpec:
    t = _table(doc, "order_check", "order_check")
    _no_extra(t, {"strikes", "z"}, "order_check")
    strikes = t.get("strikes", DEFAULT_STRIKE_COUNT)
    if isinstance(strikes, list):
        if not strikes or not all(isinstance(k, (int, float)) and not isinstance(k, bool) for k in strikes):
            raise ConfigError("order_check.strikes: expected a count or a nonempty list of numbers")
        if any(b <= a for a, b in zip(strikes, strikes[1:])):
            raise ConfigError("order_check.strikes: list must be strictly ascending")
        strikes = tuple(float(k) for k in strikes)
    else:
        strikes = _number(t, "strikes", "order_check", DEFAULT_STRIKE_COUNT, integer=True)
        if strikes < 2:
            raise ConfigError("order_check.strikes: need at least 2 strikes")
    z = _number(t, "z", "order_check", DEFAULT_Z)
    if z < 0:
        raise ConfigError("order_check.z: must be non-negative")
    return OrderCheckSpec(strikes, z)


def _parse_outputs(doc: dict) -> OutputSpec:
    t = _table(doc, "outputs", "outputs")
    _no_extra(t, {"directory", "ensemble_csv", "marginals_csv", "svg"}, "outputs")
    return OutputSpec(
        directory=_string(t, "directory", "outputs", "out"),
        ensemble_csv=_bool(t, "ensemble_csv", "outputs", True),
        marginals_csv=_bool(t, "marginals_csv", "outputs", True),
        svg=_bool(t, "svg", "outputs", True),
    )


def _model_ref(t: dict, key: str, where: str, models: dict) -> str:
    name = _string(t, key, where)
    if name not in models:
        raise ConfigError(f"{where}.{key}: unknown model {name!r}; defined: {sorted(models)}")
    return name


def parse_config(text: str, *, seed: int | None = None, allow_large_h: bool | None = None,
                 out: str | None = None) -> ExperimentConfig:
    """Parse a TOML document; command-line overrides are applied on top."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; allowed: {list(SECTIONS)}")
    scheme_table = dict(_table(doc, "scheme", "scheme"))
    if seed is not None:
        scheme_table["seed"] = seed
    if allow_large_h is not None:
        scheme_table["allow_large_h"] = allow_large_h
    doc["scheme"] = scheme_table
    if out is not None:
        doc["outputs"] = {**_table(doc, "outputs", "outputs"), "directory": out}
    scheme = _parse_scheme(doc)
    models = {name: _parse_model(name, t) for name, t in _table(doc, "models", "models").items()}

    cfg = ExperimentConfig(scheme, models, _parse_functionals(doc), _parse_order_check(doc),
                           _parse_outputs(doc), raw=doc)
    if "bound_check" in doc:
        t = _table(doc, "bound_check", "bound_check")
        _no_extra(t, {"lower", "mid", "upper", "slack_z"}, "bound_check")
        cfg.bound_check = BoundCheckSpec(*(_model_ref(t, k, "bound_check", models)
                                           for k in ("lower", "mid", "upper")),
                                         _number(t, "slack_z", "bound_check", 3.0))
    if "order" in doc:
        t = _table(doc, "order", "order")
        _no_extra(t, {"lower", "upper", "relation"}, "order")
        cfg.order = OrderSpec(_model_ref(t, "lower", "order", models), _model_ref(t, "upper", "order", models),
                              _string(t, "relation", "order", ASSUMPTION_II, RELATIONS))
    if "convergence" in doc:
        t = _table(doc, "convergence", "convergence")
        _no_extra(t, {"model", "ladder", "r", "truncation", "coincidence_trials"}, "convergence")
        ladder = t.get("ladder", [25, 50, 100, 200])
        if not (isinstance(ladder, list) and len(ladder) >= 2
                and all(isinstance(m, int) and not isinstance(m, bool) and m > 0 for m in ladder)):
            raise ConfigError("convergence.ladder: expected at least two positive integers")
        r = _number(t, "r", "convergence", 1.0)
        if r < 1:
            raise ConfigError("convergence.r: must be >= 1")
        cfg.convergence = ConvergenceSpec(
            _model_ref(t, "model", "convergence", models), tuple(ladder), r,
            _string(t, "truncation", "convergence", REGULAR, (TRUNCATED, REGULAR)),
            _number(t, "coincidence_trials", "convergence", 100_000, integer=True),
        )
    return cfg


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)
