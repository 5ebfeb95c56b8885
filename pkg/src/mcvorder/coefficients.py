"""Coefficient sets (drift, diffusion) for one-dimensional McKean-Vlasov SDEs.

A coefficient is a vectorized callable ``f(t, x, mu)`` where ``t`` is a float,
``x`` an array of states and ``mu`` the current :class:`EmpiricalMeasure`.
Mean-field terms are plain particle averages taken from ``mu``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expr import Expression, log_cosh
from .measures import EmpiricalMeasure

Coefficient = Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]

ASSUMPTION_II = "assumption_II"
ASSUMPTION_II_PRIME = "assumption_II_prime"
RELATIONS = (ASSUMPTION_II, ASSUMPTION_II_PRIME)

MEAN_FIELD_NAMES = {
    "mean_x": "x",
    "mean_x2": "x2",
    "mean_sin": "sin",
    "mean_cos": "cos",
    "mean_sin2": "sin2",
}

# Shared starting points of the bounding examples.
EXAMPLE1_INITIAL = 1.0
EXAMPLE2_INITIAL = 2.0


@dataclass(frozen=True)
class CoefficientSet:
    """Drift and diffusion with declared regularity constants.

    ``lip_x_drift`` and ``lip_x_diffusion`` drive the step-size constraint and
    the truncation threshold; they are declared, never inferred. A zero
    constant means the coefficient is constant in ``x``. ``state_domain`` is
    the interval the scheme is known to keep the state in, used to restrict
    random probing.
    """

    drift: Coefficient
    diffusion: Coefficient
    lip_x_drift: float
    lip_x_diffusion: float
    lip_measure: float = 0.0
    holder_t: float = 1.0
    label: str = "custom"
    state_domain: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        for name in ("lip_x_drift", "lip_x_diffusion", "lip_measure"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        if not 0.0 < self.holder_t <= 1.0:
            raise ValueError(f"holder_t must lie in (0, 1], got {self.holder_t}")
        lo, hi = self.state_domain
        if not lo < hi:
            raise ValueError(f"empty state domain {self.state_domain}")

    def b(self, t: float, x, mu: EmpiricalMeasure):
        return self.drift(t, np.asarray(x, dtype=np.float64), mu)

    def sigma(self, t: float, x, mu: EmpiricalMeasure):
        return self.diffusion(t, np.asarray(x, dtype=np.float64), mu)


@dataclass(frozen=True)
class ModelPair:
    """Two coefficient sets with the claimed ordering relation.

    ``lower`` holds the coefficients ``(b, sigma)`` of X and ``upper`` those
    ``(beta, theta)`` of Y. Under ``assumption_II`` X is expected below Y;
    under ``assumption_II_prime`` (the symmetric setting) Y is expected below X.
    The convexity and measure-monotonicity conditions concern X in both cases.
    """

    lower: CoefficientSet
    upper: CoefficientSet
    claimed_relation: str = ASSUMPTION_II

    def __post_init__(self):
        if self.claimed_relation not in RELATIONS:
            raise ValueError(f"claimed_relation must be one of {RELATIONS}")


def _broadcast(value, x):
    return np.broadcast_to(np.float64(value), np.shape(x)).copy() if np.ndim(x) else np.float64(value)


def gbm(drift_rate: float, vol: float) -> CoefficientSet:
    r, v = float(drift_rate), float(vol)
    return CoefficientSet(
        drift=lambda t, x, mu: r * x,
        diffusion=lambda t, x, mu: v * x,
        lip_x_drift=abs(r),
        lip_x_diffusion=abs(v),
        label=f"gbm({r:g},{v:g})",
        state_domain=(0.0, math.inf),
    )


def zero_model() -> CoefficientSet:
    return CoefficientSet(
        drift=lambda t, x, mu: _broadcast(0.0, x),
        diffusion=lambda t, x, mu: _broadcast(0.0, x),
        lip_x_drift=0.0,
        lip_x_diffusion=0.0,
        label="zero",
    )


def example1_y() -> CoefficientSet:
    # mean-field drift rate 0.05 * (E sin^2 + 2) stays in [0.10, 0.15]
    return CoefficientSet(
        drift=lambda t, x, mu: 0.05 * x * (mu.mean_of("sin2") + 2.0),
        diffusion=lambda t, x, mu: x,
        lip_x_drift=0.15,
        lip_x_diffusion=1.0,
        lip_measure=0.05,
        label="example1_y",
        state_domain=(0.0, math.inf),
    )


def example2_y() -> CoefficientSet:
    return CoefficientSet(
        drift=lambda t, x, mu: 0.05 * (log_cosh(x) + math.log(1.5 + mu.mean_of("sin")) + 2.0),
        diffusion=lambda t, x, mu: 0.3 * (log_cosh(x) + math.log(1.5 + mu.mean_of("cos")) + 2.0),
        lip_x_drift=0.05,
        lip_x_diffusion=0.3,
        # d/dm log(1.5 + m) <= 2 on m >= -1
        lip_measure=0.6,
        label="example2_y",
    )


def _example2_bound(constant: float, label: str) -> CoefficientSet:
    c = float(constant)
    return CoefficientSet(
        drift=lambda t, x, mu: 0.05 * (log_cosh(x) + c),
        diffusion=lambda t, x, mu: 0.3 * (log_cosh(x) + c),
        lip_x_drift=0.05,
        lip_x_diffusion=0.3,
        label=label,
    )


def example2_down() -> CoefficientSet:
    return _example2_bound(1.306, "example2_down")


def example2_up() -> CoefficientSet:
    return _example2_bound(2.917, "example2_up")


_BUILTINS = {
    "zero": zero_model,
    "example1_y": example1_y,
    "example1_down": lambda: gbm(0.05, 1.0),
    "example1_up": lambda: gbm(0.15, 1.0),
    "example2_y": example2_y,
    "example2_down": example2_down,
    "example2_up": example2_up,
}

_GBM_CALL = re.compile(r"^\s*gbm\s*\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)\s*$")


def builtin_names() -> list[str]:
    return ["gbm"] + sorted(_BUILTINS)


def builtin_model(name: str, **params) -> CoefficientSet:
    """Look up a built-in model.

    ``name`` is one of :func:`builtin_names`; ``gbm`` takes ``drift_rate`` and
    ``vol`` keyword parameters, or can be written inline as ``"gbm(0.05, 1)"``.
    """
    m = _GBM_CALL.match(name)
    if m:
        try:
            return gbm(float(m.group(1)), float(m.group(2)))
        except ValueError:
            raise ValueError(f"bad gbm parameters in {name!r}") from None
    if name == "gbm":
        missing = {"drift_rate", "vol"} - set(params)
        if missing:
            raise ValueError(f"gbm needs parameters {sorted(missing)}")
        return gbm(params["drift_rate"], params["vol"])
    if name not in _BUILTINS:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(builtin_names())}")
    if params:
        raise ValueError(f"model {name!r} takes no parameters")
    return _BUILTINS[name]()


def _expression_coefficient(source: str) -> Coefficient:
    expr = Expression(source, {"x", "t", *MEAN_FIELD_NAMES})
    used_stats = [n for n in MEAN_FIELD_NAMES if n in expr.names_used]

    def coefficient(t, x, mu):
        env = {"x": x, "t": float(t)}
        for name in used_stats:
            env[name] = mu.mean_of(MEAN_FIELD_NAMES[name])
        return np.broadcast_to(expr(env), np.shape(x)).astype(np.float64)

    coefficient.source = source
    return coefficient


def expression_model(drift: str, diffusion: str, *, lip_x_drift: float,
                     lip_x_diffusion: float, lip_measure: float = 0.0,
                     holder_t: float = 1.0, label: str = "custom",
                     state_domain=(-math.inf, math.inf)) -> CoefficientSet:
    """Build a coefficient set from two expressions in ``x``, ``t`` and mean-field averages."""
    return CoefficientSet(
        drift=_expression_coefficient(drift),
        diffusion=_expression_coefficient(diffusion),
        lip_x_drift=float(lip_x_drift),
        lip_x_diffusion=float(lip_x_diffusion),
        lip_measure=float(lip_measure),
        holder_t=float(holder_t),
        label=label,
        state_domain=tuple(float(v) for v in state_domain),
    )


# ---------------------------------------------------------------------------
# randomized probing


@dataclass(frozen=True)
class Violation:
    kind: str
    inputs: dict
    detail: str


@dataclass
class ProbeReport:
    probes: int
    checks: tuple[str, ...]
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.violations)
        return sum(v.kind == kind for v in self.violations)

    def kinds(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self.violations:
            out[v.kind] = out.get(v.kind, 0) + 1
        return out


PROBE_CHECKS = ("convexity", "dominance", "measure_monotonicity")


def _probe_interval(radius: float, *models: CoefficientSet) -> tuple[float, float]:
    lo = max([-radius] + [m.state_domain[0] for m in models])
    hi = min([radius] + [m.state_domain[1] for m in models])
    if not lo < hi:
        raise ValueError("probe interval is empty for these state domains")
    return lo, hi


def _probe_measure(rng, lo: float, hi: float, radius: float, atoms: int) -> np.ndarray:
    centre = rng.uniform(lo, hi)
    pts = centre + rng.uniform(0.0, radius / 4) * rng.standard_normal(atoms)
    if math.isfinite(lo):
        pts = lo + np.abs(pts - lo)
    if math.isfinite(hi):
        pts = hi - np.abs(hi - pts)
    return pts


def _leq(a: float, b: float, rel: float = 1e-9) -> bool:
    return a <= b + rel * (1.0 + abs(a) + abs(b))


def validate_assumption_II(pair: ModelPair, probe_count: int = 1000, *, radius: float = 10.0,
                           horizon: float = 1.0, atoms: int = 64, seed: int = 0,
                           checks=PROBE_CHECKS, max_reported: int = 50) -> ProbeReport:
    """Randomized search for counterexamples to the ordering assumptions.

    Probes convexity of ``b`` and ``|sigma|`` in x (midpoint inequality),
    coefficient dominance between the two models, and monotone response of
    ``b`` and ``|sigma|`` to mcv-ordered measure pairs ``mu <= nu`` where
    ``nu`` is a shifted spread of ``mu``. At most ``max_reported`` violations
    are kept per kind; a failed probe never raises.
    """
    if probe_count < 100:
        raise ValueError("probe_count must be at least 100")
    checks = tuple(checks)
    unknown = set(checks) - set(PROBE_CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    x_model, y_model = pair.lower, pair.upper
    rng = np.random.default_rng(seed)
    lo, hi = _probe_interval(radius, x_model, y_model)
    restricted = math.isfinite(x_model.state_domain[0]) or math.isfinite(x_model.state_domain[1])
    report = ProbeReport(probes=probe_count, checks=checks)

    def flag(kind, inputs, detail):
        if report.count(kind) < max_reported:
            report.violations.append(Violation(kind, inputs, detail))

    for _ in range(probe_count):
        t = float(rng.uniform(0.0, horizon))
        x, y = (float(v) for v in rng.uniform(lo, hi, size=2))
        mu = EmpiricalMeasure(_probe_measure(rng, lo, hi, radius, atoms))
        inputs = {"t": t, "x": x, "y": y, "mu_mean": mu.mean()}

        if "convexity" in checks:
            mid = 0.5 * (x + y)
            for kind, fn in (("drift_convexity", lambda z: float(x_model.b(t, z, mu))),
                             ("diffusion_convexity", lambda z: abs(float(x_model.sigma(t, z, mu))))):
                fm, fx, fy = fn(mid), fn(x), fn(y)
                if not _leq(fm, 0.5 * (fx + fy)):
                    flag(kind, inputs, f"f(mid)={fm:.6g} > average {0.5 * (fx + fy):.6g}")

        if "dominance" in checks:
            b, beta = float(x_model.b(t, x, mu)), float(y_model.b(t, x, mu))
            s, theta = abs(float(x_model.sigma(t, x, mu))), abs(float(y_model.sigma(t, x, mu)))
            if pair.claimed_relation == ASSUMPTION_II:
                pairs = (("drift_dominance", b, beta), ("diffusion_dominance", s, theta))
            else:
                pairs = (("drift_dominance", beta, b), ("diffusion_dominance", theta, s))
            for kind, small, big in pairs:
                if not _leq(small, big):
                    flag(kind, inputs, f"{small:.6g} > {big:.6g}")

        if "measure_monotonicity" in checks:
            m = mu.mean()
            spread = 0.0 if restricted else float(rng.uniform(0.0, 1.0))
            shifted = mu.samples + rng.uniform(0.0, radius / 4) + spread * (mu.samples - m)
            nu = EmpiricalMeasure(shifted)
            for kind, fn in (("drift_measure_monotonicity", lambda law: float(x_model.b(t, x, law))),
                             ("diffusion_measure_monotonicity",
                              lambda law: abs(float(x_model.sigma(t, x, law))))):
                f_mu, f_nu = fn(mu), fn(nu)
                if not _leq(f_mu, f_nu):
                    flag(kind, {**inputs, "nu_mean": nu.mean()}, f"{f_mu:.6g} > {f_nu:.6g}")
    return report


def probe_lipschitz(model: CoefficientSet, probe_count: int = 1000, *, radius: float = 10.0,
                    horizon: float = 1.0, atoms: int = 64, seed: int = 0) -> tuple[float, float]:
    """Largest observed difference quotients in x of drift and diffusion."""
    rng = np.random.default_rng(seed)
    lo, hi = _probe_interval(radius, model)
    worst_b = worst_s = 0.0
    for _ in range(probe_count):
        t = float(rng.uniform(0.0, horizon))
        x, y = rng.uniform(lo, hi, size=2)
        if x == y:
            continue
        mu = EmpiricalMeasure(_probe_measure(rng, lo, hi, radius, atoms))
        dx = abs(x - y)
        worst_b = max(worst_b, abs(float(model.b(t, x, mu) - model.b(t, y, mu))) / dx)
        worst_s = max(worst_s, abs(float(model.sigma(t, x, mu) - model.sigma(t, y, mu))) / dx)
    return worst_b, worst_s
