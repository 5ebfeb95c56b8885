"""Path reconstruction, path functionals and Monte Carlo estimates."""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression
from .measures import EmpiricalMeasure, mixture
from .scheme import ParticleEnsemble

Z95 = 1.959963984540054

TERMINAL_CALL_SQUARE = "terminal_call_square"
SUP_PATH = "sup_path"
TERMINAL_VALUE = "terminal_value"
USER_COMPOSITE = "user_composite"
KINDS = (TERMINAL_CALL_SQUARE, SUP_PATH, TERMINAL_VALUE, USER_COMPOSITE)

# Names visible to composite expressions: path statistics up to the query
# time and statistics of the (interpolated) marginal law at the query time.
PATH_NAMES = ("x", "sup_x", "inf_x")
LAW_NAMES = {"law_mean": "x", "law_mean_x2": "x2", "law_mean_sin": "sin",
             "law_mean_cos": "cos", "law_mean_sin2": "sin2"}
LAW_STOP_LOSS_PREFIX = "law_stop_loss"


@dataclass(frozen=True)
class GridPath:
    """Values of a path on the uniform grid ``t_m = m T / M``."""

    values: np.ndarray
    horizon: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a grid path needs at least two values")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * (self.horizon / (self.values.size - 1))

    def __call__(self, t: float) -> float:
        return interpolate(self.values, t, self.horizon)

    def sup(self) -> float:
        return float(self.values.max())


def _locate(t: float, steps: int, horizon: float) -> tuple[int, float]:
    """Cell index ``m`` with ``t in [t_m, t_m+1]`` and the weight ``(t - t_m) M / T``."""
    if not 0.0 <= t <= horizon:
        raise ValueError(f"time {t} outside [0, {horizon}]")
    pos = t * steps / horizon
    m = min(int(math.floor(pos)), steps - 1)
    return m, pos - m


def interpolate(values, t: float, horizon: float) -> float:
    """Piecewise-affine interpolation of grid values at time ``t``."""
    v = np.asarray(values, dtype=np.float64)
    steps = v.size - 1
    if steps < 1:
        raise ValueError("need at least two grid values")
    m, w = _locate(t, steps, horizon)
    if w == 0.0:
        return float(v[m])
    if w == 1.0:
        return float(v[m + 1])
    h = horizon / steps
    t_m, t_next = m * h, (m + 1) * h
    return float((steps / horizon) * ((t_next - t) * v[m] + (t - t_m) * v[m + 1]))


def interpolate_columns(states: np.ndarray, t: float, horizon: float) -> np.ndarray:
    """Interpolate every row of an ``(N, M + 1)`` array at time ``t``."""
    steps = states.shape[1] - 1
    m, w = _locate(t, steps, horizon)
    if w == 0.0:
        return states[:, m]
    if w == 1.0:
        return states[:, m + 1]
    return (1.0 - w) * states[:, m] + w * states[:, m + 1]


def marginal_at(ens: ParticleEnsemble, t: float) -> EmpiricalMeasure:
    """Law at time ``t``: a grid marginal, or the mixture of the two neighbouring ones."""
    m, w = _locate(t, ens.n_steps, ens.config.horizon)
    if w == 0.0:
        return ens.marginals[m]
    if w == 1.0:
        return ens.marginals[m + 1]
    return mixture(ens.marginals[m], ens.marginals[m + 1], 1.0 - w)


@dataclass(frozen=True)
class FunctionalSpec:
    """A path functional evaluated at a query time.

    ``terminal_call_square`` is ``max(a_t, 0)^2``, ``terminal_value`` is
    ``a_t`` and ``sup_path`` is ``sup_{s <= t} a_s``. A ``user_composite``
    carries an expression over ``x`` (value at t), ``sup_x``, ``inf_x`` and
    law statistics ``law_mean``, ``law_mean_x2``, ``law_mean_sin``,
    ``law_mean_cos``, ``law_mean_sin2`` and ``law_stop_loss(k)`` of the
    marginal at t. Its monotonicity and convexity are declared by the caller.
    """

    kind: str
    expression: str | None = None
    monotone_convex_declared: bool = True
    name: str = ""
    _compiled: Expression | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == USER_COMPOSITE:
            if not self.expression:
                raise ValueError("user_composite needs an expression")
            expr = Expression(_rewrite_stop_loss(self.expression), _composite_names(self.expression))
            object.__setattr__(self, "_compiled", expr)
        if not self.name:
            object.__setattr__(self, "name", self.kind)


def _stop_loss_strikes(source: str) -> list[str]:
    return re.findall(rf"{LAW_STOP_LOSS_PREFIX}\(\s*([-+0-9.eE]+)\s*\)", source)


def _stop_loss_name(strike: str) -> str:
    return f"__sl_{float(strike)!r}".replace(".", "_").replace("-", "m").replace("+", "")


def _rewrite_stop_loss(source: str) -> str:
    for k in _stop_loss_strikes(source):
        source = source.replace(f"{LAW_STOP_LOSS_PREFIX}({k})", _stop_loss_name(k))
    return source


def _composite_names(source: str) -> set[str]:
    return {*PATH_NAMES, *LAW_NAMES, *(_stop_loss_name(k) for k in _stop_loss_strikes(source))}


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int

    @property
    def ci95(self) -> tuple[float, float]:
        return self.value - Z95 * self.stderr, self.value + Z95 * self.stderr

    @classmethod
    def from_samples(cls, samples) -> "Estimate":
        x = np.asarray(samples, dtype=np.float64)
        n = x.size
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(x.mean()), se, n)


def functional_samples(ens: ParticleEnsemble, f: FunctionalSpec, t_query: float | None = None) -> np.ndarray:
    """Per-particle values of ``f`` at ``t_query`` (defaults to the horizon)."""
    horizon = ens.config.horizon
    t = horizon if t_query is None else float(t_query)
    x_t = interpolate_columns(ens.states, t, horizon)
    if f.kind == TERMINAL_VALUE:
        return np.array(x_t)
    if f.kind == TERMINAL_CALL_SQUARE:
        return np.maximum(x_t, 0.0) ** 2
    m, _ = _locate(t, ens.n_steps, horizon)
    # sup of a piecewise-affine path is attained on the knots and at t itself
    head = ens.states[:, : m + 1]
    if f.kind == SUP_PATH:
        return np.maximum(head.max(axis=1), x_t)
    env: dict[str, object] = {"x": x_t}
    names = f._compiled.names_used
    if "sup_x" in names:
        env["sup_x"] = np.maximum(head.max(axis=1), x_t)
    if "inf_x" in names:
        env["inf_x"] = np.minimum(head.min(axis=1), x_t)
    law_names = [n for n in names if n in LAW_NAMES or n.startswith("__sl_")]
    if law_names:
        law = marginal_at(ens, t)
        for name in law_names:
            if name in LAW_NAMES:
                env[name] = law.mean_of(LAW_NAMES[name])
        for k in _stop_loss_strikes(f.expression):
            env[_stop_loss_name(k)] = float(law.expect(lambda s, k=float(k): np.maximum(s - k, 0.0)))
    missing = names - set(env)
    if missing:
        raise ValueError(f"functional {f.name} references unavailable statistics {sorted(missing)}")
    out = np.broadcast_to(f._compiled(env), x_t.shape).astype(np.float64)
    return out


def estimate_functional(ens: ParticleEnsemble, f: FunctionalSpec, t_query: float | None = None) -> Estimate:
    """Monte Carlo mean of ``f`` over the particles with its standard error."""
    return Estimate.from_samples(functional_samples(ens, f, t_query))


def estimate_difference(ens_a: ParticleEnsemble, ens_b: ParticleEnsemble, f: FunctionalSpec,
                        t_query: float | None = None) -> Estimate:
    """Paired estimate of ``E f(b) - E f(a)`` for ensembles sharing one noise grid."""
    if ens_a.states.shape != ens_b.states.shape:
        raise ValueError("paired estimates need ensembles of equal shape")
    return Estimate.from_samples(functional_samples(ens_b, f, t_query) - functional_samples(ens_a, f, t_query))


def spot_check_composite(f: FunctionalSpec, ens: ParticleEnsemble, pairs: int = 200,
                         seed: int = 0, t_query: float | None = None) -> int:
    """Midpoint convexity and monotonicity spot check of a composite on particle pairs.

    Returns the number of violated pairs and emits a warning when nonzero.
    """
    if f.kind != USER_COMPOSITE:
        return 0
    gen = np.random.default_rng(seed)
    n = ens.n_particles
    i = gen.integers(0, n, size=pairs)
    j = gen.integers(0, n, size=pairs)
    a, b = ens.states[i], ens.states[j]
    probe = np.concatenate([a, b, 0.5 * (a + b), np.maximum(a, b)])
    sub = ParticleEnsemble(probe, ens.config, ens.model_label)
    vals = functional_samples(sub, f, t_query)
    fa, fb, fmid, fmax = np.split(vals, 4)
    scale = 1e-9 * (1.0 + np.abs(fa) + np.abs(fb))
    bad = (fmid > 0.5 * (fa + fb) + scale) | (fmax < np.maximum(fa, fb) - scale)
    count = int(bad.sum())
    if count:
        warnings.warn(f"functional {f.name}: {count}/{pairs} sampled pairs violate the "
                      "declared monotonicity/convexity", RuntimeWarning, stacklevel=2)
    return count


def gbm_call_square_closed_form(r: float, v: float, x0: float, t: float) -> float:
    """``E max(X_t, 0)^2 = x0^2 exp((2 r + v^2) t)`` for geometric Brownian motion."""
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    return x0 * x0 * math.exp((2.0 * r + v * v) * t)


def write_curve_csv(path, times, estimates) -> None:
    """``t,estimate,stderr,ci_lo,ci_hi`` rows."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "estimate", "stderr", "ci_lo", "ci_hi"])
        for t, est in zip(times, estimates):
            lo, hi = est.ci95
            out.writerow([f"{t:.17g}", f"{est.value:.17g}", f"{est.stderr:.17g}", f"{lo:.17g}", f"{hi:.17g}"])
