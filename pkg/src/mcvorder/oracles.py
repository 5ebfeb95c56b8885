"""Quadrature and enumeration checks, independent of the Monte Carlo engine.

Everything here integrates against the standard normal density with
composite Gauss-Legendre rules, or enumerates finite-support measures
exactly. No function in this module draws random paths.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

from .scheme import truncation_threshold

CATALOG_VERSION = 1
CALL_STRIKES = tuple(np.linspace(-2.0, 2.0, 11))
SOFTPLUS_SCALES = (0.5, 1.0, 2.0)
MONOTONE_TOL = 1e-9
FD_REL_TOL = 1e-6


def normal_pdf(x):
    return np.exp(-0.5 * np.asarray(x, dtype=np.float64) ** 2) / math.sqrt(2.0 * math.pi)


def normal_sf(x):
    """Upper tail ``P(Z > x)`` through ``erfc``; accurate far into both tails."""
    return 0.5 * special.erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def normal_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre rule on ``[lo, hi]`` weighted by the normal density."""

    lo: float = -8.0
    hi: float = 8.0
    panels: int = 64
    order: int = 16
    breaks: tuple = ()
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.hi > self.lo or self.panels < 1 or self.order < 1:
            raise ValueError("invalid quadrature rule")
        ref_x, ref_w = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(self.lo, self.hi, self.panels + 1)
        inner = [b for b in self.breaks if self.lo < b < self.hi]
        if inner:
            # panel edges at kinks of the integrand keep the rule spectrally accurate
            edges = np.unique(np.concatenate([edges, inner]))
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * ref_x[None, :]).ravel()
        weights = (half[:, None] * ref_w[None, :]).ravel() * normal_pdf(nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))

    def moments(self) -> tuple[float, float, float]:
        return self.expect(np.ones_like), self.expect(lambda z: z), self.expect(lambda z: z * z)


def _tilted_rule(shift: float, panels_per_unit: float = 4.0, order: int = 16, breaks=()) -> QuadratureRule:
    # covers both N(0,1) and the exponentially tilted N(shift, 1)
    lo, hi = min(-8.0, shift - 8.0), max(8.0, shift + 8.0)
    return QuadratureRule(lo, hi, max(64, int(math.ceil((hi - lo) * panels_per_unit))), order, tuple(breaks))


# ---------------------------------------------------------------------------
# convex function catalog


def _call(k: float):
    f = lambda x: np.maximum(x - k, 0.0)  # noqa: E731
    f.kinks = (k,)
    return f


def _softplus(s: float):
    return lambda x: s * np.logaddexp(0.0, x / s)


def convex_catalog() -> list[tuple[str, Callable]]:
    """Fixed catalog of non-decreasing convex test functions (version :data:`CATALOG_VERSION`)."""
    out = [(f"call({k:+.1f})", _call(float(k))) for k in CALL_STRIKES]
    out.append(("exp", np.exp))
    out += [(f"softplus({s:g})", _softplus(s)) for s in SOFTPLUS_SCALES]
    return out


# ---------------------------------------------------------------------------
# truncated Gaussian


class QuadratureCheckError(ArithmeticError):
    pass


def _z_breaks(f, centre: float, scale: float) -> tuple:
    kinks = getattr(f, "kinks", ())
    if scale == 0 or not kinks:
        return ()
    return tuple((k - centre) / scale for k in kinks)


def expect_f_of_truncated(u: float, h: float, lip: float, f: Callable, *, shift: float = 0.0,
                          panels: int = 64, order: int = 16) -> float:
    """``E f(shift + u T(Z))`` for the truncated Gaussian ``T(Z) = Z 1{|Z| <= c}``.

    ``c = 1 / (2 sqrt(h) lip)``; the truncated mass sits at 0.
    """
    c = truncation_threshold(h, lip)
    a = min(c, 8.0)
    rule = QuadratureRule(-a, a, panels, order, _z_breaks(f, shift, u))
    tail = float(2.0 * normal_sf(c)) if math.isfinite(c) else 0.0
    mass = float(rule.weights.sum()) + tail
    if abs(mass - 1.0) > 1e-8:
        raise QuadratureCheckError(f"truncated normal mass {mass!r} is off by more than 1e-8")
    inner = float(np.dot(rule.weights, f(shift + u * rule.nodes)))
    return inner + float(f(np.float64(shift))) * tail


# ---------------------------------------------------------------------------
# decreasing-sigma counterexample: sigma(x) = E (zeta - x)^+


def counterexample_sigma(x):
    x = np.asarray(x, dtype=np.float64)
    return normal_pdf(x) - x * normal_sf(x)


def counterexample_sigma_prime(x):
    return -normal_sf(x)


def counterexample_factor(x, h: float):
    """``1 + h sigma(x) sigma'(x)``; its sign is the sign of the transition derivative."""
    return 1.0 + h * counterexample_sigma(x) * counterexample_sigma_prime(x)


def counterexample_derivative(x, h: float):
    """Derivative in x of ``E exp(x + sqrt(h) sigma(x) Z)`` with zero drift.

    The transition equals ``exp(x + h sigma(x)^2 / 2)`` in closed form, so the
    derivative is ``exp(x + h sigma^2 / 2) (1 + h sigma sigma')``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    s = counterexample_sigma(x)
    return np.exp(x + 0.5 * h * s * s) * counterexample_factor(x, h)


def counterexample_transition(x: float, h: float) -> float:
    """``E exp(x + sqrt(h) sigma(x) Z)`` by quadrature."""
    a = math.sqrt(h) * float(counterexample_sigma(x))
    rule = _tilted_rule(a)
    return rule.expect(lambda z: np.exp(x + a * z))


def counterexample_fd_error(x: float, h: float, step: float = 1e-5) -> float:
    """Central-difference derivative of the quadrature transition against the closed form.

    Returned relative to ``exp(x + h sigma^2 / 2)`` so it stays meaningful where
    the derivative itself crosses zero.
    """
    fd = (counterexample_transition(x + step, h) - counterexample_transition(x - step, h)) / (2 * step)
    s = float(counterexample_sigma(x))
    scale = math.exp(x + 0.5 * h * s * s)
    return abs(fd - float(counterexample_derivative(x, h))) / scale


def counterexample_sign_changes(h: float, lo: float = -20.0, hi: float = 20.0, points: int = 4001):
    """Sign changes of the closed-form derivative on a grid, and the bisected roots."""
    xs = np.linspace(lo, hi, points)
    factor = counterexample_factor(xs, h)
    sign = np.sign(factor)
    idx = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    roots = [optimize.bisect(lambda x: float(counterexample_factor(x, h)), xs[i], xs[i + 1], xtol=1e-14)
             for i in idx]
    return len(idx), roots


# ---------------------------------------------------------------------------
# propagation of monotonicity and convexity by one Euler transition

SIGMA_KINDS = {
    "nondecreasing": (lambda x: np.maximum(x, 0.0) + 1.0, 1.0),
    "decreasing_counterexample": (counterexample_sigma, 1.0),
    "constant": (lambda x: np.ones_like(np.asarray(x, dtype=np.float64)), 0.0),
}


@dataclass
class PropagationRow:
    function: str
    monotone_violations: list[float]
    convexity_violations: list[float]


@dataclass
class PropagationReport:
    sigma_kind: str
    h: float
    truncated: bool
    grid: np.ndarray
    rows: list[PropagationRow]

    def row(self, name: str) -> PropagationRow:
        for r in self.rows:
            if r.function == name:
                return r
        raise KeyError(name)

    @property
    def any_monotone_violation(self) -> bool:
        return any(r.monotone_violations for r in self.rows)

    @property
    def any_convexity_violation(self) -> bool:
        return any(r.convexity_violations for r in self.rows)


def transition_values(f: Callable, sigma: Callable, xs, h: float, drift: float = 0.0,
                      lip: float | None = None) -> np.ndarray:
    """``x -> E f(x + h drift + sqrt(h) sigma(x) Z)`` on a grid; ``Z`` truncated when ``lip`` is given."""
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        scale = math.sqrt(h) * float(sigma(np.float64(x)))
        centre = x + h * drift
        if lip is None:
            rule = _tilted_rule(abs(scale), breaks=_z_breaks(f, centre, scale))
            out[i] = rule.expect(lambda z: f(centre + scale * z))
        else:
            out[i] = expect_f_of_truncated(scale, h, lip, f, shift=centre)
    return out


def check_monotonicity_propagation(sigma_kind: str, h: float, *, grid=None, drift: float = 0.0,
                                   truncated: bool = False, functions=None,
                                   tol: float = MONOTONE_TOL) -> PropagationReport:
    """Scan ``x -> E f(E^h(x, Z))`` for monotonicity and convexity violations.

    Violations are decreases (or negative second differences) beyond
    ``tol * (1 + |value|)`` between neighbouring grid points; the left grid
    point of each offending pair is recorded.
    """
    if sigma_kind not in SIGMA_KINDS:
        raise ValueError(f"sigma_kind must be one of {sorted(SIGMA_KINDS)}")
    sigma, lip = SIGMA_KINDS[sigma_kind]
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 201) if sigma_kind != "decreasing_counterexample" \
            else np.linspace(-10.0, 5.0, 301)
    xs = np.asarray(grid, dtype=np.float64)
    if truncated and lip == 0:
        truncated = False
    rows = []
    for name, f in (functions or convex_catalog()):
        g = transition_values(f, sigma, xs, h, drift, lip if truncated else None)
        slack = tol * (1.0 + np.abs(g))
        dec = np.flatnonzero(g[1:] < g[:-1] - slack[:-1])
        second = g[2:] - 2.0 * g[1:-1] + g[:-2]
        conc = np.flatnonzero(second < -slack[1:-1]) + 1
        rows.append(PropagationRow(name, xs[dec].tolist(), xs[conc].tolist()))
    return PropagationReport(sigma_kind, h, truncated, xs, rows)


# ---------------------------------------------------------------------------
# finite-support monotone convex order

GRID_LO, GRID_HI = -10, 10
_POINTS = np.arange(GRID_LO, GRID_HI + 1)
_DENOM = 60  # every atom count 1..5 divides 60, so weights stay integral
MAX_SLOPE = 4


@dataclass(frozen=True)
class EquivalenceCheck:
    stop_loss_dominated: bool
    family_dominated: bool

    @property
    def agree(self) -> bool:
        return self.stop_loss_dominated == self.family_dominated


def _family_matrix() -> np.ndarray:
    # non-decreasing slopes in {0..MAX_SLOPE} on each unit cell, value 0 at GRID_LO
    seqs = np.array(list(itertools.combinations_with_replacement(range(MAX_SLOPE + 1), _POINTS.size - 1)))
    values = np.zeros((seqs.shape[0], _POINTS.size))
    values[:, 1:] = np.cumsum(seqs, axis=1)
    return values


_FAMILY: np.ndarray | None = None


def piecewise_linear_family() -> np.ndarray:
    """Values on the integer grid of every convex non-decreasing function with integer knots and slopes."""
    global _FAMILY
    if _FAMILY is None:
        _FAMILY = _family_matrix()
    return _FAMILY


def _pmf(atoms) -> np.ndarray:
    atoms = [int(a) for a in atoms]
    if not 1 <= len(atoms) <= 5:
        raise ValueError("between 1 and 5 atoms are required")
    if any(a < GRID_LO or a > GRID_HI for a in atoms):
        raise ValueError(f"atoms must lie in [{GRID_LO}, {GRID_HI}]")
    pmf = np.zeros(_POINTS.size)
    for a in atoms:
        pmf[a - GRID_LO] += _DENOM // len(atoms)
    return pmf


def _stop_loss_matrix() -> np.ndarray:
    return np.maximum(_POINTS[None, :] - _POINTS[:, None], 0).astype(np.float64)


def _batch_equivalence(pmf_mu: np.ndarray, pmf_nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = pmf_nu - pmf_mu
    sl = np.all(_stop_loss_matrix() @ diff >= 0, axis=0)
    fam = np.all(piecewise_linear_family() @ diff >= 0, axis=0)
    return sl, fam


def finite_support_mcv_equivalence(mu_atoms, nu_atoms) -> EquivalenceCheck:
    """Compare stop-loss dominance with dominance over the whole integer-knot family."""
    sl, fam = _batch_equivalence(_pmf(mu_atoms)[:, None], _pmf(nu_atoms)[:, None])
    return EquivalenceCheck(bool(sl[0]), bool(fam[0]))


def random_equivalence_trials(trials: int = 10_000, seed: int = 0) -> tuple[int, int, int]:
    """Run random configurations; returns ``(agreements, dominated_count, trials)``.

    Half of the pairs are independent draws, half are built to be ordered
    (``nu`` = ``mu`` shifted up by non-negative integers) so both outcomes occur.
    """
    gen = np.random.default_rng(seed)
    pmf_mu = np.zeros((_POINTS.size, trials))
    pmf_nu = np.zeros((_POINTS.size, trials))
    for j in range(trials):
        mu = gen.integers(GRID_LO, GRID_HI + 1, size=gen.integers(1, 6))
        if j % 2:
            nu = np.minimum(mu + gen.integers(0, 3, size=mu.size), GRID_HI)
        else:
            nu = gen.integers(GRID_LO, GRID_HI + 1, size=gen.integers(1, 6))
        pmf_mu[:, j] = _pmf(mu)
        pmf_nu[:, j] = _pmf(nu)
    sl, fam = _batch_equivalence(pmf_mu, pmf_nu)
    return int(np.sum(sl == fam)), int(np.sum(sl)), trials


# ---------------------------------------------------------------------------
# suites

SUITES = ("truncated_gaussian", "monotonicity", "counterexample", "mcv_equivalence")


@dataclass(frozen=True)
class OracleRow:
    check: str
    input: str
    expected: str
    observed: str
    passed: bool


@dataclass
class OracleReport:
    rows: list[OracleRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def add(self, check, input, expected, observed, passed) -> None:
        self.rows.append(OracleRow(check, str(input), str(expected), str(observed), bool(passed)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["check", "input", "expected", "observed", "pass"])
            for r in self.rows:
                out.writerow([r.check, r.input, r.expected, r.observed, "true" if r.passed else "false"])

    def to_text(self) -> str:
        lines = []
        for r in self.rows:
            mark = "PASS" if r.passed else "FAIL"
            lines.append(f"[{mark}] {r.check} ({r.input}): expected {r.expected}, observed {r.observed}")
        lines.append(f"{sum(r.passed for r in self.rows)}/{len(self.rows)} checks passed")
        return "\n".join(lines) + "\n"


def _suite_truncated_gaussian(report: OracleReport) -> None:
    rule = QuadratureRule()
    m0, m1, m2 = rule.moments()
    ok = abs(m0 - 1) <= 1e-10 and abs(m1) <= 1e-10 and abs(m2 - 1) <= 1e-10
    report.add("quadrature_moments", "[-8,8]", "(1,0,1) within 1e-10", f"({m0:.15g},{m1:.3g},{m2:.15g})", ok)
    u_grid = np.linspace(0.0, 3.0, 50)
    for h, lip in ((0.01, 1.0), (0.25, 1.0)):
        for shift in (0.0, 0.7):
            for name, f in convex_catalog():
                vals = np.array([expect_f_of_truncated(u, h, lip, f, shift=shift) for u in u_grid])
                worst = float(np.min(np.diff(vals)))
                sym = np.array([expect_f_of_truncated(-u, h, lip, f, shift=shift) for u in u_grid])
                even_gap = float(np.max(np.abs(sym - vals)))
                ok = worst >= -MONOTONE_TOL and even_gap <= MONOTONE_TOL and vals[0] <= vals.min() + MONOTONE_TOL
                report.add("truncated_gaussian_monotone_in_u", f"f={name} h={h} lip={lip} shift={shift}",
                           "non-decreasing on u>=0, even, minimal at u=0",
                           f"min increment {worst:.3g}, even gap {even_gap:.3g}", ok)


def _suite_monotonicity(report: OracleReport) -> None:
    pos = check_monotonicity_propagation("nondecreasing", 0.5)
    for row in pos.rows:
        ok = not row.monotone_violations and not row.convexity_violations
        report.add("nondecreasing_sigma_propagation", f"f={row.function} h=0.5 x in [-5,5]",
                   "no violations",
                   f"{len(row.monotone_violations)} monotone, {len(row.convexity_violations)} convexity", ok)
    const = check_monotonicity_propagation("constant", 0.5)
    report.add("constant_sigma_propagation", "all catalog f, h=0.5", "no monotone violations",
               f"{sum(len(r.monotone_violations) for r in const.rows)} violations",
               not const.any_monotone_violation)


def _suite_counterexample(report: OracleReport) -> None:
    h = 0.5
    neg = check_monotonicity_propagation("decreasing_counterexample", h, functions=[("exp", np.exp)])
    bad = neg.row("exp").monotone_violations
    hit = [x for x in bad if x <= -5.0]
    expected_points = int(np.sum(neg.grid[:-1] <= -5.0))
    report.add("counterexample_regular_violation", "f=exp h=0.5 x in [-10,-5]",
               "monotonicity violated on every grid point", f"{len(hit)}/{expected_points} points",
               len(hit) == expected_points)
    trunc = check_monotonicity_propagation("decreasing_counterexample", h, functions=[("exp", np.exp)],
                                           truncated=True)
    report.add("counterexample_truncated_restores", "f=exp h=0.5 truncated", "no monotone violations",
               f"{len(trunc.row('exp').monotone_violations)} violations", not trunc.any_monotone_violation)
    for x in (8.0, -10.0):
        d = float(counterexample_derivative(x, h))
        expect_positive = x > 0
        report.add("counterexample_derivative_sign", f"x={x:g} h={h}",
                   "positive" if expect_positive else "negative", f"{d:.6g}", (d > 0) == expect_positive)
    worst = 0.0
    for hh in (0.1, 0.5, 1.0):
        for x in np.linspace(-12.0, 8.0, 41):
            worst = max(worst, counterexample_fd_error(float(x), hh))
    report.add("counterexample_derivative_vs_fd", "x in [-12,8], h in {0.1,0.5,1}",
               f"relative error <= {FD_REL_TOL:g}", f"{worst:.3g}", worst <= FD_REL_TOL)
    changes, roots = counterexample_sign_changes(h)
    residual = abs(float(counterexample_factor(roots[0], h))) if roots else math.inf
    report.add("counterexample_sign_change", "h=0.5 x in [-20,20]", "exactly one root, residual <= 1e-8",
               f"{changes} change(s), root {roots[0] if roots else 'n/a'}, residual {residual:.3g}",
               changes == 1 and residual <= 1e-8)


def _suite_mcv_equivalence(report: OracleReport) -> None:
    cases = [([0, 1, 2], [0, 1, 2], True), ([0], [-1, 1], True), ([1], [0], False)]
    for mu, nu, expected in cases:
        res = finite_support_mcv_equivalence(mu, nu)
        report.add("finite_support_case", f"mu={mu} nu={nu}", f"agree, dominated={expected}",
                   f"stop_loss={res.stop_loss_dominated} family={res.family_dominated}",
                   res.agree and res.stop_loss_dominated == expected)
    agreements, dominated, trials = random_equivalence_trials()
    report.add("finite_support_random", f"{trials} random pairs", f"{trials}/{trials} agreements",
               f"{agreements}/{trials} ({dominated} dominated)", agreements == trials)


_SUITE_FUNCS = {
    "truncated_gaussian": _suite_truncated_gaussian,
    "monotonicity": _suite_monotonicity,
    "counterexample": _suite_counterexample,
    "mcv_equivalence": _suite_mcv_equivalence,
}


def run_suite(name: str) -> OracleReport:
    """Run one suite by name, or every suite with ``"all"``."""
    names = SUITES if name == "all" else (name,)
    report = OracleReport()
    for n in names:
        if n not in _SUITE_FUNCS:
            raise ValueError(f"unknown oracle suite {n!r}; choose from {SUITES + ('all',)}")
        _SUITE_FUNCS[n](report)
    return report
