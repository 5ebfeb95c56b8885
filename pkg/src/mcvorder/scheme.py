"""Particle simulation of the regular and truncated Euler schemes.

Each step freezes the empirical measure of the pre-step particle column and
advances every particle with ``x + h b(t, x, mu) + sqrt(h) sigma(t, x, mu) Z``.
In truncated mode ``Z`` is replaced by ``Z 1{|Z| <= 1 / (2 sqrt(h) L_sigma)}``
with ``L_sigma`` the declared Lipschitz constant of the diffusion in x.
Coupled runs reuse one noise grid (common random numbers).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .coefficients import CoefficientSet, ModelPair
from .measures import EmpiricalMeasure

TRUNCATED = "truncated"
REGULAR = "regular"


class StepSizeError(ValueError):
    """The time step violates ``h < 1 / (2 [b]_Lip)``."""


class NumericalBlowup(FloatingPointError):
    def __init__(self, step: int, particle: int, state: float, value: float, label: str = ""):
        self.step, self.particle, self.state, self.value = step, particle, state, value
        super().__init__(
            f"non-finite state {value!r} at step {step}, particle {particle} "
            f"(previous state {state!r}{', model ' + label if label else ''})"
        )


@dataclass(frozen=True)
class SchemeConfig:
    horizon: float = 1.0
    steps: int = 100
    particles: int = 100_000
    p_exponent: float = 2.0
    seed: int = 0
    truncation: str = TRUNCATED
    allow_large_h: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be an integer >= 1")
        if int(self.particles) != self.particles or self.particles < 2:
            raise ValueError("particles must be an integer >= 2")
        if self.p_exponent < 2:
            raise ValueError("p_exponent must be >= 2")
        rng.seed_to_key(int(self.seed))
        if self.truncation not in (TRUNCATED, REGULAR):
            raise ValueError(f"truncation must be {TRUNCATED!r} or {REGULAR!r}")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.h


def step_size_bound(model: CoefficientSet) -> float:
    """Largest admissible step ``1 / (2 [b]_Lip_x)`` (infinite for constant drift)."""
    return math.inf if model.lip_x_drift == 0 else 1.0 / (2.0 * model.lip_x_drift)


def check_step_size(model: CoefficientSet, config: SchemeConfig) -> bool:
    """Raise :class:`StepSizeError` unless ``h`` is admissible or overridden."""
    ok = config.h < step_size_bound(model)
    if not ok and not config.allow_large_h:
        raise StepSizeError(
            f"h={config.h:g} >= 1/(2*{model.lip_x_drift:g}) for model {model.label}; "
            "pass allow_large_h to override"
        )
    return ok


def truncation_threshold(h: float, lip_sigma_x: float) -> float:
    if lip_sigma_x == 0:
        return math.inf
    return 1.0 / (2.0 * math.sqrt(h) * lip_sigma_x)


def truncate(z, h: float, lip_sigma_x: float):
    """``z`` if ``|z| <= 1 / (2 sqrt(h) lip_sigma_x)``, else 0 (elementwise)."""
    if h <= 0 or lip_sigma_x <= 0:
        raise ValueError("h and lip_sigma_x must be positive")
    thr = truncation_threshold(h, lip_sigma_x)
    z_arr = np.asarray(z, dtype=np.float64)
    out = np.where(np.abs(z_arr) <= thr, z_arr, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NoiseGrid:
    """Standard normal increments, one per (particle, step), shape ``(N, M)``."""

    increments: np.ndarray
    seed: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.increments.shape

    def coarsen(self, factor: int = 2) -> "NoiseGrid":
        """Aggregate to ``M / factor`` steps by repeated pairwise ``(Z_2m + Z_2m+1) / sqrt(2)``."""
        if factor < 1 or factor & (factor - 1):
            raise ValueError("coarsening factor must be a power of two")
        z = self.increments
        while factor > 1:
            if z.shape[1] % 2:
                raise ValueError("cannot halve an odd number of steps")
            z = (z[:, 0::2] + z[:, 1::2]) / math.sqrt(2.0)
            factor //= 2
        z.setflags(write=False)
        return NoiseGrid(z, self.seed)


def generate_noise(seed: int, particles: int, steps: int, threads: int = 1) -> NoiseGrid:
    """Counter-based noise: entry ``(i, m)`` depends only on ``(seed, i, m)``."""
    z = np.empty((particles, steps))
    idx = np.arange(particles, dtype=np.uint64)

    def fill(cols):
        for m in cols:
            z[:, m] = rng.normals(seed, idx, m)

    _run_chunks(fill, np.arange(steps), threads)
    z.setflags(write=False)
    return NoiseGrid(z, seed)


def _run_chunks(fn, items, threads: int) -> None:
    if threads <= 1 or len(items) < 2:
        fn(items)
        return
    chunks = [c for c in np.array_split(items, threads) if len(c)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, c) for c in chunks]:
            fut.result()


class _Marginals(Sequence):
    def __init__(self, states: np.ndarray):
        self._states = states

    def __len__(self) -> int:
        return self._states.shape[1]

    def __getitem__(self, m):
        if isinstance(m, slice):
            return [self[i] for i in range(*m.indices(len(self)))]
        return EmpiricalMeasure(self._states[:, m])


@dataclass(frozen=True)
class ParticleEnsemble:
    """Particle states on the grid ``t_0 < ... < t_M`` (shape ``(N, M + 1)``)."""

    states: np.ndarray
    config: SchemeConfig
    model_label: str = ""

    @property
    def marginals(self) -> Sequence[EmpiricalMeasure]:
        return _Marginals(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    def to_csv(self, path) -> None:
        """Write ``particle,step,value`` rows, particle-major."""
        n, cols = self.states.shape
        particle = np.repeat(np.arange(n), cols)
        step = np.tile(np.arange(cols), n)
        with open(path, "w") as fh:
            fh.write("particle,step,value\n")
            body = np.empty(n * cols, dtype=object)
            body[:] = [f"{p},{s},{v:.17g}" for p, s, v in zip(particle, step, self.states.ravel())]
            fh.write("\n".join(body))
            fh.write("\n")


def euler_step(x, t: float, mu: EmpiricalMeasure, z_trunc, model: CoefficientSet, h: float):
    """One Euler transition ``x + h b(t, x, mu) + sqrt(h) sigma(t, x, mu) z``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x_arr = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x_arr + h * model.b(t, x_arr, mu) + math.sqrt(h) * model.sigma(t, x_arr, mu) * z_trunc
    bad = ~np.isfinite(out)
    if np.any(bad):
        i = int(np.flatnonzero(np.ravel(bad))[0])
        raise NumericalBlowup(-1, i, float(np.ravel(x_arr)[i] if x_arr.ndim else x_arr),
                              float(np.ravel(out)[i]), model.label)
    return float(out) if np.ndim(out) == 0 else out


def _initial_states(initial, n: int) -> np.ndarray:
    x0 = initial.samples if isinstance(initial, EmpiricalMeasure) else np.asarray(initial, dtype=np.float64)
    if isinstance(initial, EmpiricalMeasure) and not initial.is_uniform:
        x0 = initial.to_uniform(n).samples
    if x0.shape != (n,):
        raise ValueError(f"initial law has {x0.size} samples, expected {n} particles")
    return np.array(x0, dtype=np.float64)


def simulate(model: CoefficientSet, initial, config: SchemeConfig,
             noise: NoiseGrid | None = None, threads: int = 1) -> ParticleEnsemble:
    """Run the particle scheme.

    ``initial`` gives the N initial particle states, either as an
    :class:`EmpiricalMeasure` (particle ``i`` starts at its ``i``-th smallest
    atom) or as a plain array used in particle order. Without ``noise`` a
    grid is generated from ``config.seed``.
    """
    n, steps = config.particles, config.steps
    check_step_size(model, config)
    if noise is None:
        noise = generate_noise(config.seed, n, steps, threads)
    if noise.shape != (n, steps):
        raise ValueError(f"noise shape {noise.shape} does not match ({n}, {steps})")
    h = config.h
    sqrt_h = math.sqrt(h)
    z = noise.increments
    if config.truncation == TRUNCATED:
        thr = truncation_threshold(h, model.lip_x_diffusion)
        z = np.where(np.abs(z) <= thr, z, 0.0)

    states = np.empty((n, steps + 1))
    states[:, 0] = _initial_states(initial, n)
    for m in range(steps):
        t = m * h
        col = states[:, m]
        mu = EmpiricalMeasure(col)
        zm = z[:, m]
        nxt = states[:, m + 1]

        def advance(rows, col=col, mu=mu, zm=zm, nxt=nxt, t=t):
            sl = slice(rows[0], rows[-1] + 1)
            x = col[sl]
            with np.errstate(over="ignore", invalid="ignore"):
                nxt[sl] = x + h * model.b(t, x, mu) + sqrt_h * model.sigma(t, x, mu) * zm[sl]

        _run_chunks(advance, np.arange(n), threads)
        bad = ~np.isfinite(nxt)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise NumericalBlowup(m + 1, i, float(col[i]), float(nxt[i]), model.label)
    states.setflags(write=False)
    return ParticleEnsemble(states, config, model.label)


def simulate_coupled(pair: ModelPair, initial_lower, initial_upper, config: SchemeConfig,
                     noise: NoiseGrid | None = None, threads: int = 1
                     ) -> tuple[ParticleEnsemble, ParticleEnsemble]:
    """Simulate both models of ``pair`` on one shared noise grid."""
    if noise is None:
        noise = generate_noise(config.seed, config.particles, config.steps, threads)
    lower = simulate(pair.lower, initial_lower, config, noise, threads)
    upper = simulate(pair.upper, initial_upper, config, noise, threads)
    return lower, upper


def coincidence_lower_bound(steps: int, horizon: float, lip_sigma_x: float) -> float:
    """``(1 - exp(-M / (8 T L^2)))^M``, a lower bound on P(no increment truncated)."""
    return (1.0 - math.exp(-steps / (8.0 * horizon * lip_sigma_x**2))) ** steps


def coincidence_probability(config: SchemeConfig, lip_sigma_x: float, trials: int,
                            threads: int = 1) -> tuple[float, float]:
    """Fraction of noise rows with no truncated increment, and the analytic lower bound."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    noise = generate_noise(config.seed, trials, config.steps, threads)
    thr = truncation_threshold(config.h, lip_sigma_x)
    inside = np.all(np.abs(noise.increments) <= thr, axis=1)
    return float(inside.mean()), coincidence_lower_bound(config.steps, config.horizon, lip_sigma_x)


@dataclass(frozen=True)
class RefinementRow:
    coarse_steps: int
    fine_steps: int
    h: float
    error: float
    stderr: float


@dataclass(frozen=True)
class RefinementStudy:
    rows: tuple[RefinementRow, ...]
    slope: float
    norm_exponent: float


def refinement_errors(model: CoefficientSet, initial, config: SchemeConfig, ladder,
                      norm_exponent: float = 1.0, threads: int = 1) -> RefinementStudy:
    """Sup-norm L^r errors between consecutive rungs of a dyadic step ladder.

    Noise is drawn once at the finest rung and aggregated pairwise for the
    coarser ones, so every rung is driven by the same Brownian path. The
    error between rungs ``M < M'`` is ``|| max_m |X^M_m - X^{M'}_{m M'/M}| ||_r``
    over the coarse grid; the slope is fitted to ``log error`` against ``log h``.
    """
    ladder = sorted(int(m) for m in ladder)
    if len(ladder) < 2:
        raise ValueError("ladder needs at least two step counts")
    finest = ladder[-1]
    for m in ladder:
        ratio = finest // m
        if finest % m or ratio & (ratio - 1):
            raise ValueError("ladder entries must differ by powers of two")
    fine_noise = generate_noise(config.seed, config.particles, finest, threads)
    runs = {}
    for m in ladder:
        cfg = replace(config, steps=m)
        runs[m] = simulate(model, initial, cfg, fine_noise.coarsen(finest // m), threads).states
    rows = []
    r = float(norm_exponent)
    for coarse, fine in zip(ladder[:-1], ladder[1:]):
        stride = fine // coarse
        diff = np.max(np.abs(runs[coarse] - runs[fine][:, ::stride]), axis=1)
        moment = diff**r
        mean = float(moment.mean())
        err = mean ** (1.0 / r)
        se_moment = float(moment.std(ddof=1) / math.sqrt(moment.size))
        se = err * se_moment / (r * mean) if mean > 0 else 0.0
        rows.append(RefinementRow(coarse, fine, config.horizon / coarse, err, se))
    hs = np.array([row.h for row in rows])
    errs = np.array([row.error for row in rows])
    if np.all(errs > 0) and len(rows) >= 2:
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    else:
        slope = math.nan
    return RefinementStudy(tuple(rows), slope, r)
