"""Empirical probability measures on the real line.

Wasserstein distances, stop-loss transforms and the monotone convex
(increasing convex) order test used to certify ``mu <=_mcv nu``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DEFAULT_STRIKE_COUNT = 129
DEFAULT_Z = 3.0

_MEAN_FIELD = {
    "x": lambda s: s,
    "x2": lambda s: s * s,
    "sin": np.sin,
    "cos": np.cos,
    "sin2": lambda s: np.sin(s) ** 2,
}


class EmpiricalMeasure:
    """Finitely supported probability measure stored as sorted atoms.

    Uniform weights ``1/N`` unless explicit ``weights`` are given (mixtures
    carry explicit weights). Instances are immutable; the arrays exposed by
    :attr:`samples` and :attr:`weights` are read-only.
    """

    __slots__ = ("_samples", "_weights", "_cache")

    def __init__(self, samples, weights=None):
        x = np.array(samples, dtype=np.float64).ravel()
        if x.size == 0:
            raise ValueError("an empirical measure needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if weights is None:
            x.sort(kind="stable")
            w = None
        else:
            w = np.array(weights, dtype=np.float64).ravel()
            if w.shape != x.shape:
                raise ValueError("weights and samples differ in length")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and non-negative")
            keep = w > 0
            x, w = x[keep], w[keep]
            if x.size == 0:
                raise ValueError("all weights are zero")
            order = np.argsort(x, kind="stable")
            x, w = x[order], w[order] / w.sum()
            w.setflags(write=False)
        x.setflags(write=False)
        self._samples = x
        self._weights = w
        self._cache: dict[str, float] = {}

    @classmethod
    def dirac(cls, value: float, n: int) -> "EmpiricalMeasure":
        return cls(np.full(n, float(value)))

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def weights(self) -> np.ndarray | None:
        """Explicit atom weights, or ``None`` for uniform weights."""
        return self._weights

    @property
    def is_uniform(self) -> bool:
        return self._weights is None

    @property
    def size(self) -> int:
        return int(self._samples.size)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        kind = "uniform" if self.is_uniform else "weighted"
        return f"EmpiricalMeasure(n={self.size}, {kind}, mean={self.mean():.6g})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        if self.size != other.size or not np.array_equal(self._samples, other._samples):
            return False
        if self.is_uniform and other.is_uniform:
            return True
        return np.allclose(self.atom_weights(), other.atom_weights(), rtol=0, atol=1e-15)

    __hash__ = None

    def atom_weights(self) -> np.ndarray:
        if self._weights is None:
            return np.full(self.size, 1.0 / self.size)
        return self._weights

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of a vectorized function against the measure."""
        values = np.asarray(f(self._samples), dtype=np.float64)
        if self._weights is None:
            return float(values.mean())
        return float(np.dot(self._weights, values))

    def mean_of(self, name: str) -> float:
        """Cached mean-field average: one of ``x, x2, sin, cos, sin2``."""
        try:
            return self._cache[name]
        except KeyError:
            pass
        if name not in _MEAN_FIELD:
            raise KeyError(f"unknown mean-field statistic {name!r}")
        value = self.expect(_MEAN_FIELD[name])
        self._cache[name] = value
        return value

    def mean(self) -> float:
        return self.mean_of("x")

    def std(self) -> float:
        m = self.mean()
        return float(np.sqrt(max(self.expect(lambda s: (s - m) ** 2), 0.0)))

    def quantile(self, q) -> np.ndarray | float:
        """Left-continuous quantile function ``inf{x : F(x) >= q}``."""
        q_arr = np.asarray(q, dtype=np.float64)
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise ValueError("quantile levels must lie in [0, 1]")
        cdf = np.cumsum(self.atom_weights())
        idx = np.searchsorted(cdf, q_arr - 1e-15, side="left")
        out = self._samples[np.clip(idx, 0, self.size - 1)]
        return float(out) if out.ndim == 0 else out

    def to_uniform(self, n: int | None = None) -> "EmpiricalMeasure":
        """Flatten to ``n`` equal-weight atoms at mid-rank quantiles."""
        if self._weights is None and (n is None or n == self.size):
            return self
        n = self.size if n is None else int(n)
        return EmpiricalMeasure(self.quantile((np.arange(n) + 0.5) / n))


@dataclass(frozen=True)
class StopLossCurve:
    """Values of ``k -> E(X - k)^+`` on an ascending strike grid."""

    strikes: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        write_stop_loss_csv(path, [(None, self)])


@dataclass(frozen=True)
class OrderVerdict:
    dominated: bool
    worst_margin: float
    worst_strike: float
    tolerance_used: float


def _require_equal_uniform(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.size != nu.size:
        raise ValueError(f"sample counts differ ({mu.size} vs {nu.size})")


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Wasserstein-p distance between two empirical measures.

    Equal-size uniform measures use the sorted (comonotone) coupling, which is
    optimal in one dimension. Weighted measures are compared through their
    quantile functions on the merged CDF breakpoints.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if mu.is_uniform and nu.is_uniform:
        _require_equal_uniform(mu, nu)
        d = np.abs(mu.samples - nu.samples)
        if not np.any(d):
            return 0.0
        return float(np.mean(d**p) ** (1.0 / p))
    cdf_mu = np.cumsum(mu.atom_weights())
    cdf_nu = np.cumsum(nu.atom_weights())
    levels = np.unique(np.concatenate([[0.0], cdf_mu, cdf_nu]))
    levels = levels[levels <= 1.0]
    lo, hi = levels[:-1], levels[1:]
    mid = 0.5 * (lo + hi)
    qa = mu.samples[np.clip(np.searchsorted(cdf_mu, mid), 0, mu.size - 1)]
    qb = nu.samples[np.clip(np.searchsorted(cdf_nu, mid), 0, nu.size - 1)]
    return float(np.sum((hi - lo) * np.abs(qa - qb) ** p) ** (1.0 / p))


def _suffix_sums(mu: EmpiricalMeasure):
    w = mu.atom_weights()
    x = mu.samples
    # tail[i] = sum over atoms j >= i; padded with a trailing zero
    tail_w = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    tail_wx = np.concatenate([np.cumsum((w * x)[::-1])[::-1], [0.0]])
    tail_wx2 = np.concatenate([np.cumsum((w * x * x)[::-1])[::-1], [0.0]])
    return tail_w, tail_wx, tail_wx2


def stop_loss(mu: EmpiricalMeasure, k) -> float | np.ndarray:
    """``E (X - k)^+`` under ``mu`` for a scalar or array of strikes."""
    k_arr = np.asarray(k, dtype=np.float64)
    if k_arr.ndim == 0:
        return mu.expect(lambda s: np.maximum(s - float(k_arr), 0.0))
    tail_w, tail_wx, _ = _suffix_sums(mu)
    idx = np.searchsorted(mu.samples, k_arr, side="right")
    return np.maximum(tail_wx[idx] - k_arr * tail_w[idx], 0.0)


def stop_loss_curve(mu: EmpiricalMeasure, strikes) -> StopLossCurve:
    k = np.asarray(strikes, dtype=np.float64)
    if k.ndim != 1 or k.size == 0:
        raise ValueError("strike grid must be a nonempty 1-D sequence")
    if np.any(np.diff(k) <= 0):
        raise ValueError("strike grid must be strictly ascending")
    return StopLossCurve(k, stop_loss(mu, k))


def default_strikes(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                    count: int = DEFAULT_STRIKE_COUNT) -> np.ndarray:
    """Equally spaced strikes over the pooled range widened by one pooled std."""
    pooled = np.concatenate([mu.samples, nu.samples])
    spread = float(pooled.std())
    lo, hi = float(pooled.min()) - spread, float(pooled.max()) + spread
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    return np.linspace(lo, hi, count)


def _payoff_variance(mu: EmpiricalMeasure, k: np.ndarray) -> np.ndarray:
    tail_w, tail_wx, tail_wx2 = _suffix_sums(mu)
    idx = np.searchsorted(mu.samples, k, side="right")
    first = tail_wx[idx] - k * tail_w[idx]
    second = tail_wx2[idx] - 2.0 * k * tail_wx[idx] + k * k * tail_w[idx]
    return np.maximum(second - first * first, 0.0)


def stop_loss_tolerance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, strikes,
                        z: float = DEFAULT_Z) -> np.ndarray:
    """Per-strike slack ``z * sqrt(var_mu/N_mu + var_nu/N_nu)`` of the payoff ``(x-k)^+``."""
    k = np.asarray(strikes, dtype=np.float64)
    var = _payoff_variance(mu, k) / mu.size + _payoff_variance(nu, k) / nu.size
    return z * np.sqrt(var)


def check_mcv(mu: EmpiricalMeasure, nu: EmpiricalMeasure, strikes,
              tolerance=0.0) -> OrderVerdict:
    """Test ``mu <=_mcv nu`` through stop-loss dominance on a strike grid.

    ``tolerance`` is either a scalar or one slack per strike (see
    :func:`stop_loss_tolerance`). The reported strike is the one with the
    smallest slack-adjusted margin.
    """
    k = np.asarray(strikes, dtype=np.float64)
    if k.ndim != 1 or k.size == 0:
        raise ValueError("strike grid must be nonempty")
    tol = np.broadcast_to(np.asarray(tolerance, dtype=np.float64), k.shape)
    if np.any(tol < 0):
        raise ValueError("tolerance must be non-negative")
    margin = np.asarray(stop_loss(nu, k)) - np.asarray(stop_loss(mu, k))
    worst = int(np.argmin(margin + tol))
    return OrderVerdict(
        dominated=bool(margin[worst] >= -tol[worst]),
        worst_margin=float(margin[worst]),
        worst_strike=float(k[worst]),
        tolerance_used=float(tol[worst]),
    )


def mixture(mu: EmpiricalMeasure, nu: EmpiricalMeasure, lam: float) -> EmpiricalMeasure:
    """The measure ``lam * mu + (1 - lam) * nu`` with explicit atom weights."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixture weight must lie in [0, 1], got {lam}")
    _require_equal_uniform(mu, nu)
    if lam == 1.0:
        return mu
    if lam == 0.0:
        return nu
    samples = np.concatenate([mu.samples, nu.samples])
    weights = np.concatenate([lam * mu.atom_weights(), (1.0 - lam) * nu.atom_weights()])
    return EmpiricalMeasure(samples, weights)


def write_stop_loss_csv(path, curves: Sequence[tuple[int | None, StopLossCurve]]) -> None:
    """Write ``strike,value`` rows; a leading ``step`` column when steps are given."""
    with_step = any(step is not None for step, _ in curves)
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["step", "strike", "value"] if with_step else ["strike", "value"])
        for step, curve in curves:
            for k, v in zip(curve.strikes, curve.values):
                row = [f"{k:.17g}", f"{v:.17g}"]
                out.writerow([step, *row] if with_step else row)
