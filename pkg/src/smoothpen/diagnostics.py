"""Sampling estimators for exactness of the penalty and the constants behind it.

Everything here is an estimate from finite samples on explicit grids and
seeds: Lipschitz constants, subregularity constants, the optimal value
function ``h(mu)``, calmness quotients, and the smallest penalty parameter
for which the solver returns ``eps = 0`` at the known solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expr import ExprError
from .penalty import (
    Family,
    PenaltyConfig,
    PenaltyDomainError,
    Region,
    penalty_gradient,
    penalty_value,
)
from .problem import Problem, distance_to_feasible, fd_relative_error
from .solver import (
    AllStartsFailedError,
    ContinuationError,
    SolveSettings,
    constrained_minimum,
    multi_start,
    start_points,
)

__all__ = [
    "CalmnessReport",
    "ExactnessVerdict",
    "HSamples",
    "SubregularityEstimate",
    "ThresholdProbe",
    "ThresholdResult",
    "bound_constants",
    "calmness_from_below",
    "empirical_lambda_threshold",
    "estimate_lipschitz",
    "estimate_subregularity",
    "exactness_experiment",
    "exponent_condition",
    "gradient_check_points",
    "optimal_value_samples",
    "theoretical_lambda_bound",
]

DEFAULT_RADII = (0.1, 0.03, 0.01, 0.003, 0.001)


def _ball_samples(rng: np.random.Generator, center: np.ndarray, radius: float, k: int) -> np.ndarray:
    n = center.shape[0]
    u = rng.standard_normal((k, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    s = rng.uniform(0.0, 1.0, size=(k, 1)) ** (1.0 / n)
    return center + radius * s * u


# ---------------------------------------------------------------------------
# Lipschitz and subregularity constants


def estimate_lipschitz(p: Problem, x_star, radius: float, n_samples: int = 500,
                       seed: int = 0) -> float:
    """Largest difference quotient of ``f`` over random pairs in the ball around ``x_star``.

    Points are clipped to the box; clipping onto a box containing the center
    never leaves the ball.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    rng = np.random.default_rng(seed)
    center = np.asarray(x_star, dtype=float)
    u = p.box.clip(_ball_samples(rng, center, radius, n_samples))
    v = p.box.clip(_ball_samples(rng, center, radius, n_samples))
    best = 0.0
    for a, b in zip(u, v):
        dist = float(np.linalg.norm(a - b))
        if dist < 1e-12:
            continue
        best = max(best, abs(p.objective(a)[0] - p.objective(b)[0]) / dist)
    return best


@dataclass(frozen=True)
class SubregularityEstimate:
    radius: float  # smallest radius sampled
    samples: int
    a_hat: float
    radii: tuple[float, ...]
    trend: tuple[float, ...]
    failure_flag: bool
    approximate: bool = False

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "samples": self.samples,
            "a_hat": self.a_hat,
            "radii": list(self.radii),
            "trend": list(self.trend),
            "failure_flag": self.failure_flag,
            "approximate": self.approximate,
        }


FAILURE_LEVEL = 0.05


def estimate_subregularity(p: Problem, x_star, radii: Sequence[float] = DEFAULT_RADII,
                           n_samples: int = 200, seed: int = 0) -> SubregularityEstimate:
    """Smallest ratio ``||F(x)|| / d(x, feasible set)`` over samples at each radius.

    ``failure_flag`` is raised when the ratio shrinks with the radius and ends
    below 0.05 at the smallest radius.
    """
    radii = tuple(sorted((float(r) for r in radii), reverse=True))
    if not radii or radii[-1] <= 0:
        raise ValueError("radii must be positive")
    rng = np.random.default_rng(seed)
    center = np.asarray(x_star, dtype=float)
    trend = []
    used = 0
    approximate = False
    for r in radii:
        best = math.inf
        for x in p.box.clip(_ball_samples(rng, center, r, n_samples)):
            d = distance_to_feasible(p, x, seed=seed)
            approximate |= d.approximate
            if d.value <= 0.0:
                continue
            used += 1
            best = min(best, float(np.linalg.norm(p.constraints(x)[0])) / d.value)
        trend.append(best)
    if used == 0:
        raise ValueError("every sample was feasible; cannot estimate the subregularity constant")
    a_hat = min(trend)
    shrinking = trend[-1] < 0.5 * trend[0]
    return SubregularityEstimate(
        radius=radii[-1],
        samples=used,
        a_hat=a_hat,
        radii=radii,
        trend=tuple(trend),
        failure_flag=bool(shrinking and trend[-1] < FAILURE_LEVEL),
        approximate=approximate,
    )


# ---------------------------------------------------------------------------
# Optimal value function and calmness


@dataclass(frozen=True)
class HSamples:
    mu_grid: np.ndarray
    h_values: np.ndarray
    converged: tuple[bool, ...]
    failed: tuple[bool, ...]
    h_at_zero: float
    h_at_zero_source: str  # "oracle" or "continuation"

    def to_dict(self) -> dict:
        return {
            "mu_grid": self.mu_grid.tolist(),
            "h_values": [None if math.isnan(v) else v for v in self.h_values.tolist()],
            "converged": list(self.converged),
            "failed": list(self.failed),
            "h_at_zero": self.h_at_zero,
            "h_at_zero_source": self.h_at_zero_source,
        }


def optimal_value_samples(p: Problem, cfg: PenaltyConfig, mu_grid,
                          settings: SolveSettings) -> HSamples:
    """Estimate ``h(mu) = min_x penalty(x, mu)`` at ``lambda = 0`` on each grid point.

    ``h(0)`` comes from the solution oracle when present, otherwise from
    penalty continuation on the constrained problem.
    """
    mu = np.asarray(mu_grid, dtype=float).reshape(-1)
    if mu.size == 0 or np.any(mu <= 0) or np.any(np.diff(mu) <= 0):
        raise ValueError("mu_grid must be positive and strictly ascending")
    if mu[-1] > cfg.eps_bar:
        raise ValueError(f"mu_grid exceeds eps_bar={cfg.eps_bar}")
    cfg0 = cfg.with_lambda(0.0)
    h = np.full(mu.size, math.nan)
    converged, failed = [], []
    for i, m in enumerate(mu):
        try:
            best = multi_start(p, cfg0, settings, fixed_eps=float(m)).best
        except AllStartsFailedError:
            converged.append(False)
            failed.append(True)
            continue
        h[i] = best.value
        converged.append(best.converged)
        failed.append(False)

    if p.f_star is not None:
        h0, source = p.f_star, "oracle"
    else:
        starts = [z[:-1] for z in start_points(p, cfg, settings)]
        try:
            h0 = constrained_minimum(p, settings, starts)[1]
        except ContinuationError:
            h0 = math.nan
        source = "continuation"
    return HSamples(mu, h, tuple(converged), tuple(failed), float(h0), source)


@dataclass(frozen=True)
class CalmnessReport:
    quotients: np.ndarray
    inf_quotient: float
    calm_from_below_verdict: bool

    def to_dict(self) -> dict:
        return {
            "quotients": [None if math.isnan(v) else v for v in self.quotients.tolist()],
            "inf_quotient": self.inf_quotient,
            "calm_from_below_verdict": self.calm_from_below_verdict,
        }


# a refinement step may lower the quotient by at most this fraction
CALM_DROP = 0.1
CALM_FLOOR = 1e-8


def calmness_from_below(samples: HSamples, beta: tuple[float, float]) -> CalmnessReport:
    """Quotients ``(h(mu) - h(0)) / (b * mu**sigma)`` and a bounded-below verdict.

    The verdict holds when, over the three smallest ``mu``, each step toward
    zero lowers the quotient by no more than 10 percent.
    """
    b, sigma = beta
    mu = samples.mu_grid
    q = (samples.h_values - samples.h_at_zero) / (b * mu**sigma)
    finite = q[np.isfinite(q)]
    inf_q = float(finite.min()) if finite.size else math.nan
    tail = q[:3]
    verdict = bool(np.all(np.isfinite(tail)))
    if verdict:
        for fine, coarse in zip(tail[:-1], tail[1:]):
            if fine < coarse - CALM_DROP * abs(coarse) - CALM_FLOOR:
                verdict = False
    return CalmnessReport(q, inf_q, verdict)


# ---------------------------------------------------------------------------
# Penalty parameter: theory and experiment


def exponent_condition(alpha: float, gamma: float, sigma: float) -> bool:
    """``gamma > 1/2`` and ``sigma <= alpha / (2 gamma - 1)``."""
    if min(alpha, gamma, sigma) <= 0:
        raise ValueError("alpha, gamma and sigma must be > 0")
    return gamma > 0.5 and sigma <= alpha / (2.0 * gamma - 1.0)


def theoretical_lambda_bound(L: float, phi0: float, beta0: float, a: float) -> float:
    """``L**2 / (4 phi0 beta0 a**2)``; infinite when ``a == 0``."""
    if L < 0 or a < 0:
        raise ValueError("L and a must be non-negative")
    if phi0 <= 0 or beta0 <= 0:
        raise ValueError("phi0 and beta0 must be > 0")
    if a == 0:
        return math.inf
    return L * L / (4.0 * phi0 * beta0 * a * a)


def bound_constants(cfg: PenaltyConfig) -> tuple[float, float, Optional[str]]:
    """``(phi0, beta0, reason)`` read off the config; ``reason`` is None when the bound applies.

    The bound needs ``phi(t) >= phi0 * t`` and ``beta(mu) >= beta0 * mu`` near
    zero with a ``1/eps`` scaling of the residual term.
    """
    beta0 = cfg.beta_coeff
    reason = None
    if cfg.sigma > 1:
        reason = "sigma > 1: beta(mu) is not bounded below by a multiple of mu"
    if cfg.family is Family.RATIONAL:
        phi0 = 0.5
        if cfg.w is not None and np.any(cfg.w != 0):
            reason = reason or "nonzero shift w"
    else:
        phi0 = cfg.phi_coeff
        if cfg.alpha != 1:
            reason = reason or "alpha != 1"
        elif cfg.gamma > 1:
            reason = reason or "gamma > 1: phi(t) is not bounded below by a multiple of t"
    return phi0, beta0, reason


@dataclass(frozen=True)
class ThresholdProbe:
    lam: float
    eps_star: float
    x_error: float
    exact: bool


@dataclass(frozen=True)
class ThresholdResult:
    threshold: Optional[float]  # None when not found up to lambda_max
    monotone: bool
    probes: tuple[ThresholdProbe, ...]

    @property
    def found(self) -> bool:
        return self.threshold is not None


def _probe(p: Problem, cfg: PenaltyConfig, settings: SolveSettings, lam: float,
           tol_eps: float, tol_x: float) -> ThresholdProbe:
    try:
        best = multi_start(p, cfg.with_lambda(lam), settings).best
    except AllStartsFailedError:
        return ThresholdProbe(lam, math.nan, math.nan, False)
    x_err = float(np.linalg.norm(best.x_star - p.x_star))
    return ThresholdProbe(lam, best.eps_star, x_err, best.eps_star <= tol_eps and x_err <= tol_x)


def empirical_lambda_threshold(p: Problem, cfg_template: PenaltyConfig, settings: SolveSettings,
                               lambda_max: float, bisect_tol: float = 1e-3, *,
                               tol_eps: float = 1e-8, tol_x: float = 1e-4) -> ThresholdResult:
    """Bisect for the smallest lambda at which multi-start lands on ``(x*, 0)``.

    The predicate is "best eps_star <= tol_eps and ||x_star - x*|| <= tol_x".
    Returns threshold None when the predicate fails at ``lambda_max`` and 0
    when it already holds at 0.  The answer is re-probed one ``bisect_tol``
    either side; ``monotone`` is False when that check disagrees.
    """
    if p.x_star is None:
        raise ValueError(f"{p.name}: an analytic solution is required")
    if lambda_max <= 0 or bisect_tol <= 0:
        raise ValueError("lambda_max and bisect_tol must be > 0")
    probes = []

    def pred(lam: float) -> bool:
        pr = _probe(p, cfg_template, settings, lam, tol_eps, tol_x)
        probes.append(pr)
        return pr.exact

    if not pred(lambda_max):
        return ThresholdResult(None, True, tuple(probes))
    if pred(0.0):
        return ThresholdResult(0.0, True, tuple(probes))
    lo, hi = 0.0, float(lambda_max)
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    t = 0.5 * (lo + hi)
    below = pred(t - bisect_tol) if t - bisect_tol > 0 else False
    above = pred(t + bisect_tol) if t + bisect_tol < lambda_max else True
    return ThresholdResult(t, bool(above and not below), tuple(probes))


@dataclass(frozen=True)
class ExactnessVerdict:
    L_hat: float
    a_hat: float
    phi0: float
    beta0: float
    theoretical_bound: float
    bound_note: Optional[str]
    empirical_threshold: Optional[float]
    threshold_monotone: bool
    exact: bool
    tol_eps: float
    tol_x: float
    subregularity: SubregularityEstimate
    probes: tuple[ThresholdProbe, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "L_hat": self.L_hat,
            "a_hat": self.a_hat,
            "phi0": self.phi0,
            "beta0": self.beta0,
            "theoretical_bound": self.theoretical_bound,
            "bound_note": self.bound_note,
            "empirical_threshold": self.empirical_threshold,
            "threshold_found": self.empirical_threshold is not None,
            "threshold_monotone": self.threshold_monotone,
            "exact": self.exact,
            "tol_eps": self.tol_eps,
            "tol_x": self.tol_x,
            "subregularity": self.subregularity.to_dict(),
        }


def exactness_experiment(p: Problem, cfg: PenaltyConfig, settings: SolveSettings, *,
                         lambda_max: float = 10.0, bisect_tol: float = 1e-3,
                         radii: Sequence[float] = DEFAULT_RADII, n_samples: int = 200,
                         lipschitz_pairs: int = 500, seed: int = 0,
                         tol_eps: float = 1e-8, tol_x: float = 1e-4) -> ExactnessVerdict:
    """Estimate L and a near the solution, form the bound, and measure the threshold."""
    if p.x_star is None:
        raise ValueError(f"{p.name}: an analytic solution is required")
    L_hat = estimate_lipschitz(p, p.x_star, max(radii), lipschitz_pairs, seed)
    sub = estimate_subregularity(p, p.x_star, radii, n_samples, seed)
    phi0, beta0, note = bound_constants(cfg)
    if sub.failure_flag:
        bound, note = math.inf, note or "subregularity fails"
    elif note is not None:
        bound = math.inf
    else:
        bound = theoretical_lambda_bound(L_hat, phi0, beta0, sub.a_hat)
    th = empirical_lambda_threshold(p, cfg, settings, lambda_max, bisect_tol,
                                    tol_eps=tol_eps, tol_x=tol_x)
    return ExactnessVerdict(
        L_hat=L_hat,
        a_hat=sub.a_hat,
        phi0=phi0,
        beta0=beta0,
        theoretical_bound=bound,
        bound_note=note,
        empirical_threshold=th.threshold,
        threshold_monotone=th.monotone,
        exact=th.found and math.isfinite(th.threshold),
        tol_eps=tol_eps,
        tol_x=tol_x,
        subregularity=sub,
        probes=th.probes,
    )


# ---------------------------------------------------------------------------
# Gradient check


def gradient_check_points(p: Problem, cfg: PenaltyConfig, n_points: int, seed: int):
    """Random Interior points with analytic-vs-central-difference errors.

    Yields ``(x, eps, value, error)``.  Points keep ``eps`` in
    ``[eps_bar/100, eps_bar)`` and, for the Rational family, ``1 - q*Delta >= 0.1``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = p.box.lower, p.box.upper
    found = 0
    for _ in range(200 * n_points):
        if found == n_points:
            return
        x = lo + (hi - lo) * rng.uniform(0.01, 0.99, size=p.n)
        eps = rng.uniform(cfg.eps_bar / 100.0, cfg.eps_bar * 0.99)
        try:
            ev = penalty_value(p, cfg, x, eps)
            if ev.region is not Region.INTERIOR or not ev.finite:
                continue
            if cfg.family is Family.RATIONAL:
                r = p.constraints(x)[0] - eps * cfg.shift(p.m)
                if 1.0 - cfg.q * float(r @ r) < 0.1:
                    continue
            ev = penalty_gradient(p, cfg, x, eps)
            z = np.append(x, eps)
            num = np.empty_like(z)
            for i in range(z.size):
                h = 1e-6 * (1.0 + abs(z[i]))
                zp, zm = z.copy(), z.copy()
                zp[i] += h
                zm[i] -= h
                fp = penalty_value(p, cfg, zp[:-1], zp[-1]).value
                fm = penalty_value(p, cfg, zm[:-1], zm[-1]).value
                num[i] = (fp - fm) / (2.0 * h)
        except (ExprError, PenaltyDomainError, ArithmeticError):
            continue
        if not np.all(np.isfinite(num)):
            continue
        found += 1
        yield x, eps, ev.value, fd_relative_error(np.append(ev.grad_x, ev.grad_eps), num)
