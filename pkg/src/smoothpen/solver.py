"""Projected gradient minimization of the penalty over ``box x [eps_floor, eps_bar]``.

The method is a monotone spectral projected gradient: Barzilai-Borwein trial
steps, Armijo backtracking on the projection arc, and rejection of every
non-finite trial value.  Two safeguards keep ``x`` and ``eps`` in balance:

* while ``x`` is far from stationary relative to ``eps``, only ``x`` moves;
* once ``x`` has settled, consecutive settled points define a secant of the
  valley ``x(eps)`` and a step along it shrinks ``eps`` geometrically.

Without these, plain projected gradient drives ``eps`` to underflow long
before ``x`` converges along the constraint manifold.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

import numpy as np

from .expr import ExprError
from .penalty import PenaltyConfig, Region, penalty_gradient, penalty_value
from .problem import BoxBounds, Problem

__all__ = [
    "AllStartsFailedError",
    "MultiStartResult",
    "SolveResult",
    "SolveSettings",
    "StartPointError",
    "minimize",
    "multi_start",
    "project",
    "start_points",
]


class StartPointError(RuntimeError):
    """The start point has an infinite penalty value that could not be repaired."""


class AllStartsFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveSettings:
    max_iters: int = 5000
    grad_tol: float = 1e-8
    step_init: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    eps_floor: float = 0.0
    n_starts: int = 20
    rng_seed: int = 0
    # move x alone while ||pg_x|| > settle_ratio * |pg_eps|
    settle_ratio: float = 0.1
    # fraction of eps kept by a valley step
    valley_shrink: float = 0.1
    # relative eps gap between two settled points needed for a valley step
    valley_separation: float = 1e-3
    max_backtracks: int = 50
    # stop when the value improved by less than ftol * (1 + |f|) over stall_window steps
    ftol: float = 1e-15
    stall_window: int = 30
    workers: int = 1

    def __post_init__(self):
        for name in ("max_iters", "n_starts", "max_backtracks", "stall_window", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"solver.{name} must be a positive integer")
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, (int, np.integer)):
            raise ValueError("solver.rng_seed must be an integer")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("solver.rng_seed must fit in 64 unsigned bits")
        for name in ("grad_tol", "step_init", "settle_ratio", "ftol", "valley_separation"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValueError(f"solver.{name} must be a positive number")
        for name in ("armijo_c", "shrink", "valley_shrink"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 < v < 1):
                raise ValueError(f"solver.{name} must lie in (0, 1)")
        if not (isinstance(self.eps_floor, (int, float)) and self.eps_floor >= 0):
            raise ValueError("solver.eps_floor must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SolveSettings":
        if not isinstance(doc, dict):
            raise ValueError("solver must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unexpected solver fields: {sorted(extra)}")
        return cls(**doc)


@dataclass(frozen=True)
class SolveResult:
    x_star: np.ndarray
    eps_star: float
    value: float
    projected_grad_norm: float
    iters: int
    converged: bool
    start_index: int
    status: str
    history: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "start_index": self.start_index,
            "x_star": self.x_star.tolist(),
            "eps_star": self.eps_star,
            "value": self.value,
            "projected_grad_norm": self.projected_grad_norm,
            "iters": self.iters,
            "converged": self.converged,
            "status": self.status,
        }


def project(point, box: BoxBounds, eps_interval: tuple[float, float]) -> np.ndarray:
    """Clamp ``(x, eps)`` (concatenated, eps last) onto ``box x eps_interval``."""
    z = np.asarray(point, dtype=float).reshape(-1)
    lo = np.append(box.lower, eps_interval[0])
    hi = np.append(box.upper, eps_interval[1])
    return np.clip(z, lo, hi)


# ---------------------------------------------------------------------------


class _Objective:
    """Penalty restricted to the decision vector ``z``; non-finite or undefined means inf."""

    def __init__(self, p: Problem, cfg: PenaltyConfig, fixed_eps: Optional[float]):
        self.p, self.cfg, self.fixed_eps = p, cfg, fixed_eps

    def split(self, z: np.ndarray) -> tuple[np.ndarray, float]:
        if self.fixed_eps is None:
            return z[:-1], float(z[-1])
        return z, self.fixed_eps

    def value(self, z: np.ndarray) -> float:
        x, eps = self.split(z)
        try:
            v = penalty_value(self.p, self.cfg, x, eps).value
        except (ExprError, ArithmeticError):
            return math.inf
        return v if math.isfinite(v) else math.inf

    def gradient(self, z: np.ndarray) -> Optional[np.ndarray]:
        """Gradient, or ``None`` at a FeasibleZero point (treated as stationary)."""
        x, eps = self.split(z)
        ev = penalty_value(self.p, self.cfg, x, eps)
        if ev.region is Region.FEASIBLE_ZERO:
            return None
        ev = penalty_gradient(self.p, self.cfg, x, eps)
        g = ev.grad_x if self.fixed_eps is not None else np.append(ev.grad_x, ev.grad_eps)
        if not np.all(np.isfinite(g)):
            raise ArithmeticError("non-finite gradient")
        return g


def _armijo(F: Callable, z, f, g, d, lo, hi, t, s: SolveSettings):
    for _ in range(s.max_backtracks):
        zt = np.clip(z - t * d, lo, hi)
        ft = F(zt)
        if ft < f and ft <= f + s.armijo_c * float(g @ (zt - z)):
            return zt, ft
        t *= s.shrink
    return None, None


def _repair_start(obj: _Objective, z: np.ndarray, hi_eps: float) -> tuple[np.ndarray, float]:
    f = obj.value(z)
    if math.isfinite(f) or obj.fixed_eps is not None:
        if not math.isfinite(f):
            raise StartPointError("penalty is infinite at the start point")
        return z, f
    # nudge eps upward toward eps_bar until the value is finite
    base = max(float(z[-1]), hi_eps * 1e-8)
    for eps in np.geomspace(base, hi_eps, 17):
        zt = z.copy()
        zt[-1] = min(eps, hi_eps)
        f = obj.value(zt)
        if math.isfinite(f):
            return zt, f
    raise StartPointError("penalty is infinite at the start point for every eps up to eps_bar")


def minimize(p: Problem, cfg: PenaltyConfig, settings: SolveSettings, start,
             eps: Optional[float] = None, *, fixed_eps: bool = False,
             start_index: int = 0) -> SolveResult:
    """Minimize the penalty from ``start``.

    ``start`` is either ``(x, eps)`` concatenated or ``x`` with ``eps`` given
    separately.  With ``fixed_eps=True`` only ``x`` moves and ``eps`` stays
    at the given value (which may lie anywhere in ``(0, eps_bar]``).
    """
    s = settings
    start = np.asarray(start, dtype=float).reshape(-1)
    if eps is None:
        if start.shape[0] != p.n + 1:
            raise ValueError(f"start must have length n+1={p.n + 1}")
        x0, e0 = start[:-1], float(start[-1])
    else:
        if start.shape[0] != p.n:
            raise ValueError(f"start must have length n={p.n}")
        x0, e0 = start, float(eps)
    if fixed_eps and eps is None:
        raise ValueError("fixed_eps requires eps")

    lo_eps, hi_eps = min(s.eps_floor, cfg.eps_bar), cfg.eps_bar
    obj = _Objective(p, cfg, e0 if fixed_eps else None)
    if fixed_eps:
        lo, hi = p.box.lower.copy(), p.box.upper.copy()
        z = np.clip(x0, lo, hi)
    else:
        lo = np.append(p.box.lower, lo_eps)
        hi = np.append(p.box.upper, hi_eps)
        z = np.clip(np.append(x0, e0), lo, hi)
    z, f = _repair_start(obj, z, hi_eps)

    def result(z, f, pg_norm, k, converged, status, hist):
        x, e = obj.split(z)
        return SolveResult(x.copy(), e, f, pg_norm, k, converged, start_index, status, tuple(hist))

    g = obj.gradient(z)
    hist = [f]
    if g is None:
        return result(z, f, 0.0, 0, True, "feasible-zero", hist)

    a = s.step_init
    anchor, f_anchor = None, math.inf
    for k in range(s.max_iters):
        pg = np.clip(z - g, lo, hi) - z
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm <= s.grad_tol:
            return result(z, f, pg_norm, k, True, "converged", hist)

        zt = ft = None
        if not fixed_eps and np.linalg.norm(pg[:-1]) > s.settle_ratio * abs(pg[-1]):
            d = g.copy()
            d[-1] = 0.0
            zt, ft = _armijo(obj.value, z, f, g, d, lo, hi, a, s)
        if zt is None and not fixed_eps:
            if anchor is None:
                anchor, f_anchor = z.copy(), f
            elif max(anchor[-1], z[-1]) >= (1.0 + s.valley_separation) * min(anchor[-1], z[-1]):
                zt, ft = _valley_step(obj.value, z, f, g, anchor, f_anchor, lo, hi, s)
                anchor, f_anchor = z.copy(), f
        if zt is None:
            zt, ft = _armijo(obj.value, z, f, g, g, lo, hi, a, s)
        if zt is None:
            return result(z, f, pg_norm, k, False, "line-search-failed", hist)

        gt = obj.gradient(zt)
        hist.append(ft)
        if gt is None:
            return result(zt, ft, 0.0, k + 1, True, "feasible-zero", hist)
        step, dg = zt - z, gt - g
        sy = float(step @ dg)
        a = float(step @ step) / sy if sy > 0 else 1e10
        a = min(max(a, 1e-30), 1e30)
        z, f, g = zt, ft, gt
        w = s.stall_window
        if len(hist) > w and hist[-w - 1] - f <= s.ftol * (1.0 + abs(f)):
            pg_norm = float(np.linalg.norm(np.clip(z - g, lo, hi) - z))
            return result(z, f, pg_norm, k + 1, pg_norm <= s.grad_tol, "stalled", hist)

    pg_norm = float(np.linalg.norm(np.clip(z - g, lo, hi) - z))
    return result(z, f, pg_norm, s.max_iters, pg_norm <= s.grad_tol, "max-iters", hist)


def _valley_step(F, z, f, g, anchor, f_anchor, lo, hi, s: SolveSettings):
    # secant through two settled points approximates dx/deps along the valley
    slope = (anchor[:-1] - z[:-1]) / (anchor[-1] - z[-1])
    d = np.append(slope, 1.0)
    D = float(g @ d)
    if D == 0:
        return None, None
    eps = z[-1]
    # trial moves in eps: a geometric jump, then the minimizer of the parabola
    # through f, D at z and f_anchor at the anchor
    trials = [-eps * (1.0 - s.valley_shrink) if D > 0 else min(eps / s.valley_shrink, hi[-1]) - eps]
    ta = anchor[-1] - eps
    curv = (f_anchor - f - D * ta) / (ta * ta)
    if curv > 0:
        trials.append(min(max(-D / (2.0 * curv), -eps * (1.0 - s.valley_shrink)), hi[-1] - eps))
    for tau in trials:
        for _ in range(10):
            zt = np.clip(z + tau * d, lo, hi)
            ft = F(zt)
            if ft < f and ft <= f + s.armijo_c * tau * D:
                return zt, ft
            tau *= 0.5
    return None, None


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiStartResult:
    best: SolveResult
    results: tuple[SolveResult, ...]
    failures: tuple[tuple[int, str], ...] = ()


def start_points(p: Problem, cfg: PenaltyConfig, settings: SolveSettings) -> list[np.ndarray]:
    """Deterministic start list: box center at eps_bar/2, then uniform draws."""
    rng = np.random.default_rng(settings.rng_seed)
    lo_eps = max(cfg.eps_bar / 100.0, min(settings.eps_floor, cfg.eps_bar))
    starts = [np.append(p.box.center, max(cfg.eps_bar / 2.0, lo_eps))]
    for _ in range(settings.n_starts - 1):
        x = rng.uniform(p.box.lower, p.box.upper)
        e = rng.uniform(lo_eps, cfg.eps_bar)
        starts.append(np.append(x, e))
    return starts


def multi_start(p: Problem, cfg: PenaltyConfig, settings: SolveSettings,
                fixed_eps: Optional[float] = None) -> MultiStartResult:
    """Run :func:`minimize` from every start point and keep the best.

    Best means least value, then smaller ``eps_star``, then smaller start index.
    With ``fixed_eps`` the starts keep their ``x`` and use the given ``eps``.
    """
    starts = start_points(p, cfg, settings)

    def job(i: int):
        z = starts[i]
        try:
            if fixed_eps is None:
                return minimize(p, cfg, settings, z, start_index=i)
            return minimize(p, cfg, settings, z[:-1], fixed_eps, fixed_eps=True, start_index=i)
        except (StartPointError, ArithmeticError, ExprError, ValueError) as exc:
            return (i, f"{type(exc).__name__}: {exc}")

    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            outcomes = list(pool.map(job, range(len(starts))))
    else:
        outcomes = [job(i) for i in range(len(starts))]

    results = tuple(o for o in outcomes if isinstance(o, SolveResult))
    failures = tuple(o for o in outcomes if not isinstance(o, SolveResult))
    if not results:
        raise AllStartsFailedError(
            f"all {len(starts)} starts failed; first error: {failures[0][1]}"
        )
    best = min(results, key=lambda r: (r.value, r.eps_star, r.start_index))
    return MultiStartResult(best, results, failures)



class ContinuationError(RuntimeError):
    """Penalty continuation found no point satisfying the constraints."""


CONTINUATION_EPS = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)


def constrained_minimum(p: Problem, settings: SolveSettings, starts,
                        feas_tol: float = 1e-6) -> tuple[np.ndarray, float]:
    """Approximate ``min f`` over the feasible set by quadratic-penalty continuation.

    Each start is driven through ``f + ||F||**2 / eps`` for a decreasing
    sequence of frozen ``eps``; the best end point with ``||F|| <= feas_tol`` wins.
    """
    from .penalty import Family

    cfg = PenaltyConfig(family=Family.POWER, eps_bar=max(CONTINUATION_EPS))
    best_x, best_f = None, math.inf
    for y in starts:
        y = np.asarray(y, dtype=float)
        try:
            for eps in CONTINUATION_EPS:
                y = minimize(p, cfg, settings, y, eps, fixed_eps=True).x_star
            F = p.constraints(y)[0]
            fy = p.objective(y)[0]
        except (StartPointError, ArithmeticError, ExprError, ValueError):
            continue
        if float(np.linalg.norm(F)) <= feas_tol and fy < best_f:
            best_x, best_f = y, fy
    if best_x is None:
        raise ContinuationError(f"{p.name}: no feasible point found by penalty continuation")
    return best_x, best_f
