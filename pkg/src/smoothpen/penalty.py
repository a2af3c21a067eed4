"""Smooth exact penalty functions on the augmented variable ``(x, eps)``.

Two families share the structure ``f(x) + phi-term(x, eps) + lam * b * eps**sigma``:

* ``RATIONAL``: ``Delta / (2 eps (1 - q Delta))`` with ``Delta = ||F(x) - eps w||**2``,
  finite only while ``Delta < 1/q``.
* ``POWER``: ``c * eps**(-alpha) * (||F(x)||**2)**gamma``, finite for every ``eps > 0``.

At ``eps = 0`` both are ``f(x)`` on the feasible set and ``+inf`` elsewhere.
Infinite values are plain ``float('inf')``.  An Interior value that is too
large to represent also becomes ``inf`` but keeps the Interior tag.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .problem import Problem

__all__ = [
    "Family",
    "PenaltyConfig",
    "PenaltyConfigError",
    "PenaltyDomainError",
    "PenaltyEval",
    "Region",
    "classify_region",
    "delta",
    "monotone_in_lambda_check",
    "penalty_gradient",
    "penalty_value",
]


class PenaltyConfigError(ValueError):
    pass


class PenaltyDomainError(ValueError):
    """Evaluation requested outside ``[0, eps_bar]`` or a gradient outside the Interior region."""


class Family(str, enum.Enum):
    RATIONAL = "Rational"
    POWER = "Power"


class Region(str, enum.Enum):
    FEASIBLE_ZERO = "FeasibleZero"
    INFEASIBLE_ZERO = "InfeasibleZero"
    INTERIOR = "Interior"
    INFINITE = "Infinite"


_POSITIVE = ("q", "eps_bar", "alpha", "gamma", "sigma", "beta_coeff", "phi_coeff")


@dataclass(frozen=True)
class PenaltyConfig:
    family: Family = Family.POWER
    q: float = 1.0
    eps_bar: float = 1.0
    w: Optional[np.ndarray] = None  # None means the zero vector
    alpha: float = 1.0
    gamma: float = 1.0
    sigma: float = 1.0
    beta_coeff: float = 1.0
    phi_coeff: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in _POSITIVE + ("lam",):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating)):
                raise PenaltyConfigError(f"{_json_name(name)} must be a number")
            v = float(v)
            if not math.isfinite(v):
                raise PenaltyConfigError(f"{_json_name(name)} must be finite")
            object.__setattr__(self, name, v)
        for name in _POSITIVE:
            if getattr(self, name) <= 0:
                raise PenaltyConfigError(f"{name} must be > 0")
        if self.lam < 0:
            raise PenaltyConfigError("lambda must be >= 0")
        if self.w is not None:
            w = np.asarray(self.w, dtype=float).reshape(-1)
            if not np.all(np.isfinite(w)):
                raise PenaltyConfigError("w must be finite")
            w.flags.writeable = False
            object.__setattr__(self, "w", w)

    def with_lambda(self, lam: float) -> "PenaltyConfig":
        return replace(self, lam=lam)

    def shift(self, m: int) -> np.ndarray:
        if self.w is None:
            return np.zeros(m)
        if self.w.shape[0] != m:
            raise PenaltyConfigError(f"w has length {self.w.shape[0]}, problem has m={m}")
        return self.w

    def beta(self, mu: float) -> float:
        return self.beta_coeff * mu**self.sigma

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["w"] = None if self.w is None else self.w.tolist()
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "PenaltyConfig":
        if not isinstance(doc, dict):
            raise PenaltyConfigError("penalty must be a JSON object")
        allowed = {"family", "q", "eps_bar", "w", "alpha", "gamma", "sigma",
                   "beta_coeff", "phi_coeff", "lambda"}
        extra = set(doc) - allowed
        if extra:
            raise PenaltyConfigError(f"unexpected penalty fields: {sorted(extra)}")
        if "family" not in doc:
            raise PenaltyConfigError("penalty.family is required")
        try:
            family = Family(doc["family"])
        except ValueError:
            raise PenaltyConfigError(
                f"penalty.family must be 'Rational' or 'Power', got {doc['family']!r}"
            ) from None
        if family is Family.RATIONAL and "q" not in doc:
            raise PenaltyConfigError("penalty.q is required for the Rational family")
        kwargs = {k: v for k, v in doc.items() if k not in ("family", "lambda")}
        if "lambda" in doc:
            kwargs["lam"] = doc["lambda"]
        if kwargs.get("w") is not None and not isinstance(kwargs["w"], list):
            raise PenaltyConfigError("penalty.w must be a list of numbers")
        return cls(family=family, **kwargs)


def _json_name(name: str) -> str:
    return "lambda" if name == "lam" else name


@dataclass(frozen=True)
class PenaltyEval:
    value: float
    region: Region
    grad_x: Optional[np.ndarray] = field(default=None)
    grad_eps: Optional[float] = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


# ---------------------------------------------------------------------------


def delta(p: Problem, x, eps: float, w) -> float:
    """Constraint violation ``||F(x) - eps * w||**2``."""
    if eps < 0:
        raise PenaltyDomainError("eps must be >= 0")
    F = p.constraints(np.asarray(x, dtype=float))[0]
    r = F - eps * np.asarray(w, dtype=float)
    return float(r @ r)


def _safe_pow(base: float, exp: float) -> float:
    try:
        return math.pow(base, exp)
    except OverflowError:
        return math.inf


def _check_eps(cfg: PenaltyConfig, eps: float) -> float:
    eps = float(eps)
    if not (0.0 <= eps <= cfg.eps_bar):
        raise PenaltyDomainError(f"eps={eps!r} outside [0, {cfg.eps_bar!r}]")
    return eps


def _region(cfg: PenaltyConfig, d: float, eps: float) -> Region:
    if eps == 0.0:
        return Region.FEASIBLE_ZERO if d <= 0.0 else Region.INFEASIBLE_ZERO
    if cfg.family is Family.RATIONAL and d >= 1.0 / cfg.q:
        return Region.INFINITE
    return Region.INTERIOR


def _evaluate(p: Problem, cfg: PenaltyConfig, x, eps: float, want_grad: bool) -> PenaltyEval:
    x = np.asarray(x, dtype=float).reshape(-1)
    eps = _check_eps(cfg, eps)
    w = cfg.shift(p.m)
    F, J = p.constraints(x)
    r = F - eps * w if cfg.family is Family.RATIONAL else F
    d = float(r @ r)
    region = _region(cfg, d, eps)

    if region is Region.FEASIBLE_ZERO:
        return PenaltyEval(p.objective(x)[0], region)
    if region is not Region.INTERIOR:
        return PenaltyEval(math.inf, region)

    fx, gf = p.objective(x)
    lam_term = cfg.lam * cfg.beta_coeff * _safe_pow(eps, cfg.sigma)

    if cfg.family is Family.RATIONAL:
        denom = 1.0 - cfg.q * d
        P = d / denom
        value = fx + P / (2.0 * eps) + lam_term
        if not want_grad:
            return PenaltyEval(value, region)
        dP = 1.0 / (denom * denom)
        grad_x = gf + (dP / eps) * (J.T @ r)
        grad_eps = -P / (2.0 * eps) / eps - (dP / eps) * float(w @ r)
    else:
        scale = _safe_pow(eps, -cfg.alpha)
        phi = cfg.phi_coeff * _safe_pow(d, cfg.gamma)
        # guard inf * 0 when eps**(-alpha) overflows on a feasible x
        value = fx + (scale * phi if phi else 0.0) + lam_term
        if not want_grad:
            return PenaltyEval(value, region)
        if d > 0.0:
            dphi = cfg.phi_coeff * cfg.gamma * _safe_pow(d, cfg.gamma - 1.0)
        elif cfg.gamma > 0.5:
            # ||F||**(2 gamma - 1) -> 0, so the residual term vanishes
            dphi = 0.0
        else:
            raise PenaltyDomainError("Power penalty is not differentiable at F(x)=0 for gamma <= 1/2")
        grad_x = gf + (scale * dphi * 2.0) * (J.T @ F) if dphi else gf.copy()
        grad_eps = -cfg.alpha * (scale / eps) * phi if phi else 0.0

    if cfg.lam != 0.0:
        grad_eps += cfg.lam * cfg.beta_coeff * cfg.sigma * _safe_pow(eps, cfg.sigma - 1.0)
    return PenaltyEval(value, region, np.asarray(grad_x, dtype=float), float(grad_eps))


def penalty_value(p: Problem, cfg: PenaltyConfig, x, eps: float) -> PenaltyEval:
    """Value and region of the penalty at ``(x, eps)``; gradients are left empty."""
    return _evaluate(p, cfg, x, eps, want_grad=False)


def penalty_gradient(p: Problem, cfg: PenaltyConfig, x, eps: float) -> PenaltyEval:
    """Value, region and gradient.  Raises outside the Interior region."""
    ev = _evaluate(p, cfg, x, eps, want_grad=True)
    if ev.region is not Region.INTERIOR:
        raise PenaltyDomainError(f"gradient requested in region {ev.region.value}")
    return ev


def classify_region(p: Problem, cfg: PenaltyConfig, x, eps: float) -> Region:
    return penalty_value(p, cfg, x, eps).region


def monotone_in_lambda_check(p: Problem, cfg: PenaltyConfig, x, eps: float,
                             lam1: float, lam2: float) -> bool:
    """True iff the penalty at ``lam1`` does not exceed the penalty at ``lam2``."""
    if not lam1 < lam2:
        raise ValueError("expected lam1 < lam2")
    v1 = penalty_value(p, cfg.with_lambda(lam1), x, eps).value
    v2 = penalty_value(p, cfg.with_lambda(lam2), x, eps).value
    return v1 <= v2
