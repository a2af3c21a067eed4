"""Equality-constrained problems over a box, the built-in corpus, and JSON loading.

A problem is ``min f(x)  s.t.  F(x) = 0,  lower <= x <= upper`` with
``F: R^n -> R^m``.  Objective and constraint maps carry exact derivatives,
either from hand-written closures (corpus) or from parsed expressions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from .expr import ExprError, eval_with_grad, evaluate, parse

__all__ = [
    "BoxBounds",
    "CORPUS",
    "CorpusEntry",
    "Distance",
    "DistanceApproximationError",
    "Problem",
    "ProblemConfigError",
    "SelfCheckError",
    "corpus_names",
    "distance_to_feasible",
    "fd_relative_error",
    "feasible",
    "get_corpus",
    "jacobian",
    "load_problem",
    "residual",
]


class ProblemConfigError(ValueError):
    """A problem document does not match the schema."""


class SelfCheckError(ProblemConfigError):
    """Derivatives disagree with central finite differences."""


class DistanceApproximationError(RuntimeError):
    """No feasible point was found when approximating the distance to the feasible set."""


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def to_json(self) -> list:
        return [self.lower.tolist(), self.upper.tolist()]


@dataclass(frozen=True)
class Problem:
    """Immutable problem instance.

    ``objective`` returns ``(f(x), grad f(x))`` and ``constraints`` returns
    ``(F(x), J(x))`` with ``J`` of shape ``(m, n)``.
    """

    name: str
    n: int
    m: int
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]]
    constraints: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    box: BoxBounds
    analytic_solution: Optional[tuple[np.ndarray, float]] = None
    analytic_distance: Optional[Callable[[np.ndarray], float]] = None
    lipschitz_hint: Optional[float] = None
    subregularity_hint: Optional[float] = None
    source: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.box.dim != self.n:
            raise ValueError(f"box has dimension {self.box.dim}, expected {self.n}")
        if self.analytic_solution is not None:
            xs, fs = self.analytic_solution
            xs = np.asarray(xs, dtype=float).reshape(-1)
            object.__setattr__(self, "analytic_solution", (xs, float(fs)))

    def f(self, x) -> float:
        return self.objective(_as_point(self, x))[0]

    def grad_f(self, x) -> np.ndarray:
        return self.objective(_as_point(self, x))[1]

    @property
    def x_star(self) -> Optional[np.ndarray]:
        return None if self.analytic_solution is None else self.analytic_solution[0]

    @property
    def f_star(self) -> Optional[float]:
        return None if self.analytic_solution is None else self.analytic_solution[1]

    def describe(self) -> dict:
        """JSON-ready summary used in reports."""
        if self.source is not None:
            return dict(self.source)
        return {"name": self.name, "n": self.n, "m": self.m, "box": self.box.to_json()}


def _as_point(p: Problem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != p.n:
        raise ValueError(f"expected a point of length {p.n}, got {x.shape[0]}")
    return x


def residual(p: Problem, x) -> np.ndarray:
    """Constraint values F(x), length m."""
    return p.constraints(_as_point(p, x))[0]


def jacobian(p: Problem, x) -> np.ndarray:
    """Constraint Jacobian, shape (m, n)."""
    return p.constraints(_as_point(p, x))[1]


def feasible(p: Problem, x, tol: float) -> bool:
    """True iff ``||F(x)|| <= tol`` and ``x`` lies in the box (exact comparison)."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    x = _as_point(p, x)
    if not p.box.contains(x):
        return False
    try:
        return bool(np.linalg.norm(residual(p, x)) <= tol)
    except ExprError:
        return False


class Distance(NamedTuple):
    value: float
    approximate: bool


def distance_to_feasible(p: Problem, x, *, n_starts: int = 8, seed: int = 0) -> Distance:
    """Euclidean distance from ``x`` to the feasible set.

    Uses the analytic oracle when present.  Otherwise solves the projection
    problem numerically and marks the result as approximate.
    """
    x = _as_point(p, x)
    if p.analytic_distance is not None:
        return Distance(float(p.analytic_distance(x)), False)
    return Distance(_numerical_distance(p, x, n_starts, seed), True)


def _numerical_distance(p: Problem, x: np.ndarray, n_starts: int, seed: int) -> float:
    # project x onto the feasible set by minimizing 0.5*||y - x||^2 under the constraints
    from .solver import ContinuationError, SolveSettings, constrained_minimum

    def proj_obj(y):
        d = y - x
        return 0.5 * float(d @ d), d

    aux = Problem(f"{p.name}-projection", p.n, p.m, proj_obj, p.constraints, p.box)
    rng = np.random.default_rng(seed)
    starts = [x.copy(), p.box.center]
    starts += [rng.uniform(p.box.lower, p.box.upper) for _ in range(max(0, n_starts - 2))]
    try:
        y, _ = constrained_minimum(aux, SolveSettings(max_iters=2000), starts)
    except ContinuationError as exc:
        raise DistanceApproximationError(str(exc)) from None
    return float(np.linalg.norm(y - x))


# ---------------------------------------------------------------------------
# Finite-difference checks


def fd_relative_error(analytic, numeric) -> float:
    """Max-norm error scaled by ``max(||numeric||_inf, 1)``."""
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - b), initial=0.0) / max(np.max(np.abs(b), initial=0.0), 1.0))


def _central_fd(fun: Callable[[np.ndarray], Any], x: np.ndarray) -> np.ndarray:
    cols = []
    for i in range(x.shape[0]):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def _self_check(p: Problem, n_points: int, tol: float, seed: int) -> None:
    rng = np.random.default_rng(seed)
    lo, hi = p.box.lower, p.box.upper
    checked = 0
    for _ in range(20 * n_points):
        if checked == n_points:
            return
        # stay off the box faces so the FD stencil is interior
        x = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=p.n)
        try:
            _, g = p.objective(x)
            _, J = p.constraints(x)
            g_fd = _central_fd(lambda y: p.objective(y)[0], x)
            J_fd = _central_fd(lambda y: p.constraints(y)[0], x)
        except ExprError:
            continue
        err_g = fd_relative_error(g, g_fd)
        err_J = fd_relative_error(J, J_fd)
        if err_g > tol or err_J > tol:
            raise SelfCheckError(
                f"{p.name}: derivative check failed at x={x.tolist()} "
                f"(objective error {err_g:.3g}, Jacobian error {err_J:.3g})"
            )
        checked += 1
    raise SelfCheckError(f"{p.name}: could not find {n_points} points inside the expression domain")


# ---------------------------------------------------------------------------
# Built-in corpus


@dataclass(frozen=True)
class CorpusEntry:
    problem: Problem
    tags: tuple[str, ...]

    @property
    def oracles(self) -> tuple[str, ...]:
        p = self.problem
        out = []
        if p.analytic_solution is not None:
            out.append("solution")
        if p.analytic_distance is not None:
            out.append("distance")
        if p.lipschitz_hint is not None:
            out.append("lipschitz")
        if p.subregularity_hint is not None:
            out.append("subregularity")
        return tuple(out)


def _box(lo, hi, n) -> BoxBounds:
    return BoxBounds(np.full(n, float(lo)), np.full(n, float(hi)))


def _line() -> Problem:
    return Problem(
        name="line",
        n=1,
        m=1,
        objective=lambda x: (float(x[0]), np.ones(1)),
        constraints=lambda x: (np.array([x[0]]), np.ones((1, 1))),
        box=_box(-1, 1, 1),
        analytic_solution=(np.zeros(1), 0.0),
        analytic_distance=lambda x: abs(float(x[0])),
        lipschitz_hint=1.0,
        subregularity_hint=1.0,
    )


def _circle() -> Problem:
    return Problem(
        name="circle",
        n=2,
        m=1,
        objective=lambda x: (float(x[0] + x[1]), np.ones(2)),
        constraints=lambda x: (
            np.array([x[0] ** 2 + x[1] ** 2 - 2.0]),
            np.array([[2.0 * x[0], 2.0 * x[1]]]),
        ),
        box=_box(-2, 2, 2),
        analytic_solution=(np.array([-1.0, -1.0]), -2.0),
        # the whole circle lies inside the box, so radial projection is exact
        analytic_distance=lambda x: abs(float(np.hypot(x[0], x[1])) - math.sqrt(2.0)),
        lipschitz_hint=math.sqrt(2.0),
    )


def _square() -> Problem:
    return Problem(
        name="square",
        n=1,
        m=1,
        objective=lambda x: (float(x[0]), np.ones(1)),
        constraints=lambda x: (np.array([x[0] ** 2]), np.array([[2.0 * x[0]]])),
        box=_box(-1, 1, 1),
        analytic_solution=(np.zeros(1), 0.0),
        analytic_distance=lambda x: abs(float(x[0])),
        lipschitz_hint=1.0,
    )


def _segment_distance(x: np.ndarray) -> float:
    # feasible set is the segment of x1 + x2 = 1 inside [-2, 2]^2, from (-1, 2) to (2, -1)
    a = np.array([-1.0, 2.0])
    d = np.array([3.0, -3.0])
    t = float(np.clip((x - a) @ d / (d @ d), 0.0, 1.0))
    return float(np.linalg.norm(x - (a + t * d)))


def _quad2d() -> Problem:
    return Problem(
        name="quad-2d",
        n=2,
        m=1,
        objective=lambda x: (
            float((x[0] - 1.0) ** 2 + (x[1] - 1.0) ** 2),
            2.0 * (np.asarray(x, dtype=float) - 1.0),
        ),
        constraints=lambda x: (np.array([x[0] + x[1] - 1.0]), np.ones((1, 2))),
        box=_box(-2, 2, 2),
        analytic_solution=(np.array([0.5, 0.5]), 0.5),
        analytic_distance=_segment_distance,
        subregularity_hint=math.sqrt(2.0),
    )


CORPUS: dict[str, CorpusEntry] = {
    "line": CorpusEntry(_line(), ("regular", "threshold-known")),
    "circle": CorpusEntry(_circle(), ("regular",)),
    "square": CorpusEntry(_square(), ("subregularity-fails",)),
    "quad-2d": CorpusEntry(_quad2d(), ("regular", "convex")),
}


def corpus_names() -> list[str]:
    return list(CORPUS)


def get_corpus(name: str) -> Problem:
    try:
        return CORPUS[name].problem
    except KeyError:
        raise ProblemConfigError(
            f"unknown builtin problem {name!r}; choose from {', '.join(CORPUS)}"
        ) from None


# ---------------------------------------------------------------------------
# JSON loading

_INLINE_KEYS = {"name", "n", "f", "F", "box", "solution", "distance",
                "lipschitz_hint", "subregularity_hint"}
_BUILTIN_KEYS = {"builtin", "name", "box", "lipschitz_hint", "subregularity_hint"}


def _float_list(value, what: str) -> list[float]:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ProblemConfigError(f"{what} must be a list of numbers")
    return [float(v) for v in value]


def _parse_box(value, n: int) -> BoxBounds:
    if not isinstance(value, list) or len(value) != 2:
        raise ProblemConfigError("box must be [[lower...], [upper...]]")
    lo = _float_list(value[0], "box lower")
    hi = _float_list(value[1], "box upper")
    if len(lo) != n or len(hi) != n:
        raise ProblemConfigError(f"box bounds must have length n={n}")
    try:
        return BoxBounds(np.array(lo), np.array(hi))
    except ValueError as exc:
        raise ProblemConfigError(f"box: {exc}") from None


def _parse_hint(doc: dict, key: str) -> Optional[float]:
    v = doc.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
        raise ProblemConfigError(f"{key} must be a non-negative number")
    return float(v)


def _parse_expr(source, n: int, what: str):
    if not isinstance(source, str):
        raise ProblemConfigError(f"{what} must be an expression string")
    try:
        return parse(source, n)
    except ExprError as exc:
        raise ProblemConfigError(f"{what}: {exc}") from None


def _from_builtin(doc: dict) -> Problem:
    extra = set(doc) - _BUILTIN_KEYS
    if extra:
        raise ProblemConfigError(f"unexpected fields for builtin problem: {sorted(extra)}")
    base = get_corpus(doc["builtin"])
    changes: dict[str, Any] = {"source": dict(doc)}
    if "name" in doc:
        if not isinstance(doc["name"], str) or not doc["name"]:
            raise ProblemConfigError("name must be a non-empty string")
        changes["name"] = doc["name"]
    if "box" in doc:
        box = _parse_box(doc["box"], base.n)
        changes["box"] = box
        if base.analytic_solution is not None and not box.contains(base.analytic_solution[0]):
            changes["analytic_solution"] = None
        # analytic distances assume the default box
        changes["analytic_distance"] = None
    for key in ("lipschitz_hint", "subregularity_hint"):
        if key in doc:
            changes[key] = _parse_hint(doc, key)
    return replace(base, **changes)


def _from_inline(doc: dict) -> Problem:
    extra = set(doc) - _INLINE_KEYS
    if extra:
        raise ProblemConfigError(f"unexpected fields: {sorted(extra)}")
    for key in ("n", "f", "F", "box"):
        if key not in doc:
            raise ProblemConfigError(f"missing required field {key!r}")
    n = doc["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ProblemConfigError("n must be a positive integer")
    name = doc.get("name", "inline")
    if not isinstance(name, str) or not name:
        raise ProblemConfigError("name must be a non-empty string")
    f_tree = _parse_expr(doc["f"], n, "f")
    if not isinstance(doc["F"], list) or not doc["F"]:
        raise ProblemConfigError("F must be a non-empty list of expression strings")
    F_trees = [_parse_expr(s, n, f"F[{i}]") for i, s in enumerate(doc["F"])]
    m = len(F_trees)
    box = _parse_box(doc["box"], n)

    def objective(x):
        return eval_with_grad(f_tree, x)

    def constraints(x):
        vals = np.empty(m)
        jac = np.empty((m, n))
        for i, t in enumerate(F_trees):
            vals[i], jac[i] = eval_with_grad(t, x)
        return vals, jac

    solution = None
    if doc.get("solution") is not None:
        sol = doc["solution"]
        if not isinstance(sol, dict) or "x" not in sol:
            raise ProblemConfigError("solution must be {\"x\": [...], \"f\": value}")
        xs = np.array(_float_list(sol["x"], "solution.x"))
        if xs.shape[0] != n:
            raise ProblemConfigError(f"solution.x must have length n={n}")
        if not box.contains(xs):
            raise ProblemConfigError("solution.x lies outside the box")
        fs = sol.get("f")
        fs = evaluate(f_tree, xs) if fs is None else float(fs)
        if float(np.linalg.norm(constraints(xs)[0])) > 1e-12:
            raise ProblemConfigError("solution.x does not satisfy F(x) = 0 within 1e-12")
        solution = (xs, fs)

    distance = None
    if doc.get("distance") is not None:
        d_tree = _parse_expr(doc["distance"], n, "distance")
        distance = lambda x: evaluate(d_tree, x)  # noqa: E731

    return Problem(
        name=name,
        n=n,
        m=m,
        objective=objective,
        constraints=constraints,
        box=box,
        analytic_solution=solution,
        analytic_distance=distance,
        lipschitz_hint=_parse_hint(doc, "lipschitz_hint"),
        subregularity_hint=_parse_hint(doc, "subregularity_hint"),
        source=dict(doc),
    )


def load_problem(config, *, check_points: int = 5, check_tol: float = 1e-5,
                 seed: int = 0) -> Problem:
    """Build a :class:`Problem` from a JSON document (text or already-decoded dict).

    Either ``{"builtin": "<corpus name>", ...overrides}`` or an inline
    definition with ``n``, ``f``, ``F`` and ``box``.  Derivatives are checked
    against central differences at ``check_points`` random interior points.
    """
    if isinstance(config, (str, bytes)):
        try:
            config = json.loads(config)
        except json.JSONDecodeError as exc:
            raise ProblemConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ProblemConfigError("problem config must be a JSON object")
    p = _from_builtin(config) if "builtin" in config else _from_inline(config)
    if check_points > 0:
        _self_check(p, check_points, check_tol, seed)
    return p
