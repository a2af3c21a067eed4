import json
import math
from dataclasses import replace

import numpy as np
import pytest

from polys import central_difference, relative_error
from smoothpen.problem import (
    CORPUS,
    BoxBounds,
    DistanceApproximationError,
    ProblemConfigError,
    SelfCheckError,
    distance_to_feasible,
    feasible,
    get_corpus,
    jacobian,
    load_problem,
    residual,
)


@pytest.fixture(params=list(CORPUS))
def corpus_problem(request):
    return get_corpus(request.param)


class TestResidualAndJacobian:
    def test_circle_on_circle(self):
        assert residual(get_corpus("circle"), [1, 1]).tolist() == [0.0]

    def test_line_identity(self):
        assert residual(get_corpus("line"), [0.3]).tolist() == [0.3]

    def test_square(self):
        assert residual(get_corpus("square"), [0.2]).tolist() == pytest.approx([0.04])

    def test_jacobians(self):
        assert jacobian(get_corpus("circle"), [1, 1]).tolist() == [[2.0, 2.0]]
        assert jacobian(get_corpus("line"), [0.77]).tolist() == [[1.0]]
        assert jacobian(get_corpus("square"), [0.0]).tolist() == [[0.0]]

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            residual(get_corpus("circle"), [1.0])


class TestFeasible:
    def test_examples(self):
        circle = get_corpus("circle")
        assert feasible(circle, [-1, -1], 1e-9)
        assert not feasible(circle, [0, 0], 1e-9)
        assert not feasible(get_corpus("line"), [1.5], 1e-9)

    def test_box_is_exact(self):
        line = get_corpus("line")
        assert feasible(line, [0.0], 0.0)
        assert not feasible(line, [np.nextafter(1.0, 2.0)], 10.0)

    def test_negative_tolerance(self):
        with pytest.raises(ValueError):
            feasible(get_corpus("line"), [0.0], -1.0)


class TestDistance:
    def test_line_and_square(self):
        assert distance_to_feasible(get_corpus("line"), [0.7]) == (0.7, False)
        assert distance_to_feasible(get_corpus("square"), [-0.4]) == (0.4, False)

    def test_circle_origin_against_dense_sampling(self):
        theta = np.linspace(0, 2 * np.pi, 200001)
        pts = math.sqrt(2) * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        oracle = float(np.min(np.linalg.norm(pts, axis=1)))
        d = distance_to_feasible(get_corpus("circle"), [0.0, 0.0])
        assert d.value == pytest.approx(oracle, abs=1e-9)
        assert d.value == pytest.approx(1.41421356, abs=1e-8)

    def test_quad2d_segment_ends(self):
        quad = get_corpus("quad-2d")
        # beyond the (2, -1) end of the feasible segment
        assert distance_to_feasible(quad, [2.0, 2.0]).value == pytest.approx(1.5 * math.sqrt(2))
        assert distance_to_feasible(quad, [2.0, -2.0]).value == pytest.approx(1.0)

    @pytest.mark.parametrize("name", ["line", "circle", "quad-2d"])
    def test_numerical_fallback_is_flagged_and_close(self, name):
        exact = get_corpus(name)
        approx = replace(exact, analytic_distance=None)
        rng = np.random.default_rng(3)
        for x in rng.uniform(exact.box.lower, exact.box.upper, size=(4, exact.n)):
            d = distance_to_feasible(approx, x)
            assert d.approximate
            assert d.value == pytest.approx(exact.analytic_distance(x), abs=1e-6)

    def test_fallback_failure_is_explicit(self):
        empty = load_problem({"n": 1, "f": "x1", "F": ["x1^2 + 1"], "box": [[-1], [1]]})
        with pytest.raises(DistanceApproximationError):
            distance_to_feasible(empty, [0.5], n_starts=3)


class TestCorpus:
    def test_names_and_tags(self):
        assert list(CORPUS) == ["line", "circle", "square", "quad-2d"]
        assert CORPUS["square"].tags == ("subregularity-fails",)
        assert CORPUS["line"].tags == ("regular", "threshold-known")

    def test_solutions_are_feasible(self, corpus_problem):
        xs, _ = corpus_problem.analytic_solution
        assert feasible(corpus_problem, xs, 1e-9)
        assert np.linalg.norm(residual(corpus_problem, xs)) <= 1e-12

    def test_optimal_values(self, corpus_problem):
        xs, fs = corpus_problem.analytic_solution
        assert corpus_problem.f(xs) == fs

    def test_derivatives_match_finite_differences(self, corpus_problem):
        p = corpus_problem
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.uniform(p.box.lower * 0.99, p.box.upper * 0.99)
            assert relative_error(p.grad_f(x), central_difference(p.f, x)) <= 1e-6
            J = jacobian(p, x)
            for i in range(p.m):
                fd = central_difference(lambda y: residual(p, y)[i], x)
                assert relative_error(J[i], fd) <= 1e-6

    @pytest.mark.parametrize("name", ["line", "square"])
    def test_distance_is_abs(self, name):
        p = get_corpus(name)
        for x in np.linspace(-1, 1, 41):
            assert distance_to_feasible(p, [x]).value == abs(x)

    def test_circle_minimum_by_grid_search(self):
        theta = np.arange(0, 2 * np.pi, 1e-3)
        vals = math.sqrt(2) * (np.cos(theta) + np.sin(theta))
        assert vals.min() == pytest.approx(-2.0, abs=1e-3)
        k = int(np.argmin(vals))
        assert math.sqrt(2) * np.cos(theta[k]) == pytest.approx(-1.0, abs=1e-3)

    def test_quad2d_projection_formula(self):
        # projecting (1, 1) onto x1 + x2 = 1
        a, b = np.array([1.0, 1.0]), 1.0
        x = np.array([1.0, 1.0]) - (a @ np.array([1.0, 1.0]) - b) / (a @ a) * a
        np.testing.assert_allclose(x, get_corpus("quad-2d").x_star)


class TestBoxBounds:
    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            BoxBounds(np.array([1.0]), np.array([0.0]))

    def test_rejects_infinite(self):
        with pytest.raises(ValueError):
            BoxBounds(np.array([-np.inf]), np.array([0.0]))

    def test_immutable(self):
        box = BoxBounds(np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            box.lower[0] = 5.0


class TestLoadProblem:
    def test_builtin(self):
        p = load_problem({"builtin": "circle"})
        assert p.name == "circle" and p.n == 2 and p.m == 1

    def test_from_text(self):
        assert load_problem('{"builtin": "line"}').name == "line"

    def test_inline_line(self):
        p = load_problem({"n": 1, "f": "x1", "F": ["x1"], "box": [[-1], [1]]})
        line = get_corpus("line")
        for x in np.linspace(-1, 1, 9):
            assert p.f([x]) == line.f([x])
            assert residual(p, [x]).tolist() == residual(line, [x]).tolist()
            assert jacobian(p, [x]).tolist() == jacobian(line, [x]).tolist()

    def test_inline_square(self):
        p = load_problem({"n": 1, "f": "x1", "F": ["x1^2"], "box": [[-1], [1]]})
        assert residual(p, [0.2]).tolist() == pytest.approx([0.04])
        assert jacobian(p, [0.0]).tolist() == [[0.0]]

    def test_inline_oracles(self):
        doc = {
            "name": "circle-inline",
            "n": 2,
            "f": "x1 + x2",
            "F": ["x1^2 + x2^2 - 2"],
            "box": [[-2, -2], [2, 2]],
            "solution": {"x": [-1, -1]},
            "distance": "sqrt(x1^2 + x2^2) - sqrt(2)",
            "lipschitz_hint": 1.5,
        }
        p = load_problem(json.dumps(doc))
        assert p.name == "circle-inline"
        assert p.f_star == -2.0
        assert p.lipschitz_hint == 1.5
        assert distance_to_feasible(p, [2.0, 0.0]).value == pytest.approx(2 - math.sqrt(2))

    def test_builtin_overrides(self):
        p = load_problem({"builtin": "line", "name": "narrow", "box": [[-0.5], [0.5]]})
        assert p.name == "narrow"
        assert p.box.upper.tolist() == [0.5]
        assert p.analytic_distance is None
        assert p.x_star.tolist() == [0.0]

    def test_override_box_drops_unreachable_solution(self):
        p = load_problem({"builtin": "line", "box": [[0.5], [1.0]]})
        assert p.analytic_solution is None

    @pytest.mark.parametrize("doc,fragment", [
        ({"builtin": "nope"}, "unknown builtin"),
        ({"n": 1, "f": "x1", "F": ["x1"]}, "box"),
        ({"n": 0, "f": "x1", "F": ["x1"], "box": [[0], [1]]}, "n must"),
        ({"n": 1, "f": "x2", "F": ["x1"], "box": [[-1], [1]]}, "f:"),
        ({"n": 1, "f": "x1", "F": [], "box": [[-1], [1]]}, "F must"),
        ({"n": 1, "f": "x1", "F": ["x1"], "box": [[-1, 0], [1, 2]]}, "length"),
        ({"n": 1, "f": "x1", "F": ["x1"], "box": [[1], [-1]]}, "box"),
        ({"n": 1, "f": "x1", "F": ["x1"], "box": [[-1], [1]], "colour": 1}, "unexpected"),
        ({"n": 1, "f": "x1", "F": ["x1"], "box": [[-1], [1]], "solution": {"x": [0.5]}}, "F(x) = 0"),
        ({"n": 1, "f": "x1", "F": ["x1"], "box": [[-1], [1]], "solution": {"x": [5]}}, "outside"),
        ("[1, 2]", "JSON object"),
        ("{not json", "invalid JSON"),
    ])
    def test_schema_errors(self, doc, fragment):
        with pytest.raises(ProblemConfigError, match=None) as info:
            load_problem(doc)
        assert fragment in str(info.value)

    def test_self_check_catches_bad_derivatives(self):
        good = get_corpus("circle")

        def wrong(x):
            F, J = good.constraints(x)
            return F, 1.01 * J

        bad = replace(good, constraints=wrong)
        from smoothpen.problem import _self_check

        with pytest.raises(SelfCheckError):
            _self_check(bad, 5, 1e-5, 0)
