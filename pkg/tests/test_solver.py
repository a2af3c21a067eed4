import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import smoothpen.solver as solver_mod
from smoothpen.penalty import Family, PenaltyConfig
from smoothpen.problem import CORPUS, BoxBounds, get_corpus, load_problem
from smoothpen.solver import (
    AllStartsFailedError,
    SolveSettings,
    StartPointError,
    minimize,
    multi_start,
    project,
    start_points,
)

LINE = get_corpus("line")
POWER = PenaltyConfig(family=Family.POWER)
BOX2 = BoxBounds(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))


class TestProject:
    def test_clamps_x(self):
        assert project([3.0, 0.5, 0.5], BOX2, (0, 1)).tolist() == [2.0, 0.5, 0.5]

    def test_clamps_eps(self):
        assert project([0.0, 0.0, -0.1], BOX2, (0, 1))[-1] == 0.0

    def test_interior_unchanged(self):
        z = np.array([0.3, -1.2, 0.4])
        assert project(z, BOX2, (0, 1)).tolist() == z.tolist()

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
    def test_idempotent(self, z):
        once = project(z, BOX2, (0, 1))
        assert project(once, BOX2, (0, 1)).tolist() == once.tolist()


class TestMinimize:
    def test_line_above_threshold_reaches_origin(self):
        res = minimize(LINE, POWER.with_lambda(1.0), SolveSettings(), [0.5, 0.5])
        assert abs(res.x_star[0]) <= 1e-6
        assert res.eps_star <= 1e-6
        assert res.value == pytest.approx(0.0, abs=1e-6)

    def test_line_below_threshold_stays_interior(self):
        # min over x of x + x^2/eps + 0.1 eps is -eps/4 + 0.1 eps, minimized at eps = 1
        res = minimize(LINE, POWER.with_lambda(0.1), SolveSettings(), [0.5, 0.5])
        assert res.eps_star > 0.01
        assert res.value < 0
        assert res.eps_star == pytest.approx(1.0, abs=1e-6)
        assert res.x_star[0] == pytest.approx(-0.5, abs=1e-5)
        assert res.value == pytest.approx(-0.15, abs=1e-9)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 50.0])
    def test_feasible_zero_start_is_returned(self, lam):
        res = minimize(LINE, POWER.with_lambda(lam), SolveSettings(grad_tol=1e-2), [0.0, 0.0])
        assert res.x_star.tolist() == [0.0] and res.eps_star == 0.0
        assert res.iters == 0 and res.status == "feasible-zero"

    def test_infinite_start_is_repaired(self):
        # eps = 0 with x infeasible is +inf; eps gets nudged up
        res = minimize(LINE, POWER.with_lambda(1.0), SolveSettings(), [0.5, 0.0])
        assert abs(res.x_star[0]) <= 1e-6

    def test_unrepairable_start(self):
        cfg = PenaltyConfig(family=Family.RATIONAL, q=10.0)
        with pytest.raises(StartPointError):
            minimize(LINE, cfg, SolveSettings(), [1.0, 0.5])

    def test_fixed_eps(self):
        # x + x^2/0.5 over [-1, 1] is minimized at x = -1/4
        res = minimize(LINE, POWER, SolveSettings(), [0.7], 0.5, fixed_eps=True)
        assert res.eps_star == 0.5
        assert res.x_star[0] == pytest.approx(-0.25, abs=1e-8)

    def test_value_matches_penalty(self):
        from smoothpen.penalty import penalty_value

        res = minimize(get_corpus("circle"), POWER.with_lambda(0.1), SolveSettings(), [1.0, 0.5, 0.5])
        assert res.value == penalty_value(get_corpus("circle"), POWER.with_lambda(0.1),
                                          res.x_star, res.eps_star).value


class TestInvariants:
    @pytest.mark.parametrize("name", list(CORPUS))
    @pytest.mark.parametrize("family", [Family.POWER, Family.RATIONAL])
    def test_accepted_values_strictly_decrease(self, name, family):
        p = get_corpus(name)
        cfg = PenaltyConfig(family=family, lam=0.4)
        s = SolveSettings(n_starts=5, rng_seed=4)
        for z in start_points(p, cfg, s):
            try:
                res = minimize(p, cfg, s, z)
            except StartPointError:
                continue
            h = np.array(res.history)
            assert np.all(np.diff(h) < 0)
            assert res.value == h[-1]

    def test_every_evaluated_point_lies_in_box(self, monkeypatch):
        seen = []
        real = solver_mod.penalty_value

        def recording(p, cfg, x, eps):
            seen.append((np.array(x, dtype=float), float(eps)))
            return real(p, cfg, x, eps)

        monkeypatch.setattr(solver_mod, "penalty_value", recording)
        for name in CORPUS:
            p = get_corpus(name)
            cfg = PenaltyConfig(lam=0.5)
            multi_start(p, cfg, SolveSettings(n_starts=4, rng_seed=2))
            for x, eps in seen:
                assert np.all(x >= p.box.lower) and np.all(x <= p.box.upper)
                assert 0.0 <= eps <= cfg.eps_bar
            seen.clear()


class TestMultiStart:
    def test_quad2d_all_starts(self):
        res = multi_start(get_corpus("quad-2d"), POWER.with_lambda(10.0), SolveSettings())
        assert len(res.results) == 20
        assert res.best.eps_star <= 1e-8
        np.testing.assert_allclose(res.best.x_star, [0.5, 0.5], atol=1e-4)
        for r in res.results:
            assert r.eps_star <= 1e-8
            assert np.linalg.norm(r.x_star - [0.5, 0.5]) <= 1e-4

    def test_single_start_is_center(self):
        p = get_corpus("circle")
        cfg = POWER.with_lambda(10.0)
        s = SolveSettings(n_starts=1)
        ms = multi_start(p, cfg, s)
        direct = minimize(p, cfg, s, np.append(p.box.center, 0.5))
        assert ms.best.to_dict() == direct.to_dict()

    def test_same_seed_same_results(self):
        p = get_corpus("circle")
        cfg = POWER.with_lambda(0.2)
        s = SolveSettings(n_starts=6, rng_seed=13)
        a = [r.to_dict() for r in multi_start(p, cfg, s).results]
        b = [r.to_dict() for r in multi_start(p, cfg, s).results]
        assert a == b

    def test_worker_count_does_not_matter(self):
        p = get_corpus("quad-2d")
        cfg = POWER.with_lambda(0.1)
        one = multi_start(p, cfg, SolveSettings(n_starts=8, rng_seed=5))
        four = multi_start(p, cfg, SolveSettings(n_starts=8, rng_seed=5, workers=4))
        assert [r.to_dict() for r in one.results] == [r.to_dict() for r in four.results]
        assert one.best.start_index == four.best.start_index

    def test_starts_drawn_from_box(self):
        p = get_corpus("quad-2d")
        cfg = PenaltyConfig(eps_bar=2.0)
        starts = start_points(p, cfg, SolveSettings(n_starts=50, rng_seed=9))
        assert starts[0].tolist() == [0.0, 0.0, 1.0]
        arr = np.array(starts[1:])
        assert np.all(arr[:, :2] >= -2) and np.all(arr[:, :2] <= 2)
        assert np.all(arr[:, 2] >= 0.02) and np.all(arr[:, 2] <= 2.0)

    def test_tie_break_prefers_smaller_eps(self):
        # f is constant, so every start ties on value at a feasible point
        p = load_problem({"n": 1, "f": "0", "F": ["x1"], "box": [[-1], [1]]})
        res = multi_start(p, POWER.with_lambda(1.0), SolveSettings(n_starts=5))
        ties = [r for r in res.results if r.value == res.best.value]
        assert res.best.eps_star == min(r.eps_star for r in ties)

    def test_all_failed(self):
        p = load_problem({"n": 1, "f": "x1", "F": ["x1 + 5"], "box": [[-1], [1]]})
        cfg = PenaltyConfig(family=Family.RATIONAL, q=1.0)
        with pytest.raises(AllStartsFailedError):
            multi_start(p, cfg, SolveSettings(n_starts=3))


class TestSettings:
    def test_round_trip(self):
        s = SolveSettings(max_iters=10, rng_seed=3)
        assert SolveSettings.from_dict(s.to_dict()) == s

    @pytest.mark.parametrize("kwargs", [
        {"armijo_c": 1.0},
        {"shrink": 0.0},
        {"max_iters": 0},
        {"n_starts": 0},
        {"grad_tol": -1.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SolveSettings(**kwargs)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            SolveSettings.from_dict({"speed": 11})


def test_result_to_dict_is_json_ready():
    import json

    res = minimize(LINE, POWER.with_lambda(1.0), SolveSettings(), [0.5, 0.5])
    doc = json.loads(json.dumps(res.to_dict()))
    assert doc["x_star"] == res.x_star.tolist()
    assert math.isfinite(doc["value"])
