from fractions import Fraction

import numpy as np
import pytest

from robustkkt.lp import LPBuilder, simplex_standard


def F(x):
    return Fraction(x)


class TestSimplexStandard:
    def test_basic_optimum(self):
        # min -x1 - 2 x2 s.t. x1 + x2 + s = 4, x1 + 3 x2 + t = 6
        A = [[F(1), F(1), F(1), F(0)], [F(1), F(3), F(0), F(1)]]
        b = [F(4), F(6)]
        c = [F(-1), F(-2), F(0), F(0)]
        status, x, obj = simplex_standard(A, b, c)
        assert status == "optimal"
        assert obj == F(-5)  # x = (3, 1)
        assert x[0] == F(3) and x[1] == F(1)

    def test_infeasible(self):
        # x1 + x2 = -1 with x >= 0
        status, _, _ = simplex_standard([[F(1), F(1)]], [F(-1)], [F(0), F(0)])
        assert status == "infeasible"

    def test_unbounded(self):
        # min -x1 s.t. x1 - x2 = 0
        status, _, _ = simplex_standard([[F(1), F(-1)]], [F(0)],
                                        [F(-1), F(0)])
        assert status == "unbounded"

    def test_degenerate_terminates(self):
        A = [[F(1), F(1), F(1), F(0)], [F(1), F(1), F(0), F(1)]]
        b = [F(1), F(1)]
        c = [F(-1), F(-1), F(0), F(0)]
        status, x, obj = simplex_standard(A, b, c)
        assert status == "optimal" and obj == F(-1)

    def test_exact_rational_answer(self):
        # weights on [1, 2] hitting sqrt(2)-as-float exactly
        target = F(2 ** 0.5)
        A = [[F(1), F(2)], [F(1), F(1)]]
        b = [target, F(1)]
        status, x, _ = simplex_standard(A, b, [F(0), F(0)])
        assert status == "optimal"
        assert x[0] + 2 * x[1] == target


class TestLPBuilder:
    def test_free_variable_split(self):
        lp = LPBuilder()
        w = lp.add_var(free=True)
        lp.add_eq({w: 2.0}, -3.0)
        res = lp.solve(engine="exact")
        assert res.feasible and res.values[w] == pytest.approx(-1.5)

    def test_inequalities_and_objective(self):
        lp = LPBuilder()
        x = lp.add_var()
        y = lp.add_var()
        lp.add_ub({x: 1.0, y: 1.0}, 4.0)
        lp.add_ub({x: 1.0, y: 3.0}, 6.0)
        lp.set_objective({x: -1.0, y: -2.0})
        for engine in ("exact", "float"):
            res = lp.solve(engine=engine)
            assert res.feasible
            assert res.objective == pytest.approx(-5.0, abs=1e-9)

    def test_infeasible_both_engines(self):
        lp = LPBuilder()
        x = lp.add_var()
        lp.add_eq({x: 1.0}, 1.0)
        lp.add_eq({x: 1.0}, 2.0)
        for engine in ("exact", "float"):
            assert not lp.solve(engine=engine).feasible

    def test_engines_agree_on_random_feasibility(self):
        rng = np.random.default_rng(11)
        agree = 0
        for _ in range(60):
            lp = LPBuilder()
            ids = lp.add_vars(4)
            lp.add_eq({i: 1.0 for i in ids}, 1.0)
            A = rng.uniform(-1, 1, size=(2, 4))
            rhs = rng.uniform(-0.3, 0.3, size=2)
            for r in range(2):
                lp.add_eq({ids[k]: A[r, k] for k in range(4)}, rhs[r])
            r1 = lp.solve(engine="exact")
            r2 = lp.solve(engine="float")
            assert r1.feasible == r2.feasible
            agree += 1
        assert agree == 60
