import numpy as np
import pytest

from metamdp import domains as dm
from metamdp.core import TERMINATE, compute, evaluate_policy
from metamdp.errors import (
    CoverageError,
    DegenerateDesignError,
    InvalidActionError,
    ResourceLimitError,
)
from metamdp.exact import (
    LoadedValueTable,
    dump_value_table,
    exact_voc,
    fit_voc_regression,
    load_value_table,
    policy_value,
    regression_rows,
    solve,
)
from metamdp.policies import ImmediateTerminatePolicy, MetaGreedyPolicy, WeightVector, WeightedFeaturePolicy


def stopping_value_table_oracle(cost: float, horizon: int = 30, scale: str = "pm1"):
    """Independent array-based backward induction for the stopping domain."""
    def utility(a, b):
        p = max(a, b) / (a + b)
        return p if scale == "probability" else 2 * p - 1

    V = {}
    for n in range(horizon - 1, -1, -1):
        for a in range(1, n + 2):
            b = n + 2 - a
            u = utility(a, b)
            if n == horizon - 1:
                V[(a, b)] = u
                continue
            mu = a / (a + b)
            q = -cost + mu * V[(a + 1, b)] + (1 - mu) * V[(a, b + 1)]
            V[(a, b)] = max(u, q)
    return V


class TestStoppingSolver:
    @pytest.mark.parametrize("cost", [0.001, 0.01, 0.1, 0.3])
    def test_matches_independent_dp(self, cost):
        d = dm.StoppingDomain(cost=cost)
        solver = solve(d)
        oracle = stopping_value_table_oracle(cost)
        for (a, b), v in oracle.items():
            n = a + b - 2
            if n >= d.horizon - 1:
                continue
            belief = dm.StoppingBelief(alpha=float(a), beta=float(b), step_count=n)
            assert solver.value(belief) == pytest.approx(v, abs=1e-12)

    def test_termination_threshold_pm1(self):
        # one sample is worth exactly 1/3 at the uniform prior on this scale
        for cost, expect_compute in [(0.32, True), (1 / 3, False), (0.35, False)]:
            d = dm.StoppingDomain(cost=cost)
            s = solve(d)
            act = s.act(d.initial_belief())
            assert (act != TERMINATE) == expect_compute

    def test_termination_threshold_probability_scale(self):
        for cost, expect_compute in [(0.16, True), (1 / 6, False), (0.17, False)]:
            d = dm.StoppingDomain(cost=cost, scale="probability")
            s = solve(d)
            assert (s.act(d.initial_belief()) != TERMINATE) == expect_compute

    def test_value_dominates_utility_and_decreases_with_cost(self):
        values = []
        for cost in (0.001, 0.01, 0.05, 0.1):
            d = dm.StoppingDomain(cost=cost)
            s = solve(d)
            b0 = d.initial_belief()
            assert s.value(b0) >= d.terminal_reward(b0)
            values.append(s.value(b0))
        assert values == sorted(values, reverse=True)


class TestBanditSolver:
    def test_matches_uncollapsed_recursion(self):
        # independent oracle: no symmetry collapsing, plain dict on raw arms
        d = dm.BanditDomain(k=2, cost=0.01, horizon=9)
        memo = {}

        def value(arms, step):
            if step >= d.horizon - 1:
                return max(a / (a + b) for a, b in arms)
            key = (arms, step)
            if key in memo:
                return memo[key]
            best = max(a / (a + b) for a, b in arms)
            for j in range(2):
                a, b = arms[j]
                mu = a / (a + b)
                up = arms[:j] + ((a + 1, b),) + arms[j + 1:]
                dn = arms[:j] + ((a, b + 1),) + arms[j + 1:]
                q = -0.01 + mu * value(up, step + 1) + (1 - mu) * value(dn, step + 1)
                best = max(best, q)
            memo[key] = best
            return best

        solver = solve(d)
        b0 = d.initial_belief()
        assert solver.value(b0) == pytest.approx(value(b0.arms, 0), abs=1e-12)
        # spot-check asymmetric interior beliefs too
        b = dm.BanditBelief(arms=((3.0, 1.0), (1.0, 2.0)), step_count=3)
        assert solver.value(b) == pytest.approx(value(b.arms, 3), abs=1e-12)

    def test_simulated_optimal_matches_value(self):
        d = dm.BanditDomain(k=2, cost=0.01, horizon=25)
        solver = solve(d)
        rep = evaluate_policy(d, d.initial_belief(), solver.policy(), 4000, 123)
        v = solver.value(d.initial_belief())
        assert rep.ci_lo <= v <= rep.ci_hi

    def test_no_policy_beats_the_optimal_value(self):
        d = dm.BanditDomain(k=2, cost=0.01, horizon=25)
        solver = solve(d)
        v = solver.value(d.initial_belief())
        for policy in (MetaGreedyPolicy(d),
                       WeightedFeaturePolicy(d, WeightVector(0.0, 1.0, 0.0, 2.0)),
                       ImmediateTerminatePolicy(d)):
            rep = evaluate_policy(d, d.initial_belief(), policy, 3000, 77)
            assert rep.mean <= v + (rep.ci_hi - rep.mean)


class TestTreeSolver:
    def test_matches_uncollapsed_recursion(self):
        d = dm.TreeDomain(height=2, cost=0.05)
        memo = {}

        def value(probs, step):
            b = dm.TreeBelief(height=2, probs=probs, step_count=step)
            u = d.terminal_reward(b)
            if step >= d.horizon - 1:
                return u
            key = (probs, step)
            if key in memo:
                return memo[key]
            best = u
            for j, p in enumerate(probs):
                if p != 0.5:
                    continue
                up = probs[:j] + (1.0,) + probs[j + 1:]
                dn = probs[:j] + (0.0,) + probs[j + 1:]
                q = -d.cost + 0.5 * value(up, step + 1) + 0.5 * value(dn, step + 1)
                best = max(best, q)
            memo[key] = best
            return best

        solver = solve(d)
        b0 = d.initial_belief()
        assert solver.value(b0) == pytest.approx(value(b0.probs, 0), abs=1e-12)

    def test_state_cap_refusal(self):
        with pytest.raises(ResourceLimitError):
            solve(dm.TreeDomain(height=6, cost=0.05), state_cap=20_000)

    def test_reachability_pruning_bandit_cap(self):
        solver = solve(dm.BanditDomain(k=3, cost=0.01, horizon=25))
        assert solver.state_count < 100_000


class TestExactVoc:
    def test_terminate_is_zero(self):
        d = dm.StoppingDomain(cost=0.01)
        solver = solve(d)
        assert exact_voc(solver, d.initial_belief(), TERMINATE) == 0.0

    def test_positive_at_cheap_cost(self):
        d = dm.StoppingDomain(cost=0.001)
        solver = solve(d)
        assert exact_voc(solver, d.initial_belief(), compute(0)) > 0.0

    def test_negative_when_cost_dominates(self):
        d = dm.StoppingDomain(cost=0.1)
        solver = solve(d)
        b = dm.StoppingBelief(alpha=14.0, beta=14.0, step_count=26)
        assert exact_voc(solver, b, 0) < 0.0

    def test_terminal_layer_rejects_computations(self):
        d = dm.StoppingDomain(cost=0.1)
        solver = solve(d)
        b = dm.StoppingBelief(alpha=15.0, beta=16.0, step_count=29)
        with pytest.raises(InvalidActionError):
            solver.q_value(b, 0)


class TestPolicyValue:
    def test_immediate_terminate(self):
        d = dm.BanditDomain(k=2, cost=0.01)
        assert policy_value(d, ImmediateTerminatePolicy(d)) == 0.5

    def test_matches_simulation(self):
        d = dm.StoppingDomain(cost=0.01)
        pol = WeightedFeaturePolicy(d, WeightVector(0.2, 0.8, 0.0, 6.0))
        exact_value = policy_value(d, pol)
        rep = evaluate_policy(d, d.initial_belief(), pol, 20_000, 5000)
        assert rep.ci_lo <= exact_value <= rep.ci_hi


class TestRegression:
    def test_row_count(self):
        assert len(regression_rows(dm.StoppingDomain(cost=0.01))) == 435

    def test_myopic_regime_is_exact(self):
        fit, X, y = fit_voc_regression(dm.StoppingDomain(cost=0.1))
        assert fit.r_squared >= 0.999999
        assert fit.coef_vpi == pytest.approx(0.0, abs=1e-6)
        assert fit.coef_voi1 == pytest.approx(1.0, abs=1e-6)
        assert fit.coef_cost == pytest.approx(-1.0, abs=1e-6)

    def test_stable_above_myopic_cost(self):
        f1, _, _ = fit_voc_regression(dm.StoppingDomain(cost=0.1))
        f2, _, _ = fit_voc_regression(dm.StoppingDomain(cost=0.2))
        assert f2.coefficients() == pytest.approx(f1.coefficients(), abs=1e-6)
        assert f2.r_squared >= 0.999999

    def test_r2_monotone_in_cost(self):
        r2s = [fit_voc_regression(dm.StoppingDomain(cost=c))[0].r_squared
               for c in (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1)]
        assert all(a <= b + 1e-12 for a, b in zip(r2s, r2s[1:]))
        assert min(r2s) >= 0.88
        assert max(r2s) <= 1.0 + 1e-12

    def test_identity_regression_sanity(self):
        # regressing VOI1 on itself explains everything
        fit, X, y = fit_voc_regression(dm.StoppingDomain(cost=0.1))
        coef, *_ = np.linalg.lstsq(X[:, 1:2], X[:, 1], rcond=None)
        assert coef[0] == pytest.approx(1.0)

    def test_degenerate_design(self):
        with pytest.raises(DegenerateDesignError):
            fit_voc_regression(dm.StoppingDomain(cost=0.01, horizon=3))


class TestValueTableIO:
    def test_roundtrip(self, tmp_path):
        d = dm.TreeDomain(height=2, cost=0.05)
        solver = solve(d)
        path = tmp_path / "table.csv"
        dump_value_table(solver, path)
        loaded = load_value_table(path)
        assert loaded.domain == d
        b0 = d.initial_belief()
        assert loaded.value(b0) == solver.value(b0)
        assert loaded.q_value(b0, 3) == pytest.approx(solver.q_value(b0, 3), abs=1e-12)

    def test_coverage_error(self):
        d = dm.StoppingDomain(cost=0.01)
        table = LoadedValueTable(d, {(1.0, 1.0): 0.4})
        with pytest.raises(CoverageError):
            table.value(dm.StoppingBelief(alpha=3.0, beta=1.0, step_count=2))

    def test_bad_file(self, tmp_path):
        path = tmp_path / "junk.csv"
        path.write_text("not,a,table\n")
        with pytest.raises(CoverageError):
            load_value_table(path)
