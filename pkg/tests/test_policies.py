import numpy as np
import pytest

from metamdp import domains as dm
from metamdp.core import TERMINATE, compute, evaluate_policy, run_episode
from metamdp.errors import ConfigurationError, ConstraintError
from metamdp.policies import (
    BlinkeredPolicy,
    FullDeliberationPolicy,
    ImmediateTerminatePolicy,
    MetaGreedyPolicy,
    RecursivelyBlinkeredPolicy,
    UniformAllocationPolicy,
    WeightVector,
    WeightedFeaturePolicy,
    make_policy,
    voc_hat,
)

from conftest import random_walk_belief


class TestWeightVector:
    def test_valid(self):
        WeightVector(0.2, 0.3, 0.5, 1.0).validate(30)
        WeightVector(1.0, 0.0, 0.0, 30.0).validate(30)

    @pytest.mark.parametrize("bad", [
        WeightVector(0.5, 0.2, 0.2, 1.0),  # sums to 0.9
        WeightVector(1.1, -0.1, 0.0, 1.0),
        WeightVector(0.2, 0.3, 0.5, 0.5),
        WeightVector(0.2, 0.3, 0.5, 31.0),
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConstraintError):
            bad.validate(30)

    def test_policy_validates(self):
        d = dm.StoppingDomain(cost=0.01)
        with pytest.raises(ConstraintError):
            WeightedFeaturePolicy(d, WeightVector(0.5, 0.5, 0.5, 1.0))


class TestVocHat:
    def test_linear_assembly(self):
        rows = np.array([[0.2, 0.5, 0.3, 0.01]])
        w = WeightVector(0.5, 0.25, 0.25, 3.0)
        expected = 0.5 * 0.2 + 0.25 * 0.5 + 0.25 * 0.3 - 3.0 * 0.01
        assert voc_hat(rows, w)[0] == pytest.approx(expected)

    def test_argmax_invariant_under_feature_scaling(self, rng):
        w = WeightVector(0.4, 0.3, 0.3, 2.0)
        for _ in range(50):
            rows = rng.random((6, 4)) * [0.3, 0.8, 0.5, 0.02]
            base = voc_hat(rows, w)
            scaled = voc_hat(rows * 7.3, w)
            assert np.argmax(base) == np.argmax(scaled)
            assert (base.max() > 0) == (scaled.max() > 0)


class TestWeightedFeaturePolicy:
    def test_equals_meta_greedy_with_myopic_weights(self, domain_zoo, rng):
        for d in domain_zoo:
            bmps = WeightedFeaturePolicy(d, WeightVector(1.0, 0.0, 0.0, 1.0))
            greedy = MetaGreedyPolicy(d)
            for _ in range(30):
                b = random_walk_belief(d, int(rng.integers(0, 6)), rng)
                if isinstance(d, dm.TornadoDomain) and b.sims_remaining <= 0:
                    continue
                assert bmps(b) == greedy(b)

    def test_terminates_when_voi_below_cost(self):
        d = dm.StoppingDomain(cost=0.02)
        pol = WeightedFeaturePolicy(d, WeightVector(1.0, 0.0, 0.0, 1.0))
        assert pol(dm.StoppingBelief(alpha=2, beta=1)) == TERMINATE

    def test_symmetric_tie_breaks_to_lowest_index(self):
        d = dm.BanditDomain(k=2, cost=0.01)
        pol = WeightedFeaturePolicy(d, WeightVector(0.0, 1.0, 0.0, 1.0))
        assert pol(d.initial_belief()) == compute(0)

    def test_forced_terminate_at_horizon(self):
        d = dm.BanditDomain(k=2, cost=1e-6, horizon=25)
        pol = WeightedFeaturePolicy(d, WeightVector(0.0, 1.0, 0.0, 1.0))
        b = d.initial_belief()
        b = dm.BanditBelief(arms=b.arms, step_count=24)
        assert pol(b) == TERMINATE

    def test_tree_batch_path_equals_sequential(self):
        d = dm.TreeDomain(height=3, cost=2 ** -5)
        pol = WeightedFeaturePolicy(d, WeightVector(0.25, 0.3, 0.45, 3.0))
        seeds = np.arange(400, 440)
        batched = pol.run_episodes(d, d.initial_belief(), seeds)
        sequential = [run_episode(d, d.initial_belief(), pol, int(s)).return_total
                      for s in seeds]
        np.testing.assert_array_equal(batched, np.asarray(sequential))

    def test_stopping_fast_path_equals_sequential(self):
        d = dm.StoppingDomain(cost=0.005)
        pol = WeightedFeaturePolicy(d, WeightVector(0.3, 0.4, 0.3, 4.0))
        seeds = np.arange(100, 160)
        fast = pol.run_episodes(d, d.initial_belief(), seeds)
        slow = [run_episode(d, d.initial_belief(), pol, int(s)).return_total for s in seeds]
        np.testing.assert_array_equal(fast, np.asarray(slow))


class TestMetaGreedy:
    def test_stopping_behavior(self):
        d = dm.StoppingDomain(cost=0.02)
        pol = MetaGreedyPolicy(d)
        assert pol(d.initial_belief()) == compute(0)
        assert pol(dm.StoppingBelief(alpha=2, beta=1)) == TERMINATE

    def test_fresh_tree_action(self):
        # all non-root computations tie at VOI1 = 1/2 > 1/4; lowest index wins
        d = dm.TreeDomain(height=2, cost=0.25)
        pol = MetaGreedyPolicy(d)
        action = pol(d.initial_belief())
        assert action == compute(1)

    def test_tree_batch_equals_sequential(self):
        d = dm.TreeDomain(height=2, cost=0.125)
        pol = MetaGreedyPolicy(d)
        seeds = np.arange(40)
        batched = pol.run_episodes(d, d.initial_belief(), seeds)
        sequential = [run_episode(d, d.initial_belief(), pol, int(s)).return_total
                      for s in seeds]
        np.testing.assert_array_equal(batched, np.asarray(sequential))


class TestFullDeliberation:
    def test_bandit_round_robin(self):
        d = dm.BanditDomain(k=3, cost=0.01, horizon=25)
        trace = run_episode(d, d.initial_belief(), FullDeliberationPolicy(d), seed=0)
        computes = [a.index for a in trace.actions[:-1]]
        assert computes == [i % 3 for i in range(24)]

    def test_stopping_runs_to_horizon(self):
        d = dm.StoppingDomain(cost=0.001)
        trace = run_episode(d, d.initial_belief(), FullDeliberationPolicy(d), seed=0)
        assert len(trace.actions) == 30

    def test_tree_reveals_everything_then_stops(self):
        d = dm.TreeDomain(height=2, cost=0.125)
        trace = run_episode(d, d.initial_belief(), FullDeliberationPolicy(d), seed=0)
        assert [a.index for a in trace.actions[:-1]] == list(range(7))
        assert trace.actions[-1].is_terminate
        fully = trace.final_belief
        assert FullDeliberationPolicy(d)(fully) == TERMINATE

    def test_tornado_stops_at_budget(self):
        d = dm.TornadoDomain(k=2, budget=5)
        trace = run_episode(d, d.initial_belief(), FullDeliberationPolicy(d), seed=0)
        assert len(trace.actions) == 6


class TestUniformAllocation:
    def test_round_robin_sequence(self):
        d = dm.TornadoDomain(k=3, budget=7)
        trace = run_episode(d, d.initial_belief(), UniformAllocationPolicy(d), seed=2)
        assert [a.index for a in trace.actions[:-1]] == [0, 1, 2, 0, 1, 2, 0]

    def test_zero_budget_terminates(self):
        d = dm.TornadoDomain(k=3, budget=0)
        pol = UniformAllocationPolicy(d)
        assert pol(d.initial_belief()) == TERMINATE

    def test_budget_split_counts(self):
        d = dm.TornadoDomain(k=10, budget=48)
        trace = run_episode(d, d.initial_belief(), UniformAllocationPolicy(d), seed=3)
        counts = np.bincount([a.index for a in trace.actions[:-1]], minlength=10)
        assert sorted(counts) in ([4] * 2 + [5] * 8, [4, 4] + [5] * 8)
        assert counts.sum() == 48

    def test_wrong_domain_rejected(self):
        with pytest.raises(ConfigurationError):
            UniformAllocationPolicy(dm.BanditDomain(k=2, cost=0.1))


class TestBlinkered:
    def test_symmetric_tie_to_lowest(self):
        d = dm.BanditDomain(k=2, cost=0.001, horizon=25)
        pol = BlinkeredPolicy(d)
        assert pol(d.initial_belief()) == compute(0)

    def test_confident_beliefs_terminate(self):
        d = dm.BanditDomain(k=2, cost=0.05, horizon=8)
        pol = BlinkeredPolicy(d)
        b = dm.BanditBelief(arms=((5.0, 1.0), (1.0, 5.0)), step_count=0)
        # single-arm lookahead oracle, written independently of the policy
        def arm_value(a, bb, m, remaining):
            here = max(a / (a + bb), m)
            if remaining <= 1:
                return here
            mu = a / (a + bb)
            cont = (-0.05 + mu * arm_value(a + 1, bb, m, remaining - 1)
                    + (1 - mu) * arm_value(a, bb + 1, m, remaining - 1))
            return max(here, cont)

        u = d.terminal_reward(b)
        for i, (a, bb) in enumerate(b.arms):
            m = max(x / (x + y) for j, (x, y) in enumerate(b.arms) if j != i)
            mu = a / (a + bb)
            q = (-0.05 + mu * arm_value(a + 1, bb, m, 7)
                 + (1 - mu) * arm_value(a, bb + 1, m, 7))
            assert q <= u
        assert pol(b) == TERMINATE

    def test_single_arm_matches_optimal(self):
        from metamdp.exact import solve

        d = dm.BanditDomain(k=1, cost=0.02, horizon=8)
        solver = solve(d)
        pol = BlinkeredPolicy(d)
        opt = solver.policy()
        frontier = [d.initial_belief()]
        seen = 0
        while frontier:
            b = frontier.pop()
            if b.step_count >= d.horizon - 1:
                continue
            assert pol(b) == opt(b)
            seen += 1
            for succ, _ in d.successors(b, 0):
                frontier.append(succ)
        assert seen > 20

    def test_wrong_domain_rejected(self):
        with pytest.raises(ConfigurationError):
            BlinkeredPolicy(dm.TreeDomain(height=2, cost=0.1))


def reference_recursively_blinkered_q(domain, probs, j, lam):
    """Direct recursion from the definition, no memoization or contexts.

    Future computations after j are restricted to j's subtree (the
    computations informative about any path through j's node, minus those
    about j's own ancestors).
    """
    st = domain.structure

    def utility(p):
        return domain.terminal_reward(dm.TreeBelief(height=domain.height, probs=tuple(p)))

    def q(p, c):
        out = 0.0
        for x in (1.0, 0.0):
            p2 = list(p)
            p2[c] = x
            best = utility(p2)
            for w in (c,) + st.descendants[c]:
                if p2[w] != 0.5:
                    continue
                best = max(best, q(p2, w))
            out += 0.5 * best
        return -lam + out

    return q(list(probs), j)


class TestRecursivelyBlinkered:
    def test_restricted_sets_are_subtrees(self):
        d = dm.TreeDomain(height=2, cost=0.125)
        pol = RecursivelyBlinkeredPolicy(d)
        assert pol.restricted_computation_set(3) == (3,)
        assert pol.restricted_computation_set(1) == (1, 3, 4)
        assert pol.restricted_computation_set(0) == tuple(range(7))
        # strictly shrinking along any drill-down chain
        for c in range(1, 7):
            assert len(pol.restricted_computation_set(c)) < len(pol.restricted_computation_set(0))

    @pytest.mark.parametrize("lam", [0.03125, 0.125, 0.5])
    def test_q_matches_reference_fresh(self, lam):
        d = dm.TreeDomain(height=2, cost=lam)
        pol = RecursivelyBlinkeredPolicy(d)
        probs = np.full(7, 0.5)
        values = 2.0 * probs - 1.0
        u, down, alt = pol.engine.det_tables(values[None, :])
        fresh = np.ones(7, dtype=bool)
        unrevealed = np.ones(7, dtype=bool)
        for j in range(7):
            mine = pol._q(values, fresh, unrevealed, u[0], j,
                          float(down[0, j] - values[j]), float(alt[0, j]))
            ref = reference_recursively_blinkered_q(d, probs, j, lam)
            assert mine == pytest.approx(ref, abs=1e-9)

    def test_q_matches_reference_partial(self, rng):
        d = dm.TreeDomain(height=2, cost=0.0625)
        pol = RecursivelyBlinkeredPolicy(d)
        for _ in range(6):
            probs = np.full(7, 0.5)
            reveal = rng.choice(7, size=2, replace=False)
            probs[reveal] = rng.choice([0.0, 1.0], size=2)
            values = 2.0 * probs - 1.0
            unrevealed = probs == 0.5
            fresh = unrevealed.copy()
            for t in (1, 0):
                idx = d.structure.levels[t]
                fresh[idx] &= fresh[2 * idx + 1] & fresh[2 * idx + 2]
            u, down, alt = pol.engine.det_tables(values[None, :])
            for j in np.nonzero(unrevealed)[0]:
                mine = pol._q(values, fresh, unrevealed, u[0], int(j),
                              float(down[0, j] - values[j]), float(alt[0, j]))
                ref = reference_recursively_blinkered_q(d, probs, int(j), d.cost)
                assert mine == pytest.approx(ref, abs=1e-9)

    def test_revealed_tree_terminates(self):
        d = dm.TreeDomain(height=2, cost=0.125)
        pol = RecursivelyBlinkeredPolicy(d)
        b = dm.TreeBelief(height=2, probs=(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0))
        assert pol(b) == TERMINATE

    def test_episode_runs(self):
        d = dm.TreeDomain(height=3, cost=0.0625)
        pol = RecursivelyBlinkeredPolicy(d)
        trace = run_episode(d, d.initial_belief(), pol, seed=11)
        assert trace.actions[-1].is_terminate


class TestRegistry:
    def test_names(self):
        d = dm.BanditDomain(k=2, cost=0.01)
        assert isinstance(make_policy("meta_greedy", d), MetaGreedyPolicy)
        assert isinstance(make_policy("full", d), FullDeliberationPolicy)
        assert isinstance(make_policy("blinkered", d), BlinkeredPolicy)
        assert isinstance(make_policy("terminate", d), ImmediateTerminatePolicy)
        w = WeightVector(0.5, 0.25, 0.25, 2.0)
        assert isinstance(make_policy("bmps", d, weights=w), WeightedFeaturePolicy)

    def test_bmps_needs_weights(self):
        with pytest.raises(ConfigurationError):
            make_policy("bmps", dm.BanditDomain(k=2, cost=0.01))

    def test_unknown_name(self):
        with pytest.raises(ConfigurationError):
            make_policy("dqn", dm.BanditDomain(k=2, cost=0.01))

    def test_optimal_via_registry(self):
        d = dm.StoppingDomain(cost=0.4)
        pol = make_policy("optimal", d)
        assert pol(d.initial_belief()) == TERMINATE
