"""Metalevel decision rules.

All policies are callables ``policy(belief) -> MetaAction`` and share one
tie-breaking convention: a computation is chosen only if its score strictly
exceeds the terminate score (terminating is worth exactly zero additional
value), and ties among computations go to the lowest index. Policies are
pure given their construction arguments; internal caches only memoize
deterministic values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import DEFAULT_CONFIG, FeatureConfig, feature_matrix, voi1_all
from .core import TERMINATE, MetaAction, compute, run_episode
from .domains import (
    BanditDomain,
    StoppingDomain,
    TornadoDomain,
    TreeDomain,
    tree_structure,
)
from .errors import ConfigurationError, ConstraintError
from .tree_dp import TreeFeatureEngine

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Mixture weights for the weighted-feature policy.

    w1, w2, w3 weight (voi1, vpi, vpi_sub) and must lie on the probability
    simplex; w4 multiplies the computation cost and lives in [1, h] where h
    bounds how many computations an episode can perform.
    """

    w1: float
    w2: float
    w3: float
    w4: float

    def validate(self, horizon: int) -> "WeightVector":
        trio = (self.w1, self.w2, self.w3)
        for w in trio:
            if not -_SIMPLEX_TOL <= w <= 1.0 + _SIMPLEX_TOL:
                raise ConstraintError(f"simplex weights must be in [0, 1], got {trio}")
        if abs(sum(trio) - 1.0) > _SIMPLEX_TOL:
            raise ConstraintError(f"simplex weights must sum to 1, got {sum(trio)!r}")
        if not 1.0 - _SIMPLEX_TOL <= self.w4 <= horizon + _SIMPLEX_TOL:
            raise ConstraintError(f"w4 must be in [1, {horizon}], got {self.w4}")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4])


def voc_hat(feature_rows: np.ndarray, weights: WeightVector) -> np.ndarray:
    """Weighted VOC estimate per computation from (k, 4) feature rows."""
    f = np.asarray(feature_rows, dtype=float)
    return (
        weights.w1 * f[..., 0]
        + weights.w2 * f[..., 1]
        + weights.w3 * f[..., 2]
        - weights.w4 * f[..., 3]
    )


def _tree_voc_parts(voi1, vpi, sub, cost, weights: WeightVector) -> np.ndarray:
    # one shared expression so the batched and per-belief tree paths produce
    # bit-identical scores (summation order matters for exact ties)
    voc = weights.w1 * voi1
    if weights.w2 != 0.0:
        voc = voc + weights.w2 * vpi[..., None]
    if weights.w3 != 0.0:
        voc = voc + weights.w3 * sub
    return voc - weights.w4 * cost


class WeightedFeaturePolicy:
    """Pick the computation maximizing w . (voi1, vpi, vpi_sub, -cost).

    Terminates when no computation scores above zero, and unconditionally at
    the last step of the horizon. Registry name: "bmps".
    """

    def __init__(self, domain, weights: WeightVector, config: FeatureConfig = DEFAULT_CONFIG):
        self.domain = domain
        self.weights = weights.validate(domain.horizon)
        self.config = config
        self._tree_engine = None
        if isinstance(domain, TreeDomain) and not config.tree_monte_carlo:
            self._tree_engine = TreeFeatureEngine(domain.height)
        self._stopping_tables = None
        if isinstance(domain, StoppingDomain):
            self._stopping_tables = _stopping_decision_tables(domain, self.weights, config)

    def scores(self, belief) -> np.ndarray:
        if self._tree_engine is not None:
            w = self.weights
            voi1, vpi, sub, _ = self._tree_engine.features_batch(
                np.asarray(belief.probs), need_vpi=w.w2 != 0.0, need_sub=w.w3 != 0.0
            )
            vpi = vpi if vpi is not None else np.zeros(1)
            sub = sub if sub is not None else np.zeros_like(voi1)
            return _tree_voc_parts(voi1, vpi, sub, self.domain.cost, w)[0]
        return voc_hat(feature_matrix(self.domain, belief, self.config), self.weights)

    def __call__(self, belief) -> MetaAction:
        if belief.step_count >= self.domain.horizon - 1:
            return TERMINATE
        voc = self.scores(belief)
        j = int(np.argmax(voc))
        return compute(j) if voc[j] > 0.0 else TERMINATE

    def run_episodes(self, domain, initial, seeds) -> np.ndarray:
        if self._tree_engine is not None and domain is self.domain:
            w = self.weights
            return run_tree_weighted_episodes(
                domain, (w.w1, w.w2, w.w3, w.w4), initial, seeds
            )
        if self._stopping_tables is not None and domain is self.domain:
            return _run_stopping_episodes(domain, self._stopping_tables, initial, seeds)
        return np.array(
            [run_episode(domain, initial, self, int(s)).return_total for s in seeds]
        )


def _stopping_decision_tables(domain, weights: WeightVector, config: FeatureConfig):
    """(compute?, utility) lookup over the (alpha, beta) lattice.

    The sampling decision depends only on the belief's counts, so one pass
    over the <= h(h+1)/2 reachable count pairs turns episode simulation
    into an integer random walk. VOC scores are built with the shared
    voc_hat expression so decisions match the per-belief path bit for bit.
    """
    from .domains import StoppingBelief
    from .features import feature_matrix as fmatrix

    h = domain.horizon
    size = h + 2
    decide = np.zeros((size, size), dtype=bool)
    utility = np.zeros((size, size))
    for total in range(2, h + 2):
        for a in range(1, total):
            b = total - a
            utility[a, b] = domain.utility_from_counts(a, b)
            belief = StoppingBelief(alpha=float(a), beta=float(b))
            voc = voc_hat(fmatrix(domain, belief, config), weights)
            decide[a, b] = voc[0] > 0.0
    return decide, utility


def _run_stopping_episodes(domain, tables, initial, seeds) -> np.ndarray:
    decide, utility = tables
    h = domain.horizon
    lam = domain.cost
    out = np.empty(len(seeds))
    a0, b0 = int(initial.alpha), int(initial.beta)
    step0 = initial.step_count
    for i, seed in enumerate(seeds):
        rng = np.random.default_rng(int(seed))
        a, b, step = a0, b0, step0
        total = 0.0
        while step < h - 1 and decide[a, b]:
            total -= lam
            # same draw semantics as sample_transition: u < alpha/(alpha+beta)
            if rng.random() < a / (a + b):
                a += 1
            else:
                b += 1
            step += 1
        out[i] = total + utility[a, b]
    return out


class MetaGreedyPolicy:
    """Choose the computation with the best myopic value, net of cost;
    stop as soon as no single computation pays for itself."""

    def __init__(self, domain, config: FeatureConfig = DEFAULT_CONFIG):
        self.domain = domain
        self.config = config
        self._tree_engine = None
        if isinstance(domain, TreeDomain):
            self._tree_engine = TreeFeatureEngine(domain.height)

    def scores(self, belief) -> np.ndarray:
        if self._tree_engine is not None:
            voi1, _, _, _ = self._tree_engine.features_batch(
                np.asarray(belief.probs), need_vpi=False, need_sub=False
            )
            return voi1[0] - self.domain.cost
        return voi1_all(self.domain, belief, self.config) - self.domain.cost

    def __call__(self, belief) -> MetaAction:
        if belief.step_count >= self.domain.horizon - 1:
            return TERMINATE
        net = self.scores(belief)
        j = int(np.argmax(net))
        return compute(j) if net[j] > 0.0 else TERMINATE

    def run_episodes(self, domain, initial, seeds) -> np.ndarray:
        if self._tree_engine is not None and domain is self.domain:
            return run_tree_weighted_episodes(domain, (1.0, 0.0, 0.0, 1.0), initial, seeds)
        return np.array(
            [run_episode(domain, initial, self, int(s)).return_total for s in seeds]
        )


class FullDeliberationPolicy:
    """Always deliberate as much as possible.

    Bandit and tornado rotate round-robin over computations (spreading the
    budget across arms / cities); the tree reveals the lowest-index unknown
    node; stopping keeps sampling. Terminates only when nothing informative
    remains or the horizon / budget forces it.
    """

    def __init__(self, domain):
        self.domain = domain

    def __call__(self, belief) -> MetaAction:
        d = self.domain
        if belief.step_count >= d.horizon - 1:
            return TERMINATE
        if isinstance(d, StoppingDomain):
            return compute(0)
        if isinstance(d, TreeDomain):
            for j, p in enumerate(belief.probs):
                if p == 0.5:
                    return compute(j)
            return TERMINATE
        if isinstance(d, TornadoDomain):
            if belief.sims_remaining <= 0:
                return TERMINATE
            return compute(belief.step_count % d.k)
        return compute(belief.step_count % d.k)


class UniformAllocationPolicy:
    """Tornado baseline: spread the simulation budget evenly over cities."""

    def __init__(self, domain):
        if not isinstance(domain, TornadoDomain):
            raise ConfigurationError("uniform allocation is a tornado-domain policy")
        self.domain = domain

    def __call__(self, belief) -> MetaAction:
        if belief.sims_remaining <= 0 or belief.step_count >= self.domain.horizon - 1:
            return TERMINATE
        return compute(belief.step_count % self.domain.k)


class ImmediateTerminatePolicy:
    """Degenerate baseline: decide on the prior without any computation."""

    def __init__(self, domain):
        self.domain = domain

    def __call__(self, belief) -> MetaAction:
        return TERMINATE


class BlinkeredPolicy:
    """Value each arm by solving its single-arm metalevel MDP.

    The subproblem for arm i keeps only computation c_i, scores termination
    against max(posterior mean of i, best other arm's current mean), and
    runs over the remaining global horizon. The policy acts greedily on the
    resulting Q values with terminate worth the current utility.
    """

    def __init__(self, domain):
        if not isinstance(domain, BanditDomain):
            raise ConfigurationError("the blinkered policy is defined for the bandit domain")
        self.domain = domain
        self._memo: dict[tuple, float] = {}

    def _value(self, a: float, b: float, m: float, remaining: int) -> float:
        """Optimal value of the single-arm subproblem with `remaining` actions."""
        here = max(a / (a + b), m)
        if remaining <= 1:
            return here
        key = (a, b, m, remaining)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        mu = a / (a + b)
        cont = (
            -self.domain.cost
            + mu * self._value(a + 1.0, b, m, remaining - 1)
            + (1.0 - mu) * self._value(a, b + 1.0, m, remaining - 1)
        )
        out = max(here, cont)
        self._memo[key] = out
        return out

    def q_values(self, belief) -> np.ndarray:
        remaining = self.domain.horizon - belief.step_count
        means = belief.means()
        order = np.argsort(means)
        top, second = order[-1], (order[-2] if means.size > 1 else None)
        q = np.empty(means.size)
        for i, (a, b) in enumerate(belief.arms):
            if second is None:
                m = -math.inf
            else:
                m = float(means[second] if i == top else means[top])
            mu = means[i]
            q[i] = (
                -self.domain.cost
                + mu * self._value(a + 1.0, b, m, remaining - 1)
                + (1.0 - mu) * self._value(a, b + 1.0, m, remaining - 1)
            )
        return q

    def __call__(self, belief) -> MetaAction:
        if belief.step_count >= self.domain.horizon - 1:
            return TERMINATE
        q = self.q_values(belief)
        utility = self.domain.terminal_reward(belief)
        j = int(np.argmax(q))
        return compute(j) if q[j] > utility else TERMINATE


class RecursivelyBlinkeredPolicy:
    """Tree generalization of the blinkered rule.

    A computation about node c is valued under the restriction that future
    computations stay inside the set informative about the paths through c,
    minus those about c's own ancestors; that set is exactly c's subtree.
    Applying the restriction recursively means the policy scores each node
    by an optimal adaptive "drill-down" below it. Because subtree size
    strictly shrinks along the recursion, it terminates, and subproblems
    over fully-unknown subtrees collapse to a tiny closed table indexed by
    (subtree height, ancestor sum, best outside alternative).
    """

    def __init__(self, domain):
        if not isinstance(domain, TreeDomain):
            raise ConfigurationError("the recursively blinkered policy needs the tree domain")
        self.domain = domain
        self.st = tree_structure(domain.height)
        self.engine = TreeFeatureEngine(domain.height)
        self._phi_memo: dict[tuple, float] = {}
        self._general_memo: dict[tuple, float] = {}

    def restricted_computation_set(self, j: int) -> tuple[int, ...]:
        """Computations available after computing j: j and its descendants."""
        return tuple(sorted((j,) + self.st.descendants[j]))

    def _phi(self, height: int, anc_sum: float, outside: float) -> float:
        """Value of force-revealing the root of a fully-unknown subtree."""
        key = (height, anc_sum, outside)
        hit = self._phi_memo.get(key)
        if hit is not None:
            return hit
        lam = self.domain.cost
        total = 0.0
        for x in (1.0, -1.0):
            here = max(outside, anc_sum + x)
            best = here
            for d in range(1, height + 1):
                best = max(best, self._phi(height - d, anc_sum + x, here))
            total += best
        out = -lam + 0.5 * total
        self._phi_memo[key] = out
        return out

    def _q(self, values: np.ndarray, fresh: np.ndarray, unrevealed: np.ndarray,
           u: np.ndarray, j: int, anc_sum: float, outside: float) -> float:
        st = self.st
        depth = int(st.depth[j])
        if fresh[j]:
            return self._phi(self.domain.height - depth, anc_sum, outside)
        desc = st.descendants[j]
        pattern = bytes(int(values[w]) + 1 for w in (j,) + desc)
        key = (j, pattern, anc_sum, outside)
        hit = self._general_memo.get(key)
        if hit is not None:
            return hit
        left = 2 * j + 1
        below = max(u[left], u[left + 1]) if left < st.num_nodes else 0.0
        # relative path sums and best in-subtree deviations (x-independent)
        rdown: dict[int, float] = {}
        ralt: dict[int, float] = {}
        for w in desc:  # level order: parents precede children
            par = int(st.parent[w])
            base = 0.0 if par == j else rdown[par]
            rdown[w] = base + values[w]
            dev = u[st.sibling[w]]
            ralt[w] = dev if par == j else max(ralt[par], rdown[par] + dev)
        lam = self.domain.cost
        total = 0.0
        for x in (1.0, -1.0):
            here = max(outside, anc_sum + x + below)
            best = here
            for w in desc:
                if not unrevealed[w]:
                    continue
                a_w = anc_sum + x + rdown[w] - values[w]
                o_w = max(outside, anc_sum + x + ralt[w])
                best = max(best, self._q(values, fresh, unrevealed, u, w, a_w, o_w))
            total += best
        out = -lam + 0.5 * total
        self._general_memo[key] = out
        return out

    def __call__(self, belief) -> MetaAction:
        d = self.domain
        if belief.step_count >= d.horizon - 1:
            return TERMINATE
        probs = np.asarray(belief.probs)
        unrevealed = probs == 0.5
        if not unrevealed.any():
            return TERMINATE
        values = 2.0 * probs - 1.0
        st = self.st
        fresh = unrevealed.copy()
        for t in range(d.height - 1, -1, -1):
            idx = st.levels[t]
            fresh[idx] &= fresh[2 * idx + 1] & fresh[2 * idx + 2]
        u, down, alt = self.engine.det_tables(values[None, :])
        u, down, alt = u[0], down[0], alt[0]
        utility = u[0]
        best_q = -math.inf
        best_j = None
        for j in range(st.num_nodes):
            if not unrevealed[j]:
                continue
            q = self._q(values, fresh, unrevealed, u, j, float(down[j] - values[j]), float(alt[j]))
            if q > best_q:
                best_q = q
                best_j = j
        if best_j is None or best_q <= utility:
            return TERMINATE
        return compute(best_j)


def run_tree_weighted_episodes(domain: TreeDomain, w: tuple, initial, seeds) -> np.ndarray:
    """Lockstep batch simulation of the weighted-feature policy on trees.

    Per-episode RNG streams are consumed in exactly the order the sequential
    runner would, so returns are bit-identical to run_episode per seed.
    """
    engine = TreeFeatureEngine(domain.height)
    w1, w2, w3, w4 = w
    weights = WeightVector(w1, w2, w3, w4)
    k = engine.st.num_nodes
    lam = domain.cost
    horizon = domain.horizon
    gens = [np.random.default_rng(int(s)) for s in seeds]
    B = len(gens)
    P = np.tile(np.asarray(initial.probs, dtype=np.float64), (B, 1))
    steps = np.full(B, initial.step_count, dtype=np.int64)
    returns = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    need_vpi = w2 != 0.0
    need_sub = w3 != 0.0
    while alive.any():
        idx = np.nonzero(alive)[0]
        voi1, vpi, sub, util = engine.features_batch(
            P[idx], need_vpi=need_vpi, need_sub=need_sub
        )
        vpi = vpi if vpi is not None else np.zeros(idx.size)
        sub = sub if sub is not None else np.zeros_like(voi1)
        voc = _tree_voc_parts(voi1, vpi, sub, lam, weights)
        best = voc.argmax(axis=1)
        best_voc = voc[np.arange(idx.size), best]
        stop = (best_voc <= 0.0) | (steps[idx] >= horizon - 1)
        stop_rows = idx[stop]
        returns[stop_rows] += util[stop]
        alive[stop_rows] = False
        cont_rows = idx[~stop]
        chosen = best[~stop]
        returns[cont_rows] -= lam
        steps[cont_rows] += 1
        for row, j in zip(cont_rows, chosen):
            if P[row, j] == 0.5:
                # same draw semantics as sample_transition: u < p(first outcome)
                P[row, j] = 1.0 if gens[row].random() < 0.5 else 0.0
    return returns


POLICY_NAMES = (
    "bmps",
    "meta_greedy",
    "full",
    "uniform",
    "blinkered",
    "recursive_blinkered",
    "optimal",
    "terminate",
)


def make_policy(name: str, domain, *, weights: WeightVector | None = None,
                config: FeatureConfig = DEFAULT_CONFIG, state_cap: int | None = None):
    """Construct a policy by its registry name."""
    if name == "bmps":
        if weights is None:
            raise ConfigurationError("the bmps policy needs a trained WeightVector")
        return WeightedFeaturePolicy(domain, weights, config)
    if name == "meta_greedy":
        return MetaGreedyPolicy(domain, config)
    if name == "full":
        return FullDeliberationPolicy(domain)
    if name == "uniform":
        return UniformAllocationPolicy(domain)
    if name == "blinkered":
        return BlinkeredPolicy(domain)
    if name == "recursive_blinkered":
        return RecursivelyBlinkeredPolicy(domain)
    if name == "terminate":
        return ImmediateTerminatePolicy(domain)
    if name == "optimal":
        from .exact import solve

        solver = solve(domain, state_cap=state_cap) if state_cap else solve(domain)
        return solver.policy()
    raise ConfigurationError(f"unknown policy name {name!r}; known: {POLICY_NAMES}")
