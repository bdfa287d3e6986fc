"""Value-of-information features: myopic VOI, VPI, and subset VPI.

For every domain here the transition support is finite, so the myopic value
of information is computed exactly by enumerating successors. The
perfect-information features use:

  * stopping: a closed form for E[max(theta, 1-theta)] under a Beta belief
    via the regularized incomplete beta function;
  * bandit: the E[max of independent Betas] identity
    integral over [0,1] of (1 - prod_i I_x(a_i, b_i)) dx, evaluated with
    composite Simpson quadrature on a fixed grid (deterministic, so policy
    training sees no estimator noise), and the closed form
    E[max(X, m)] = m I_m(a, b) + mu (1 - I_m(a+1, b)) for single-arm
    revelation;
  * tornado: utilities are additive over cities with independent beliefs,
    so both VPI and subset VPI reduce to per-city closed forms;
  * tree: exact integer-support distribution DP (see ``metamdp.tree_dp``),
    with a Monte-Carlo mode retained as a cross-check.

Negative estimates of these provably non-negative quantities are clamped to
zero; that is estimator or rounding noise, not signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Belief, MetaAction
from .domains import (
    BanditBelief,
    BanditDomain,
    StoppingBelief,
    StoppingDomain,
    TornadoBelief,
    TornadoDomain,
    TreeBelief,
    TreeDomain,
)
from .errors import ConfigurationError, InvalidActionError
from .special import BetaCdfGrid, betainc, simpson_weights
from .tree_dp import TreeFeatureEngine


@dataclass(frozen=True)
class FeatureVector:
    voi1: float
    vpi: float
    vpi_sub: float
    cost: float

    def as_array(self) -> np.ndarray:
        return np.array([self.voi1, self.vpi, self.vpi_sub, self.cost])


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for feature estimation.

    ``common_random_numbers`` reuses one parameter-sample set across all
    candidate computations at a belief (variance reduction for the argmax);
    it only matters for the Monte-Carlo paths.
    """

    mc_samples: int = 3000
    quadrature_points: int = 513
    common_random_numbers: bool = True
    seed: int = 0
    tree_monte_carlo: bool = False

    def __post_init__(self):
        if self.quadrature_points < 3 or self.quadrature_points % 2 == 0:
            raise ConfigurationError("quadrature_points must be odd and >= 3")
        if self.tree_monte_carlo and self.mc_samples < 100:
            raise ConfigurationError("mc_samples must be >= 100 when Monte Carlo is selected")
        if self.mc_samples < 1:
            raise ConfigurationError("mc_samples must be positive")


DEFAULT_CONFIG = FeatureConfig()


def _action_index(domain, action) -> int:
    if isinstance(action, MetaAction):
        if action.is_terminate:
            raise InvalidActionError("VOI features are defined for Compute actions only")
        action = action.index
    j = int(action)
    if not 0 <= j < domain.num_computations:
        raise InvalidActionError(f"computation index {j} out of range")
    return j


# ---------------------------------------------------------------------------
# per-domain evaluators (cached per (domain, config))
# ---------------------------------------------------------------------------

class _StoppingEvaluator:
    def __init__(self, domain: StoppingDomain, config: FeatureConfig):
        self.domain = domain
        self._vpi_cache: dict[tuple[float, float], float] = {}

    def _utility(self, a: float, b: float) -> float:
        return self.domain.utility_from_counts(a, b)

    def voi1(self, belief: StoppingBelief, j: int) -> float:
        a, b = belief.alpha, belief.beta
        mu = a / (a + b)
        e_next = mu * self._utility(a + 1.0, b) + (1.0 - mu) * self._utility(a, b + 1.0)
        return max(e_next - self._utility(a, b), 0.0)

    def vpi(self, belief: StoppingBelief) -> float:
        key = (belief.alpha, belief.beta)
        hit = self._vpi_cache.get(key)
        if hit is not None:
            return hit
        a, b = key
        mu = a / (a + b)
        # E[max(theta, 1-theta)] = mu + I_.5(a, b) - 2 mu I_.5(a+1, b)
        e_max = mu + betainc(a, b, 0.5) - 2.0 * mu * betainc(a + 1.0, b, 0.5)
        if self.domain.scale != "probability":
            e_max = 2.0 * e_max - 1.0
        out = max(e_max - self._utility(a, b), 0.0)
        self._vpi_cache[key] = out
        return out

    def vpi_sub(self, belief: StoppingBelief, j: int) -> float:
        # single parameter: the relevant subset is everything
        return self.vpi(belief)

    def voi1_all(self, belief) -> np.ndarray:
        return np.array([self.voi1(belief, 0)])

    def feature_matrix(self, belief) -> np.ndarray:
        v = self.vpi(belief)
        return np.array([[self.voi1(belief, 0), v, v, self.domain.cost]])


class _BanditEvaluator:
    def __init__(self, domain: BanditDomain, config: FeatureConfig):
        self.domain = domain
        x = np.linspace(0.0, 1.0, config.quadrature_points)
        self._weights = simpson_weights(config.quadrature_points)
        self._grid = BetaCdfGrid(x)
        self._arm_cache: dict[tuple, tuple[float, float]] = {}
        self._vpi_cache: dict[tuple, float] = {}

    def _arm_features(self, a: float, b: float, m: float) -> tuple[float, float]:
        """(voi1, vpi_sub) for one arm against best-other mean m."""
        key = (a, b, m)
        hit = self._arm_cache.get(key)
        if hit is not None:
            return hit
        total = a + b
        mu = a / total
        here = max(mu, m)
        e_next = mu * max((a + 1.0) / (total + 1.0), m) + (1.0 - mu) * max(a / (total + 1.0), m)
        voi1 = max(e_next - here, 0.0)
        if math.isfinite(m):
            e_max = m * betainc(a, b, m) + mu * (1.0 - betainc(a + 1.0, b, m))
        else:
            e_max = mu  # single arm: the decision is forced, information is free but useless
        vpi_sub = max(e_max - here, 0.0)
        out = (voi1, vpi_sub)
        self._arm_cache[key] = out
        return out

    def _best_other(self, means: np.ndarray, j: int) -> float:
        if means.size == 1:
            return -np.inf
        order = np.argsort(means)
        top = order[-1]
        return float(means[order[-2]]) if top == j else float(means[top])

    def voi1(self, belief: BanditBelief, j: int) -> float:
        means = belief.means()
        a, b = belief.arms[j]
        return self._arm_features(a, b, self._best_other(means, j))[0]

    def vpi_sub(self, belief: BanditBelief, j: int) -> float:
        means = belief.means()
        a, b = belief.arms[j]
        return self._arm_features(a, b, self._best_other(means, j))[1]

    def vpi(self, belief: BanditBelief) -> float:
        key = tuple(sorted(belief.arms))
        hit = self._vpi_cache.get(key)
        if hit is not None:
            return hit
        prod = None
        for a, b in belief.arms:
            cdf = self._grid.cdf(a, b)
            prod = cdf.copy() if prod is None else prod * cdf
        e_max = float(self._weights @ (1.0 - prod))
        out = max(e_max - self.domain.terminal_reward(belief), 0.0)
        self._vpi_cache[key] = out
        return out

    def voi1_all(self, belief) -> np.ndarray:
        means = belief.means()
        return np.array(
            [
                self._arm_features(a, b, self._best_other(means, j))[0]
                for j, (a, b) in enumerate(belief.arms)
            ]
        )

    def feature_matrix(self, belief) -> np.ndarray:
        means = belief.means()
        v = self.vpi(belief)
        k = self.domain.k
        out = np.empty((k, 4))
        for j, (a, b) in enumerate(belief.arms):
            voi1, sub = self._arm_features(a, b, self._best_other(means, j))
            out[j, 0] = voi1
            out[j, 2] = sub
        out[:, 1] = v
        out[:, 3] = self.domain.cost
        return out


class _TornadoEvaluator:
    """All tornado features reduce to per-city closed forms because the
    terminal utility is additive over cities with independent beliefs
    (in particular VPI is the sum of the per-city subset VPIs)."""

    def __init__(self, domain: TornadoDomain, config: FeatureConfig):
        self.domain = domain
        self._city_cache: dict[tuple[float, float], tuple[float, float, float]] = {}

    def _city(self, a: float, b: float) -> tuple[float, float, float]:
        """(utility, voi1, vpi_sub) for one city."""
        key = (a, b)
        hit = self._city_cache.get(key)
        if hit is not None:
            return hit
        d = self.domain
        util = d.city_utility(a, b)
        total = a + b
        mu = a / total
        e_next = mu * d.city_utility(a + 1.0, b) + (1.0 - mu) * d.city_utility(a, b + 1.0)
        voi1 = max(e_next - util, 0.0)
        # E[max(theta * miss, evac)]; miss < 0 so theta < m keeps the miss branch
        m = d.evac_cost / d.miss_cost
        e_perfect = d.miss_cost * mu * betainc(a + 1.0, b, m) + d.evac_cost * (
            1.0 - betainc(a, b, m)
        )
        vpi_sub = max(e_perfect - util, 0.0)
        out = (util, voi1, vpi_sub)
        self._city_cache[key] = out
        return out

    def voi1(self, belief: TornadoBelief, j: int) -> float:
        a, b = belief.cities[j]
        return self._city(a, b)[1]

    def vpi_sub(self, belief: TornadoBelief, j: int) -> float:
        a, b = belief.cities[j]
        return self._city(a, b)[2]

    def vpi(self, belief: TornadoBelief) -> float:
        return sum(self._city(a, b)[2] for a, b in belief.cities)

    def voi1_all(self, belief) -> np.ndarray:
        return np.array([self._city(a, b)[1] for a, b in belief.cities])

    def feature_matrix(self, belief) -> np.ndarray:
        k = self.domain.k
        out = np.empty((k, 4))
        vpi_total = 0.0
        for j, (a, b) in enumerate(belief.cities):
            _, voi1, sub = self._city(a, b)
            out[j, 0] = voi1
            out[j, 2] = sub
            vpi_total += sub
        out[:, 1] = vpi_total
        out[:, 3] = self.domain.cost
        return out


class _TreeEvaluator:
    def __init__(self, domain: TreeDomain, config: FeatureConfig):
        self.domain = domain
        self.config = config
        self.engine = TreeFeatureEngine(domain.height)

    def _mc_rng(self, belief: TreeBelief, j=None) -> np.random.Generator:
        ints = [self.config.seed] + [int(p * 2) for p in belief.probs]
        if j is not None and not self.config.common_random_numbers:
            ints.append(1000 + j)
        return np.random.default_rng(np.random.SeedSequence(ints))

    def voi1(self, belief: TreeBelief, j: int) -> float:
        voi1, _, _, _ = self.engine.features_batch(
            np.asarray(belief.probs), need_vpi=False, need_sub=False
        )
        return float(voi1[0, j])

    def vpi(self, belief: TreeBelief) -> float:
        if self.config.tree_monte_carlo:
            return self.engine.vpi_monte_carlo(
                belief.probs, self.config.mc_samples, self._mc_rng(belief)
            )
        _, vpi, _, _ = self.engine.features_batch(
            np.asarray(belief.probs), need_vpi=True, need_sub=False
        )
        return float(vpi[0])

    def vpi_sub(self, belief: TreeBelief, j: int) -> float:
        if self.config.tree_monte_carlo:
            return self.engine.vpi_sub_monte_carlo(
                belief.probs, j, self.config.mc_samples, self._mc_rng(belief, j)
            )
        _, _, sub, _ = self.engine.features_batch(np.asarray(belief.probs))
        return float(sub[0, j])

    def voi1_all(self, belief) -> np.ndarray:
        voi1, _, _, _ = self.engine.features_batch(
            np.asarray(belief.probs), need_vpi=False, need_sub=False
        )
        return voi1[0]

    def feature_matrix(self, belief) -> np.ndarray:
        if not self.config.tree_monte_carlo:
            return self.engine.feature_matrix(belief.probs, self.domain.cost)
        k = self.domain.num_computations
        out = np.empty((k, 4))
        voi1, _, _, _ = self.engine.features_batch(
            np.asarray(belief.probs), need_vpi=False, need_sub=False
        )
        out[:, 0] = voi1[0]
        out[:, 1] = self.vpi(belief)
        for j in range(k):
            out[j, 2] = self.vpi_sub(belief, j)
        out[:, 3] = self.domain.cost
        return out


_EVALUATORS = {
    StoppingDomain: _StoppingEvaluator,
    BanditDomain: _BanditEvaluator,
    TornadoDomain: _TornadoEvaluator,
    TreeDomain: _TreeEvaluator,
}

_evaluator_cache: dict[tuple, object] = {}


def get_evaluator(domain, config: FeatureConfig = DEFAULT_CONFIG):
    key = (domain, config)
    hit = _evaluator_cache.get(key)
    if hit is None:
        cls = _EVALUATORS.get(type(domain))
        if cls is None:
            raise ConfigurationError(f"no feature evaluator for domain {type(domain).__name__}")
        hit = cls(domain, config)
        _evaluator_cache[key] = hit
    return hit


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def voi1(domain, belief: Belief, action, config: FeatureConfig = DEFAULT_CONFIG) -> float:
    """Expected terminal-utility gain of one computation, exact."""
    j = _action_index(domain, action)
    return get_evaluator(domain, config).voi1(belief, j)


def vpi(domain, belief: Belief, config: FeatureConfig = DEFAULT_CONFIG) -> float:
    """Expected terminal-utility gain from learning every parameter exactly."""
    return get_evaluator(domain, config).vpi(belief)


def vpi_sub(domain, belief: Belief, action, config: FeatureConfig = DEFAULT_CONFIG) -> float:
    """VPI restricted to the parameters the computation is relevant to."""
    j = _action_index(domain, action)
    return get_evaluator(domain, config).vpi_sub(belief, j)


def features(domain, belief: Belief, action, config: FeatureConfig = DEFAULT_CONFIG) -> FeatureVector:
    j = _action_index(domain, action)
    ev = get_evaluator(domain, config)
    return FeatureVector(
        voi1=ev.voi1(belief, j),
        vpi=ev.vpi(belief),
        vpi_sub=ev.vpi_sub(belief, j),
        cost=domain.cost,
    )


def feature_matrix(domain, belief: Belief, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """(num_computations, 4) array of (voi1, vpi, vpi_sub, cost) rows."""
    return get_evaluator(domain, config).feature_matrix(belief)


def voi1_all(domain, belief: Belief, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Myopic VOI of every computation (cheap path for the meta-greedy rule)."""
    return get_evaluator(domain, config).voi1_all(belief)


# ---------------------------------------------------------------------------
# Monte-Carlo reference estimators (used by the property suite and as the
# spec'd sampling fallback; they never share code with the exact paths above)
# ---------------------------------------------------------------------------

def _belief_ints(belief) -> list[int]:
    if isinstance(belief, StoppingBelief):
        return [int(belief.alpha), int(belief.beta)]
    if isinstance(belief, BanditBelief):
        return [int(v) for ab in belief.arms for v in ab]
    if isinstance(belief, TreeBelief):
        return [int(2 * p) for p in belief.probs]
    if isinstance(belief, TornadoBelief):
        return [int(round(10 * v)) for ab in belief.cities for v in ab] + [belief.sims_remaining]
    raise ConfigurationError(f"unsupported belief type {type(belief).__name__}")


def _mc_rng(config: FeatureConfig, belief, tag: int) -> np.random.Generator:
    entropy = [config.seed, tag] + _belief_ints(belief)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _sample_theta(domain, belief, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(domain, StoppingDomain):
        return rng.beta(belief.alpha, belief.beta, size=(n, 1))
    if isinstance(domain, BanditDomain):
        arr = np.asarray(belief.arms, dtype=float)
        return rng.beta(arr[:, 0], arr[:, 1], size=(n, domain.k))
    if isinstance(domain, TornadoDomain):
        arr = np.asarray(belief.cities, dtype=float)
        return rng.beta(arr[:, 0], arr[:, 1], size=(n, domain.k))
    if isinstance(domain, TreeDomain):
        probs = np.asarray(belief.probs)
        return np.where(rng.random((n, probs.size)) < probs, 1.0, -1.0)
    raise ConfigurationError(f"unsupported domain {type(domain).__name__}")


def _utility_under_mixture(domain, belief, theta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Terminal utility rows for revealed parameters theta[mask], belief elsewhere."""
    if isinstance(domain, StoppingDomain):
        th = theta[:, 0]
        if mask[0]:
            best = np.maximum(th, 1.0 - th)
            return best if domain.scale == "probability" else 2.0 * best - 1.0
        return np.full(theta.shape[0], domain.terminal_reward(belief))
    if isinstance(domain, BanditDomain):
        means = belief.means()
        mixed = np.where(mask[None, :], theta, means[None, :])
        return mixed.max(axis=1)
    if isinstance(domain, TornadoDomain):
        arr = np.asarray(belief.cities, dtype=float)
        means = arr[:, 0] / arr.sum(axis=1)
        mixed = np.where(mask[None, :], theta, means[None, :])
        return np.maximum(mixed * domain.miss_cost, domain.evac_cost).sum(axis=1)
    if isinstance(domain, TreeDomain):
        engine = TreeFeatureEngine(domain.height)
        expect = 2.0 * np.asarray(belief.probs) - 1.0
        mixed = np.where(mask[None, :], theta, expect[None, :])
        return engine.best_path_values_batch(mixed)
    raise ConfigurationError(f"unsupported domain {type(domain).__name__}")


def mc_vpi(domain, belief, config: FeatureConfig = DEFAULT_CONFIG, n_samples=None, rng=None) -> float:
    n = n_samples or config.mc_samples
    rng = rng or _mc_rng(config, belief, tag=1)
    theta = _sample_theta(domain, belief, rng, n)
    mask = np.ones(theta.shape[1], dtype=bool)
    est = _utility_under_mixture(domain, belief, theta, mask).mean()
    return max(float(est - domain.terminal_reward(belief)), 0.0)


def mc_vpi_sub(domain, belief, action, config: FeatureConfig = DEFAULT_CONFIG, n_samples=None, rng=None) -> float:
    j = _action_index(domain, action)
    n = n_samples or config.mc_samples
    if rng is None:
        tag = 1 if config.common_random_numbers else 100 + j
        rng = _mc_rng(config, belief, tag=tag)
    theta = _sample_theta(domain, belief, rng, n)
    mask = np.asarray(domain.relevance_mask(j), dtype=bool)
    est = _utility_under_mixture(domain, belief, theta, mask).mean()
    return max(float(est - domain.terminal_reward(belief)), 0.0)


def mc_voi1(domain, belief, action, n_samples: int, rng: np.random.Generator) -> float:
    """Sampled one-step lookahead; the exact path must agree within noise."""
    j = _action_index(domain, action)
    support = domain.successors(belief, j)
    probs = np.array([p for _, p in support])
    utils = np.array([domain.terminal_reward(bp) for bp, _ in support])
    draws = rng.choice(len(support), size=n_samples, p=probs)
    return float(utils[draws].mean() - domain.terminal_reward(belief))
