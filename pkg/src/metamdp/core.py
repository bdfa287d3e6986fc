"""Metalevel MDP core: actions, belief plumbing, episode simulation.

A metalevel MDP has belief states, a finite set of computations plus a
terminate action, a transition kernel over beliefs, and rewards equal to
minus the computation cost while deliberating and the expected utility of
the induced decision on termination. Domain objects (see ``metamdp.domains``)
supply the concrete kernels; everything here is domain-agnostic.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidActionError, LifecycleError
from .special import Z95


@dataclass(frozen=True)
class MetaAction:
    """Either Compute(index) or the terminate action (index is None)."""

    index: Optional[int]

    @property
    def is_terminate(self) -> bool:
        return self.index is None

    def __repr__(self) -> str:
        return "Terminate" if self.index is None else f"Compute({self.index})"


TERMINATE = MetaAction(None)


def compute(index: int) -> MetaAction:
    if index < 0:
        raise InvalidActionError(f"computation index must be >= 0, got {index}")
    return MetaAction(int(index))


@dataclass(frozen=True)
class Belief:
    """Base for all domain beliefs.

    ``step_count`` is the number of metalevel actions taken so far, so
    horizon forcing is a pure function of the state. ``absorbing`` marks the
    explicit post-termination state; acting on it is a lifecycle error.
    """

    step_count: int = field(default=0, kw_only=True)
    absorbing: bool = field(default=False, kw_only=True)


@dataclass(frozen=True)
class EpisodeTrace:
    actions: tuple[MetaAction, ...]
    rewards: tuple[float, ...]
    final_belief: Belief  # belief on which Terminate was taken
    return_total: float
    seed: int


@dataclass(frozen=True)
class EvalReport:
    """Mean return with a normal-approximation 95% confidence interval."""

    mean: float
    sd: float
    ci_lo: float
    ci_hi: float
    n_episodes: int
    base_seed: int
    returns: np.ndarray = field(repr=False, compare=False, default=None)


def _check_not_absorbing(belief: Belief) -> None:
    if belief.absorbing:
        raise LifecycleError("belief is absorbing; the episode already terminated")


def _check_compute_index(domain, action: MetaAction) -> None:
    if action.is_terminate:
        raise InvalidActionError("expected a Compute action, got Terminate")
    if not 0 <= action.index < domain.num_computations:
        raise InvalidActionError(
            f"computation index {action.index} out of range for "
            f"{domain.num_computations} computations"
        )


def termination_utility(domain, belief: Belief) -> float:
    """Expected utility of stopping now and acting on the current belief."""
    _check_not_absorbing(belief)
    return domain.terminal_reward(belief)


def enumerate_successors(domain, belief: Belief, action: MetaAction):
    """Exact transition support for a computation: list of (belief, prob).

    Probabilities sum to one; the list is deterministic given the inputs.
    """
    _check_not_absorbing(belief)
    _check_compute_index(domain, action)
    return domain.successors(belief, action.index)


def sample_transition(domain, belief: Belief, action: MetaAction, rng: np.random.Generator):
    """Draw one metalevel transition; returns (successor belief, reward)."""
    _check_not_absorbing(belief)
    if belief.step_count >= domain.horizon:
        raise LifecycleError("belief has exhausted the metalevel horizon")
    if action.is_terminate:
        reward = domain.terminal_reward(belief)
        successor = dataclasses.replace(
            belief, step_count=belief.step_count + 1, absorbing=True
        )
        return successor, reward
    if belief.step_count >= domain.horizon - 1:
        raise InvalidActionError(
            "the last metalevel action within the horizon must be Terminate"
        )
    _check_compute_index(domain, action)
    support = domain.successors(belief, action.index)
    if len(support) == 1:
        return support[0][0], -domain.cost
    u = rng.random()
    acc = 0.0
    for succ, p in support:
        acc += p
        if u < acc:
            return succ, -domain.cost
    return support[-1][0], -domain.cost


def run_episode(domain, initial: Belief, policy: Callable[[Belief], MetaAction], seed: int) -> EpisodeTrace:
    """Simulate one episode; the trace always ends with Terminate.

    If step horizon-1 is reached without the policy stopping, Terminate is
    forced. Identical (seed, policy, initial) gives a bit-identical trace.
    """
    rng = np.random.default_rng(seed)
    belief = initial
    actions: list[MetaAction] = []
    rewards: list[float] = []
    while True:
        if belief.step_count >= domain.horizon - 1:
            action = TERMINATE
        else:
            action = policy(belief)
        if action.is_terminate:
            final = belief
            _, reward = sample_transition(domain, belief, action, rng)
            actions.append(action)
            rewards.append(reward)
            break
        belief, reward = sample_transition(domain, belief, action, rng)
        actions.append(action)
        rewards.append(reward)
    return EpisodeTrace(
        actions=tuple(actions),
        rewards=tuple(rewards),
        final_belief=final,
        return_total=float(sum(rewards)),
        seed=seed,
    )


def summarize_returns(returns: np.ndarray, base_seed: int) -> EvalReport:
    returns = np.asarray(returns, dtype=float)
    n = returns.size
    mean = float(returns.mean())
    sd = float(returns.std(ddof=1)) if n > 1 else 0.0
    half = Z95 * sd / np.sqrt(n) if n > 0 else 0.0
    return EvalReport(
        mean=mean,
        sd=sd,
        ci_lo=mean - half,
        ci_hi=mean + half,
        n_episodes=n,
        base_seed=base_seed,
        returns=returns,
    )


def evaluate_policy(domain, initial: Belief, policy, n_episodes: int, base_seed: int) -> EvalReport:
    """Mean return over episodes seeded base_seed .. base_seed + n - 1.

    Per-episode seeding makes policy comparisons with common random numbers
    possible. Policies may expose ``run_episodes(domain, initial, seeds)``
    returning the per-episode returns directly (used by the vectorized tree
    engine); results must match the sequential path exactly.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = np.arange(base_seed, base_seed + n_episodes, dtype=np.int64)
    runner = getattr(policy, "run_episodes", None)
    if runner is not None:
        returns = np.asarray(runner(domain, initial, seeds), dtype=float)
    else:
        returns = np.empty(n_episodes)
        for i, s in enumerate(seeds):
            returns[i] = run_episode(domain, initial, policy, int(s)).return_total
    return summarize_returns(returns, base_seed)


def relevance(domain, computation_index: int, parameter_index: int) -> int:
    """1 if the parameter is relevant to what the computation reasons about."""
    mask = domain.relevance_mask(computation_index)
    if not 0 <= parameter_index < len(mask):
        raise InvalidActionError(f"parameter index {parameter_index} out of range")
    return int(bool(mask[parameter_index]))
