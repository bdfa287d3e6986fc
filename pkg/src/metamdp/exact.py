"""Ground truth: finite-horizon backward induction over belief lattices.

The solver memoizes optimal values over the beliefs reachable from the
query belief (forward reachability, not the full parameter lattice), keyed
by each domain's canonical form. Canonical keys encode solve progress
(sample counts / revealed nodes / remaining budget), so the remaining
horizon never needs to be carried separately, and they collapse
value-preserving symmetries (arm permutations, subtree swaps), which is
what makes the 5-arm horizon-25 bandit tractable. Computations that cannot
change the belief (re-inspecting a revealed tree node) are strictly
dominated for positive cost and are skipped via each domain's
``effective_computations``.

Values at the final decision layer equal the terminal utility and are not
memoized; everything else is exact to floating point.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .features import DEFAULT_CONFIG, FeatureConfig
from .features import voi1 as _feature_voi1, vpi as _feature_vpi
from .core import TERMINATE, MetaAction, compute
from .domains import StoppingDomain, config_hash, make_domain
from .errors import (
    CoverageError,
    DegenerateDesignError,
    InvalidActionError,
    ResourceLimitError,
)

DEFAULT_STATE_CAP = 3_000_000


class ExactSolver:
    """Lazy backward induction for one domain instance."""

    def __init__(self, domain, state_cap: int = DEFAULT_STATE_CAP):
        self.domain = domain
        self.state_cap = state_cap
        self._values: dict = {}

    @property
    def state_count(self) -> int:
        return len(self._values)

    def value(self, belief) -> float:
        """V*(b): optimal expected return-to-go from this belief."""
        d = self.domain
        utility = d.terminal_reward(belief)
        if belief.step_count >= d.horizon - 1:
            return utility
        key = d.canonical_key(belief)
        hit = self._values.get(key)
        if hit is not None:
            return hit
        best = utility
        cost = d.cost
        for j in d.effective_computations(belief):
            q = -cost
            for succ, p in d.successors(belief, j):
                q += p * self.value(succ)
            if q > best:
                best = q
        if len(self._values) >= self.state_cap:
            raise ResourceLimitError(
                f"backward induction exceeded the configured cap of {self.state_cap} states"
            )
        self._values[key] = best
        return best

    def q_value(self, belief, j: int) -> float:
        """Q*(b, c_j); undefined on the terminal-forced layer."""
        d = self.domain
        if belief.step_count >= d.horizon - 1:
            raise InvalidActionError("only Terminate is available at the last step")
        q = -d.cost
        for succ, p in d.successors(belief, j):
            q += p * self.value(succ)
        return q

    def act(self, belief) -> MetaAction:
        d = self.domain
        if belief.step_count >= d.horizon - 1:
            return TERMINATE
        utility = d.terminal_reward(belief)
        best_q = utility
        best_j = None
        for j in d.effective_computations(belief):
            q = self.q_value(belief, j)
            if q > best_q:
                best_q = q
                best_j = j
        return TERMINATE if best_j is None else compute(best_j)

    def policy(self) -> "OptimalPolicy":
        return OptimalPolicy(self)


class OptimalPolicy:
    def __init__(self, solver: ExactSolver):
        self.solver = solver
        self.domain = solver.domain

    def __call__(self, belief) -> MetaAction:
        return self.solver.act(belief)


def solve(domain, state_cap: int = DEFAULT_STATE_CAP) -> ExactSolver:
    """Solve from the initial belief; returns the populated solver."""
    solver = ExactSolver(domain, state_cap=state_cap)
    solver.value(domain.initial_belief())
    return solver


def exact_voc(solver: ExactSolver, belief, action) -> float:
    """VOC(c, b) = Q*(b, c) - U(b); terminating is worth exactly zero."""
    if isinstance(action, MetaAction):
        if action.is_terminate:
            return 0.0
        action = action.index
    return solver.q_value(belief, int(action)) - solver.domain.terminal_reward(belief)


def policy_value(domain, policy, state_cap: int = 500_000) -> float:
    """Exact expected return of a deterministic policy, by enumeration.

    Beliefs are memoized verbatim (no symmetry collapsing) so no assumption
    about the policy's tie-breaking is needed; intended for domains whose
    policy-reachable set is small (stopping, small bandits, short trees).
    """
    memo: dict = {}

    def walk(belief) -> float:
        d = domain
        if belief.step_count >= d.horizon - 1:
            return d.terminal_reward(belief)
        hit = memo.get(belief)
        if hit is not None:
            return hit
        action = policy(belief)
        if action.is_terminate:
            value = d.terminal_reward(belief)
        else:
            value = -d.cost
            for succ, p in d.successors(belief, action.index):
                value += p * walk(succ)
        if len(memo) >= state_cap:
            raise ResourceLimitError(f"policy evaluation exceeded {state_cap} states")
        memo[belief] = value
        return value

    return walk(domain.initial_belief())


# ---------------------------------------------------------------------------
# regression of exact VOC onto the VOI features (stopping domain)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressionFit:
    coef_vpi: float
    coef_voi1: float
    coef_cost: float
    r_squared: float
    n_states: int
    cost: float

    def coefficients(self) -> tuple[float, float, float]:
        return (self.coef_vpi, self.coef_voi1, self.coef_cost)


def regression_rows(domain: StoppingDomain):
    """All reachable stopping beliefs where the sampling computation is legal."""
    from .domains import StoppingBelief

    rows = []
    for n in range(domain.horizon - 1):
        for a in range(1, n + 2):
            rows.append(StoppingBelief(alpha=float(a), beta=float(n + 2 - a), step_count=n))
    return rows


def fit_voc_regression(domain: StoppingDomain, config: FeatureConfig = DEFAULT_CONFIG,
                       solver: ExactSolver | None = None):
    """OLS of exact VOC(b, c1) on (VPI(b), VOI1(b, c1), cost).

    The cost column is constant within a fit, so its coefficient plays the
    intercept role. The analysis is anchored to the probability-of-correct
    scoring (the quoted reference coefficients, and the exact R^2 = 1
    myopia regime for costs >= 0.1, only hold there), so the domain is
    re-scored on that scale regardless of the benchmark return convention.
    Returns (RegressionFit, design matrix, voc vector).
    """
    if not isinstance(domain, StoppingDomain):
        raise DegenerateDesignError("the VOC regression is defined on the stopping domain")
    if domain.scale != "probability":
        domain = StoppingDomain(cost=domain.cost, horizon=domain.horizon, scale="probability")
        solver = None
    solver = solver or solve(domain)
    beliefs = regression_rows(domain)
    if len(set((b.alpha, b.beta) for b in beliefs)) < 4:
        raise DegenerateDesignError("need at least 4 distinct beliefs to fit 3 coefficients")
    X = np.empty((len(beliefs), 3))
    y = np.empty(len(beliefs))
    for i, b in enumerate(beliefs):
        X[i, 0] = _feature_vpi(domain, b, config)
        X[i, 1] = _feature_voi1(domain, b, 0, config)
        X[i, 2] = domain.cost
        y[i] = exact_voc(solver, b, 0)
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    pred = X @ coef
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    fit = RegressionFit(
        coef_vpi=float(coef[0]),
        coef_voi1=float(coef[1]),
        coef_cost=float(coef[2]),
        r_squared=r2,
        n_states=len(beliefs),
        cost=domain.cost,
    )
    return fit, X, y


# ---------------------------------------------------------------------------
# value-table export / import
# ---------------------------------------------------------------------------

TABLE_FORMAT = "metamdp-table/1"


def _portable_key(domain, belief):
    fn = getattr(domain, "portable_key", None)
    return fn(belief) if fn is not None else domain.canonical_key(belief)


def dump_value_table(solver: ExactSolver, path) -> None:
    """Write solved values keyed by process-independent canonical forms.

    Re-walks the reachable set from the initial belief, so only call this
    on cells small enough to have been solved in the first place.
    """
    domain = solver.domain
    cfg = domain.config()
    rows: dict = {}
    seen = set()
    stack = [domain.initial_belief()]
    while stack:
        belief = stack.pop()
        if belief.step_count >= domain.horizon - 1:
            continue
        key = domain.canonical_key(belief)
        if key in seen:
            continue
        seen.add(key)
        value = solver._values.get(key)
        if value is None:
            continue
        rows[json.dumps(_portable_key(domain, belief))] = value
        for j in domain.effective_computations(belief):
            for succ, _ in domain.successors(belief, j):
                stack.append(succ)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TABLE_FORMAT} domain={json.dumps(cfg, sort_keys=True)} "
                 f"hash={config_hash(cfg)} states={len(rows)}\n")
        writer = csv.writer(fh)
        writer.writerow(["belief_key", "value"])
        for key in sorted(rows):
            writer.writerow([key, repr(rows[key])])


def _untuple(obj):
    if isinstance(obj, list):
        return tuple(_untuple(v) for v in obj)
    return obj


class LoadedValueTable:
    """Read-only value table; lookups outside the dump raise CoverageError."""

    def __init__(self, domain, values: dict):
        self.domain = domain
        self._values = values

    def value(self, belief) -> float:
        d = self.domain
        if belief.step_count >= d.horizon - 1:
            return d.terminal_reward(belief)
        key = _portable_key(d, belief)
        try:
            return self._values[key]
        except KeyError:
            raise CoverageError(f"belief key {key!r} not covered by the loaded table") from None

    def q_value(self, belief, j: int) -> float:
        d = self.domain
        if belief.step_count >= d.horizon - 1:
            raise InvalidActionError("only Terminate is available at the last step")
        q = -d.cost
        for succ, p in d.successors(belief, j):
            q += p * self.value(succ)
        return q


def load_value_table(path) -> LoadedValueTable:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if TABLE_FORMAT not in header:
            raise CoverageError(f"not a {TABLE_FORMAT} file: {path}")
        domain_json = header.split("domain=", 1)[1].rsplit(" hash=", 1)[0]
        domain = make_domain(json.loads(domain_json))
        reader = csv.reader(fh)
        next(reader)  # column header
        values = {_untuple(json.loads(k)): float(v) for k, v in reader}
    return LoadedValueTable(domain, values)
