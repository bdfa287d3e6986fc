"""Weight search for the weighted-feature policy.

The three simplex weights plus the scaled cost weight form a 3-dimensional
search space: probes live in (w1, w2, w4n) with w3 = 1 - w1 - w2 and
w4 = 1 + w4n * (h - 1), so feasibility is guaranteed by construction and
never projected after the fact. A Gaussian-process surrogate (isotropic
squared-exponential kernel, length scale by marginal-likelihood grid
search, observation noise taken from the per-probe standard errors) drives
an expected-improvement acquisition over a dense cloud of random feasible
candidates. A quasi-random Halton design seeds the model, and a pure
quasi-random mode is available for ablations.

Each probe scores a weight vector by its mean return over a fixed batch of
common-random-number episodes; the top candidates are then re-scored on
fresh episodes to control winner's-curse overfitting before one is
returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import evaluate_policy
from .domains import config_hash, make_domain
from .errors import ConfigurationError
from .features import DEFAULT_CONFIG, FeatureConfig
from .policies import WeightedFeaturePolicy, WeightVector

WEIGHTS_FORMAT = "metamdp-weights/1"

_ERF = np.frompyfunc(math.erf, 1, 1)


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + _ERF(z / math.sqrt(2.0)).astype(np.float64))


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SearchSpec:
    """Search protocol sizes; presets follow the benchmark protocols."""

    iterations: int
    episodes_per_eval: int
    top_k_rescore: int
    rescore_episodes: int
    seed: int = 0
    quasi_random_only: bool = False  # ablation mode: no surrogate model

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("SearchSpec.iterations must be >= 1")
        if self.episodes_per_eval < 1 or self.rescore_episodes < 1:
            raise ConfigurationError("episode counts must be >= 1")
        if self.top_k_rescore < 1:
            raise ConfigurationError("top_k_rescore must be >= 1")


PAPER_SEARCH_SPECS = {
    "stopping": dict(iterations=500, episodes_per_eval=2500, top_k_rescore=1, rescore_episodes=3000),
    "bandit": dict(iterations=10, episodes_per_eval=1000, top_k_rescore=5, rescore_episodes=5000),
    "tree": dict(iterations=100, episodes_per_eval=1000, top_k_rescore=3, rescore_episodes=2000),
    # the tornado training protocol is not pinned anywhere; reuse the
    # one-shot-decision (bandit) protocol sizes
    "tornado": dict(iterations=10, episodes_per_eval=1000, top_k_rescore=5, rescore_episodes=5000),
}


def paper_search_spec(domain_id: str, seed: int = 0) -> SearchSpec:
    try:
        return SearchSpec(seed=seed, **PAPER_SEARCH_SPECS[domain_id])
    except KeyError:
        raise ConfigurationError(f"no search preset for domain {domain_id!r}") from None


@dataclass(frozen=True)
class Candidate:
    weights: WeightVector
    mean_return: float
    n_episodes: int
    std_error: float = 0.0


@dataclass
class SearchTrace:
    """Everything needed for the learning-curve plot and reproducibility."""

    probes: list = field(default_factory=list)  # Candidate per iteration
    best_so_far: list = field(default_factory=list)
    rescored: list = field(default_factory=list)
    final: Candidate | None = None


# ---------------------------------------------------------------------------
# search-coordinate plumbing
# ---------------------------------------------------------------------------

def _halton(index: int, base: int) -> float:
    out, f = 0.0, 1.0
    i = index
    while i > 0:
        f /= base
        out += f * (i % base)
        i //= base
    return out


def _coords_to_weights(z: np.ndarray, horizon: int) -> WeightVector:
    w1, w2, w4n = float(z[0]), float(z[1]), float(z[2])
    return WeightVector(w1, w2, 1.0 - w1 - w2, 1.0 + w4n * (horizon - 1))


def _quasi_random_coords(n: int, start: int = 1) -> np.ndarray:
    pts = np.empty((n, 3))
    for i in range(n):
        u = _halton(start + i, 2)
        v = _halton(start + i, 3)
        if u + v > 1.0:  # reflect into the simplex triangle
            u, v = 1.0 - u, 1.0 - v
        pts[i] = (u, v, _halton(start + i, 5))
    return pts


def _random_feasible_coords(n: int, rng: np.random.Generator) -> np.ndarray:
    simplex = rng.dirichlet((1.0, 1.0, 1.0), size=n)
    return np.column_stack([simplex[:, 0], simplex[:, 1], rng.random(n)])


# ---------------------------------------------------------------------------
# Gaussian-process surrogate with expected improvement
# ---------------------------------------------------------------------------

_LENGTH_SCALES = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)


def gp_expected_improvement(X: np.ndarray, y: np.ndarray, noise_var: float,
                            candidates: np.ndarray) -> np.ndarray:
    """EI of each candidate under a zero-mean RBF GP fit to (X, y)."""
    y = np.asarray(y, dtype=float)
    mu_y = y.mean()
    sd_y = y.std()
    if sd_y < 1e-12:
        return np.zeros(len(candidates))
    ys = (y - mu_y) / sd_y
    noise = max(noise_var / (sd_y ** 2), 1e-10)
    d_xx = _sq_dists(X, X)
    best_nll = None
    best = None
    for ls in _LENGTH_SCALES:
        K = np.exp(-0.5 * d_xx / ls ** 2) + (noise + 1e-9) * np.eye(len(X))
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            continue
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, ys))
        nll = 0.5 * ys @ alpha + np.log(np.diag(L)).sum()
        if best_nll is None or nll < best_nll:
            best_nll = nll
            best = (ls, L, alpha)
    if best is None:
        return np.zeros(len(candidates))
    ls, L, alpha = best
    k_star = np.exp(-0.5 * _sq_dists(candidates, X) / ls ** 2)
    mean = k_star @ alpha
    v = np.linalg.solve(L, k_star.T)
    var = np.maximum(1.0 - (v ** 2).sum(axis=0), 1e-12)
    sd = np.sqrt(var)
    incumbent = ys.max()
    z = (mean - incumbent) / sd
    return sd * (z * _norm_cdf(z) + _norm_pdf(z))


# ---------------------------------------------------------------------------
# the search itself
# ---------------------------------------------------------------------------

def _episode_objective(domain, spec: SearchSpec, config: FeatureConfig, train_seed: int):
    initial = domain.initial_belief()

    def objective(weights: WeightVector):
        policy = WeightedFeaturePolicy(domain, weights, config)
        report = evaluate_policy(domain, initial, policy, spec.episodes_per_eval, train_seed)
        se = report.sd / math.sqrt(report.n_episodes)
        return report.mean, se

    return objective


def optimize_weights(domain, spec: SearchSpec, config: FeatureConfig = DEFAULT_CONFIG,
                     objective=None, n_acquisition: int = 4096):
    """Search the constrained weight space for the best-scoring policy.

    Returns (weights, SearchTrace). ``objective(weights) -> (mean, se)`` can
    replace episode simulation (used by the synthetic-objective tests).
    The probe evaluations share one common-random-number episode batch;
    the rescoring pass uses fresh seeds.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 17]))
    train_seed = spec.seed * 1_000_003 + 101
    custom_objective = objective is not None
    if objective is None:
        objective = _episode_objective(domain, spec, config, train_seed)
    horizon = domain.horizon

    n_init = min(max(4, spec.iterations // 3), 10, spec.iterations)
    init_coords = _quasi_random_coords(n_init)
    coords: list[np.ndarray] = []
    trace = SearchTrace()
    best_mean = -math.inf

    for it in range(spec.iterations):
        if it < n_init:
            z = init_coords[it]
        elif spec.quasi_random_only:
            z = _random_feasible_coords(1, rng)[0]
        else:
            X = np.array(coords)
            y = np.array([c.mean_return for c in trace.probes])
            noise_var = float(np.mean([c.std_error ** 2 for c in trace.probes]))
            cand = _random_feasible_coords(n_acquisition, rng)
            ei = gp_expected_improvement(X, y, noise_var, cand)
            z = cand[int(np.argmax(ei))]
        weights = _coords_to_weights(z, horizon)
        mean, se = objective(weights)
        coords.append(z)
        probe = Candidate(weights=weights, mean_return=float(mean),
                          n_episodes=spec.episodes_per_eval, std_error=float(se))
        trace.probes.append(probe)
        best_mean = max(best_mean, probe.mean_return)
        trace.best_so_far.append(best_mean)

    winner = rescore_top_candidates(
        trace.probes, spec.top_k_rescore, spec.rescore_episodes, domain,
        seed=train_seed + 7_777_777, config=config,
        objective_factory=objective if custom_objective else None,
        trace=trace,
    )
    trace.final = winner
    return winner.weights, trace


def rescore_top_candidates(candidates, k: int, rescore_episodes: int, domain, seed: int,
                           config: FeatureConfig = DEFAULT_CONFIG, objective_factory=None,
                           trace: SearchTrace | None = None) -> Candidate:
    """Re-evaluate the k best probes on fresh episodes and keep the winner."""
    if not candidates:
        raise ConfigurationError("no candidates to rescore")
    if k > len(candidates):
        k = len(candidates)
    ranked = sorted(candidates, key=lambda c: c.mean_return, reverse=True)[:k]
    initial = domain.initial_belief() if domain is not None else None
    best = None
    for cand in ranked:
        if objective_factory is not None:
            mean, se = objective_factory(cand.weights)
        else:
            policy = WeightedFeaturePolicy(domain, cand.weights, config)
            report = evaluate_policy(domain, initial, policy, rescore_episodes, seed)
            mean, se = report.mean, report.sd / math.sqrt(report.n_episodes)
        rescored = Candidate(weights=cand.weights, mean_return=float(mean),
                             n_episodes=rescore_episodes, std_error=float(se))
        if trace is not None:
            trace.rescored.append(rescored)
        if best is None or rescored.mean_return > best.mean_return:
            best = rescored
    return best


# ---------------------------------------------------------------------------
# trained-weight records
# ---------------------------------------------------------------------------

def save_weights(path, domain, weights: WeightVector, seed: int, mean_return: float | None = None,
                 search: dict | None = None) -> None:
    cfg = domain.config()
    record = {
        "format": WEIGHTS_FORMAT,
        "domain": cfg,
        "domain_hash": config_hash(cfg),
        "horizon": domain.horizon,
        "cost": domain.cost,
        "weights": {"w1": weights.w1, "w2": weights.w2, "w3": weights.w3, "w4": weights.w4},
        "seed": seed,
    }
    if mean_return is not None:
        record["mean_return"] = mean_return
    if search is not None:
        record["search"] = search
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path):
    """Returns (domain, WeightVector, full record)."""
    with open(path) as fh:
        record = json.load(fh)
    if record.get("format") != WEIGHTS_FORMAT:
        raise ConfigurationError(f"not a {WEIGHTS_FORMAT} record: {path}")
    w = record["weights"]
    domain = make_domain(record["domain"])
    return domain, WeightVector(w["w1"], w["w2"], w["w3"], w["w4"]), record
