"""Experiment harness: training, evaluation, and comparison matrices.

Every run resolves to an ExperimentConfig, whose hash is embedded in each
output row so results are reproducible byte for byte from (config, seed).
CSV schema (fixed, version 1):

    domain, k_or_h, cost, policy, mean, sd, ci_lo, ci_hi, n, seed, config_hash

Tree-domain rows report returns divided by the tree height so performance
is comparable across planning depths. Policy comparisons are paired mean
differences over common episode seeds, not t statistics: the reference
experiments' exact t values depend on private seeds and cannot be
reproduced, while paired CIs answer the same ordering questions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import exact, optimize as op
from .core import evaluate_policy, summarize_returns
from .domains import (
    BanditDomain,
    StoppingDomain,
    TornadoDomain,
    TornadoTimingModel,
    TreeDomain,
    config_hash,
    tornado_budget,
)
from .errors import ConfigurationError, MissingArtifactError
from .features import DEFAULT_CONFIG, FeatureConfig
from .policies import WeightedFeaturePolicy, WeightVector, make_policy
from .special import Z95

CSV_SCHEMA = ("domain", "k_or_h", "cost", "policy", "mean", "sd",
              "ci_lo", "ci_hi", "n", "seed", "config_hash")
RESULTS_FORMAT = "metamdp-results/1"

PAPER_GRIDS = {
    "stopping": {"costs": (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1)},
    "bandit": {
        "ks": (2, 3, 4, 5),
        "costs": (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1),
        "episodes": 2000,
    },
    "tree": {
        "heights": (2, 3, 4, 5, 6),
        "costs": tuple(2.0 ** -e for e in range(7, -1, -1)),
        "episodes": 5000,
    },
    "tornado": {
        "ks": (10, 30),
        "t_sims": tuple(2.0 ** e for e in range(-2, 5)),
        "rollouts": 5000,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    domain: str
    ks: tuple = ()
    heights: tuple = ()
    costs: tuple = ()
    policies: tuple = ()
    episodes: int = 2000
    seed: int = 0
    out_dir: str = "results"
    weights_dir: str = ""
    horizon: int = 0              # 0 = domain default
    # tornado specifics
    total_time: float = 24.0
    t_sims: tuple = ()
    t_mr: float = -1.0            # < 0 = measure at runtime
    rollouts: int = 5000
    tornado_train_k: int = 20
    tornado_train_budget: int = 50
    # solver
    state_cap: int = exact.DEFAULT_STATE_CAP

    def hash(self) -> str:
        return config_hash(asdict(self))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if overrides:
        raw.update(overrides)
    for key in ("ks", "heights", "costs", "policies", "t_sims"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigurationError(f"bad experiment config: {exc}") from None


def preset_config(domain: str, seed: int = 0, out_dir: str = "results",
                  weights_dir: str = "", **overrides) -> ExperimentConfig:
    if domain not in PAPER_GRIDS:
        raise ConfigurationError(f"no preset for domain {domain!r}")
    base = dict(PAPER_GRIDS[domain])
    base.update(overrides)
    return ExperimentConfig(domain=domain, seed=seed, out_dir=out_dir,
                            weights_dir=weights_dir or out_dir, **base)


def _cell_seed(config_seed: int, cell_id: str, salt: str = "eval") -> int:
    digest = hashlib.sha256(f"{config_seed}:{salt}:{cell_id}".encode()).digest()
    return int.from_bytes(digest[:6], "big")


def _cells(config: ExperimentConfig):
    """Yield (cell_id, domain) pairs for the configured grid."""
    if config.domain == "stopping":
        for cost in config.costs:
            d = StoppingDomain(cost=cost, horizon=config.horizon or 30)
            yield f"stopping_cost{cost:g}", d
    elif config.domain == "bandit":
        for k in config.ks:
            for cost in config.costs:
                d = BanditDomain(k=k, cost=cost, horizon=config.horizon or 25)
                yield f"bandit_k{k}_cost{cost:g}", d
    elif config.domain == "tree":
        for h in config.heights:
            for cost in config.costs:
                yield f"tree_h{h}_cost{cost:g}", TreeDomain(height=h, cost=cost)
    else:
        raise ConfigurationError(f"unknown grid domain {config.domain!r}")


def weights_path(directory: str, cell_id: str) -> str:
    return os.path.join(directory, f"weights_{cell_id}.json")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_cell(domain, cell_id: str, out_dir: str, seed: int,
               spec: op.SearchSpec | None = None,
               config: FeatureConfig = DEFAULT_CONFIG):
    """Optimize weights for one cell; writes the record and the search trace.

    For the stopping domain the probe objective is the exact policy value
    (a 465-state enumeration), which removes Monte-Carlo noise that would
    otherwise dwarf the sub-percent optimality margins achievable there.
    Other domains score probes by simulated mean return per the protocol.
    """
    os.makedirs(out_dir, exist_ok=True)
    spec = spec or op.paper_search_spec(domain.domain_id, seed=seed)
    objective = None
    if isinstance(domain, StoppingDomain):
        def objective(weights):
            policy = WeightedFeaturePolicy(domain, weights, config)
            return exact.policy_value(domain, policy), 0.0
    weights, trace = op.optimize_weights(domain, spec, config, objective=objective)
    path = weights_path(out_dir, cell_id)
    op.save_weights(
        path, domain, weights, seed=spec.seed,
        mean_return=trace.final.mean_return,
        search={"iterations": spec.iterations, "episodes_per_eval": spec.episodes_per_eval,
                "top_k_rescore": spec.top_k_rescore, "rescore_episodes": spec.rescore_episodes},
    )
    trace_path = os.path.join(out_dir, f"trace_{cell_id}.csv")
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "w1", "w2", "w3", "w4", "mean", "std_error", "best_so_far"])
        for i, (probe, best) in enumerate(zip(trace.probes, trace.best_so_far)):
            w = probe.weights
            writer.writerow([i, w.w1, w.w2, w.w3, w.w4, probe.mean_return,
                             probe.std_error, best])
    return weights, trace, path


def run_train(config: ExperimentConfig, search_spec: op.SearchSpec | None = None):
    """Train weights for every cell in the grid (tornado: one shared record)."""
    written = []
    if config.domain == "tornado":
        domain = TornadoDomain(k=config.tornado_train_k, budget=config.tornado_train_budget)
        cell = f"tornado_k{config.tornado_train_k}_n{config.tornado_train_budget}"
        _, _, path = train_cell(domain, cell, config.out_dir, config.seed, search_spec)
        written.append(path)
        return written
    for cell_id, domain in _cells(config):
        _, _, path = train_cell(domain, cell_id, config.out_dir, config.seed, search_spec)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# evaluation matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    domain: str
    k_or_h: int
    cost: float
    policy: str
    mean: float
    sd: float
    ci_lo: float
    ci_hi: float
    n: int
    seed: int
    config_hash: str
    returns: np.ndarray = field(repr=False, compare=False, default=None)

    def csv_row(self):
        return [self.domain, self.k_or_h, repr(self.cost), self.policy,
                repr(self.mean), repr(self.sd), repr(self.ci_lo), repr(self.ci_hi),
                self.n, self.seed, self.config_hash]


def write_rows(path, rows, meta: dict | None = None) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_SCHEMA)
        for row in rows:
            writer.writerow(row.csv_row())
    if meta is not None:
        with open(path + ".meta.json", "w") as fh:
            json.dump({"format": RESULTS_FORMAT, **meta}, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _load_cell_weights(config: ExperimentConfig, cell_id: str, domain) -> WeightVector:
    path = weights_path(config.weights_dir or config.out_dir, cell_id)
    if not os.path.exists(path):
        raise MissingArtifactError(f"no trained weights for cell {cell_id} at {path}")
    rec_domain, weights, _ = op.load_weights(path)
    if rec_domain.config() != domain.config():
        raise MissingArtifactError(
            f"weights at {path} were trained for {rec_domain.config()}, cell needs {domain.config()}"
        )
    return weights


def _build_policy(name: str, domain, config: ExperimentConfig, cell_id: str,
                  solver_cache: dict, feature_config: FeatureConfig):
    if name == "bmps":
        weights = _load_cell_weights(config, cell_id, domain)
        return WeightedFeaturePolicy(domain, weights, feature_config)
    if name == "optimal":
        key = domain.config()
        key = json.dumps(key, sort_keys=True)
        if key not in solver_cache:
            solver_cache[key] = exact.solve(domain, state_cap=config.state_cap)
        return solver_cache[key].policy()
    return make_policy(name, domain, config=feature_config)


def run_evaluate(config: ExperimentConfig, feature_config: FeatureConfig = DEFAULT_CONFIG,
                 skip_optimal_above_tree_height: int = 3):
    """One row per (cell, policy): the core benchmark matrices."""
    rows = []
    notes = []
    chash = config.hash()
    solver_cache: dict = {}
    for cell_id, domain in _cells(config):
        base_seed = _cell_seed(config.seed, cell_id)
        height = getattr(domain, "height", 0)
        k_or_h = getattr(domain, "k", height)
        for name in config.policies:
            if (name == "optimal" and isinstance(domain, TreeDomain)
                    and domain.height > skip_optimal_above_tree_height):
                notes.append(f"optimal policy skipped for {cell_id}: "
                             f"height above solvable cap {skip_optimal_above_tree_height}")
                continue
            policy = _build_policy(name, domain, config, cell_id, solver_cache, feature_config)
            report = evaluate_policy(domain, domain.initial_belief(), policy,
                                     config.episodes, base_seed)
            returns = report.returns
            if isinstance(domain, TreeDomain):
                returns = returns / domain.height
                report = summarize_returns(returns, base_seed)
            rows.append(ResultRow(
                domain=config.domain, k_or_h=int(k_or_h), cost=domain.cost, policy=name,
                mean=report.mean, sd=report.sd, ci_lo=report.ci_lo, ci_hi=report.ci_hi,
                n=report.n_episodes, seed=base_seed, config_hash=chash, returns=returns,
            ))
    return rows, notes


# ---------------------------------------------------------------------------
# paired comparisons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    policy_a: str
    policy_b: str
    mean_diff: float
    ci_lo: float
    ci_hi: float
    n: int

    @property
    def significant(self) -> bool:
        return self.ci_lo > 0.0 or self.ci_hi < 0.0


def paired_comparison(returns_a: np.ndarray, returns_b: np.ndarray,
                      name_a: str = "A", name_b: str = "B") -> ComparisonRow:
    """Mean difference with a 95% CI over common-seed episode pairs."""
    a = np.asarray(returns_a, dtype=float)
    b = np.asarray(returns_b, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError("paired comparison needs identical seed sets")
    diff = a - b
    n = diff.size
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1)) if n > 1 else 0.0
    half = Z95 * sd / math.sqrt(n) if n else 0.0
    return ComparisonRow(name_a, name_b, mean, mean - half, mean + half, n)


# ---------------------------------------------------------------------------
# tornado experiment
# ---------------------------------------------------------------------------

def measure_metareasoning_time(domain: TornadoDomain, weights: WeightVector,
                               n_calls: int = 100,
                               feature_config: FeatureConfig = DEFAULT_CONFIG) -> float:
    """Median wall-clock seconds of one policy decision, after warmup."""
    policy = WeightedFeaturePolicy(domain, _clamp_w4(weights, domain), feature_config)
    belief = domain.initial_belief()
    policy(belief)  # warm caches
    samples = []
    for _ in range(n_calls):
        t0 = time.perf_counter()
        policy(belief)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def _clamp_w4(weights: WeightVector, domain) -> WeightVector:
    # tornado computations are free, so w4 never influences decisions there;
    # clamping keeps a record trained at one budget valid at every other
    w4 = min(max(weights.w4, 1.0), float(domain.horizon))
    return WeightVector(weights.w1, weights.w2, weights.w3, w4)


@dataclass(frozen=True)
class TornadoCell:
    k: int
    t_sim: float
    budget_bmps: int
    budget_uniform: int
    bmps: ResultRow
    uniform: ResultRow
    advantage: ComparisonRow


def run_tornado(config: ExperimentConfig, feature_config: FeatureConfig = DEFAULT_CONFIG):
    """BMPS vs uniform allocation across (k, t_sim) cells.

    The uniform baseline metareasons for free (t_MR = 0); the feature
    policy pays t_mr per decision (measured if config.t_mr < 0). Returns
    (cells, measured_t_mr_hours).
    """
    train_cell_id = f"tornado_k{config.tornado_train_k}_n{config.tornado_train_budget}"
    path = weights_path(config.weights_dir or config.out_dir, train_cell_id)
    if not os.path.exists(path):
        raise MissingArtifactError(f"no trained tornado weights at {path}")
    _, weights, _ = op.load_weights(path)
    chash = config.hash()

    t_mr = config.t_mr
    measured = None
    if t_mr is None or t_mr < 0:
        probe_domain = TornadoDomain(k=max(config.ks), budget=10)
        measured = measure_metareasoning_time(probe_domain, weights,
                                              feature_config=feature_config) / 3600.0
        t_mr = measured
    cells = []
    for k in config.ks:
        for t_sim in config.t_sims:
            budget_b = tornado_budget(TornadoTimingModel(config.total_time, t_sim, t_mr))
            budget_u = tornado_budget(TornadoTimingModel(config.total_time, t_sim, 0.0))
            cell_seed = _cell_seed(config.seed, f"tornado_k{k}_t{t_sim:g}")
            rows = {}
            for name, budget in (("bmps", budget_b), ("uniform", budget_u)):
                domain = TornadoDomain(k=k, budget=budget)
                if name == "bmps":
                    policy = WeightedFeaturePolicy(domain, _clamp_w4(weights, domain),
                                                   feature_config)
                else:
                    policy = make_policy("uniform", domain)
                report = evaluate_policy(domain, domain.initial_belief(), policy,
                                         config.rollouts, cell_seed)
                rows[name] = ResultRow(
                    domain="tornado", k_or_h=k, cost=t_sim, policy=name,
                    mean=report.mean, sd=report.sd, ci_lo=report.ci_lo, ci_hi=report.ci_hi,
                    n=report.n_episodes, seed=cell_seed, config_hash=chash,
                    returns=report.returns,
                )
            adv = paired_comparison(rows["bmps"].returns, rows["uniform"].returns,
                                    "bmps", "uniform")
            cells.append(TornadoCell(k=k, t_sim=t_sim, budget_bmps=budget_b,
                                     budget_uniform=budget_u, bmps=rows["bmps"],
                                     uniform=rows["uniform"], advantage=adv))
    return cells, measured


def write_tornado_outputs(cells, out_dir: str, config: ExperimentConfig,
                          measured_t_mr: float | None) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    results = os.path.join(out_dir, "tornado_results.csv")
    rows = [c.bmps for c in cells] + [c.uniform for c in cells]
    meta = {
        "config": asdict(config),
        "config_hash": config.hash(),
        "measured_t_mr_hours": measured_t_mr,
    }
    write_rows(results, rows, meta)
    budgets = os.path.join(out_dir, "tornado_budgets.csv")
    with open(budgets, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "t_sim", "total_time", "n_sim_bmps", "n_sim_uniform",
                         "advantage", "adv_ci_lo", "adv_ci_hi", "config_hash"])
        for c in cells:
            writer.writerow([c.k, repr(c.t_sim), repr(config.total_time), c.budget_bmps,
                             c.budget_uniform, repr(c.advantage.mean_diff),
                             repr(c.advantage.ci_lo), repr(c.advantage.ci_hi), config.hash()])
    return results, budgets


# ---------------------------------------------------------------------------
# regression table and value-table export
# ---------------------------------------------------------------------------

def run_regress(costs, out_dir: str, scatter_cost: float = 0.02,
                horizon: int = 30, seed: int = 0) -> tuple[str, str]:
    """Regression-table CSV plus the scatter export for one illustrative cost."""
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "voc_regression.csv")
    cfg_hash = config_hash({"costs": list(costs), "horizon": horizon, "seed": seed})
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cost", "coef_vpi", "coef_voi1", "coef_cost", "r_squared",
                         "n_states", "config_hash"])
        for cost in costs:
            fit, _, _ = exact.fit_voc_regression(StoppingDomain(cost=cost, horizon=horizon))
            writer.writerow([repr(cost), repr(fit.coef_vpi), repr(fit.coef_voi1),
                             repr(fit.coef_cost), repr(fit.r_squared), fit.n_states, cfg_hash])
    scatter_path = os.path.join(out_dir, f"voc_scatter_cost{scatter_cost:g}.csv")
    fit, X, y = exact.fit_voc_regression(StoppingDomain(cost=scatter_cost, horizon=horizon))
    pred = X @ np.array(fit.coefficients())
    with open(scatter_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vpi", "voi1", "cost", "voc_exact", "voc_predicted", "config_hash"])
        for i in range(len(y)):
            writer.writerow([repr(X[i, 0]), repr(X[i, 1]), repr(X[i, 2]),
                             repr(y[i]), repr(float(pred[i])), cfg_hash])
    return table_path, scatter_path


def run_solve(domain, out_dir: str, state_cap: int = exact.DEFAULT_STATE_CAP):
    """Solve one cell exactly; dump the value table and a summary."""
    os.makedirs(out_dir, exist_ok=True)
    solver = exact.solve(domain, state_cap=state_cap)
    b0 = domain.initial_belief()
    cfg = domain.config()
    cell = "_".join(f"{k}{v}" for k, v in sorted(cfg.items()) if k != "domain")
    table_path = os.path.join(out_dir, f"table_{cfg['domain']}_{cell}.csv")
    exact.dump_value_table(solver, table_path)
    summary = {
        "domain": cfg,
        "config_hash": config_hash(cfg),
        "initial_value": solver.value(b0),
        "initial_action": repr(solver.act(b0)),
        "states": solver.state_count,
    }
    summary_path = table_path.replace(".csv", ".summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table_path, summary
