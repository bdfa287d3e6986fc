"""Shared builders for the acceptance suite.

Cell-level workers are module-level functions so a fork-based process pool
can split benchmark grids across cores. Every worker re-derives its domain
from a config dict and returns plain arrays, keeping results independent of
which process ran them. Trained weight records are cached in a directory
(set METAMDP_ACCEPT_CACHE to reuse across runs while iterating).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context

import numpy as np

from metamdp import bench, exact
from metamdp import optimize as op
from metamdp.core import evaluate_policy
from metamdp.domains import make_domain
from metamdp.policies import (
    BlinkeredPolicy,
    FullDeliberationPolicy,
    MetaGreedyPolicy,
    RecursivelyBlinkeredPolicy,
    WeightedFeaturePolicy,
)

JOBS = min(2, os.cpu_count() or 1)


def ensure_trained(domain, cell_id: str, out_dir: str, seed: int, spec=None):
    """Train-or-load the weight record for one cell."""
    path = bench.weights_path(out_dir, cell_id)
    if os.path.exists(path):
        rec_domain, weights, _ = op.load_weights(path)
        if rec_domain.config() == domain.config():
            return weights
    weights, _, _ = bench.train_cell(domain, cell_id, out_dir, seed, spec)
    return weights


def pool_map(worker, tasks):
    """Fork-pool map preserving order; falls back to serial for 1 task."""
    if len(tasks) <= 1 or JOBS <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=JOBS, mp_context=get_context("fork")) as pool:
        return list(pool.map(worker, tasks))


# ---------------------------------------------------------------------------
# bandit benchmark cells (criterion 3)
# ---------------------------------------------------------------------------

def bandit_cell_worker(task: dict) -> dict:
    domain = make_domain(task["domain"])
    cell_id = task["cell_id"]
    weights = ensure_trained(domain, cell_id, task["cache_dir"], task["seed"])
    base_seed = bench._cell_seed(task["seed"], cell_id)
    episodes = task["episodes"]
    initial = domain.initial_belief()

    solver = exact.solve(domain)
    vstar = solver.value(initial)
    policies = {
        "optimal": solver.policy(),
        "bmps": WeightedFeaturePolicy(domain, weights),
        "blinkered": BlinkeredPolicy(domain),
        "meta_greedy": MetaGreedyPolicy(domain),
        "full": FullDeliberationPolicy(domain),
    }
    returns = {}
    for name, policy in policies.items():
        report = evaluate_policy(domain, initial, policy, episodes, base_seed)
        returns[name] = report.returns
    return {
        "cell_id": cell_id,
        "k": domain.k,
        "cost": domain.cost,
        "v_star": vstar,
        "returns": returns,
    }


def run_bandit_matrix(cache_dir: str, seed: int, ks, costs, episodes: int):
    tasks = [
        {
            "domain": {"domain": "bandit", "k": k, "cost": cost, "horizon": 25},
            "cell_id": f"bandit_k{k}_cost{cost:g}",
            "cache_dir": cache_dir,
            "seed": seed,
            "episodes": episodes,
        }
        for k in ks
        for cost in costs
    ]
    return pool_map(bandit_cell_worker, tasks)


# ---------------------------------------------------------------------------
# tree benchmark cells (criterion 4)
# ---------------------------------------------------------------------------

def tree_cell_worker(task: dict) -> dict:
    domain = make_domain(task["domain"])
    cell_id = task["cell_id"]
    weights = ensure_trained(domain, cell_id, task["cache_dir"], task["seed"])
    base_seed = bench._cell_seed(task["seed"], cell_id)
    episodes = task["episodes"]
    initial = domain.initial_belief()
    policies = {
        "bmps": WeightedFeaturePolicy(domain, weights),
        "recursive_blinkered": RecursivelyBlinkeredPolicy(domain),
        "meta_greedy": MetaGreedyPolicy(domain),
        "full": FullDeliberationPolicy(domain),
    }
    out = {
        "cell_id": cell_id,
        "height": domain.height,
        "cost": domain.cost,
        "returns": {},
        "v_star": None,
    }
    for name, policy in policies.items():
        report = evaluate_policy(domain, initial, policy, episodes, base_seed)
        out["returns"][name] = report.returns / domain.height
    if domain.height <= 3:
        solver = exact.solve(domain)
        out["v_star"] = solver.value(initial) / domain.height
        report = evaluate_policy(domain, initial, solver.policy(), episodes, base_seed)
        out["returns"]["optimal"] = report.returns / domain.height
    return out


def run_tree_matrix(cache_dir: str, seed: int, heights, costs, episodes: int):
    # deepest trees first so the two workers stay balanced
    tasks = [
        {
            "domain": {"domain": "tree", "height": h, "cost": cost},
            "cell_id": f"tree_h{h}_cost{cost:g}",
            "cache_dir": cache_dir,
            "seed": seed,
            "episodes": episodes,
        }
        for h in sorted(heights, reverse=True)
        for cost in costs
    ]
    return pool_map(tree_cell_worker, tasks)


# ---------------------------------------------------------------------------
# stopping cells (criterion 2)
# ---------------------------------------------------------------------------

def stopping_cell_worker(task: dict) -> dict:
    domain = make_domain(task["domain"])
    cell_id = task["cell_id"]
    weights = ensure_trained(domain, cell_id, task["cache_dir"], task["seed"])
    solver = exact.solve(domain)
    initial = domain.initial_belief()
    vstar = solver.value(initial)
    policy = WeightedFeaturePolicy(domain, weights)
    bmps_exact = exact.policy_value(domain, policy)
    greedy_exact = exact.policy_value(domain, MetaGreedyPolicy(domain))
    base_seed = bench._cell_seed(task["seed"], cell_id)
    report = evaluate_policy(domain, initial, policy, task["episodes"], base_seed)
    # the optimal policy samples more than once iff sampling beats the
    # one-shot value 1/3 - cost at the uniform prior
    multi_sample = vstar > (1.0 / 3.0 - domain.cost) + 1e-12
    return {
        "cell_id": cell_id,
        "cost": domain.cost,
        "v_star": vstar,
        "bmps_exact": bmps_exact,
        "greedy_exact": greedy_exact,
        "sim_mean": report.mean,
        "sim_ci": (report.ci_lo, report.ci_hi),
        "multi_sample": multi_sample,
    }


def run_stopping_matrix(cache_dir: str, seed: int, costs, episodes: int):
    tasks = [
        {
            "domain": {"domain": "stopping", "cost": cost, "horizon": 30},
            "cell_id": f"stopping_cost{cost:g}",
            "cache_dir": cache_dir,
            "seed": seed,
            "episodes": episodes,
        }
        for cost in costs
    ]
    return pool_map(stopping_cell_worker, tasks)
