import numpy as np
import pytest

from metamdp import domains as dm


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


def random_walk_belief(domain, n_steps: int, rng: np.random.Generator):
    """A reachable belief obtained by random computations from the start."""
    from metamdp.core import compute, sample_transition

    belief = domain.initial_belief()
    steps = min(n_steps, domain.horizon - 2)
    for _ in range(steps):
        if isinstance(domain, dm.TornadoDomain) and belief.sims_remaining <= 0:
            break
        j = int(rng.integers(domain.num_computations))
        belief, _ = sample_transition(domain, belief, compute(j), rng)
    return belief


@pytest.fixture(scope="session")
def domain_zoo():
    return [
        dm.StoppingDomain(cost=0.01),
        dm.BanditDomain(k=2, cost=0.01),
        dm.BanditDomain(k=5, cost=0.001),
        dm.TreeDomain(height=2, cost=0.125),
        dm.TreeDomain(height=3, cost=0.03125),
        dm.TornadoDomain(k=3, budget=12),
    ]
