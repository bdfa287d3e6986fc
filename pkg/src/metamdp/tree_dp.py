"""Exact and Monte-Carlo value-of-information machinery for the tree domain.

Node values under the current belief are -1, 0, or +1 (unknown rewards have
expectation 0, revealed ones are +-1), so every path sum is an integer in
[-(H+1), H+1]. Distributions of best-path values under hypothetical
revelations therefore live on a tiny integer grid, and all three VOI
features can be computed exactly with cumulative-distribution dynamic
programming instead of Monte Carlo:

  * full-information value: one bottom-up sweep multiplying children CDFs
    (the CDF of a max of independents is the product of CDFs) and shifting
    by the node value (averaging the two shifts when the node is unknown);
  * subset-information value for computation j: the revealed set is j's
    ancestors, j, and j's subtree, so the best-path distribution follows a
    chain of per-level operators down j's ancestor path, each a clamp
    against the frozen sibling subtree followed by the ancestor-value
    shift. Every operator is affine in the CDF vector, so instead of
    carrying one distribution per (computation, level) the engine sweeps
    the expectation functional top-down: one (row vector, scalar) pair per
    node, composed via operator adjoints, then contracts against the
    bottom-up subtree distributions. One O(nodes x support) pass covers
    every computation at once;
  * myopic value: deterministic best-path bookkeeping for both outcomes of
    a single revelation.

All sweeps are level-synchronous with a leading batch axis and float32
internals (path sums are small integers, so rounding is far below any
decision threshold), which is what makes whole-population policy training
tractable.
"""

from __future__ import annotations

import numpy as np

from .domains import TreeStructure, tree_structure

_NEG = -1e9
_DTYPE = np.float32


class TreeFeatureEngine:
    """Vectorized exact feature evaluation for complete binary trees."""

    def __init__(self, height: int):
        self.height = height
        self.st: TreeStructure = tree_structure(height)
        H = height
        self.support = np.arange(-(H + 1), H + 2, dtype=_DTYPE)
        self.s = self.support.size
        # CDF of a fresh (unrevealed) node value: uniform on {-1, +1}
        self.fresh_cdf = np.where(
            self.support >= 1, 1.0, np.where(self.support >= -1, 0.5, 0.0)
        ).astype(_DTYPE)

    # -- deterministic sweeps ------------------------------------------------

    def det_tables(self, values: np.ndarray):
        """Best-path bookkeeping under the expectation belief.

        values: (B, k) node values. Returns (u, down, alt):
          u[:, v]    best path value from v downward, including v
          down[:, v] sum of values along root..v inclusive
          alt[:, v]  best total path value among paths avoiding v
        """
        st = self.st
        u = values.copy()
        for t in range(self.height - 1, -1, -1):
            idx = st.levels[t]
            u[:, idx] += np.maximum(u[:, 2 * idx + 1], u[:, 2 * idx + 2])
        down = values.copy()
        alt = np.full_like(values, _NEG)
        for t in range(1, self.height + 1):
            idx = st.levels[t]
            par = st.parent[idx]
            down[:, idx] += down[:, par]
            alt[:, idx] = np.maximum(alt[:, par], down[:, par] + u[:, st.sibling[idx]])
        return u, down, alt

    # -- CDF sweeps -----------------------------------------------------------

    def random_subtree_cdfs(self, values: np.ndarray, unrevealed: np.ndarray) -> np.ndarray:
        """CDF of the best path from each node downward with unknowns random.

        Returns (B, k, s). Row j is exact for the subtree rooted at j under
        full revelation of that subtree.
        """
        st = self.st
        B, k = values.shape
        R = np.empty((B, k, self.s), dtype=_DTYPE)
        leaf = st.levels[self.height]
        leaf_const = (self.support[None, None, :] >= values[:, leaf, None]).astype(_DTYPE)
        R[:, leaf] = np.where(unrevealed[:, leaf, None], self.fresh_cdf, leaf_const)
        for t in range(self.height - 1, -1, -1):
            idx = st.levels[t]
            Fmax = R[:, 2 * idx + 1] * R[:, 2 * idx + 2]
            # add the node value: shift the CDF grid by +-1, or average both
            up = np.zeros_like(Fmax)
            up[..., 1:] = Fmax[..., :-1]
            down = np.empty_like(Fmax)
            down[..., -1] = 1.0
            down[..., :-1] = Fmax[..., 1:]
            revealed_shift = np.where(values[:, idx, None] > 0, up, down)
            R[:, idx] = np.where(unrevealed[:, idx, None], 0.5 * (up + down), revealed_shift)
        return R

    def _expectation_functionals(self, values: np.ndarray, unrevealed: np.ndarray,
                                 u: np.ndarray):
        """Adjoint top-down sweep: (g, c) with vpi_sub(j) = g_j . R_j + c_j - U.

        g_j composes, from the root down to j, the adjoints of
        "clamp against the frozen sibling, then add the ancestor value",
        applied to the expectation functional E[X] = S_max - sum(F[:-1]).
        """
        st = self.st
        B, k = values.shape
        s = self.s
        g = np.zeros((B, k, s), dtype=_DTYPE)
        c = np.empty((B, k), dtype=_DTYPE)
        g[:, 0, :-1] = -1.0
        c[:, 0] = self.support[-1]
        for t in range(self.height):
            idx = st.levels[t]
            gp = g[:, idx]
            # adjoint of the +1 shift: advance; of the -1 shift: delay + tail mass
            adv = np.zeros_like(gp)
            adv[..., :-1] = gp[..., 1:]
            dly = np.zeros_like(gp)
            dly[..., 1:] = gp[..., :-1]
            tail = gp[..., -1]
            unrev = unrevealed[:, idx, None]
            pos = values[:, idx, None] > 0
            g_shift = np.where(unrev, 0.5 * (adv + dly), np.where(pos, adv, dly))
            c_next = c[:, idx] + np.where(
                unrevealed[:, idx], 0.5 * tail, np.where(values[:, idx] > 0, 0.0, tail)
            )
            left = 2 * idx + 1
            right = left + 1
            g[:, left] = g_shift * (self.support[None, None, :] >= u[:, right, None])
            g[:, right] = g_shift * (self.support[None, None, :] >= u[:, left, None])
            c[:, left] = c_next
            c[:, right] = c_next
        return g, c

    # -- features --------------------------------------------------------------

    def features_batch(self, probs: np.ndarray, need_vpi: bool = True, need_sub: bool = True):
        """Exact (voi1, vpi, vpi_sub) for every computation, batched.

        probs: (B, k) with entries in {0, 0.5, 1}. Returns
        (voi1 (B, k), vpi (B,) or None, vpi_sub (B, k) or None, utility (B,)).
        """
        probs = np.asarray(probs, dtype=_DTYPE)
        if probs.ndim == 1:
            probs = probs[None, :]
        values = 2.0 * probs - 1.0
        unrevealed = probs == 0.5
        u, down, alt = self.det_tables(values)
        utility = u[:, 0].copy()

        below = u - values
        hi = np.maximum(alt, down + 1.0 + below)
        lo = np.maximum(alt, down - 1.0 + below)
        voi1 = 0.5 * (hi + lo) - utility[:, None]
        voi1 = np.where(unrevealed, np.maximum(voi1, 0.0), 0.0)

        vpi = None
        vpi_sub = None
        if need_vpi or need_sub:
            R = self.random_subtree_cdfs(values, unrevealed)
            vpi = np.maximum(self.support[-1] - R[:, 0, :-1].sum(axis=-1) - utility, 0.0)
        if need_sub:
            g, c = self._expectation_functionals(values, unrevealed, u)
            vpi_sub = (g * R).sum(axis=-1) + c - utility[:, None]
            np.maximum(vpi_sub, 0.0, out=vpi_sub)
        return voi1, vpi, vpi_sub, utility

    def feature_matrix(self, probs, cost: float) -> np.ndarray:
        """(k, 4) matrix of (voi1, vpi, vpi_sub, cost) for one belief."""
        voi1, vpi, vpi_sub, _ = self.features_batch(np.asarray(probs, dtype=_DTYPE))
        k = self.st.num_nodes
        out = np.empty((k, 4))
        out[:, 0] = voi1[0]
        out[:, 1] = vpi[0]
        out[:, 2] = vpi_sub[0]
        out[:, 3] = cost
        return out

    def utility(self, probs) -> float:
        values = 2.0 * np.asarray(probs, dtype=np.float64) - 1.0
        return self.st.best_path_value(values)

    # -- Monte-Carlo reference paths --------------------------------------------

    def best_path_values_batch(self, values: np.ndarray) -> np.ndarray:
        """Best-path value per row of a (n, k) node-value matrix."""
        best = np.array(values, dtype=np.float64, copy=True)
        for t in range(self.height - 1, -1, -1):
            idx = self.st.levels[t]
            best[:, idx] += np.maximum(best[:, 2 * idx + 1], best[:, 2 * idx + 2])
        return best[:, 0]

    def vpi_monte_carlo(self, probs, n_samples: int, rng: np.random.Generator) -> float:
        probs = np.asarray(probs, dtype=np.float64)
        theta = np.where(rng.random((n_samples, probs.size)) < probs, 1.0, -1.0)
        est = self.best_path_values_batch(theta).mean() - self.utility(probs)
        return max(float(est), 0.0)

    def vpi_sub_monte_carlo(self, probs, j: int, n_samples: int, rng: np.random.Generator) -> float:
        probs = np.asarray(probs, dtype=np.float64)
        mask = self.st.relevance[j]
        theta = np.where(rng.random((n_samples, probs.size)) < probs, 1.0, -1.0)
        mixed = np.where(mask[None, :], theta, 2.0 * probs - 1.0)
        est = self.best_path_values_batch(mixed).mean() - self.utility(probs)
        return max(float(est), 0.0)
