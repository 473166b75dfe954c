"""Acquisition criteria and the shared multi-start maximizer.

Three criteria are provided: plain upper confidence bound, the cost-adjusted
variant used to pick the next (design, fidelity) pair, and the greedy
posterior-mean maximizer pinned at the highest fidelity that supplies the
campaign's final evaluation. All of them run through one deterministic
box-constrained maximizer (Latin hypercube starts refined by compass search).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import gp

log = logging.getLogger(__name__)


class MaximizerError(RuntimeError):
    """Every start of the acquisition maximizer was abandoned."""


@dataclass(frozen=True)
class AcquisitionConfig:
    beta: float = 2.5
    gamma: float = 1.5
    discount_floor: float = 1e-2
    restarts: int = 8
    local_steps: int = 48
    seed: int | tuple = 0

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        if not 0.0 < self.discount_floor < 1.0:
            raise ValueError("discount_floor must lie in (0, 1)")


def ucb_batch(f_model: gp.GpModel, XZ: np.ndarray, beta: float) -> np.ndarray:
    """mu + sqrt(beta) * sigma at raw joint points, in normalized target units."""
    means, stds = gp.posterior_batch(
        f_model, f_model.normalization.normalize_inputs(np.atleast_2d(XZ))
    )
    return means + np.sqrt(beta) * stds


def ucb(f_model: gp.GpModel, x: np.ndarray, z: np.ndarray, beta: float) -> float:
    return float(ucb_batch(f_model, np.concatenate([np.atleast_1d(x), np.atleast_1d(z)]), beta)[0])


def predicted_cost(cost_model: gp.GpModel, XZ: np.ndarray) -> np.ndarray:
    """Positive-scale cost prediction: exp of the de-normalized log-cost mean."""
    means, _ = gp.predict_batch(cost_model, np.atleast_2d(XZ))
    return np.exp(means)


def cost_adjusted_ucb_batch(
    f_model: gp.GpModel,
    cost_model: gp.GpModel,
    XZ: np.ndarray,
    z_star: np.ndarray,
    config: AcquisitionConfig,
) -> np.ndarray:
    """Cost-adjusted acquisition over raw joint points.

    The numerator is the UCB evaluated with the fidelity pinned at its
    component-wise maximum (the only level whose objective is of interest);
    the denominator discounts by predicted evaluation cost and by how much
    information a lower fidelity loses, sqrt(1 - corr^2). The discount is
    floored to keep the criterion finite at the highest fidelity itself.
    """
    XZ = np.atleast_2d(np.asarray(XZ, dtype=float))
    m = np.atleast_1d(z_star).size
    at_star = XZ.copy()
    at_star[:, -m:] = np.asarray(z_star, dtype=float)

    numer = ucb_batch(f_model, at_star, config.beta)
    cost = predicted_cost(cost_model, XZ)
    if np.any(cost <= 0):
        raise RuntimeError("cost transform produced a non-positive prediction")

    norm = f_model.normalization
    corr = gp.rowwise_correlation(
        f_model, norm.normalize_inputs(XZ), norm.normalize_inputs(at_star)
    )
    discount = np.maximum(np.sqrt(np.maximum(1.0 - corr**2, 0.0)), config.discount_floor)
    return numer / (config.gamma * cost * discount)


def cost_adjusted_ucb(
    f_model, cost_model, x, z, z_star, config: AcquisitionConfig
) -> float:
    xz = np.concatenate([np.atleast_1d(x), np.atleast_1d(z)])
    return float(cost_adjusted_ucb_batch(f_model, cost_model, xz, z_star, config)[0])


def greedy_highest_fidelity(
    f_model: gp.GpModel,
    x_bounds: np.ndarray,
    z_star: np.ndarray,
    config: AcquisitionConfig,
) -> np.ndarray:
    """argmax over the design box of the posterior mean at the highest fidelity."""
    z_star = np.atleast_1d(np.asarray(z_star, dtype=float))

    def mean_at_star(X):
        XZ = np.hstack([np.atleast_2d(X), np.tile(z_star, (np.atleast_2d(X).shape[0], 1))])
        means, _ = gp.predict_batch(f_model, XZ)
        return means

    x, _ = maximize_acquisition(mean_at_star, np.asarray(x_bounds, dtype=float), config)
    return x


def lhs_box(count: int, bounds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample of a box: one point per equal-width bin per axis."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    d = bounds.shape[0]
    points = np.empty((count, d))
    for j in range(d):
        perm = rng.permutation(count)
        u = (perm + rng.uniform(size=count)) / count
        points[:, j] = bounds[j, 0] + u * (bounds[j, 1] - bounds[j, 0])
    return points


def maximize_acquisition(objective, bounds: np.ndarray, config: AcquisitionConfig):
    """Deterministic multi-start compass search over a box.

    ``objective`` maps an (k, d) array of points to a (k,) array of values.
    Starts come from a seeded Latin hypercube; each runs ``local_steps``
    rounds of coordinate probing with step halving, clipped to the box. A
    start whose current value turns non-finite is abandoned. Ties within
    1e-12 of the best value resolve to the lexicographically smallest point.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    lo, hi = bounds[:, 0], bounds[:, 1]
    if bounds.size == 0 or np.any(~np.isfinite(bounds)) or np.any(hi < lo):
        raise ValueError("bounds must be a finite, non-empty box")
    d = bounds.shape[0]
    rng = np.random.default_rng(config.seed)
    P = lhs_box(config.restarts, bounds, rng)
    V = np.asarray(objective(P), dtype=float)

    alive = np.isfinite(V)
    if np.any(~alive):
        log.warning("abandoned %d maximizer start(s) with non-finite value", int(np.sum(~alive)))
    if not np.any(alive):
        raise MaximizerError("all maximizer starts returned non-finite values")
    P, V = P[alive], V[alive]
    n_live = P.shape[0]
    steps = np.tile(0.25 * (hi - lo), (n_live, 1))

    offsets = np.zeros((2 * d, d))
    for j in range(d):
        offsets[2 * j, j] = 1.0
        offsets[2 * j + 1, j] = -1.0

    for _ in range(config.local_steps):
        probes = P[:, None, :] + steps[:, None, :] * offsets[None, :, :]
        np.clip(probes, lo, hi, out=probes)
        vals = np.asarray(objective(probes.reshape(-1, d)), dtype=float).reshape(n_live, 2 * d)
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        best = np.argmax(vals, axis=1)
        best_vals = vals[np.arange(n_live), best]
        improved = best_vals > V
        P[improved] = probes[np.arange(n_live), best][improved]
        V[improved] = best_vals[improved]
        steps[~improved] *= 0.5

    top = np.max(V)
    contenders = P[V >= top - 1e-12]
    order = np.lexsort(contenders.T[::-1])
    winner = contenders[order[0]]
    value = float(np.asarray(objective(winner[None, :]), dtype=float)[0])
    return winner.copy(), value
