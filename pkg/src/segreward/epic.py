"""EPIC pseudometric over sampled reward values.

Rewards here are action-independent, so canonicalization collapses to
subtracting, per coverage state, the mean reward over a batch of states
drawn from the shaping distribution. The distance between two canonicalized
reward vectors is the Pearson distance sqrt((1 - rho) / 2).

This module is the evaluation path and works on plain float arrays. The
training loss re-expresses the same formulas with autodiff tensors (see
train.loss_epic); equivalence of the two paths is pinned by tests against
an independent brute-force implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateVarianceError
from . import numerics

# Correlations this close to an endpoint are floating-point noise: exactly
# affine rewards land within a few ulp of rho = 1, and snapping them onto the
# endpoint makes invariance checks return exact zeros. Genuine signal on any
# realistic batch sits many orders of magnitude further in.
_ENDPOINT_SNAP = 1e-13


@dataclass
class EpicConfig:
    num_canonical_samples: int = 8
    gamma: float = 1.0  # retained from the shaping definition; cancels for state-only rewards
    distance_form: str = "root"  # "root" for evaluation, "squared" for training

    def __post_init__(self):
        if self.num_canonical_samples < 1:
            raise ConfigurationError("num_canonical_samples must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.distance_form not in ("root", "squared"):
            raise ConfigurationError("distance_form must be 'root' or 'squared'")


@dataclass
class EpicEstimate:
    pearson: float
    distance: float
    coverage_size: int


def canonicalize(coverage_values, canonical_values_per_state):
    """Subtract the per-state canonical mean: C(R)(s) = R(s) - E[R(S)].

    `canonical_values_per_state` holds, for each coverage state, the reward
    values at a batch of shaping-distribution samples; only their mean enters.
    Accepts autodiff tensors (coverage (N,), canonical (N, M)) and then stays
    differentiable.
    """
    from .autodiff import Tensor

    if isinstance(coverage_values, Tensor) or isinstance(canonical_values_per_state, Tensor):
        canon = canonical_values_per_state
        if not isinstance(canon, Tensor) or canon.ndim != 2:
            raise ConfigurationError("tensor canonicalization expects a (N, M) tensor")
        if canon.shape[1] < 1:
            raise ConfigurationError("empty canonical sample set")
        return coverage_values - canon.mean(axis=1)

    coverage = np.asarray(coverage_values, dtype=float)
    if coverage.ndim != 1:
        raise ConfigurationError("coverage values must be a 1-D vector")
    canon = canonical_values_per_state
    if isinstance(canon, np.ndarray) and canon.ndim == 2:
        if canon.shape[0] != coverage.size or canon.shape[1] < 1:
            raise ConfigurationError("canonical array must be (len(coverage), M>=1)")
        return coverage - canon.mean(axis=1)
    if len(canon) != coverage.size:
        raise ConfigurationError("need one canonical batch per coverage value")
    means = np.empty_like(coverage)
    for s, batch in enumerate(canon):
        batch = np.asarray(batch, dtype=float)
        if batch.size == 0:
            raise ConfigurationError(f"empty canonical sample set at coverage index {s}")
        means[s] = batch.mean()
    return coverage - means


def _estimate(canon_a: np.ndarray, canon_b: np.ndarray, config: EpicConfig) -> EpicEstimate:
    try:
        rho = numerics.pearson_correlation(canon_a, canon_b)
    except DegenerateVarianceError as exc:
        side = "values_a" if exc.side == "xs" else "values_b"
        raise DegenerateVarianceError(
            side, f"canonicalized {side} is constant over the coverage batch"
        ) from exc
    rho = min(max(rho, -1.0), 1.0)
    if 1.0 - rho <= _ENDPOINT_SNAP:
        rho = 1.0
    elif 1.0 + rho <= _ENDPOINT_SNAP:
        rho = -1.0
    half = (1.0 - rho) / 2.0
    distance = float(np.sqrt(half)) if config.distance_form == "root" else float(half)
    return EpicEstimate(pearson=float(rho), distance=distance, coverage_size=canon_a.size)


def epic_distance(values_a, values_b, canon_a, canon_b, config: EpicConfig) -> EpicEstimate:
    """Sample-based EPIC distance between two rewards on a shared coverage batch.

    `values_*` are the rewards at the coverage states; `canon_*` the rewards at
    the shaping-distribution samples attached to each coverage state, one batch
    per state, drawn identically for both sides.
    """
    values_a = np.asarray(values_a, dtype=float)
    values_b = np.asarray(values_b, dtype=float)
    if values_a.shape != values_b.shape or values_a.ndim != 1 or values_a.size < 3:
        raise ConfigurationError("need matching 1-D value vectors with >= 3 entries")
    ca = canonicalize(values_a, canon_a)
    cb = canonicalize(values_b, canon_b)
    return _estimate(ca, cb, config)


def epic_distance_potential_shaped(values_a, shaped_values, potential, config: EpicConfig) -> EpicEstimate:
    """Invariance fixture: distance between a reward and a shaped variant of it.

    The potential term enters as gamma * mean(potential) - potential(s), the
    state-only stand-in for gamma * Phi(s') - Phi(s) with the next state
    averaged over the coverage batch; for constant potentials (and for plain
    affine remaps built by the caller) the result is zero up to float noise.
    The coverage batch itself acts as the shaping sample for both sides.
    """
    values_a = np.asarray(values_a, dtype=float)
    shaped_values = np.asarray(shaped_values, dtype=float)
    potential = np.asarray(potential, dtype=float)
    if values_a.shape != shaped_values.shape or values_a.ndim != 1 or values_a.size < 3:
        raise ConfigurationError("need matching 1-D value vectors with >= 3 entries")
    if potential.shape != values_a.shape:
        raise ConfigurationError("potential must assign one value per coverage state")
    effective = shaped_values + config.gamma * potential.mean() - potential
    ca = values_a - values_a.mean()
    cb = effective - effective.mean()
    return _estimate(ca, cb, config)
