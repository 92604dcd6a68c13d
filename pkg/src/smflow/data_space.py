"""Finite training-data distributions and the discretized cylindrical noise.

The data space is a finite set of atoms theta_k with weights w_k.  With the
indicator basis e_k = 1_{theta_k} / sqrt(w_k) of L^2(theta), the cylindrical
Wiener process becomes K independent Brownian motions B_k and a stochastic
integral of g reduces to the exact finite sum sum_k sqrt(w_k) g(theta_k) dB_k.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class DataDistribution:
    """Atoms of shape ``(K, n0)`` and strictly positive weights summing to one."""

    atoms: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return len(self.weights)

    @property
    def sqrt_weights(self):
        return np.sqrt(self.weights)

    def expect(self, values):
        """Weighted average over the atom axis, which must be axis ``-1``."""
        return np.tensordot(values, self.weights, axes=([-1], [0]))

    def to_dict(self):
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


def make_discrete_distribution(atoms, weights=None):
    """Build a normalized :class:`DataDistribution`.

    Scalar atoms are stored as a column, so ``atoms=[-1, 1]`` gives shape
    ``(2, 1)``.  ``weights=None`` means uniform.
    """
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 0:
        atoms = atoms.reshape(1, 1)
    elif atoms.ndim == 1:
        atoms = atoms[:, None]
    elif atoms.ndim != 2:
        raise ValueError("atoms must be a list of scalars or of vectors")
    if atoms.shape[0] == 0:
        raise ValueError("atom list is empty")
    if not np.all(np.isfinite(atoms)):
        raise ValueError("atoms must be finite")
    if weights is None:
        weights = np.ones(atoms.shape[0])
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape[0] != atoms.shape[0]:
        raise ValueError(
            f"got {atoms.shape[0]} atoms but {weights.shape[0]} weights")
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ValueError("weights must be finite and strictly positive")
    weights = weights / weights.sum()
    atoms.setflags(write=False)
    weights.setflags(write=False)
    return DataDistribution(atoms, weights)


def sample_datum(dist, rng):
    """Draw one atom index with probability ``w_k``."""
    return int(sample_data(dist, rng, 1)[0])


def sample_data(dist, rng, size):
    """Vectorized :func:`sample_datum`; ``size`` may be an int or a shape."""
    if dist.size == 1:
        return np.zeros(size, dtype=np.intp)
    cdf = np.cumsum(dist.weights)
    cdf[-1] = 1.0
    u = rng.random(size)
    return np.searchsorted(cdf, u, side="right").astype(np.intp)


@dataclass(frozen=True, eq=False)
class CylindricalIncrement:
    """Independent N(0, dt) draws, one per atom on the last axis.

    Leading axes index replicates; every tracked point of a replicate is
    driven by the same row.
    """

    per_atom: np.ndarray
    dt: float


def draw_cylindrical_increment(dist, dt, rng, size=()):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    shape = (size,) if np.isscalar(size) else tuple(size)
    return CylindricalIncrement(
        np.sqrt(dt) * rng.standard_normal(shape + (dist.size,)), float(dt))


def noise_integral(dist, g_values, inc):
    """Sum_k sqrt(w_k) g(theta_k) dB_k.

    ``g_values`` has shape ``(..., P, K, d)`` (P tracked points) and
    ``inc.per_atom`` has shape ``(..., K)``; the result is ``(..., P, d)``.
    """
    coeff = inc.per_atom * dist.sqrt_weights
    return np.einsum("...pkd,...k->...pd", g_values, coeff)
