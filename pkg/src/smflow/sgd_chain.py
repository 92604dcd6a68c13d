"""Discrete SGD chains: plain, measure-dependent and overparameterized.

A chain state holds positions of shape ``(R, M, d)``: R independent replicates
of M tracked points (initial conditions or particles).  Within a replicate all
M points see the same data atom at every step.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data_space import sample_data
from .loss_models import as_interaction, grad_pointwise_loss


@dataclass(frozen=True, eq=False)
class ChainState:
    positions: np.ndarray
    step: int
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")

    @property
    def time(self):
        return self.step * self.eta


def initial_chain(points, eta, replicates=None):
    """Chain state from points ``(M, d)``; optionally tiled over replicates."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if replicates is not None:
        pts = np.broadcast_to(pts, (replicates,) + pts.shape[-2:]).copy()
    return ChainState(pts, 0, float(eta))


def _checked(positions):
    if not np.all(np.isfinite(positions)):
        raise FloatingPointError("SGD update produced non-finite positions")
    return positions


def sgd_step(model, state, atom_index):
    """z <- z - eta grad R~(z, theta_k) for every tracked point.

    ``atom_index`` is an int or an array over the replicate axes; it is
    broadcast over the M tracked points.
    """
    z = state.positions
    k = np.asarray(atom_index)[..., None]
    new = z - state.eta * grad_pointwise_loss(model, z, k)
    return ChainState(_checked(new), state.step + 1, state.eta)


def interacting_sgd_step(model, state, atom_index):
    """z^i <- z^i + eta V(Gamma_n, z^i) + eta G(Gamma_n, z^i, theta_k), simultaneously.

    ``model`` provides ``drift(nu, z)`` and ``noise(nu, z)``; Gamma_n is the
    empirical measure of the current positions of each replicate.
    """
    z = state.positions
    v = model.drift(z, z)
    g_all = model.noise(z, z)                           # (..., M, K, d)
    k = np.broadcast_to(np.asarray(atom_index)[..., None], z.shape[:-1])
    g = np.take_along_axis(g_all, k[..., None, None], axis=-2)[..., 0, :]
    new = z + state.eta * v + state.eta * g
    return ChainState(_checked(new), state.step + 1, state.eta)


def run_chain(model, initial, n_steps, rng, checkpoints=None, interacting=None,
              atom_sequence=None):
    """Run ``n_steps`` steps, drawing one atom per replicate per step.

    Returns ``[(step, state), ...]`` at the requested checkpoints (default:
    only the final step).  ``interacting`` forces the measure-dependent step;
    by default it is used when ``model`` has a ``drift`` method.
    ``atom_sequence`` (shape ``(n_steps, R...)``) replaces random sampling.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if interacting is None:
        interacting = hasattr(model, "drift")
    step_fn = interacting_sgd_step if interacting else sgd_step
    if interacting:
        model = as_interaction(model)
    wanted = {n_steps} if checkpoints is None else set(int(c) for c in checkpoints)
    batch = initial.positions.shape[:-2]
    state = initial
    out = [(0, state)] if 0 in wanted else []
    for n in range(n_steps):
        if atom_sequence is not None:
            k = np.asarray(atom_sequence[n])
        else:
            k = sample_data(model.data, rng, batch)
        state = step_fn(model, state, k)
        if n + 1 in wanted:
            out.append((n + 1, state))
    return out


def final_state(trajectory):
    return trajectory[-1][1]


def with_positions(state, positions):
    return replace(state, positions=positions)
