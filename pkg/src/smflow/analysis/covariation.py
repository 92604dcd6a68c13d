"""Two-point statistics: covariation rates of the flows and one-step SGD covariance.

Estimates are averages of per-replicate statistics, so the reported standard
error is the sample standard deviation over replicates divided by sqrt(R).
"""

from dataclasses import dataclass

import numpy as np

from .. import rng as rngs
from ..data_space import sample_data
from ..integrators import FlowState, SMEStepper, SMFStepper, initial_flow
from ..loss_models import as_interaction, covariance_kernel, sigma, sqrt_psd
from ..parallel import ordered_map
from ..sgd_chain import initial_chain, interacting_sgd_step


@dataclass
class CovariationEstimate:
    method: str
    estimate: np.ndarray        # (d, d)
    standard_error: np.ndarray  # (d, d)
    difference_qv: float        # quadratic variation rate of X(x) - X(xbar)
    difference_qv_se: float
    replicates: int
    expected: np.ndarray = None


def _mean_se(samples):
    """Mean and standard error over axis 0."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def _flow_task(task):
    method, model, x, xbar, eta, dt, window, seed, block, count, increments = task
    stepper = SMFStepper(model) if method == "smf" else SMEStepper(model)
    gen = rngs.stream(seed, "two-point-" + method, block)
    state = initial_flow(np.stack([x, xbar]), eta, dt, count)
    d = state.positions.shape[-1]
    cross = np.zeros((count, d, d))
    diff_qv = np.zeros(count)
    for _ in range(window):
        drift, noise = stepper.increments(state, stepper.draw(state, gen))
        dx = noise if increments == "noise" else drift + noise
        cross += np.einsum("ri,rj->rij", dx[:, 0], dx[:, 1])
        delta = dx[:, 0] - dx[:, 1]
        diff_qv += np.einsum("ri,ri->r", delta, delta)
        state = FlowState(state.positions + drift + noise, state.t + dt, eta, dt)
    elapsed = window * dt
    return cross / elapsed, diff_qv / elapsed


def _sgd_task(task):
    model, points, eta, seed, block, count = task
    inter = as_interaction(model)
    gen = rngs.stream(seed, "two-point-sgd", block)
    state = initial_chain(points, eta, count)
    k = sample_data(inter.data, gen, count)
    return interacting_sgd_step(inter, state, k).positions


def two_point_covariation(method, model, x, xbar, eta, replicates, seed,
                          window=10, dt=None, block_size=10_000, workers=1,
                          increments="noise"):
    """Covariation rate of the two-point motion started at ``x`` and ``xbar``.

    SMF/SME: the realized covariation sum dX(x) (x) dX(xbar) over ``window``
    steps divided by the elapsed time.  With ``increments="noise"`` only the
    martingale part of each increment is used (the drift contributes O(dt)
    to a realized covariation and nothing to the quadratic covariation).
    SGD: covariance of one step over replicates, which should be eta^2 A~(x, xbar).
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    if method in ("smf", "sme"):
        dt = eta / 50 if dt is None else dt
        tasks = [(method, model, x, xbar, eta, dt, int(window), seed, b, c, increments)
                 for b, c in rngs.blocks(replicates, block_size)]
        out = ordered_map(_flow_task, tasks, workers)
        cross = np.concatenate([o[0] for o in out])
        qv = np.concatenate([o[1] for o in out])
        est, se = _mean_se(cross)
        qv_m, qv_se = _mean_se(qv)
        if method == "smf":
            expected = eta * covariance_kernel(model, x, xbar)
        else:
            expected = eta * sqrt_psd(sigma(model, x)) @ sqrt_psd(sigma(model, xbar))
        return CovariationEstimate(method, est, se, float(qv_m), float(qv_se),
                                   replicates, expected)
    if method == "sgd":
        tasks = [(model, np.stack([x, xbar]), eta, seed, b, c)
                 for b, c in rngs.blocks(replicates, block_size)]
        z1 = np.concatenate(ordered_map(_sgd_task, tasks, workers))   # (R, 2, d)
        est, se = sample_covariance(z1[:, 0], z1[:, 1])
        diff = z1[:, 0] - z1[:, 1]
        dv, dse = sample_covariance(diff, diff)
        inter = as_interaction(model)
        pts = np.stack([x, xbar])
        expected = eta ** 2 * _pair_kernel(inter, pts)
        return CovariationEstimate(method, est, se, float(np.trace(dv)),
                                   float(np.sqrt(np.sum(np.diag(dse) ** 2))),
                                   replicates, expected)
    raise ValueError(f"unknown method {method!r}; expected smf, sme or sgd")


def sample_covariance(a, b):
    """Sample covariance of paired draws ``(R, d)`` with a plug-in standard error."""
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    prods = np.einsum("ri,rj->rij", ac, bc)
    n = a.shape[0]
    est = prods.sum(axis=0) / (n - 1)
    se = prods.std(axis=0, ddof=1) / np.sqrt(n)
    return est, se


def _pair_kernel(inter, pts):
    """A~ between the two tracked points under the measure they form."""
    g = inter.noise(pts, pts)                             # (2, K, d)
    return np.einsum("ki,kj,k->ij", g[0], g[1], inter.data.weights)


def particle_kernel(model, points):
    """A~(Gamma, z^p, z^q) for every particle pair, shape ``(M, M, d, d)``."""
    inter = as_interaction(model)
    pts = np.asarray(points, dtype=float)
    g = inter.noise(pts, pts)
    return np.einsum("pki,qkj,k->pqij", g, g, inter.data.weights)


def one_step_noise_covariance(method, model, x, y, eta, dt, replicates, seed):
    """E[dN(x) (x) dN(y)] for the martingale part of one SMF or SME step.

    Returns ``(estimate, se, expected)`` where expected is eta A~(x, y) dt
    (SMF) or eta Sigma^{1/2}(x) Sigma^{1/2}(y) dt (SME).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    gen = rngs.stream(seed, "noise-cov-" + method)
    state = initial_flow(np.stack([x, y]), eta, dt, replicates)
    stepper = SMFStepper(model) if method == "smf" else SMEStepper(model)
    _, noise = stepper.increments(state, stepper.draw(state, gen))
    est, se = _mean_se(np.einsum("ri,rj->rij", noise[:, 0], noise[:, 1]))
    if method == "smf":
        expected = eta * covariance_kernel(model, x, y) * dt
    else:
        expected = eta * sqrt_psd(sigma(model, x)) @ sqrt_psd(sigma(model, y)) * dt
    return est, se, expected


def one_step_sgd_covariance(model, points, eta, replicates, seed, p=0, q=1):
    """Covariance of particles ``p`` and ``q`` after one (interacting) SGD step.

    Returns ``(estimate, se, expected)`` with expected = eta^2 A~(Gamma, z^p, z^q).
    """
    inter = as_interaction(model)
    pts = np.asarray(points, dtype=float)
    gen = rngs.stream(seed, "sgd-cov")
    state = initial_chain(pts, eta, replicates)
    k = sample_data(inter.data, gen, replicates)
    z1 = interacting_sgd_step(inter, state, k).positions
    est, se = sample_covariance(z1[:, p], z1[:, q])
    expected = eta ** 2 * particle_kernel(inter, pts)[p, q]
    return est, se, expected
