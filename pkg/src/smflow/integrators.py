"""Euler-Maruyama integrators for the SME, the SMF and the distribution-dependent SMF.

All steppers move a whole ensemble ``(R, M, d)`` under noise shared by the M
points of a replicate: the cylindrical increment (SMF, DDSMF) has shape
``(R, K)`` and the SME Brownian increment has shape ``(R, d)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data_space import draw_cylindrical_increment, noise_integral
from .loss_models import as_interaction, modified_drift, noise_field_all, sigma, sqrt_psd
from .meanfield_net import squared_drift_lions_term

STEP_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class FlowState:
    positions: np.ndarray
    t: float
    eta: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > self.eta * (1 + STEP_RTOL):
            raise ValueError(f"dt={self.dt} is coarser than one SGD step eta={self.eta}")


def initial_flow(points, eta, dt, replicates=None):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if replicates is not None:
        pts = np.broadcast_to(pts, (replicates,) + pts.shape[-2:]).copy()
    return FlowState(pts, 0.0, float(eta), float(dt))


def _advance(state, positions):
    if not np.all(np.isfinite(positions)):
        raise FloatingPointError("integrator produced non-finite positions")
    return FlowState(positions, state.t + state.dt, state.eta, state.dt)


# -- SMF -------------------------------------------------------------------------

def smf_increments(model, state, inc, first_order=False):
    """Drift and noise parts of one SMF step, each shaped like the positions."""
    if not math.isclose(inc.dt, state.dt, rel_tol=STEP_RTOL):
        raise ValueError("increment dt does not match the state dt")
    x = state.positions
    drift = modified_drift(model, state.eta, x, first_order) * state.dt
    g = noise_field_all(model, x)                       # (..., M, K, d)
    noise = math.sqrt(state.eta) * noise_integral(model.data, g, inc)
    return drift, noise


def smf_step(model, state, inc, first_order=False):
    drift, noise = smf_increments(model, state, inc, first_order)
    return _advance(state, state.positions + drift + noise)


# -- SME -------------------------------------------------------------------------

def sme_increments(model, state, dw, first_order=False):
    """``dw`` is a d-dimensional N(0, dt) draw per replicate, shared by all points."""
    x = state.positions
    drift = modified_drift(model, state.eta, x, first_order) * state.dt
    root = sqrt_psd(sigma(model, x))                    # (..., M, d, d)
    dw = np.asarray(dw, dtype=float)
    noise = math.sqrt(state.eta) * np.einsum("...mij,...j->...mi", root, dw)
    return drift, noise


def sme_step(model, state, dw, first_order=False):
    drift, noise = sme_increments(model, state, dw, first_order)
    return _advance(state, state.positions + drift + noise)


# -- DDSMF -----------------------------------------------------------------------

def ddsmf_drift(model, x, eta, first_order=False, correction="consistent"):
    """V - (eta/4) grad|V|^2 plus the measure-derivative correction, with Lambda = x."""
    v = model.drift(x, x)
    if first_order:
        return v
    jac = model.drift_jacobian(x, x)
    out = v - 0.5 * eta * np.einsum("...pij,...pi->...pj", jac, v)
    if correction == "consistent":
        out = out + model.lions_correction(x, x, eta)
    elif correction == "squared":
        out = out + squared_drift_lions_term(model, x, x, eta)
    elif correction != "none":
        raise ValueError(f"unknown correction {correction!r}")
    return out


def ddsmf_increments(model, state, inc, first_order=False, correction="consistent"):
    model = as_interaction(model)
    x = state.positions
    drift = ddsmf_drift(model, x, state.eta, first_order, correction) * state.dt
    g = model.noise(x, x)
    noise = math.sqrt(state.eta) * noise_integral(model.data, g, inc)
    return drift, noise


def ddsmf_step(model, state, inc, first_order=False, correction="consistent"):
    drift, noise = ddsmf_increments(model, state, inc, first_order, correction)
    return _advance(state, state.positions + drift + noise)


# -- steppers and the driver -------------------------------------------------------

class SMFStepper:
    method = "smf"

    def __init__(self, model, first_order=False):
        self.model = model
        self.first_order = first_order

    def draw(self, state, rng):
        return draw_cylindrical_increment(self.model.data, state.dt, rng,
                                          state.positions.shape[:-2])

    def increments(self, state, noise):
        return smf_increments(self.model, state, noise, self.first_order)

    def __call__(self, state, noise):
        drift, dn = self.increments(state, noise)
        return _advance(state, state.positions + drift + dn)


class SMEStepper(SMFStepper):
    method = "sme"

    def draw(self, state, rng):
        shape = state.positions.shape[:-2] + (state.positions.shape[-1],)
        return math.sqrt(state.dt) * rng.standard_normal(shape)

    def increments(self, state, noise):
        return sme_increments(self.model, state, noise, self.first_order)


class DDSMFStepper(SMFStepper):
    method = "ddsmf"

    def __init__(self, model, first_order=False, correction="consistent"):
        super().__init__(as_interaction(model), first_order)
        self.correction = correction

    def increments(self, state, noise):
        return ddsmf_increments(self.model, state, noise, self.first_order, self.correction)


STEPPERS = {"smf": SMFStepper, "sme": SMEStepper, "ddsmf": DDSMFStepper}


def step_count(horizon, dt):
    """Number of steps of size ``dt`` in ``horizon``; errors unless dt divides it."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    ratio = horizon / dt
    n = round(ratio)
    if not math.isclose(ratio, n, rel_tol=STEP_RTOL, abs_tol=STEP_RTOL):
        raise ValueError(f"dt={dt} does not divide T={horizon}")
    return int(n)


def integrate(stepper, initial, horizon, rng, checkpoints=None):
    """Apply ``T/dt`` steps; returns ``[(step, state), ...]`` at checkpoint steps."""
    n = step_count(horizon, initial.dt)
    wanted = {n} if checkpoints is None else {step_count(c, initial.dt) for c in checkpoints}
    state = initial
    out = [(0, state)] if 0 in wanted else []
    for i in range(n):
        state = stepper(state, stepper.draw(state, rng))
        state = FlowState(state.positions, initial.t + (i + 1) * initial.dt,
                          state.eta, state.dt)
        if i + 1 in wanted:
            out.append((i + 1, state))
    return out
