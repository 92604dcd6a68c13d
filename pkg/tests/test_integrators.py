import math

import numpy as np
import pytest

from smflow import rng as rngs
from smflow.data_space import CylindricalIncrement, draw_cylindrical_increment, make_discrete_distribution
from smflow.integrators import (
    DDSMFStepper,
    FlowState,
    SMEStepper,
    SMFStepper,
    ddsmf_drift,
    ddsmf_step,
    initial_flow,
    integrate,
    sme_step,
    smf_step,
    step_count,
)
from smflow.loss_models import GradientInteraction, ScaleModel, ShiftModel, modified_drift
from smflow.measures import EmpiricalMeasure, wasserstein2
from smflow.meanfield_net import kernel_F, kernel_K, make_network

NET = make_network("tanh", atoms=[-1.0, 0.3, 1.5], labels=[0.5, -0.2, 0.8])
PTS3 = np.array([[0.4, -0.7, 0.2], [-0.3, 0.5, 0.9], [1.1, 0.2, -0.4]])


def test_flow_state_validation():
    with pytest.raises(ValueError):
        FlowState(np.zeros((1, 1)), 0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        FlowState(np.zeros((1, 1)), 0.0, 0.1, 0.2)


def test_step_count():
    assert step_count(1.0, 0.1) == 10
    assert step_count(0.0, 0.1) == 0
    with pytest.raises(ValueError):
        step_count(1.0, 0.3)


def test_single_atom_is_deterministic_euler():
    data = make_discrete_distribution([0.7])
    m = ShiftModel(data)
    s = initial_flow([[2.0]], 0.1, 0.01)
    inc = draw_cylindrical_increment(data, 0.01, rngs.stream(0, "a"))
    out = smf_step(m, s, inc)
    assert np.allclose(out.positions, 2.0 + 0.01 * modified_drift(m, 0.1, np.array([[2.0]])))


def test_zero_brownian_increment_is_pure_drift():
    m = ScaleModel()
    s = initial_flow([[1.5], [-0.5]], 0.1, 0.01, replicates=2)
    out = sme_step(m, s, np.zeros((2, 1)))
    assert np.allclose(out.positions, s.positions + 0.01 * modified_drift(m, 0.1, s.positions))


def test_shift_two_point_difference_is_deterministic():
    m = ShiftModel()
    s = initial_flow([[1.0], [-1.0]], 0.1, 0.002, replicates=100)
    final = integrate(SMFStepper(m), s, 0.1, rngs.stream(1, "d"))[-1][1]
    diff = final.positions[:, 0, 0] - final.positions[:, 1, 0]
    assert np.allclose(diff, diff[0], rtol=0, atol=1e-14)
    assert np.isclose(diff[0], 2.0 * (1 - 1.05 * 0.002) ** 50)


def test_shift_sme_equals_smf_under_matched_noise():
    m = ShiftModel()
    s = initial_flow([[0.8]], 0.1, 0.01, replicates=5)
    inc = draw_cylindrical_increment(m.data, 0.01, rngs.stream(2, "m"), 5)
    g = m.data.weights @ m.data.atoms - m.data.atoms       # G(theta_k) = -theta_k
    dw = np.einsum("rk,k,kd->rd", inc.per_atom, m.data.sqrt_weights, g)
    assert np.allclose(smf_step(m, s, inc).positions, sme_step(m, s, dw).positions, atol=1e-15)


@pytest.mark.parametrize("model", [ShiftModel(), ScaleModel()], ids=["shift", "scale"])
@pytest.mark.parametrize("cls", [SMFStepper, SMEStepper], ids=["smf", "sme"])
def test_one_step_noise_covariance(model, cls):
    from smflow.analysis.covariation import one_step_noise_covariance
    est, se, expected = one_step_noise_covariance(cls.method, model, [1.2], [-0.7], 0.1,
                                                  0.002, 100_000, 3)
    assert np.all(np.abs(est - expected) <= 5 * se)


def test_ddsmf_reduces_to_smf_for_gradient_model():
    m = ScaleModel()
    s = initial_flow([[1.0], [-0.4]], 0.1, 0.01, replicates=3)
    inc = draw_cylindrical_increment(m.data, 0.01, rngs.stream(4, "r"), 3)
    neg = CylindricalIncrement(-inc.per_atom, inc.dt)
    a = ddsmf_step(GradientInteraction(m), s, inc).positions
    b = smf_step(m, s, neg).positions
    assert np.allclose(a, b, atol=1e-14)


def test_ddsmf_single_particle_collapses():
    z = PTS3[:1]
    v = NET.drift(z, z)
    jac = NET.drift_jacobian(z, z)
    dv = NET.drift_measure_derivative(z, z, z)[0, 0]
    eta = 0.1
    expect = v[0] - 0.5 * eta * jac[0].T @ v[0] - 0.5 * eta * dv @ v[0]
    assert np.allclose(ddsmf_drift(NET, z, eta)[0], expect, atol=1e-14)


def _v_direct(net, nu, z):
    """V(nu, z) = grad F(z) - (1/N) sum_j grad_z K(z, x_j)."""
    _, gf = kernel_F(net, z)
    gk = np.mean([kernel_K(net, z, x)[1] for x in nu], axis=0)
    return gf - gk


def test_ddsmf_drift_matches_term_by_term_formula():
    eta, h = 0.1, 1e-6
    nu = PTS3
    for correction in ("consistent", "squared"):
        got = ddsmf_drift(NET, nu, eta, correction=correction)
        for p, z in enumerate(nu):
            v = _v_direct(NET, nu, z)
            sq = lambda y: float(np.sum(_v_direct(NET, nu, y) ** 2))
            grad_sq = np.array([(sq(z + h * e) - sq(z - h * e)) / (2 * h) for e in np.eye(3)])
            base = v - 0.25 * eta * grad_sq
            mixed = [kernel_K(NET, z, x)[2] for x in nu]          # [i, j] = d_{z_i} d_{x_j} K
            if correction == "consistent":
                corr = 0.5 * eta * np.mean([m @ _v_direct(NET, nu, x) for m, x in zip(mixed, nu)], 0)
            else:
                # -(eta/4) <D|V|^2, nu> with D V(z)(x) = -mixed(z, x)
                corr = 0.5 * eta * np.mean([m.T @ v for m in mixed], axis=0)
            assert np.allclose(got[p], base + corr, atol=1e-8)


def test_integrate_zero_horizon_and_errors():
    s = initial_flow([[1.0]], 0.1, 0.01)
    out = integrate(SMFStepper(ShiftModel()), s, 0.0, rngs.stream(0, "t0"), checkpoints=[0.0])
    assert out[0][1] is s
    with pytest.raises(ValueError):
        integrate(SMFStepper(ShiftModel()), s, 0.015, rngs.stream(0, "t0"))


def test_shift_smf_moments_at_horizon():
    eta, T, n_rep = 0.1, 1.0, 10 ** 6
    dt = eta / 50
    s = initial_flow([[1.0]], eta, dt, replicates=n_rep)
    final = integrate(SMFStepper(ShiftModel()), s, T, rngs.stream(5, "moments"))[-1][1]
    x = final.positions[:, 0, 0]
    assert np.isclose(math.exp(-1.05), 0.34994, atol=5e-6)
    # exact Euler mean of the linear drift, and the continuous-time mean
    assert abs(x.mean() - (1 - 1.05 * dt) ** 500) < 5 * x.std() / math.sqrt(n_rep)
    assert abs(x.mean() - math.exp(-1.05)) < 5 * x.std() / math.sqrt(n_rep)
    var = eta * (1 - math.exp(-2.1)) / 2.1
    assert np.isclose(var, 0.04179, atol=5e-6)
    var_se = x.var() * math.sqrt(2 / n_rep)
    bias = 1.05 * dt * var                      # Euler bias of the OU variance, O(dt)
    assert abs(x.var() - var) < 5 * var_se + bias


@pytest.mark.parametrize("model", [ShiftModel(), ScaleModel()], ids=["shift", "scale"])
def test_dt_refinement(model):
    eta, n_rep = 0.1, 100_000
    means = []
    for div in (50, 100):
        s = initial_flow([[1.0], [-0.5]], eta, eta / div, replicates=n_rep)
        x = integrate(SMFStepper(model), s, 0.5, rngs.stream(6, "refine", div))[-1][1].positions
        means.append((x.mean(axis=0), x.std(axis=0) / math.sqrt(n_rep)))
    (m1, s1), (m2, s2) = means
    assert np.all(np.abs(m1 - m2) < 3 * np.sqrt(s1 ** 2 + s2 ** 2))


def test_ddsmf_exchangeability():
    pts = np.random.default_rng(7).normal(size=(5, NET.dim))
    perm = np.array([3, 0, 4, 1, 2])
    stepper = DDSMFStepper(NET)
    a = integrate(stepper, initial_flow(pts, 0.05, 0.005, 2), 0.1, rngs.stream(8, "ex"))[-1][1]
    b = integrate(stepper, initial_flow(pts[perm], 0.05, 0.005, 2), 0.1, rngs.stream(8, "ex"))[-1][1]
    assert np.allclose(a.positions[:, perm], b.positions, atol=1e-13)


def test_ddsmf_continuity_in_initial_measure():
    pts = np.random.default_rng(9).normal(size=(6, NET.dim))
    direction = np.random.default_rng(10).normal(size=pts.shape)
    stepper = DDSMFStepper(NET)

    def endpoint(p):
        s = initial_flow(p, 0.05, 0.005, 1)
        return integrate(stepper, s, 0.5, rngs.stream(11, "cont"))[-1][1].positions[0]

    base = EmpiricalMeasure(endpoint(pts))
    gaps = [wasserstein2(base, EmpiricalMeasure(endpoint(pts + d * direction)))
            for d in (0.1, 0.05, 0.025)]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    # Lipschitz-type bound: the ratio gap / delta stays bounded
    ratios = np.array(gaps) / np.array([0.1, 0.05, 0.025])
    assert ratios.max() < 2 * ratios.min()


def test_fixed_point_noise_only():
    # labels realized by the network at nu: V = 0, so the drift vanishes
    nu = PTS3
    labels = NET.psi(nu).mean(axis=-3)
    net = make_network("tanh", atoms=[-1.0, 0.3, 1.5], labels=labels[:, 0])
    assert np.allclose(net.drift(nu, nu), 0.0, atol=1e-15)
    assert np.allclose(ddsmf_drift(net, nu, 0.1), 0.0, atol=1e-15)
