import math

import numpy as np
import pytest

from smflow.analysis.covariation import (
    one_step_sgd_covariance,
    particle_kernel,
    two_point_covariation,
)
from smflow.analysis.generator import (
    generator_pieces,
    generator_residual_curve,
    one_step_generator_residual,
    one_step_semigroup,
)
from smflow.analysis.meanfield import meanfield_gap, subsampled_w2
from smflow.analysis.oracles import closed_form_linear_oracle, closed_form_mean_error
from smflow.analysis.weak_error import (
    WeakErrorCurve,
    WeakErrorSetup,
    closed_form_curve,
    fit_order,
    monte_carlo_curve,
)
from smflow import rng as rngs
from smflow.data_space import make_discrete_distribution
from smflow.loss_models import ScaleModel, ShiftModel
from smflow.measures import CylindricalFunctional, Gaussian, Linear, Quadratic, Sine, functional_from_spec
from smflow.meanfield_net import make_network

ETAS = [0.1, 0.05, 0.025, 0.0125]


# -- closed forms and order fitting ---------------------------------------------

def test_oracle_examples():
    sm, sv, fm, fv = closed_form_linear_oracle(0.1, 1.0, 1.0)
    assert np.isclose(sm, 0.9 ** 10) and np.isclose(sm, 0.348678, atol=5e-7)
    assert np.isclose(fm, math.exp(-1.05)) and np.isclose(fm, 0.349938, atol=5e-7)
    assert np.isclose(sv, 0.1 * (1 - 0.9 ** 20) / 1.9)
    assert np.isclose(fv, 0.1 * (1 - math.exp(-2.1)) / 2.1)
    sm0, _, fm0, _ = closed_form_linear_oracle(0.1, 1.0, 0.0)
    assert sm0 == 0.0 and fm0 == 0.0
    with pytest.raises(ValueError):
        closed_form_linear_oracle(0.3, 1.0, 1.0)


def test_oracle_matches_recursions():
    # mean and variance recursions of z <- (1 - eta) z + eta theta
    eta, n = 0.05, 20
    m, v = 1.0, 0.0
    for _ in range(n):
        m, v = (1 - eta) * m, (1 - eta) ** 2 * v + eta ** 2
    sm, sv, _, _ = closed_form_linear_oracle(eta, n * eta, 1.0)
    assert np.isclose(sm, m, rtol=1e-13) and np.isclose(sv, v, rtol=1e-12)


def test_closed_form_error_values():
    assert abs(closed_form_mean_error(0.1, 1.0, 1.0) - 1.259e-3) < 1e-6
    # computed directly from the two closed forms
    direct = abs(math.exp(-1.025) - 0.95 ** 20)
    assert closed_form_mean_error(0.05, 1.0, 1.0) == pytest.approx(direct, rel=1e-12)
    assert abs(direct - 3.1054e-4) < 1e-8


def test_closed_form_orders():
    slope, half = fit_order(closed_form_curve(ETAS))
    assert 1.9 <= slope <= 2.1 and half < 0.1
    slope1, _ = fit_order(closed_form_curve(ETAS, first_order=True))
    assert 0.9 <= slope1 <= 1.1


def test_fit_order_synthetic():
    etas = np.array(ETAS)
    assert fit_order((etas, 3 * etas ** 2)) == pytest.approx((2.0, 0.0), abs=1e-12)
    assert fit_order((etas, 0.5 * etas))[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_order((etas[:2], etas[:2] ** 2))


def test_weak_error_curve_invariants():
    with pytest.raises(ValueError):
        WeakErrorCurve([0.05, 0.1], [1.0, 1.0], [0.0, 0.0], "x")
    with pytest.raises(ValueError):
        WeakErrorCurve([0.1, 0.05], [1.0, -1.0], [0.0, 0.0], "x")
    c = WeakErrorCurve([0.1, 0.05, 0.025], [1.0, 0.1, 0.01], [0.1, 0.1, 0.1], "x").flag_noise(3.0)
    assert c.noise_dominated.tolist() == [False, True, True]
    rows = list(c.rows())
    assert rows[1]["noise_dominated"] and rows[0]["eta"] == 0.1


def test_noise_dominated_curve_refuses_fit():
    c = WeakErrorCurve([0.1, 0.05, 0.025], [0.01, 0.01, 0.01], [1.0, 1.0, 1.0], "x").flag_noise(3.0)
    with pytest.raises(ValueError):
        fit_order(c)


def _mc_setup(phi, flow="smf"):
    return WeakErrorSetup(model=ShiftModel(), phi=phi, points=np.array([[10.0]]), T=1.0,
                          dt_divisor=100, flow=flow, seed=3)


def test_constant_functional_zero_error():
    const = CylindricalFunctional((Linear([0.0], 2.0),), Quadratic([1.0]))
    curve = monte_carlo_curve(_mc_setup(const), [0.5, 0.25], 1000)
    assert np.all(curve.errors == 0)


def test_monte_carlo_agrees_with_closed_form():
    mean = functional_from_spec("mean", 1)
    etas = [0.5, 0.25]
    curve = monte_carlo_curve(_mc_setup(mean), etas, 20_000, block_size=5000)
    for i, eta in enumerate(etas):
        sm, sv, fm, fv = closed_form_linear_oracle(eta, 1.0, 10.0)
        se_s = math.sqrt(sv / 20_000)
        assert abs(curve.sgd_means[i] - sm) < 5 * se_s
        # flow mean: statistical error plus the O(dt) Euler bias at dt = eta / 100
        assert abs(curve.flow_means[i] - fm) < 5 * math.sqrt(fv / 20_000) + 0.02 * eta * 10


def test_monte_carlo_worker_independent():
    mean = functional_from_spec("mean", 1)
    a = monte_carlo_curve(_mc_setup(mean), [0.5, 0.25], 3000, block_size=1000, workers=1)
    b = monte_carlo_curve(_mc_setup(mean), [0.5, 0.25], 3000, block_size=1000, workers=2)
    assert np.array_equal(a.errors, b.errors) and np.array_equal(a.standard_errors, b.standard_errors)


# -- generator expansion ----------------------------------------------------------

PHI = CylindricalFunctional((Sine([1.3], 0.2), Gaussian([0.1], 0.8)),
                            Quadratic([0.7, -0.4], [[1.0, 0.3], [0.3, 0.5]]))
MU = np.array([[0.5], [-0.3]])
GEN_ETAS = [0.2, 0.1, 0.05, 0.025]


def test_generator_constant_functional():
    const = CylindricalFunctional((Linear([0.0], 1.5),), Quadratic([2.0]))
    for eta in GEN_ETAS:
        p = generator_pieces(const, MU, ShiftModel(), eta)
        assert p.L1 == 0.0 and p.L2 == 0.0 and p.L1_squared == 0.0
        assert one_step_generator_residual(const, MU, ShiftModel(), eta) == 0.0


class Frozen:
    """V = 0 and G = 0."""

    def __init__(self, data, dim):
        self.data, self.dim = data, dim

    def drift(self, nu, z):
        return np.zeros(np.shape(z))

    def drift_jacobian(self, nu, z):
        return np.zeros(np.shape(z) + (self.dim,))

    def drift_measure_derivative(self, nu, z, x):
        return np.zeros(np.shape(z)[:-1] + (np.shape(x)[-2], self.dim, self.dim))

    def noise(self, nu, z):
        return np.zeros(np.shape(z)[:-1] + (self.data.size, self.dim))

    def lions_correction(self, nu, z, eta):
        return np.zeros(np.shape(z))


def test_generator_frozen_dynamics():
    m = Frozen(make_discrete_distribution([-1.0, 1.0]), 1)
    for eta in GEN_ETAS:
        assert one_step_semigroup(PHI, MU, m, eta) == PHI.value(MU)
        assert one_step_generator_residual(PHI, MU, m, eta) == 0.0


def test_generator_exact_for_quadratic_phi():
    # h(u) = u^2 with phi = x: S Phi is a polynomial of degree 2 in eta, matched exactly
    sq = functional_from_spec("mean_square", 1)
    _, res = generator_residual_curve(sq, MU, ShiftModel(), GEN_ETAS)
    assert np.all(res < 1e-14)


def test_generator_residual_order_shift():
    etas, res = generator_residual_curve(PHI, MU, ShiftModel(), GEN_ETAS)
    slope, _ = fit_order((etas, res))
    assert slope >= 2.7


def test_generator_residual_order_scale():
    # the step z(1 - eta theta) with theta = 2 is pre-asymptotic at eta = 0.2
    etas, res = generator_residual_curve(PHI, np.array([[0.8], [-0.4], [1.1]]), ScaleModel(),
                                         [0.1, 0.05, 0.025, 0.0125])
    assert fit_order((etas, res))[0] >= 2.7


def test_generator_residual_order_network():
    net = make_network("tanh", atoms=[-1.0, 0.3, 1.5], labels=[0.5, -0.2, 0.8])
    pts = np.random.default_rng(0).normal(size=(4, net.dim))
    phi = CylindricalFunctional((Sine([0.9, -0.4, 0.6], 0.1), Gaussian([0.0, 0.2, -0.1], 1.2)),
                                Quadratic([0.5, 0.8], [[0.6, -0.2], [-0.2, 1.1]]))
    etas, res = generator_residual_curve(phi, pts, net, GEN_ETAS)
    assert fit_order((etas, res))[0] >= 2.7


def test_semigroup_is_exact_expectation():
    eta = 0.1
    atoms = ShiftModel().data.atoms[:, 0]
    moved = [MU[:, 0] - eta * (MU[:, 0] - t) for t in atoms]
    expect = 0.5 * sum(PHI.value(p[:, None]) for p in moved)
    assert np.isclose(one_step_semigroup(PHI, MU, ShiftModel(), eta), expect, rtol=1e-14)


# -- two-point statistics -----------------------------------------------------------

def test_zero_replicates_rejected():
    with pytest.raises(ValueError):
        two_point_covariation("smf", ScaleModel(), 1.0, -1.0, 0.1, 0, seed=0)


def test_scale_model_signs():
    smf = two_point_covariation("smf", ScaleModel(), 1.0, -1.0, 0.1, 100_000, seed=1, window=1)
    sme = two_point_covariation("sme", ScaleModel(), 1.0, -1.0, 0.1, 100_000, seed=1, window=1)
    assert smf.estimate[0, 0] + 5 * smf.standard_error[0, 0] < 0
    assert sme.estimate[0, 0] - 5 * sme.standard_error[0, 0] > 0
    assert np.isclose(smf.expected[0, 0], -0.1) and np.isclose(sme.expected[0, 0], 0.1)
    for est in (smf, sme):
        assert abs(est.estimate[0, 0] - est.expected[0, 0]) < 5 * est.standard_error[0, 0]


def test_sgd_scale_covariance():
    est = two_point_covariation("sgd", ScaleModel(), 1.0, -1.0, 0.1, 100_000, seed=2)
    assert np.isclose(est.expected[0, 0], -0.01)
    assert abs(est.estimate[0, 0] + 0.01) < 5 * est.standard_error[0, 0]


def test_shift_model_all_methods_agree():
    for method, rate in (("smf", 0.1), ("sme", 0.1), ("sgd", 0.01)):
        est = two_point_covariation(method, ShiftModel(), 1.0, -1.0, 0.1, 50_000, seed=3)
        assert np.isclose(est.expected[0, 0], rate)
        assert abs(est.estimate[0, 0] - rate) < 5 * est.standard_error[0, 0]
    smf = two_point_covariation("smf", ShiftModel(), 1.0, -1.0, 0.1, 50_000, seed=3, window=5)
    assert smf.difference_qv == 0.0


@pytest.mark.parametrize("model", [ShiftModel(), ScaleModel(),
                                   make_network("linear", atoms=[-1.0, 0.5, 2.0])],
                         ids=["shift", "scale", "linear-net"])
def test_sgd_one_step_covariance(model):
    pts = np.array([[0.8], [-0.5]])
    est, se, expected = one_step_sgd_covariance(model, pts, 0.1, 100_000, 4)
    assert np.all(np.abs(est - expected) <= 5 * se)


def test_sgd_one_step_covariance_tanh_network():
    net = make_network("tanh", atoms=[-1.0, 0.3, 1.5], labels=[0.5, -0.2, 0.8])
    pts = np.random.default_rng(1).normal(size=(3, net.dim))
    est, se, expected = one_step_sgd_covariance(net, pts, 0.1, 100_000, 5, p=0, q=2)
    assert np.all(np.abs(est - expected) <= 5 * se + 1e-15)
    assert particle_kernel(net, pts).shape == (3, 3, net.dim, net.dim)


# -- mean-field gap ------------------------------------------------------------------

def test_subsampled_w2_equal_sizes_is_exact():
    a = np.array([[0.0], [1.0]])
    b = np.array([[0.5], [2.0]])
    assert np.isclose(subsampled_w2(a, b, rngs.stream(0, "s")), math.sqrt(0.625))


def test_meanfield_validation():
    net = make_network("linear", atoms=[-1.0, 0.5, 2.0])
    with pytest.raises(ValueError):
        meanfield_gap(net, [32, 8], 0.05, 0.5, 2, seed=0)
    with pytest.raises(ValueError):
        meanfield_gap(net, [8, 64], 0.05, 0.5, 2, seed=0, M_ref=128)


def test_meanfield_frozen_dynamics_is_sampling_gap():
    frozen = Frozen(make_discrete_distribution([-1.0, 1.0]), 1)
    gap = meanfield_gap(frozen, [4, 16], 0.1, 0.2, 3, seed=5, M_ref=64, dt_divisor=10)
    # both clouds stay at their i.i.d. initial samples; recompute the gap by hand
    from smflow.analysis.meanfield import gaussian_initial
    for s in range(3):
        ref = gaussian_initial(rngs.stream(5, "mf-ref-init", s), 64, 1)
        for j, M in enumerate([4, 16]):
            init = gaussian_initial(rngs.stream(5, "mf-init", s, M), M, 1)
            expect = subsampled_w2(init, ref, rngs.stream(5, "mf-sub", s, M))
            assert gap.gaps[s, j] == expect


def test_meanfield_trend_small():
    net = make_network("linear", atoms=[-1.0, 0.5, 2.0])
    gap = meanfield_gap(net, [4, 16, 64], 0.05, 0.25, 8, seed=9, M_ref=256)
    assert gap.strictly_decreasing()
    assert len(list(gap.rows())) == 3
