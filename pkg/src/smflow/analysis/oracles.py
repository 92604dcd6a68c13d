"""Closed forms for the shift model R~(z, theta) = (z - theta)^2 / 2, theta = +-1."""

import math


def _steps(eta, T):
    n = round(T / eta)
    if not math.isclose(T / eta, n, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"T={T} is not an integer multiple of eta={eta}")
    return n


def closed_form_linear_oracle(eta, T, x, first_order=False):
    """Mean and variance of SGD and of the SMF (one-dimensional OU) at time T.

    SGD:  Z_{n+1} = (1 - eta) Z_n + eta theta_n,   n = T / eta steps.
    SMF:  dX = -(1 + eta/2) X dt + sqrt(eta) dW;   ``first_order`` drops eta/2.
    """
    n = _steps(eta, T)
    sgd_mean = (1.0 - eta) ** n * x
    sgd_var = eta * (1.0 - (1.0 - eta) ** (2 * n)) / (2.0 - eta)
    rate = 1.0 if first_order else 1.0 + eta / 2.0
    smf_mean = x * math.exp(-rate * T)
    smf_var = eta * (1.0 - math.exp(-2.0 * rate * T)) / (2.0 * rate)
    return sgd_mean, sgd_var, smf_mean, smf_var


def closed_form_mean_error(eta, T, x, first_order=False):
    """|E X_T - E Z_n| for Phi = mean; both expectations are exact."""
    sgd_mean, _, smf_mean, _ = closed_form_linear_oracle(eta, T, x, first_order)
    return abs(smf_mean - sgd_mean)
