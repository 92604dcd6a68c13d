"""Brute-force check of the one-step generator expansion.

Over a finite data space the one-step SGD semigroup is an exact finite sum,

    S Phi(mu) = sum_k w_k Phi(mu o Y_k^{-1}),  Y_k(y) = y + eta V(mu, y) + eta G(mu, y, theta_k),

and it must agree with Phi + eta L1 Phi + eta^2 (L2 + L1^2 / 2) Phi up to
O(eta^3), where L1 and L2 are built from the coefficients of the modified flow.
L1^2 is obtained by differentiating the functional nu -> L1 Phi(nu) once
more (chain rule through V, D Phi and the measure argument of both).
"""

from dataclasses import dataclass

import numpy as np

from ..loss_models import as_interaction


@dataclass
class GeneratorPieces:
    phi: float
    s_phi: float
    L1: float
    L2: float
    L1_squared: float

    def expansion(self, eta):
        return self.phi + eta * self.L1 + eta ** 2 * (self.L2 + 0.5 * self.L1_squared)


def one_step_semigroup(phi, points, model, eta):
    """Exact S Phi(mu) for the empirical measure on ``points`` (N, d)."""
    m = as_interaction(model)
    pts = np.asarray(points, dtype=float)
    v = m.drift(pts, pts)                       # (N, d)
    g = m.noise(pts, pts)                       # (N, K, d)
    moved = pts[None] + eta * (v[None] + np.moveaxis(g, 1, 0))   # (K, N, d)
    return float(np.dot(m.data.weights, phi.value(moved)))


def generator_pieces(phi, points, model, eta):
    m = as_interaction(model)
    x = np.asarray(points, dtype=float)
    w = m.data.weights

    D, gradD, D2 = phi.derivatives(x)           # (N,d) (N,d,d) (N,N,d,d)
    v = m.drift(x, x)                           # (N, d)
    jac = m.drift_jacobian(x, x)                # (N, d, d)  [p, i, j] = dV_i/dz_j
    dv_mu = m.drift_measure_derivative(x, x, x)  # (N, N, d, d) [p, q, i, j]
    g = m.noise(x, x)                           # (N, K, d)

    a_tilde = np.einsum("pki,qkj,k->pqij", g, g, w)
    a_diag = np.einsum("pki,pkj,k->pij", g, g, w)

    L1 = np.mean(np.einsum("pd,pd->p", v, D))

    # first-order part of the modified drift, divided by eta
    corr = -0.5 * np.einsum("pij,pi->pj", jac, v) + m.lions_correction(x, x, eta) / eta
    L2 = (0.5 * np.mean(np.einsum("pqij,pqij->pq", a_tilde, D2))
          + 0.5 * np.mean(np.einsum("pij,pij->p", a_diag, gradD))
          + np.mean(np.einsum("pd,pd->p", corr, D)))

    # D[L1 Phi](x_q), shape (N, d)
    dl1 = (np.einsum("qij,qi->qj", jac, D)
           + np.einsum("qij,qi->qj", gradD, v)
           + np.einsum("pqij,pi->qj", dv_mu, D) / len(x)
           + np.einsum("pqij,pi->qj", D2, v) / len(x))
    L1sq = np.mean(np.einsum("qj,qj->q", v, dl1))

    return GeneratorPieces(
        phi=float(phi.value(x)),
        s_phi=one_step_semigroup(phi, x, model, eta),
        L1=float(L1), L2=float(L2), L1_squared=float(L1sq))


def one_step_generator_residual(phi, points, model, eta):
    """|S Phi(mu) - [Phi + eta L1 Phi + eta^2 (L2 + L1^2/2) Phi]|."""
    pieces = generator_pieces(phi, points, model, eta)
    return abs(pieces.s_phi - pieces.expansion(eta))


def generator_residual_curve(phi, points, model, etas):
    etas = np.asarray(etas, dtype=float)
    res = np.array([one_step_generator_residual(phi, points, model, e) for e in etas])
    return etas, res
