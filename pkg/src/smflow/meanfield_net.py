"""Mean-field coefficients of a shallow network trained with square loss.

The response of M neurons is f^M(z, theta) = (1/M) sum_i Psi(z^i, theta).
With F(z) = E[f . Psi(z)] and K(z, z') = E[Psi(z) . Psi(z')] the particle
drift and noise are

    V(nu, z)        = grad F(z) - int grad_z K(z, y) nu(dy)
    G(nu, z, theta) = r(theta) . grad Psi(z, theta) - E[ same ],
    r(theta)        = f(theta) - int Psi(y, theta) nu(dy).

Because K is a finite sum over atoms, every nu-integral reduces to the
per-atom feature means psi_bar_k = int Psi(y, theta_k) nu(dy), which keeps
the cost linear in the number of particles.

Measures are equal-weight point clouds of shape ``(..., N, d)``; query points
have shape ``(..., P, d)`` with matching leading axes.
"""

from dataclasses import dataclass

import numpy as np

from .data_space import make_discrete_distribution


class LinearFeature:
    """Psi(z, theta) = z . theta (scalar output, d = n0).  Unbounded; test use only."""

    name = "linear"
    out_dim = 1

    def __init__(self, n_inputs):
        self.dim = int(n_inputs)

    def features(self, z, atoms):
        # (..., P, K, 1)
        return np.einsum("...pd,kd->...pk", z, atoms)[..., None]

    def grad(self, z, atoms):
        # (..., P, K, 1, d)
        shape = z.shape[:-1] + atoms.shape
        return np.broadcast_to(atoms, shape)[..., None, :]

    def hess(self, z, atoms):
        shape = z.shape[:-1] + (atoms.shape[0], 1, self.dim, self.dim)
        return np.zeros(shape)


class TanhFeature:
    """Psi(z, theta) = c tanh(u . theta + b) with z = (c, u, b), c in R^k0."""

    name = "tanh"

    def __init__(self, n_inputs, out_dim=1):
        self.n_inputs = int(n_inputs)
        self.out_dim = int(out_dim)
        self.dim = self.out_dim + self.n_inputs + 1

    def _split(self, z):
        k0, n0 = self.out_dim, self.n_inputs
        return z[..., :k0], z[..., k0:k0 + n0], z[..., k0 + n0]

    def _pre(self, z, atoms):
        c, u, b = self._split(z)
        a = np.einsum("...pn,kn->...pk", u, atoms) + b[..., None]
        return c, np.tanh(a)

    def features(self, z, atoms):
        c, t = self._pre(z, atoms)
        return t[..., None] * c[..., None, :]

    def grad(self, z, atoms):
        k0, n0 = self.out_dim, self.n_inputs
        c, t = self._pre(z, atoms)
        dphi = 1.0 - t * t
        shape = t.shape + (k0, self.dim)
        g = np.zeros(shape)
        idx = np.arange(k0)
        g[..., idx, idx] = t[..., None]
        # d/du and d/db of c_o phi(a)
        cd = c[..., None, :] * dphi[..., None]              # (..., P, K, k0)
        g[..., k0:k0 + n0] = cd[..., None] * atoms[:, None, :]
        g[..., k0 + n0] = cd
        return g

    def hess(self, z, atoms):
        k0, n0 = self.out_dim, self.n_inputs
        c, t = self._pre(z, atoms)
        dphi = 1.0 - t * t
        ddphi = -2.0 * t * dphi
        # augmented input (theta, 1) for the (u, b) block
        xa = np.concatenate([atoms, np.ones((atoms.shape[0], 1))], axis=1)
        h = np.zeros(t.shape + (k0, self.dim, self.dim))
        cross = dphi[..., None] * xa                         # (..., P, K, n0+1)
        for o in range(k0):
            h[..., o, o, k0:] = cross
            h[..., o, k0:, o] = cross
        inner = (c[..., None, :] * ddphi[..., None])[..., None, None] \
            * (xa[:, :, None] * xa[:, None, :])[:, None]     # (..., P, K, k0, n0+1, n0+1)
        h[..., k0:, k0:] += inner
        return h


FEATURES = {"linear": LinearFeature, "tanh": TanhFeature}


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Feature map, labels ``(K, k0)`` and the data distribution."""

    feature: object
    labels: np.ndarray
    data: object

    @property
    def dim(self):
        return self.feature.dim

    # -- per-atom building blocks -------------------------------------------
    def psi(self, z):
        return self.feature.features(np.asarray(z, dtype=float), self.data.atoms)

    def grad_psi(self, z):
        return self.feature.grad(np.asarray(z, dtype=float), self.data.atoms)

    def hess_psi(self, z):
        return self.feature.hess(np.asarray(z, dtype=float), self.data.atoms)

    def feature_means(self, nu):
        """psi_bar_k = int Psi(y, theta_k) nu(dy), shape ``(..., K, k0)``."""
        return self.psi(nu).mean(axis=-3)

    def residuals(self, nu):
        """r_k = f(theta_k) - psi_bar_k, shape ``(..., K, k0)``."""
        return self.labels - self.feature_means(nu)

    # -- interaction interface used by the chain, flows and generator ---------
    def drift(self, nu, z):
        r = self.residuals(nu)
        return np.einsum("...ko,...pkod,k->...pd", r, self.grad_psi(z), self.data.weights)

    def drift_jacobian(self, nu, z):
        r = self.residuals(nu)
        return np.einsum("...ko,...pkoij,k->...pij", r, self.hess_psi(z), self.data.weights)

    def drift_measure_derivative(self, nu, z, x):
        """Lions derivative of V(., z) at x: ``[..., p, q, i, j] = dV_i(z)/dx_j``."""
        gz = self.grad_psi(z)
        gx = self.grad_psi(x)
        return -np.einsum("...pkoi,...qkoj,k->...pqij", gz, gx, self.data.weights)

    def noise(self, nu, z):
        r = self.residuals(nu)
        raw = np.einsum("...ko,...pkod->...pkd", r, self.grad_psi(z))
        mean = np.einsum("...pkd,k->...pd", raw, self.data.weights)
        return raw - mean[..., None, :]

    def lions_correction(self, nu, z, eta):
        # factored form of lions_correction(): the x-integral goes through
        # per-atom averages, so the cost is linear in the number of particles
        v = self.drift(nu, nu)
        gx = np.einsum("...qkoj,...qj->...ko", self.grad_psi(nu), v) / nu.shape[-2]
        return 0.5 * eta * np.einsum("...pkoi,...ko,k->...pi", self.grad_psi(z), gx,
                                     self.data.weights)

    def risk(self, nu):
        """C_f - <F, nu> + <K, nu x nu>/2, which is E_theta |f - f^M|^2 / 2."""
        r = self.residuals(nu)
        return 0.5 * np.einsum("...ko,...ko,k->...", r, r, self.data.weights)

    def label_constant(self):
        """C_f = E|f(theta)|^2 / 2."""
        return 0.5 * float(np.einsum("ko,ko,k->", self.labels, self.labels, self.data.weights))


def make_network(feature="tanh", atoms=None, weights=None, labels=None, out_dim=1):
    data = make_discrete_distribution(atoms if atoms is not None else [-1.0, 1.0], weights)
    n0 = data.atoms.shape[1]
    if feature == "linear":
        if out_dim != 1:
            raise ValueError("the linear feature map has scalar output")
        feat = LinearFeature(n0)
    elif feature == "tanh":
        feat = TanhFeature(n0, out_dim)
    else:
        raise ValueError(f"unknown feature map {feature!r}; available: {sorted(FEATURES)}")
    if labels is None:
        labels = data.atoms[:, :1] if out_dim == 1 else np.zeros((data.size, out_dim))
    labels = np.asarray(labels, dtype=float).reshape(data.size, feat.out_dim)
    labels.setflags(write=False)
    return NetworkModel(feat, labels, data)


# -- named operations -----------------------------------------------------------

def kernel_F(net, z):
    """F(z) and grad F(z)."""
    z = np.asarray(z, dtype=float)
    w = net.data.weights
    val = np.einsum("ko,...ko,k->...", net.labels, net.psi(z[..., None, :])[..., 0, :, :], w)
    grad = np.einsum("ko,...kod,k->...d", net.labels, net.grad_psi(z[..., None, :])[..., 0, :, :, :], w)
    return val, grad


def kernel_K(net, z, zp):
    """K(z, z'), grad_z K(z, z') and the mixed derivative ``[i, j] = d_{z_i} d_{z'_j} K``."""
    z = np.asarray(z, dtype=float)[..., None, :]
    zp = np.asarray(zp, dtype=float)[..., None, :]
    w = net.data.weights
    pz, pzp = net.psi(z)[..., 0, :, :], net.psi(zp)[..., 0, :, :]
    gz, gzp = net.grad_psi(z)[..., 0, :, :, :], net.grad_psi(zp)[..., 0, :, :, :]
    val = np.einsum("...ko,...ko,k->...", pz, pzp, w)
    grad_z = np.einsum("...koi,...ko,k->...i", gz, pzp, w)
    mixed = np.einsum("...koi,...koj,k->...ij", gz, gzp, w)
    return val, grad_z, mixed


def drift_V(net, nu, z):
    return net.drift(nu, z)


def noise_G(net, nu, z, atom_index):
    g = net.noise(nu, z)
    return g[..., atom_index, :]


def lions_correction(model, nu, z, eta):
    """Measure-derivative part of the modified drift at the query points ``z``.

    -(eta/2) int D V(nu, z)(x) V(nu, x) nu(dx), where D V(nu, z)(x) is the
    Lions derivative of nu -> V(nu, z) at x.  For the network this is
    +(eta/2) int grad_x grad_z K(z, x) V(nu, x) nu(dx).  It is the term that
    makes the one-step generator expansion match SGD to O(eta^3); see
    :func:`squared_drift_lions_term` for the form with V evaluated at z.
    """
    v = model.drift(nu, nu)                                        # (..., N, d)
    dv = model.drift_measure_derivative(nu, z, nu)                 # (..., P, N, d, d)
    return -0.5 * eta * np.einsum("...pqij,...qj->...pi", dv, v) / nu.shape[-2]


def squared_drift_lions_term(model, nu, z, eta):
    """-(eta/4) <D|V(nu, z)|^2, nu>, computed with the exact Lions derivative.

    D|V(nu, z)|^2 (x) = 2 (D V(nu, z)(x))^T V(nu, z).  Kept for comparison;
    the flows use :func:`lions_correction` unless asked otherwise.
    """
    v = model.drift(nu, z)
    dv = model.drift_measure_derivative(nu, z, nu).mean(axis=-3)   # (..., P, d, d)
    return -0.5 * eta * np.einsum("...pij,...pi->...pj", dv, v)


class FullNetworkLoss:
    """R~(z, theta) = |f(theta) - f^M(z, theta)|^2 / 2 on the stacked parameters.

    This is the plain (non mean-field) loss on R^{M d}; SGD on it with
    learning rate M*eta is the interacting particle chain with rate eta.
    """

    def __init__(self, net, n_particles):
        self.net = net
        self.M = int(n_particles)
        self.data = net.data
        self.dim = self.M * net.dim

    def pointwise_grads(self, z):
        z = np.asarray(z, dtype=float)
        pts = z.reshape(z.shape[:-1] + (self.M, self.net.dim))
        fm = self.net.psi(pts).mean(axis=-3)                    # (..., K, k0)
        resid = self.net.labels - fm
        g = -np.einsum("...ko,...mkod->...kmd", resid, self.net.grad_psi(pts)) / self.M
        return g.reshape(g.shape[:-2] + (self.dim,))

    def grad_risk(self, z):
        return np.einsum("...kd,k->...d", self.pointwise_grads(z), self.data.weights)
