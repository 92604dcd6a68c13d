"""Loss oracles for the non-interacting setting and the fields derived from them.

Every model works on arrays of points with shape ``(..., d)``.  The central
method is :meth:`LossModel.pointwise_grads`, which returns the per-atom
gradients with shape ``(..., K, d)``; everything else (risk gradient, noise
field G, covariance kernel, modified drift) is built on top of it.
"""

import numpy as np

from .data_space import make_discrete_distribution

PSD_TOL = 1e-10
SYM_TOL = 1e-10


class LossModel:
    """Base class.  Subclasses implement ``pointwise_grads``.

    ``hessian_vec`` defaults to central differences of ``grad_risk`` with
    step ``1e-5 * (1 + |z|)``; the built-in models override it analytically.
    """

    name = "custom"

    def __init__(self, data, dim):
        self.data = data
        self.dim = int(dim)

    def pointwise_grads(self, z):
        raise NotImplementedError

    def grad_risk(self, z):
        return np.einsum("...kd,k->...d", self.pointwise_grads(z), self.data.weights)

    def hessian_vec(self, z, v):
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        h = 1e-5 * (1.0 + np.linalg.norm(z, axis=-1, keepdims=True))
        return (self.grad_risk(z + h * v) - self.grad_risk(z - h * v)) / (2 * h)

    def hessian(self, z):
        """Full Hessian of R, shape ``(..., d, d)``, column by column."""
        z = np.asarray(z, dtype=float)
        cols = [self.hessian_vec(z, np.broadcast_to(e, z.shape))
                for e in np.eye(self.dim)]
        hess = np.stack(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, atoms={self.data.size})"


class ShiftModel(LossModel):
    """R~(z, theta) = |z - theta|^2 / 2; the SGD/SMF pair is a linear recursion / OU process."""

    name = "shift"

    def __init__(self, data=None):
        if data is None:
            data = make_discrete_distribution([-1.0, 1.0], [0.5, 0.5])
        super().__init__(data, data.atoms.shape[1])

    def pointwise_grads(self, z):
        z = np.asarray(z, dtype=float)
        return z[..., None, :] - self.data.atoms

    def centered_grads(self, z):
        # G(z, theta) = E theta - theta does not depend on z; computing it
        # directly keeps two-point differences exactly zero
        g = self.data.weights @ self.data.atoms - self.data.atoms
        return np.broadcast_to(g, np.shape(z)[:-1] + g.shape).copy()

    def hessian_vec(self, z, v):
        return np.broadcast_to(np.asarray(v, dtype=float), np.shape(z)).copy()

    def hessian(self, z):
        return np.broadcast_to(np.eye(self.dim), np.shape(z) + (self.dim,)).copy()


class ScaleModel(LossModel):
    """R~(z, theta) = theta |z|^2 / 2 with scalar atoms; A~(x, y) = Var(theta) x y^T."""

    name = "scale"

    def __init__(self, data=None, dim=1):
        if data is None:
            data = make_discrete_distribution([0.0, 2.0], [0.5, 0.5])
        if data.atoms.shape[1] != 1:
            raise ValueError("scale model needs scalar atoms")
        super().__init__(data, dim)
        self._theta = data.atoms[:, 0]
        self._mean = float(self._theta @ data.weights)

    def pointwise_grads(self, z):
        z = np.asarray(z, dtype=float)
        return self._theta[:, None] * z[..., None, :]

    def grad_risk(self, z):
        return self._mean * np.asarray(z, dtype=float)

    def hessian_vec(self, z, v):
        return self._mean * np.broadcast_to(np.asarray(v, dtype=float), np.shape(z))

    def hessian(self, z):
        return self._mean * np.broadcast_to(np.eye(self.dim), np.shape(z) + (self.dim,))


class PolynomialModel(LossModel):
    """Separable per-coordinate polynomial loss from a coefficient table.

    ``coefficients[k][j][p]`` multiplies ``z_j ** p`` in R~(z, theta_k);
    degree at most 4.  The Hessian falls back to finite differences.
    """

    name = "polynomial"

    def __init__(self, data, coefficients):
        c = np.asarray(coefficients, dtype=float)
        if c.ndim != 3 or c.shape[0] != data.size:
            raise ValueError("coefficients must have shape (atoms, dim, degree+1)")
        if c.shape[2] > 5:
            raise ValueError("polynomial degree must be at most 4")
        super().__init__(data, c.shape[1])
        self.coefficients = c
        powers = np.arange(c.shape[2])
        # d/dz sum_p c_p z^p = sum_{p>=1} p c_p z^(p-1)
        self._dcoef = (c * powers)[:, :, 1:]

    def value(self, z):
        z = np.asarray(z, dtype=float)
        p = np.arange(self.coefficients.shape[2])
        zp = z[..., None, :, None] ** p
        return np.sum(self.coefficients * zp, axis=(-1, -2))

    def pointwise_grads(self, z):
        z = np.asarray(z, dtype=float)
        p = np.arange(self._dcoef.shape[2])
        zp = z[..., None, :, None] ** p
        return np.sum(self._dcoef * zp, axis=-1)


def grad_pointwise_loss(model, z, atom_index):
    """Gradient of R~(z, theta_k).  ``atom_index`` broadcasts against ``z.shape[:-1]``."""
    z = _finite(z)
    grads = model.pointwise_grads(z)
    k = np.broadcast_to(np.asarray(atom_index), z.shape[:-1])
    return np.take_along_axis(grads, k[..., None, None], axis=-2)[..., 0, :]


def noise_field_all(model, z):
    """G(z, theta_k) for every atom, shape ``(..., K, d)``."""
    if hasattr(model, "centered_grads"):
        return model.centered_grads(_finite(z))
    grads = model.pointwise_grads(_finite(z))
    mean = np.einsum("...kd,k->...d", grads, model.data.weights)
    return grads - mean[..., None, :]


def noise_field(model, z, atom_index):
    z = _finite(z)
    g = noise_field_all(model, z)
    k = np.broadcast_to(np.asarray(atom_index), z.shape[:-1])
    return np.take_along_axis(g, k[..., None, None], axis=-2)[..., 0, :]


def covariance_kernel(model, x, y):
    """A~(x, y) = sum_k w_k G(x, theta_k) (x) G(y, theta_k)."""
    gx = noise_field_all(model, x)
    gy = noise_field_all(model, y)
    return np.einsum("...ki,...kj,k->...ij", gx, gy, model.data.weights)


def sigma(model, x):
    return covariance_kernel(model, x, x)


def sqrt_psd(matrix):
    """Symmetric square root of a PSD matrix (batched over leading axes).

    Eigenvalues in ``[-1e-10, 0)`` are clamped; anything more negative is an
    error because it means the covariance itself is broken.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("expected square matrices")
    if np.max(np.abs(a - np.swapaxes(a, -1, -2)), initial=0.0) > SYM_TOL:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    vals, vecs = np.linalg.eigh(a)
    if np.min(vals, initial=0.0) < -PSD_TOL:
        raise ValueError(f"matrix has a negative eigenvalue {np.min(vals):.3e}")
    root = np.sqrt(np.clip(vals, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", vecs, root, vecs)


def modified_drift(model, eta, z, first_order=False):
    """-grad R - (eta/2) Hess R grad R, i.e. -grad(R + eta/4 |grad R|^2).

    With ``first_order=True`` the eta correction is dropped.
    """
    if not eta > 0:
        raise ValueError("learning rate must be positive")
    z = _finite(z)
    g = model.grad_risk(z)
    if first_order:
        return -g
    out = -g - 0.5 * eta * model.hessian_vec(z, g)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("modified drift is not finite")
    return out


def _finite(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("input contains non-finite values")
    return z


BUILTIN_MODELS = {"shift": ShiftModel, "scale": ScaleModel}


class GradientInteraction:
    """View a :class:`LossModel` through the measure-dependent interface.

    V(nu, z) = -grad R(z) and the per-atom noise is R-grad minus R~-grad, so
    that z + eta V + eta G(theta_k) is exactly the SGD update.  The noise is
    therefore the negative of :func:`noise_field`; laws are unaffected.
    """

    def __init__(self, model):
        self.model = model
        self.data = model.data
        self.dim = model.dim

    def drift(self, nu, z):
        return -self.model.grad_risk(z)

    def drift_jacobian(self, nu, z):
        return -self.model.hessian(z)

    def drift_measure_derivative(self, nu, z, x):
        z = np.asarray(z)
        x = np.asarray(x)
        shape = np.broadcast_shapes(z.shape[:-2], x.shape[:-2])
        return np.zeros(shape + (z.shape[-2], x.shape[-2], self.dim, self.dim))

    def noise(self, nu, z):
        return -noise_field_all(self.model, z)

    def lions_correction(self, nu, z, eta):
        return np.zeros(np.shape(z))


def as_interaction(model):
    """Return ``model`` unchanged if it already has a ``drift`` method."""
    return model if hasattr(model, "drift") else GradientInteraction(model)
