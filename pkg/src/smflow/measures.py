"""Equal-weight empirical measures, exact W2 and cylindrical test functionals."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

MAX_ATOMS = 512


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """``points`` of shape ``(N, d)``; every atom carries weight 1/N."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one point of shape (N, d)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("empirical measure has non-finite points")
        object.__setattr__(self, "points", pts)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _squared_costs(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def matched_cost(costs, perm):
    """Mean cost of the pairing i -> perm[i]."""
    return costs[np.arange(len(perm)), perm].sum() / len(perm)


def optimal_matching(a, b):
    """Optimal pairing for squared Euclidean cost: ``(perm, costs)``."""
    if a.size != b.size:
        raise ValueError(f"unequal atom counts {a.size} and {b.size}; subsample first")
    if a.size > MAX_ATOMS:
        raise ValueError(f"{a.size} atoms exceeds {MAX_ATOMS}; use the subsampling protocol")
    if a.dim != b.dim:
        raise ValueError("measures live in different dimensions")
    costs = _squared_costs(a.points, b.points)
    if a.dim == 1:
        perm = np.empty(a.size, dtype=np.intp)
        perm[np.argsort(a.points[:, 0], kind="stable")] = np.argsort(b.points[:, 0], kind="stable")
    else:
        _, perm = linear_sum_assignment(costs)
    return perm, costs


def wasserstein2(a, b):
    perm, costs = optimal_matching(a, b)
    return float(np.sqrt(max(matched_cost(costs, perm), 0.0)))


def push_forward(m, fmap):
    return EmpiricalMeasure(np.asarray(fmap(m.points), dtype=float))


def moment(m, p):
    if p < 0:
        raise ValueError("moment order must be nonnegative")
    r = np.linalg.norm(m.points, axis=1)
    return float(np.mean(r ** p))


# -- cylindrical functionals -----------------------------------------------------
#
# Inner functions phi: R^d -> R evaluated on arrays (..., d), returning values
# (...), gradients (..., d) and Hessians (..., d, d).  Outer functions h: R^n -> R
# evaluated on (..., n).

class Linear:
    def __init__(self, a, b=0.0):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = float(b)

    def value(self, x):
        return x @ self.a + self.b

    def grad(self, x):
        return np.broadcast_to(self.a, np.shape(x)).copy()

    def hess(self, x):
        d = self.a.shape[0]
        return np.zeros(np.shape(x) + (d,))


class Sine:
    """sin(a . x + b)."""

    def __init__(self, a, b=0.0):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = float(b)

    def value(self, x):
        return np.sin(x @ self.a + self.b)

    def grad(self, x):
        return np.cos(x @ self.a + self.b)[..., None] * self.a

    def hess(self, x):
        return -np.sin(x @ self.a + self.b)[..., None, None] * np.outer(self.a, self.a)


class Cosine(Sine):
    """cos(a . x + b), i.e. sin with a quarter-period phase."""

    def __init__(self, a, b=0.0):
        super().__init__(a, float(b) + np.pi / 2)


class Gaussian:
    """exp(-|x - c|^2 / (2 s^2))."""

    def __init__(self, center, scale=1.0):
        self.c = np.atleast_1d(np.asarray(center, dtype=float))
        self.s2 = float(scale) ** 2

    def value(self, x):
        r = x - self.c
        return np.exp(-0.5 * np.sum(r * r, axis=-1) / self.s2)

    def grad(self, x):
        r = x - self.c
        return -(self.value(x) / self.s2)[..., None] * r

    def hess(self, x):
        r = x - self.c
        v = self.value(x)[..., None, None]
        eye = np.eye(self.c.shape[0])
        return v * (np.einsum("...i,...j->...ij", r, r) / self.s2 ** 2 - eye / self.s2)


class Quadratic:
    """h(u) = c . u + u^T Q u / 2 (Q symmetrized)."""

    def __init__(self, linear, quad=None):
        self.c = np.atleast_1d(np.asarray(linear, dtype=float))
        n = self.c.shape[0]
        q = np.zeros((n, n)) if quad is None else np.asarray(quad, dtype=float).reshape(n, n)
        self.q = 0.5 * (q + q.T)

    def value(self, u):
        return u @ self.c + 0.5 * np.einsum("...i,ij,...j->...", u, self.q, u)

    def grad(self, u):
        return self.c + u @ self.q

    def hess(self, u):
        return np.broadcast_to(self.q, np.shape(u) + (self.c.shape[0],)).copy()


class SineOuter:
    """h(u) = sin(c . u)."""

    def __init__(self, linear):
        self.c = np.atleast_1d(np.asarray(linear, dtype=float))

    def value(self, u):
        return np.sin(u @ self.c)

    def grad(self, u):
        return np.cos(u @ self.c)[..., None] * self.c

    def hess(self, u):
        return -np.sin(u @ self.c)[..., None, None] * np.outer(self.c, self.c)


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    """Phi(mu) = h(<phi_1, mu>, ..., <phi_n, mu>)."""

    inner: tuple
    outer: object

    def averages(self, points):
        """Vector of inner averages over the atom axis (-2), shape ``(..., n)``."""
        return np.stack([f.value(points).mean(axis=-1) for f in self.inner], axis=-1)

    def value(self, points):
        return self.outer.value(self.averages(points))

    def derivatives(self, points, x=None):
        """Lions derivatives at ``x`` (defaults to the atoms themselves).

        Returns ``(D, gradD, D2)`` with shapes ``(..., Q, d)``, ``(..., Q, d, d)``
        and ``(..., Q, Q, d, d)`` where ``D2[..., p, q, i, j]`` is the second
        Lions derivative at ``(x_p, x_q)``.
        """
        for f in self.inner:
            if not all(hasattr(f, attr) for attr in ("grad", "hess")):
                raise TypeError("inner functions need grad and hess callbacks")
        x = points if x is None else x
        u = self.averages(points)
        dh = self.outer.grad(u)                             # (..., n)
        d2h = self.outer.hess(u)                            # (..., n, n)
        grads = np.stack([f.grad(x) for f in self.inner], axis=-2)   # (..., Q, n, d)
        hessians = np.stack([f.hess(x) for f in self.inner], axis=-3)  # (..., Q, n, d, d)
        D = np.einsum("...n,...qnd->...qd", dh, grads)
        gradD = np.einsum("...n,...qnij->...qij", dh, hessians)
        D2 = np.einsum("...nm,...pni,...qmj->...pqij", d2h, grads, grads)
        return D, gradD, D2


def eval_functional(phi, m):
    return float(phi.value(m.points))


def lions_derivative(phi, m, x):
    """D Phi(mu, x) = sum_i d_i h(...) grad phi_i(x)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    D, _, _ = phi.derivatives(m.points, x)
    return D


INNER = {"linear": Linear, "sine": Sine, "cosine": Cosine, "gaussian": Gaussian}
OUTER = {"quadratic": Quadratic, "sine": SineOuter}


def functional_from_spec(spec, dim):
    """Build a functional from a config dict.

    ``{"inner": [{"kind": "sine", "a": [1.0], "b": 0.0}, ...],
       "outer": {"kind": "quadratic", "linear": [...], "quad": [[...]]}}``

    The shorthands ``"mean"`` (h = id, phi = x) and ``"mean_square"``
    (h = u^2, phi = x) are accepted in one dimension.
    """
    if spec in ("mean", {"kind": "mean"}):
        if dim != 1:
            raise ValueError("the 'mean' shorthand needs d = 1")
        return CylindricalFunctional((Linear([1.0]),), Quadratic([1.0]))
    if spec in ("mean_square", {"kind": "mean_square"}):
        if dim != 1:
            raise ValueError("the 'mean_square' shorthand needs d = 1")
        return CylindricalFunctional((Linear([1.0]),), Quadratic([0.0], [[2.0]]))
    if not isinstance(spec, dict) or "inner" not in spec or "outer" not in spec:
        raise ValueError("functional spec needs 'inner' and 'outer'")
    inner = []
    for item in spec["inner"]:
        item = dict(item)
        kind = item.pop("kind")
        if kind not in INNER:
            raise ValueError(f"unknown inner function {kind!r}; available: {sorted(INNER)}")
        inner.append(INNER[kind](**item))
    outer = dict(spec["outer"])
    kind = outer.pop("kind")
    if kind not in OUTER:
        raise ValueError(f"unknown outer function {kind!r}; available: {sorted(OUTER)}")
    return CylindricalFunctional(tuple(inner), OUTER[kind](**outer))
