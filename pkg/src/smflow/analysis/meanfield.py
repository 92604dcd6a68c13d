"""Mean-field gap: interacting SGD with M particles against a large DDSMF ensemble.

The true mean-field law is not available, so each seed runs a reference DDSMF
particle system with ``M_ref`` particles and a fine step, then compares the
M-particle SGD cloud with it in W2.  Clouds of unequal size are compared by
subsampling the larger one to the smaller size without replacement and taking
the median over ``n_subsamples`` draws.
"""

from dataclasses import dataclass

import numpy as np

from .. import rng as rngs
from ..integrators import DDSMFStepper, initial_flow, integrate
from ..measures import EmpiricalMeasure, wasserstein2
from ..parallel import ordered_map
from ..sgd_chain import initial_chain, run_chain


@dataclass
class MeanFieldGap:
    M_values: list
    medians: np.ndarray      # (len(M_values),)
    gaps: np.ndarray         # (n_seeds, len(M_values))
    M_ref: int
    eta: float
    T: float

    def strictly_decreasing(self):
        return bool(np.all(np.diff(self.medians) < 0))

    def rows(self):
        for j, m in enumerate(self.M_values):
            col = self.gaps[:, j]
            yield {
                "M": int(m),
                "median_w2": float(self.medians[j]),
                "mean_w2": float(col.mean()),
                "se": float(col.std(ddof=1) / np.sqrt(len(col))) if len(col) > 1 else 0.0,
                "n": len(col),
            }


def subsampled_w2(small, large, rng, n_subsamples=32):
    """Median W2 between ``small`` (n, d) and size-n subsamples of ``large``."""
    small = np.asarray(small, dtype=float)
    large = np.asarray(large, dtype=float)
    if small.shape[0] > large.shape[0]:
        small, large = large, small
    n = small.shape[0]
    a = EmpiricalMeasure(small)
    if n == large.shape[0]:
        return wasserstein2(a, EmpiricalMeasure(large))
    vals = [wasserstein2(a, EmpiricalMeasure(large[rng.choice(large.shape[0], n, replace=False)]))
            for _ in range(n_subsamples)]
    return float(np.median(vals))


def gaussian_initial(rng, n, dim):
    return rng.standard_normal((n, dim))


def _seed_task(task):
    (model, M_values, eta, T, seed, s, M_ref, dt_divisor, n_subsamples,
     correction, init) = task
    init = init or gaussian_initial
    ref0 = init(rngs.stream(seed, "mf-ref-init", s), M_ref, model.dim)
    flow = initial_flow(ref0, eta, eta / dt_divisor, replicates=1)
    try:
        ref = integrate(DDSMFStepper(model, correction=correction), flow, T,
                        rngs.stream(seed, "mf-ref-noise", s))[-1][1].positions[0]
    except FloatingPointError as exc:
        raise RuntimeError(f"reference DDSMF run failed for seed index {s}") from exc
    n_steps = round(T / eta)
    out = []
    for M in M_values:
        z0 = init(rngs.stream(seed, "mf-init", s, M), M, model.dim)
        chain = initial_chain(z0, eta, replicates=1)
        final = run_chain(model, chain, n_steps, rngs.stream(seed, "mf-sgd", s, M),
                          interacting=True)[-1][1].positions[0]
        out.append(subsampled_w2(final, ref, rngs.stream(seed, "mf-sub", s, M), n_subsamples))
    return out


def meanfield_gap(model, M_values, eta, T, n_seeds, seed, M_ref=512, dt_divisor=100,
                  n_subsamples=32, correction="consistent", init=None, workers=1):
    """Median over seeds of W2(SGD cloud with M particles, reference DDSMF cloud).

    ``init(rng, n, dim)`` samples initial particles i.i.d. from mu (default
    standard Gaussian).  It must be a module-level function when ``workers > 1``.
    """
    M_values = [int(m) for m in M_values]
    if any(b <= a for a, b in zip(M_values, M_values[1:])):
        raise ValueError("M_values must be strictly increasing")
    if M_ref < 4 * max(M_values):
        raise ValueError(f"M_ref={M_ref} must be at least 4 * max(M) = {4 * max(M_values)}")
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    tasks = [(model, M_values, float(eta), float(T), seed, s, int(M_ref), int(dt_divisor),
              int(n_subsamples), correction, init) for s in range(n_seeds)]
    gaps = np.array(ordered_map(_seed_task, tasks, workers))
    return MeanFieldGap(M_values, np.median(gaps, axis=0), gaps, int(M_ref), float(eta), float(T))
