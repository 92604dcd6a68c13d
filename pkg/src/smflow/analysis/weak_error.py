"""Weak-error curves between SGD and its continuous limits, and order fitting."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .. import rng as rngs
from ..integrators import DDSMFStepper, SMEStepper, SMFStepper, initial_flow, integrate
from ..parallel import ordered_map
from ..sgd_chain import initial_chain, run_chain
from .oracles import closed_form_mean_error


@dataclass
class WeakErrorCurve:
    etas: np.ndarray
    errors: np.ndarray
    standard_errors: np.ndarray
    method: str
    noise_dominated: np.ndarray = field(default=None)
    sgd_means: np.ndarray = field(default=None)
    flow_means: np.ndarray = field(default=None)
    replicates: int = 0

    def __post_init__(self):
        self.etas = np.asarray(self.etas, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        self.standard_errors = np.asarray(self.standard_errors, dtype=float)
        if np.any(np.diff(self.etas) >= 0):
            raise ValueError("learning rates must be strictly decreasing")
        if np.any(self.errors < 0):
            raise ValueError("errors must be nonnegative")
        if self.noise_dominated is None:
            self.noise_dominated = np.zeros(len(self.etas), dtype=bool)

    def flag_noise(self, snr_floor):
        self.noise_dominated = self.errors <= snr_floor * self.standard_errors
        return self

    def rows(self):
        for i, eta in enumerate(self.etas):
            yield {
                "eta": float(eta),
                "method": self.method,
                "error": float(self.errors[i]),
                "se": float(self.standard_errors[i]),
                "n": int(self.replicates),
                "noise_dominated": bool(self.noise_dominated[i]),
            }


def fit_order(curve, confidence=0.95):
    """Least-squares slope of log(error) against log(eta), with a t-interval half-width.

    Accepts a :class:`WeakErrorCurve` or an ``(etas, errors)`` pair.  Points
    flagged as noise-dominated or with zero error are dropped.
    """
    if isinstance(curve, WeakErrorCurve):
        etas, errors = curve.etas, curve.errors
        keep = ~curve.noise_dominated & (errors > 0)
    else:
        etas, errors = (np.asarray(a, dtype=float) for a in curve)
        keep = errors > 0
    etas, errors = etas[keep], errors[keep]
    if len(etas) < 3:
        raise ValueError(f"need at least 3 usable points to fit an order, got {len(etas)}")
    lx, ly = np.log(etas), np.log(errors)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    dof = len(lx) - 2
    s2 = float(resid @ resid) / dof
    se = np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2))
    half = float(stats.t.ppf(0.5 + confidence / 2, dof) * se)
    return float(slope), half


def closed_form_curve(etas, T=1.0, x=1.0, first_order=False):
    """Shift model with Phi = mean: both expectations in closed form."""
    etas = np.asarray(etas, dtype=float)
    errs = np.array([closed_form_mean_error(e, T, x, first_order) for e in etas])
    return WeakErrorCurve(etas, errs, np.zeros_like(errs),
                          "closed-form-first-order" if first_order else "closed-form")


# -- Monte Carlo -----------------------------------------------------------------

@dataclass(frozen=True)
class WeakErrorSetup:
    model: object
    phi: object
    points: np.ndarray          # (M, d) tracked initial points
    T: float
    dt_divisor: int
    flow: str = "smf"           # smf | sme | ddsmf
    first_order: bool = False
    correction: str = "consistent"
    seed: int = 0


def _stepper(setup):
    if setup.flow == "smf":
        return SMFStepper(setup.model, setup.first_order)
    if setup.flow == "sme":
        return SMEStepper(setup.model, setup.first_order)
    if setup.flow == "ddsmf":
        return DDSMFStepper(setup.model, setup.first_order, setup.correction)
    raise ValueError(f"unknown flow {setup.flow!r}")


def _weak_task(task):
    setup, kind, i, eta, block, count = task
    gen = rngs.stream(setup.seed, "weak-" + kind, i, block)
    if kind == "sgd":
        state = initial_chain(setup.points, eta, count)
        n = round(setup.T / eta)
        final = run_chain(setup.model, state, n, gen,
                          interacting=(setup.flow == "ddsmf"))[-1][1]
    else:
        state = initial_flow(setup.points, eta, eta / setup.dt_divisor, count)
        final = integrate(_stepper(setup), state, setup.T, gen)[-1][1]
    return np.asarray(setup.phi.value(final.positions), dtype=float)


def monte_carlo_curve(setup, etas, replicates, block_size=10_000, workers=1, snr_floor=3.0):
    etas = np.asarray(etas, dtype=float)
    tasks = [(setup, kind, i, float(eta), b, c)
             for i, eta in enumerate(etas)
             for kind in ("sgd", "flow")
             for b, c in rngs.blocks(replicates, block_size)]
    results = ordered_map(_weak_task, tasks, workers)
    sgd_m, flow_m, errs, ses = [], [], [], []
    for i in range(len(etas)):
        vals = {}
        for kind in ("sgd", "flow"):
            vals[kind] = np.concatenate([r for t, r in zip(tasks, results)
                                         if t[2] == i and t[1] == kind])
        ms = {k: v.mean() for k, v in vals.items()}
        se = np.sqrt(sum(v.var(ddof=1) / len(v) for v in vals.values()))
        sgd_m.append(ms["sgd"])
        flow_m.append(ms["flow"])
        errs.append(abs(ms["flow"] - ms["sgd"]))
        ses.append(se)
    curve = WeakErrorCurve(etas, errs, ses, "monte-carlo-" + setup.flow,
                           sgd_means=np.array(sgd_m), flow_means=np.array(flow_m),
                           replicates=replicates)
    return curve.flag_noise(snr_floor)


def weak_error_curve(config, workers=1):
    """Dispatch on ``config['method']``: ``closed-form`` or ``monte-carlo``.

    ``config`` is the parsed experiment dictionary (see :mod:`smflow.config`).
    """
    if config["method"] == "closed-form":
        x = float(np.ravel(config["points"])[0])
        return closed_form_curve(config["etas"], config["T"], x, config["first_order"])
    setup = WeakErrorSetup(
        model=config["model_obj"], phi=config["functional_obj"],
        points=np.asarray(config["points"], dtype=float), T=config["T"],
        dt_divisor=config["dt_divisor"], flow=config["flow"],
        first_order=config["first_order"], correction=config["correction"],
        seed=config["seed"])
    return monte_carlo_curve(setup, config["etas"], config["replicates"],
                             config["block_size"], workers, config["snr_floor"])
