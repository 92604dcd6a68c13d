"""Command-line experiment runner.

    smflow {simulate,weak-error,two-point,generator,meanfield} --config PATH
           [--seed U64] [--workers N] [--out DIR]

Writes ``summary.json`` and ``curve.csv`` (plus ``trajectory.csv`` for
``simulate``) into the output directory.  The exit status is 0 iff every check
in the summary passes, 1 if a check fails and 2 for configuration errors.
Outputs contain no timestamps or host details, so reruns are byte-identical.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import rng as rngs
from .analysis.covariation import two_point_covariation
from .analysis.generator import generator_residual_curve
from .analysis.meanfield import meanfield_gap
from .analysis.weak_error import fit_order, weak_error_curve
from .config import COMMANDS, ConfigError, parse_config
from .integrators import STEPPERS, initial_flow, integrate
from .parallel import ordered_map
from .sgd_chain import initial_chain, run_chain

CURVE_COLUMNS = ["run_id", "method", "param", "value", "estimate", "se", "n", "flag"]
Z_THRESHOLD = 5.0


def _num(x):
    """Shortest round-trip text for a float, stable across runs."""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands -------------------------------------------------------------------
# each returns (results dict, checks dict, curve rows, trajectory rows or None)

def run_weak_error(cfg, workers):
    curve = weak_error_curve(cfg, workers)
    rows = [[0, curve.method, "eta", _num(r["eta"]), _num(r["error"]), _num(r["se"]),
             r["n"], "noise-dominated" if r["noise_dominated"] else ""]
            for r in curve.rows()]
    lo, hi = cfg.get("slope_range", [0.9, 1.1] if cfg["first_order"] else [1.9, 2.1])
    results = {"etas": curve.etas.tolist(), "errors": curve.errors.tolist(),
               "standard_errors": curve.standard_errors.tolist(),
               "noise_dominated": curve.noise_dominated.tolist()}
    try:
        slope, half = fit_order(curve)
        results.update(slope=slope, slope_half_width=half)
        checks = {"slope_in_range": bool(lo <= slope <= hi)}
    except ValueError as exc:
        results.update(slope=None, fit_refused=str(exc))
        checks = {"slope_in_range": False}
    results["slope_range"] = [lo, hi]
    return results, checks, rows, None


def _sign(est, se):
    if est + Z_THRESHOLD * se < 0:
        return "negative"
    if est - Z_THRESHOLD * se > 0:
        return "positive"
    return "indeterminate"


def run_two_point(cfg, workers):
    results, checks, rows = {}, {}, []
    expect = cfg.get("expect", {})
    for i, method in enumerate(cfg["methods"]):
        est = two_point_covariation(
            method, cfg["model_obj"], cfg["x"], cfg["xbar"], cfg["eta"], cfg["replicates"],
            cfg["seed"], window=cfg["window"], dt=cfg["eta"] / cfg["dt_divisor"],
            block_size=cfg["block_size"], workers=workers)
        e, se = est.estimate, est.standard_error
        signs = [_sign(a, b) for a, b in zip(e.ravel(), se.ravel())]
        results[method] = {"estimate": e.tolist(), "se": se.tolist(),
                           "expected": est.expected.tolist(), "sign": signs,
                           "difference_qv": est.difference_qv,
                           "difference_qv_se": est.difference_qv_se}
        for j, (a, b) in enumerate(zip(e.ravel(), se.ravel())):
            rows.append([i, method, "entry", j, _num(a), _num(b), est.replicates, signs[j]])
        rows.append([i, method, "difference_qv", 0, _num(est.difference_qv),
                     _num(est.difference_qv_se), est.replicates, ""])
        want = expect.get(method)
        if want is not None:
            checks[f"{method}_{want}"] = all(s == want for s in signs)
        if expect.get(method + "_difference_qv") == "zero":
            checks[f"{method}_difference_qv_zero"] = bool(
                abs(est.difference_qv) <= Z_THRESHOLD * est.difference_qv_se)
    return results, checks, rows, None


def run_generator(cfg, workers):
    pts = np.asarray(cfg["points"], dtype=float)
    etas, res = generator_residual_curve(cfg["functional_obj"], pts, cfg["model_obj"],
                                         cfg["etas"])
    rows = [[0, "generator", "eta", _num(e), _num(r), _num(0.0), 1, ""]
            for e, r in zip(etas, res)]
    results = {"etas": etas.tolist(), "residuals": res.tolist()}
    if np.all(res < 1e-14):
        # the expansion is exact for this functional; there is no slope to fit
        results["exact"] = True
        checks = {"residual_order": True}
    else:
        slope, half = fit_order((etas, res))
        results.update(slope=slope, slope_half_width=half, min_slope=cfg["min_slope"])
        checks = {"residual_order": bool(slope >= cfg["min_slope"])}
    return results, checks, rows, None


def run_meanfield(cfg, workers):
    gap = meanfield_gap(cfg["model_obj"], cfg["M_values"], cfg["eta"], cfg["T"],
                        cfg["n_seeds"], cfg["seed"], M_ref=cfg["M_ref"],
                        dt_divisor=cfg["ref_dt_divisor"], n_subsamples=cfg["n_subsamples"],
                        correction=cfg["correction"], workers=workers)
    rows = [[0, "meanfield", "M", r["M"], _num(r["median_w2"]), _num(r["se"]), r["n"], ""]
            for r in gap.rows()]
    results = {"M_values": gap.M_values, "median_w2": gap.medians.tolist(),
               "M_ref": gap.M_ref}
    return results, {"median_gap_strictly_decreasing": gap.strictly_decreasing()}, rows, None


def _simulate_task(task):
    cfg, block, count = task
    gen = rngs.stream(cfg["seed"], "simulate-" + cfg["method"], block)
    eta, T = cfg["eta"], cfg["T"]
    times = cfg["checkpoints"] if cfg["checkpoints"] is not None else [0.0, T]
    model = cfg["model_obj"]
    if cfg["method"] == "sgd":
        state = initial_chain(cfg["points"], eta, count)
        steps = [round(t / eta) for t in times]
        traj = run_chain(model, state, round(T / eta), gen, checkpoints=steps)
        return [(s * eta, st.positions) for s, st in traj]
    dt = eta / cfg["dt_divisor"]
    cls = STEPPERS[cfg["method"]]
    if cfg["method"] == "ddsmf":
        stepper = cls(model, cfg["first_order"], cfg["correction"])
    else:
        stepper = cls(model, cfg["first_order"])
    traj = integrate(stepper, initial_flow(cfg["points"], eta, dt, count), T, gen,
                     checkpoints=times)
    return [(s * dt, st.positions) for s, st in traj]


def run_simulate(cfg, workers):
    blocks = rngs.blocks(cfg["replicates"], cfg["block_size"])
    out = ordered_map(_simulate_task, [(cfg, b, c) for b, c in blocks], workers)
    times = [t for t, _ in out[0]]
    traj_rows, curve_rows = [], []
    finals = []
    for j, t in enumerate(times):
        pos = np.concatenate([o[j][1] for o in out])           # (R, M, d)
        for r in range(pos.shape[0]):
            for p in range(pos.shape[1]):
                traj_rows.append([r, cfg["method"], _num(t), p] + [_num(v) for v in pos[r, p]])
        mean = pos.mean(axis=0)
        se = pos.std(axis=0, ddof=1) / np.sqrt(pos.shape[0]) if pos.shape[0] > 1 \
            else np.zeros_like(mean)
        for p in range(pos.shape[1]):
            curve_rows.append([0, cfg["method"], "time", _num(t), _num(mean[p, 0]),
                               _num(se[p, 0]), pos.shape[0], f"particle={p}"])
        finals = pos
    results = {"times": times, "final_mean": np.asarray(finals).mean(axis=0).tolist()}
    return results, {"finite": bool(np.all(np.isfinite(finals)))}, curve_rows, traj_rows


RUNNERS = {"simulate": run_simulate, "weak-error": run_weak_error,
           "two-point": run_two_point, "generator": run_generator,
           "meanfield": run_meanfield}


def run_experiment(cfg, out_dir, workers=1):
    """Dispatch, write the report files and return the exit status."""
    os.makedirs(out_dir, exist_ok=True)
    results, checks, curve_rows, traj_rows = RUNNERS[cfg["command"]](cfg, workers)
    _write_csv(os.path.join(out_dir, "curve.csv"), CURVE_COLUMNS, curve_rows)
    if traj_rows is not None:
        d = len(traj_rows[0]) - 4 if traj_rows else 0
        header = ["run_id", "method", "step_or_time", "particle"] + [f"x{i}" for i in range(d)]
        _write_csv(os.path.join(out_dir, "trajectory.csv"), header, traj_rows)
    passed = all(checks.values())
    summary = {"command": cfg["command"], "seed": cfg["seed"], "results": results,
               "checks": checks, "passed": passed}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0 if passed else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="smflow", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default="results", help="output directory")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        raw.setdefault("command", args.command)
        if raw["command"] != args.command:
            raise ConfigError(f"config is for {raw['command']!r}, not {args.command!r}")
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = parse_config(raw)
    except (OSError, json.JSONDecodeError, ConfigError, ValueError) as exc:
        print(f"smflow: config error: {exc}", file=sys.stderr)
        return 2
    status = run_experiment(cfg, args.out, args.workers)
    print(f"smflow {args.command}: {'pass' if status == 0 else 'FAIL'} ({args.out})")
    return status


if __name__ == "__main__":
    sys.exit(main())
