"""JSON experiment configuration: parsing, defaults and validation.

A config is one JSON object.  Common keys:

    command      weak-error | two-point | generator | meanfield | simulate
    seed         non-negative integer (required)
    model        {"name": "shift" | "scale" | "polynomial" | "network", ...}
    T, eta/etas  horizon and learning rate(s); T/eta must be an integer
    dt_divisor   integrator steps per SGD step (>= 10)

Command-specific keys are documented in the README.
"""

import json
import math
import os

import numpy as np

from .data_space import make_discrete_distribution
from .loss_models import BUILTIN_MODELS, PolynomialModel, ScaleModel, ShiftModel
from .measures import functional_from_spec
from .meanfield_net import FEATURES, make_network

COMMANDS = ("simulate", "weak-error", "two-point", "generator", "meanfield")
MODEL_NAMES = sorted(set(BUILTIN_MODELS) | {"polynomial", "network"})
METHODS = ("sgd", "smf", "sme", "ddsmf")

DEFAULTS = {
    "dt_divisor": 10,
    "block_size": 10_000,
    "snr_floor": 3.0,
    "first_order": False,
    "correction": "consistent",
    "flow": "smf",
    "window": 1,
    "n_subsamples": 32,
    "checkpoints": None,
}


class ConfigError(ValueError):
    pass


def _require(cfg, key, where=""):
    if key not in cfg:
        raise ConfigError(f"missing required key {key!r}{where}")
    return cfg[key]


def _positive_int(cfg, key):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{key!r} must be a positive integer, got {v!r}")
    return v


def _check_divides(T, eta):
    if not eta > 0:
        raise ConfigError(f"learning rate must be positive, got {eta}")
    ratio = T / eta
    if not math.isclose(ratio, round(ratio), rel_tol=1e-9, abs_tol=1e-9):
        raise ConfigError(f"T={T} is not an integer multiple of eta={eta} (T/eta = {ratio:.6g})")


def build_model(spec):
    """Model object from ``{"name": ..., "data": {"atoms", "weights"}, ...}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    name = _require(spec, "name", " in model")
    data_spec = spec.get("data")
    data = None
    if data_spec is not None:
        data = make_discrete_distribution(_require(data_spec, "atoms", " in model.data"),
                                          data_spec.get("weights"))
    if name == "shift":
        return ShiftModel(data)
    if name == "scale":
        return ScaleModel(data, spec.get("dim", 1))
    if name == "polynomial":
        if data is None:
            raise ConfigError("polynomial model needs model.data")
        return PolynomialModel(data, _require(spec, "coefficients", " in polynomial model"))
    if name == "network":
        feature = spec.get("feature", "tanh")
        if feature not in FEATURES:
            raise ConfigError(f"unknown feature map {feature!r}; available: {sorted(FEATURES)}")
        ds = data_spec or {}
        return make_network(feature, ds.get("atoms"), ds.get("weights"),
                            spec.get("labels"), spec.get("out_dim", 1))
    raise ConfigError(f"unknown model {name!r}; available models: {', '.join(MODEL_NAMES)}")


def parse_config(source):
    """Parse a path, a JSON string or a dict into a validated config dict.

    The returned dict carries the original keys plus defaults and the built
    objects ``model_obj`` and (when a functional is given) ``functional_obj``.
    """
    if isinstance(source, dict):
        raw = dict(source)
    elif isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source) as fh:
            raw = json.load(fh)
    else:
        try:
            raw = json.loads(source)
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config is neither a file nor valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    cfg = dict(DEFAULTS)
    cfg.update(raw)
    command = _require(cfg, "command")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    seed = cfg.get("seed")
    if seed is None:
        raise ConfigError("missing required key 'seed' (entropy-seeded runs are not allowed)")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if isinstance(cfg["dt_divisor"], bool) or not isinstance(cfg["dt_divisor"], int) \
            or cfg["dt_divisor"] < 10:
        raise ConfigError(f"dt_divisor must be an integer >= 10, got {cfg['dt_divisor']!r}")
    _positive_int(cfg, "block_size")

    cfg["model_obj"] = build_model(_require(cfg, "model"))
    dim = cfg["model_obj"].dim

    if "etas" in cfg:
        etas = [float(e) for e in cfg["etas"]]
        if not etas:
            raise ConfigError("'etas' is empty")
        cfg["etas"] = etas
    T = cfg.get("T")
    if T is not None:
        T = float(T)
        if T < 0:
            raise ConfigError("T must be nonnegative")
        cfg["T"] = T
        for eta in cfg.get("etas", []) + ([float(cfg["eta"])] if "eta" in cfg else []):
            _check_divides(T, eta)
    if "eta" in cfg:
        cfg["eta"] = float(cfg["eta"])
        if not cfg["eta"] > 0:
            raise ConfigError("eta must be positive")
    if "functional" in cfg:
        cfg["functional_obj"] = functional_from_spec(cfg["functional"], dim)
    if "points" in cfg:
        pts = np.asarray(cfg["points"], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != dim:
            raise ConfigError(f"points must have shape (M, {dim}), got {pts.shape}")
        cfg["points"] = pts.tolist()
    if cfg["correction"] not in ("consistent", "squared", "none"):
        raise ConfigError(f"unknown correction {cfg['correction']!r}")

    _validate_command(cfg)
    return cfg


def _validate_command(cfg):
    cmd = cfg["command"]
    where = f" for command {cmd!r}"
    if cmd == "weak-error":
        _require(cfg, "etas", where)
        _require(cfg, "T", where)
        _require(cfg, "points", where)
        method = cfg.setdefault("method", "monte-carlo")
        if method not in ("closed-form", "monte-carlo"):
            raise ConfigError(f"weak-error method must be closed-form or monte-carlo, got {method!r}")
        if method == "closed-form" and not isinstance(cfg["model_obj"], ShiftModel):
            raise ConfigError("the closed-form weak error exists only for the shift model")
        if method == "monte-carlo":
            _require(cfg, "functional", where)
            _positive_int(cfg, "replicates")
            if cfg["flow"] not in ("smf", "sme", "ddsmf"):
                raise ConfigError(f"unknown flow {cfg['flow']!r}")
    elif cmd == "two-point":
        _require(cfg, "eta", where)
        _require(cfg, "x", where)
        _require(cfg, "xbar", where)
        _positive_int(cfg, "replicates")
        _positive_int(cfg, "window")
        cfg.setdefault("methods", ["smf", "sme", "sgd"])
        for m in cfg["methods"]:
            if m not in ("smf", "sme", "sgd"):
                raise ConfigError(f"unknown two-point method {m!r}")
    elif cmd == "generator":
        _require(cfg, "etas", where)
        _require(cfg, "points", where)
        _require(cfg, "functional", where)
        cfg.setdefault("min_slope", 2.7)
    elif cmd == "meanfield":
        _require(cfg, "eta", where)
        _require(cfg, "T", where)
        _require(cfg, "M_values", where)
        _positive_int(cfg, "n_seeds")
        cfg.setdefault("M_ref", 512)
        cfg.setdefault("ref_dt_divisor", 100)
        if cfg["M_ref"] < 4 * max(cfg["M_values"]):
            raise ConfigError("M_ref must be at least 4 * max(M_values)")
    elif cmd == "simulate":
        _require(cfg, "eta", where)
        _require(cfg, "T", where)
        _require(cfg, "points", where)
        method = cfg.setdefault("method", "sgd")
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
        cfg.setdefault("replicates", 1)
        _positive_int(cfg, "replicates")
