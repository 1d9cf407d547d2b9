"""Run configuration: schema, validation, environment overrides, hashing.

Configs are JSON files with the sections below.  Unknown keys are rejected;
every key has a default.  Any value can be overridden from the environment
with ``RUBYVMC_<SECTION>__<KEY>`` (JSON-parsed; bare strings pass through),
e.g. ``RUBYVMC_SAMPLER__N_CHAINS=64``.  The config hash (sha256 of the
canonical dump) is embedded in all outputs so results can be traced to their
exact settings.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os

import numpy as np

from .ansatz import NetworkShape, RubyAnsatz
from .hamiltonian import RampProtocol, RydbergHamiltonian, StabilizerHamiltonian
from .lattice import SQRT3, build_lattice
from .sampler import SamplerConfig
from .tdvp import ClipRule

ENV_PREFIX = "RUBYVMC_"

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/latest",
    "checkpoint_every": 100,
    "lattice": {
        "L1": 2,
        "L2": 2,
        "boundary": "periodic",
        "rho": SQRT3,
        "cell_mask": None,
    },
    "hamiltonian": {
        "model": "rydberg",            # rydberg | stabilizer
        "omega": 1.0,
        "delta": 1.7,
        "Rb_over_a": 2.4,
        "tail_cutoff": None,
        "pxp": False,
    },
    "ramp": {
        "kind": "experimental_style",  # experimental_style | linear_rate | piecewise_linear
        "omega": 1.0,
        "delta_start": -2.0,
        "delta_final": 4.0,
        "rate": 0.1,
        "t_rise": 2.0,
        "t_sweep": 10.0,
        "knots": None,                 # [[t, omega, delta], ...]
    },
    "ansatz": {
        "features": 8,
        "n_layers": 3,
        "kernel": None,
        "symmetrize": True,
        "site_dependent_A": False,
        "init_scale": 1e-2,
        "init_mf_A": 4.5,
    },
    "sampler": {
        "n_chains": 32,
        "n_samples": 48,
        "burn_in": None,
        "thinning": None,
        "p_plaquette": 0.1,
        "p_plaquette_late": 0.4,
        "late_fraction": 0.8,
    },
    "tdvp": {
        "dt": 1e-2,
        "mode": "real_time",
        "clip_thresholds": [1e-5, 1e-8],
        "clip_values": ["inf", 0.5, 0.01],
        "rhat_ceiling": 1.3,
        "max_retries": 2,
        "exact_sum": False,
    },
    "ground_state": {
        "dt": 1e-2,
        "mf_steps": 150,
        "joint_steps": 250,
        "seedings": ["symmetric", "vbs", "ss"],
    },
    "observables": {
        "center_hex": 0,
        "z_loops": 3,
        "x_loops": 3,
        "string_lengths": [2, 3, 4, 5],
        "bffm": True,
        "order_parameters": True,
        "string_gaps": True,
    },
    "entropy": {
        "scales": [2],
        "center_hex": 0,
        "n_chains": 32,
        "n_samples": 256,
        "burn_in": 4,
        "thinning": None,
        "use_ratio_path": False,
        "path_points": 8,
        "path_fraction": 0.2,
    },
    "sweep": {
        "axis": "rate",                # rate | delta_final
        "grid": [0.5, 0.15, 0.05],
    },
}


class ConfigError(ValueError):
    pass


def _merge(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and defaults[key] and isinstance(value, dict):
            out[key] = _merge(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def _apply_env(cfg, environ=None):
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        node = cfg
        for part in parts[:-1]:
            if part not in node:
                raise ConfigError(f"environment override {name}: unknown section {part!r}")
            node = node[part]
        key = parts[-1]
        if key not in node:
            raise ConfigError(f"environment override {name}: unknown key {key!r}")
        try:
            node[key] = json.loads(raw)
        except json.JSONDecodeError:
            node[key] = raw
    return cfg


def load_config(path=None, overrides=None, environ=None) -> dict:
    user = {}
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
    cfg = _merge(DEFAULTS, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return _apply_env(cfg, environ)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# object builders


def lattice_from(cfg):
    sec = cfg["lattice"]
    mask = sec.get("cell_mask")
    mask = [tuple(c) for c in mask] if mask else None
    return build_lattice(sec["L1"], sec["L2"], boundary=sec["boundary"],
                         rho=sec["rho"], cell_mask=mask)


def hamiltonian_from(cfg, lat):
    sec = cfg["hamiltonian"]
    if sec["model"] == "stabilizer":
        return StabilizerHamiltonian(lat)
    return RydbergHamiltonian(lat, omega=sec["omega"], delta=sec["delta"],
                              Rb_over_a=sec["Rb_over_a"],
                              tail_cutoff=sec["tail_cutoff"], pxp=sec["pxp"])


def ramp_from(cfg) -> RampProtocol:
    sec = cfg["ramp"]
    if sec["kind"] == "linear_rate":
        return RampProtocol.linear_rate(sec["omega"], sec["delta_start"],
                                        sec["delta_final"], sec["rate"])
    if sec["kind"] == "piecewise_linear":
        if not sec["knots"]:
            raise ConfigError("piecewise ramp needs knots")
        return RampProtocol.piecewise_linear(sec["knots"])
    if sec["kind"] == "experimental_style":
        return RampProtocol.experimental_style(
            omega_max=sec["omega"], delta_start=sec["delta_start"],
            delta_final=sec["delta_final"], t_rise=sec["t_rise"],
            t_sweep=sec["t_sweep"])
    raise ConfigError(f"unknown ramp kind {sec['kind']!r}")


def ansatz_from(cfg, lat) -> RubyAnsatz:
    sec = cfg["ansatz"]
    shape = NetworkShape(features=sec["features"], n_layers=sec["n_layers"],
                         kernel=sec["kernel"], symmetrize=sec["symmetrize"],
                         site_dependent_A=sec["site_dependent_A"],
                         blockade_radius=cfg["hamiltonian"]["Rb_over_a"])
    return RubyAnsatz(lat, shape)


def sampler_from(cfg, seed: int, late: bool = False) -> SamplerConfig:
    sec = cfg["sampler"]
    p = sec["p_plaquette_late"] if late else sec["p_plaquette"]
    return SamplerConfig(n_chains=sec["n_chains"], n_samples=sec["n_samples"],
                         burn_in=sec["burn_in"], thinning=sec["thinning"],
                         p_plaquette=p, seed=seed)


def clip_rule_from(cfg) -> ClipRule:
    sec = cfg["tdvp"]
    clips = tuple(math.inf if v in ("inf", None) else float(v)
                  for v in sec["clip_values"])
    return ClipRule(thresholds=tuple(sec["clip_thresholds"]), clips=clips)
