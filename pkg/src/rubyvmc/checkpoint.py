"""Binary checkpoint format for parameter vectors.

Layout: the magic bytes ``RBVMC1\\n``, a little-endian uint32 header length,
a UTF-8 JSON header, then the flat complex parameter vector as little-endian
float64 (real, imag) pairs in the documented flattening order (see
``rubyvmc.ansatz.PARAM_LAYOUT_VERSION``).  The header records the lattice
specification and its hash, the network hyperparameters, and free-form run
metadata such as the ramp time, step index and sampler chain states.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .ansatz import PARAM_LAYOUT_VERSION, NetworkShape, RubyAnsatz
from .lattice import RubyLattice, build_lattice

MAGIC = b"RBVMC1\n"


def lattice_hash(spec: dict) -> str:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


def shape_dict(shape: NetworkShape) -> dict:
    return {
        "features": shape.features,
        "n_layers": shape.n_layers,
        "kernel": shape.kernel,
        "symmetrize": shape.symmetrize,
        "site_dependent_A": shape.site_dependent_A,
        "blockade_radius": shape.blockade_radius,
    }


def save_checkpoint(path, ansatz: RubyAnsatz, extra: dict | None = None) -> None:
    spec = ansatz.lat.spec_dict()
    header = {
        "format": PARAM_LAYOUT_VERSION,
        "lattice": spec,
        "lattice_hash": lattice_hash(spec),
        "ansatz": shape_dict(ansatz.shape),
        "n_params": ansatz.n_params,
    }
    if extra:
        header["extra"] = _jsonable(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    params = np.ascontiguousarray(ansatz.params, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).astype("<u4").tobytes())
        fh.write(blob)
        fh.write(params.tobytes())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        n = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        return json.loads(fh.read(n).decode())


def load_checkpoint(path):
    """Returns (params, header)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        n = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        header = json.loads(fh.read(n).decode())
        params = np.frombuffer(fh.read(), dtype="<c16").astype(np.complex128)
    if len(params) != header["n_params"]:
        raise ValueError("parameter payload truncated")
    return params, header


def load_ansatz(path, lat: RubyLattice | None = None) -> tuple:
    """Rebuild (ansatz, header) from a checkpoint; the lattice is
    reconstructed from the stored spec unless one is supplied (then the spec
    hashes must match)."""
    params, header = load_checkpoint(path)
    spec = header["lattice"]
    if lat is None:
        lat = build_lattice(spec["L1"], spec["L2"], boundary=spec["boundary"],
                            rho=spec["rho"], cell_mask=spec.get("cell_mask"))
    elif lattice_hash(lat.spec_dict()) != header["lattice_hash"]:
        raise ValueError("checkpoint was written for a different lattice")
    sd = header["ansatz"]
    shape = NetworkShape(features=sd["features"], n_layers=sd["n_layers"],
                         kernel=sd["kernel"], symmetrize=sd["symmetrize"],
                         site_dependent_A=sd["site_dependent_A"],
                         blockade_radius=sd["blockade_radius"])
    ansatz = RubyAnsatz(lat, shape, params)
    return ansatz, header
