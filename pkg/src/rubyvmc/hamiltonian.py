"""Rydberg Hamiltonian on the restricted space, ramps, and the dimer-liquid
stabilizer limit.

The drive term flips one atom at a time; flips that would put two excitations
in a triangle are projected out by the restricted encoding.  Van der Waals
tails ``V_ij = V_scale * (R_b / R_ij)**6`` act between atoms of *different*
triangles out to ``tail_cutoff`` (intra-triangle pairs are unreachable).  For
time-dependent drives the interaction table is pinned to a reference Rabi
frequency (atoms do not move when the drive is ramped); energies are reported
in units of that reference and times in its inverse.

The stabilizer limit ``H_s = sum_v A_v - sum_p B_p`` acts on the same space:
``A_v`` is the vertex parity and ``B_p`` the hexagon resonance move of
:func:`rubyvmc.lattice.flip_plaquette`.  Its ground space favours
``<A_v> = -1`` (one excitation per vertex) and ``<B_p> = +1``.  All terms
commute; see the brute-force checks in the test-suite.

Hamiltonian objects are immutable; local-energy evaluation is a pure function
over samples and safe to run concurrently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import RubyLattice, decode, flip_plaquette, parity_charges

log = logging.getLogger(__name__)

# new triangle state after toggling local atom k, or -1 if the toggle leaves
# the restricted space: rows = current state, columns = local atom
_TOGGLE = np.array([
    [1, 2, 3],      # empty: excite any atom
    [0, -1, -1],    # excited on 0: only atom 0 may toggle (de-excite)
    [-1, 0, -1],
    [-1, -1, 0],
], dtype=np.int64)


@dataclass(frozen=True)
class RydbergHamiltonian:
    """Blockade-restricted Rydberg Hamiltonian with a 1/r^6 tail.

    ``pxp`` replaces the finite tail by hard rejection of any excitation
    within the blockade radius and drops the diagonal interaction term.
    """

    lat: RubyLattice
    omega: float
    delta: float
    Rb_over_a: float = 2.4
    tail_cutoff: float | None = None
    v_scale: float | None = None
    pxp: bool = False
    pair_i: np.ndarray = field(init=False, repr=False)
    pair_j: np.ndarray = field(init=False, repr=False)
    pair_v: np.ndarray = field(init=False, repr=False)
    _blockade_nbrs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lat = self.lat
        cutoff = self.tail_cutoff
        if cutoff is None:
            if lat.periodic:
                cutoff = 0.5 * min(lat.L1 * np.linalg.norm(lat.a1),
                                   lat.L2 * np.linalg.norm(lat.a2))
            else:
                cutoff = float(lat.dist.max())
            object.__setattr__(self, "tail_cutoff", cutoff)
        if self.v_scale is None:
            object.__setattr__(self, "v_scale", self.omega)
        iu, ju = np.triu_indices(lat.n_atoms, k=1)
        inter = lat.atom_tri[iu] != lat.atom_tri[ju]
        d = lat.dist[iu, ju]
        keep = inter & (d <= cutoff + 1e-9)
        if self.pxp:
            keep &= d <= self.Rb_over_a + 1e-9  # only used for hard rejection
        object.__setattr__(self, "pair_i", iu[keep])
        object.__setattr__(self, "pair_j", ju[keep])
        if self.pxp:
            object.__setattr__(self, "pair_v", np.zeros(keep.sum()))
        else:
            v = self.v_scale * (self.Rb_over_a / d[keep]) ** 6
            object.__setattr__(self, "pair_v", v)
        # per-atom list of other-triangle atoms inside the blockade radius
        within = (lat.dist <= self.Rb_over_a + 1e-9) & (lat.dist > 1e-9)
        within &= lat.atom_tri[:, None] != lat.atom_tri[None, :]
        counts = within.sum(axis=1)
        nbrs = -np.ones((lat.n_atoms, counts.max() if lat.n_atoms else 0), dtype=np.int64)
        for i in range(lat.n_atoms):
            w = np.nonzero(within[i])[0]
            nbrs[i, : len(w)] = w
        nbrs.setflags(write=False)
        object.__setattr__(self, "_blockade_nbrs", nbrs)

    def with_drive(self, omega: float, delta: float) -> "RydbergHamiltonian":
        """Cheap copy with a new drive; the interaction table is shared."""
        h = object.__new__(RydbergHamiltonian)
        for name in ("lat", "Rb_over_a", "tail_cutoff", "v_scale", "pxp",
                     "pair_i", "pair_j", "pair_v", "_blockade_nbrs"):
            object.__setattr__(h, name, getattr(self, name))
        object.__setattr__(h, "omega", float(omega))
        object.__setattr__(h, "delta", float(delta))
        return h

    @property
    def n_moves(self) -> int:
        return self.lat.n_atoms

    def diagonal(self, states) -> np.ndarray:
        occ = decode(self.lat, states).astype(np.float64)
        e = -self.delta * occ.sum(axis=-1)
        if self.pair_v.size:
            e = e + (occ[..., self.pair_i] * occ[..., self.pair_j]) @ self.pair_v
        return e

    def moves(self, states):
        """Off-diagonal connections of a batch, shape (..., N).

        Returns (configs, elements, valid): ``configs[..., m, :]`` is the
        configuration with atom ``m`` toggled, ``elements`` the constant
        matrix element -omega/2, and ``valid`` marks toggles that stay inside
        the restricted space (and the blockade, in pxp mode).
        """
        states = np.asarray(states)
        lat = self.lat
        tri_states = states[..., lat.atom_tri]                  # (..., N)
        new_tri = _TOGGLE[tri_states, lat.atom_local]
        valid = new_tri >= 0
        if self.pxp:
            occ = decode(lat, states)
            padded = np.concatenate(
                [occ, np.zeros(occ.shape[:-1] + (1,), dtype=occ.dtype)], axis=-1)
            blocked = padded[..., self._blockade_nbrs].any(axis=-1)
            exciting = occ == 0
            valid = valid & ~(exciting & blocked)
        configs = np.repeat(states[..., None, :], lat.n_atoms, axis=-2).astype(np.uint8)
        idx = np.arange(lat.n_atoms)
        configs[..., idx, lat.atom_tri] = np.where(valid, new_tri, tri_states).astype(np.uint8)
        elements = np.full(states.shape[:-1] + (lat.n_atoms,), -0.5 * self.omega)
        return configs, elements, valid


@dataclass(frozen=True)
class StabilizerHamiltonian:
    """H_s = sum_v A_v - sum_p B_p on the restricted space."""

    lat: RubyLattice

    @property
    def n_moves(self) -> int:
        return self.lat.n_hex

    def diagonal(self, states) -> np.ndarray:
        return parity_charges(self.lat, states).sum(axis=-1).astype(np.float64)

    def moves(self, states):
        states = np.asarray(states)
        lat = self.lat
        configs = np.empty(states.shape[:-1] + (lat.n_hex, lat.n_tri), dtype=np.uint8)
        for p in range(lat.n_hex):
            configs[..., p, :] = flip_plaquette(lat, states, p)
        elements = np.full(states.shape[:-1] + (lat.n_hex,), -1.0)
        valid = np.ones(states.shape[:-1] + (lat.n_hex,), dtype=bool)
        return configs, elements, valid


def connected_configurations(states, ham):
    """All matrix-element partners of one configuration.

    Returns a list ``[(config, element), ...]`` whose first entry is the
    diagonal; only moves that stay inside the restricted space appear.
    """
    states = np.asarray(states)
    if states.ndim != 1:
        raise ValueError("one configuration at a time; use local_energies for batches")
    out = [(states.copy(), complex(ham.diagonal(states)))]
    configs, elements, valid = ham.moves(states)
    for m in range(configs.shape[-2]):
        if valid[m]:
            out.append((configs[m], complex(elements[m])))
    return out


def local_energies(states, ham, log_amplitude, chunk=131072) -> np.ndarray:
    """E_loc(c) = sum_c' H_{cc'} exp(logpsi(c') - logpsi(c)) over a batch.

    ``log_amplitude`` maps (B, n_tri) -> (B,) complex log-amplitudes.
    Non-finite amplitude ratios are returned as nan for the caller to discard
    (logged once per batch).
    """
    states = np.asarray(states)
    batch_shape = states.shape[:-1]
    flat = states.reshape(-1, states.shape[-1])
    n = flat.shape[0]
    e = ham.diagonal(flat).astype(np.complex128)
    configs, elements, valid = ham.moves(flat)
    n_moves = configs.shape[-2]
    base = np.asarray(log_amplitude(flat))
    flat_configs = configs.reshape(-1, states.shape[-1])
    flat_valid = valid.reshape(-1)
    logs = np.full(n * n_moves, -np.inf, dtype=np.complex128)
    sel = np.nonzero(flat_valid)[0]
    for start in range(0, sel.size, chunk):
        block = sel[start : start + chunk]
        logs[block] = np.asarray(log_amplitude(flat_configs[block]))
    logs = logs.reshape(n, n_moves)
    with np.errstate(invalid="ignore", over="ignore"):
        ratios = np.exp(logs - base[:, None])
        ratios[~valid.reshape(n, n_moves)] = 0.0
        contrib = (elements.reshape(n, n_moves) * ratios).sum(axis=1)
        e = e + contrib
    bad = ~np.isfinite(e)
    if np.any(bad):
        log.warning("%d local-energy samples had non-finite amplitude ratios", bad.sum())
        e[bad] = np.nan
    return e.reshape(batch_shape)


def local_energy(states, ham, log_amplitude) -> complex:
    """Single-configuration convenience wrapper around :func:`local_energies`."""
    value = local_energies(np.asarray(states)[None, :], ham, log_amplitude)[0]
    if not np.isfinite(value):
        raise FloatingPointError("amplitude underflow in local energy")
    return complex(value)


def stabilizer_expectations(lat: RubyLattice, samples, log_amplitude):
    """Monte Carlo <A_v> (diagonal) and <B_p> (hexagon resonance) averages.

    ``samples`` must be drawn from |psi|^2.  Returns two (mean, stderr)
    tuples, averaged over vertices/hexagons and samples.
    """
    samples = np.asarray(samples).reshape(-1, lat.n_tri)
    charges = parity_charges(lat, samples).astype(np.float64)
    av = charges.mean(axis=1)

    base = np.asarray(log_amplitude(samples))
    ratios = np.empty((samples.shape[0], lat.n_hex))
    for p in range(lat.n_hex):
        flipped = flip_plaquette(lat, samples, p)
        with np.errstate(invalid="ignore", over="ignore"):
            r = np.exp(np.asarray(log_amplitude(flipped)) - base)
        ratios[:, p] = np.where(np.isfinite(r), r, 0.0).real
    bp = ratios.mean(axis=1)

    def mean_err(x):
        n = len(x)
        return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    return mean_err(av), mean_err(bp)


# ---------------------------------------------------------------------------
# drive protocols


@dataclass(frozen=True)
class RampProtocol:
    """Time-dependent (omega(t), delta(t)) schedule.

    ``linear_rate`` holds omega fixed and sweeps delta at constant rate;
    ``piecewise_linear`` interpolates a knot table (t, omega, delta).
    """

    kind: str
    knots_t: np.ndarray
    knots_omega: np.ndarray
    knots_delta: np.ndarray
    rate: float | None = None

    @staticmethod
    def linear_rate(omega, delta_start, delta_final, rate) -> "RampProtocol":
        if rate <= 0 or delta_final <= delta_start:
            raise ValueError("linear ramp needs rate > 0 and delta_final > delta_start")
        t_end = (delta_final - delta_start) / rate
        return RampProtocol(
            kind="linear_rate",
            knots_t=np.array([0.0, t_end]),
            knots_omega=np.array([omega, omega]),
            knots_delta=np.array([delta_start, delta_final]),
            rate=float(rate),
        )

    @staticmethod
    def piecewise_linear(knots) -> "RampProtocol":
        knots = np.asarray(knots, dtype=float)
        t = knots[:, 0]
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        return RampProtocol(kind="piecewise_linear", knots_t=t,
                            knots_omega=knots[:, 1], knots_delta=knots[:, 2])

    @staticmethod
    def experimental_style(omega_max=1.0, delta_start=-2.0, delta_final=4.0,
                           t_rise=2.0, t_sweep=10.0) -> "RampProtocol":
        """Digitized approximation of the published two-stage drive: a Rabi
        rise at fixed negative detuning, then a detuning sweep at full drive.
        Knot values approximate the figure, they are not a published table."""
        return RampProtocol.piecewise_linear([
            (0.0, 0.0, delta_start),
            (t_rise, omega_max, delta_start),
            (t_rise + t_sweep, omega_max, delta_final),
        ])

    @property
    def total_time(self) -> float:
        return float(self.knots_t[-1])

    @property
    def omega_ref(self) -> float:
        """Reference Rabi frequency pinning the interaction table."""
        return float(self.knots_omega.max())

    def omega(self, t) -> float:
        return float(np.interp(t, self.knots_t, self.knots_omega))

    def delta(self, t) -> float:
        return float(np.interp(t, self.knots_t, self.knots_delta))

    def hamiltonian(self, lat: RubyLattice, t: float, **kwargs) -> RydbergHamiltonian:
        base = self.base_hamiltonian(lat, **kwargs)
        return base.with_drive(self.omega(t), self.delta(t))

    def base_hamiltonian(self, lat: RubyLattice, **kwargs) -> RydbergHamiltonian:
        return RydbergHamiltonian(lat, omega=self.omega(0.0), delta=self.delta(0.0),
                                  v_scale=self.omega_ref, **kwargs)
