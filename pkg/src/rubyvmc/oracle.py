"""Exact diagonalization, exact ramp evolution and exact entropies.

Reference implementations for systems of up to ~12 triangles (basis size
4**n).  States are dense complex vectors over the full restricted basis in
:func:`rubyvmc.lattice.enumerate_states` order (two bits per triangle,
little-endian).  Everything here trades memory for transparency and is meant
to validate the Monte Carlo engine, not to scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import RubyLattice, decode, enumerate_states, flip_plaquette, state_index

MAX_TRIANGLES = 12


def _check_size(lat: RubyLattice):
    if lat.n_tri > MAX_TRIANGLES:
        raise ValueError(
            f"{lat.n_tri} triangles exceeds the dense-oracle limit of {MAX_TRIANGLES}")


@dataclass
class DenseState:
    """Amplitude vector over the full restricted basis of a small lattice."""

    lat: RubyLattice
    amps: np.ndarray

    def __post_init__(self):
        expected = 4 ** self.lat.n_tri
        if self.amps.shape != (expected,):
            raise ValueError(f"amplitude vector must have length {expected}")
        self.amps = np.asarray(self.amps, dtype=np.complex128)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalized(self) -> "DenseState":
        return DenseState(self.lat, self.amps / self.norm)

    def overlap(self, other: "DenseState") -> complex:
        return complex(np.vdot(self.amps, other.amps))

    def fidelity(self, other: "DenseState") -> float:
        num = abs(self.overlap(other)) ** 2
        return num / (self.norm**2 * other.norm**2)

    def log_amplitude(self, states) -> np.ndarray:
        """Log amplitudes for configurations; -inf where the amplitude is 0.

        Matches the wavefunction interface used by the samplers and
        estimators, so exact states can stand in for a variational ansatz.
        """
        amps = self.amps[state_index(states)]
        with np.errstate(divide="ignore"):
            return np.log(amps.astype(np.complex128))

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amps) ** 2
        return p / p.sum()


def product_ground_state(lat: RubyLattice) -> DenseState:
    amps = np.zeros(4 ** lat.n_tri, dtype=np.complex128)
    amps[0] = 1.0
    return DenseState(lat, amps)


def basis_mask(lat: RubyLattice, ham) -> np.ndarray:
    """Configurations reachable by the Hamiltonian: everything, unless the
    hard-blockade (pxp) flag excludes configurations violating R_b."""
    n = 4 ** lat.n_tri
    if not getattr(ham, "pxp", False):
        return np.ones(n, dtype=bool)
    occ = decode(lat, enumerate_states(lat.n_tri)).astype(bool)
    block = (lat.dist <= ham.Rb_over_a + 1e-9) & (lat.dist > 1e-9)
    block &= lat.atom_tri[:, None] != lat.atom_tri[None, :]
    bad = np.zeros(n, dtype=bool)
    bi, bj = np.nonzero(np.triu(block, k=1))
    for i, j in zip(bi, bj):
        bad |= occ[:, i] & occ[:, j]
    return ~bad


def build_matrix(ham, lat: RubyLattice | None = None):
    """Sparse Hamiltonian over the restricted basis.

    Returns (H, keep) where ``keep`` indexes the retained basis states (a
    strict subset only in pxp mode) and ``H`` is csr of that size.
    """
    lat = lat if lat is not None else ham.lat
    _check_size(lat)
    states = enumerate_states(lat.n_tri)
    keep = np.nonzero(basis_mask(lat, ham))[0]
    pos = -np.ones(4 ** lat.n_tri, dtype=np.int64)
    pos[keep] = np.arange(len(keep))
    sub = states[keep]
    diag = ham.diagonal(sub)
    configs, elements, valid = ham.moves(sub)
    cols_full = state_index(configs.reshape(-1, lat.n_tri)).reshape(valid.shape)
    rows = np.repeat(np.arange(len(keep)), valid.shape[1]).reshape(valid.shape)
    sel = valid & (pos[cols_full] >= 0)
    H = sp.coo_matrix(
        (elements[sel], (rows[sel], pos[cols_full[sel]])),
        shape=(len(keep), len(keep)),
    ).tocsr()
    H = H + sp.diags(diag)
    return H, keep


def ground_state(ham, k: int = 1, lat: RubyLattice | None = None):
    """Lowest eigenpairs; returns (energies, [DenseState, ...])."""
    lat = lat if lat is not None else ham.lat
    H, keep = build_matrix(ham, lat)
    if H.shape[0] <= 2 * k + 1:
        w, v = np.linalg.eigh(H.toarray())
        w, v = w[:k], v[:, :k]
    else:
        w, v = spla.eigsh(H, k=k, which="SA")
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    out = []
    for col in range(v.shape[1]):
        amps = np.zeros(4 ** lat.n_tri, dtype=np.complex128)
        amps[keep] = v[:, col]
        out.append(DenseState(lat, amps))
    return w, out


def spectrum(ham, k: int = 8, lat: RubyLattice | None = None) -> np.ndarray:
    lat = lat if lat is not None else ham.lat
    H, _ = build_matrix(ham, lat)
    if H.shape[0] <= 2 * k + 2:
        return np.linalg.eigvalsh(H.toarray())[:k]
    return np.sort(spla.eigsh(H, k=k, which="SA")[0])


# ---------------------------------------------------------------------------
# exact time evolution


def _split_hamiltonian(base_ham, lat: RubyLattice):
    """The drive-independent pieces: off-diagonal structure at unit Rabi
    frequency, the interaction diagonal, and the excitation-count diagonal."""
    _check_size(lat)
    unit = base_ham.with_drive(1.0, 0.0)
    H_off, _ = build_matrix(unit, lat)
    states = enumerate_states(lat.n_tri)
    n_exc = decode(lat, states).sum(axis=1).astype(np.float64)
    diag_v = unit.diagonal(states)  # pure interaction at delta = 0
    H_off = H_off - sp.diags(diag_v)
    return H_off, diag_v, n_exc


def evolve_exact(psi0: DenseState, ramp, base_ham, dt_ref: float = 1e-3,
                 tol: float = 1e-8, t_grid=None, max_halvings: int = 6):
    """Integrate the Schrodinger equation under a drive protocol.

    Classic fourth-order Runge-Kutta with per-step renormalization; the step
    is halved until the final-state fidelity moves by less than ``tol``.
    Returns (times, [DenseState, ...]) sampled on ``t_grid`` (default: just
    the final time).  Raises on non-convergence.
    """
    lat = psi0.lat
    H_off, diag_v, n_exc = _split_hamiltonian(base_ham, lat)
    T = ramp.total_time
    if t_grid is None:
        t_grid = np.array([T])
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(t_grid > T + 1e-12):
        raise ValueError("checkpoint times outside the ramp")

    def rhs(t, psi):
        drive = ramp.omega(t) * (H_off @ psi)
        return -1j * (drive + (diag_v - ramp.delta(t) * n_exc) * psi)

    def run(dt):
        psi = psi0.amps.astype(np.complex128) / psi0.norm
        out, t = [], 0.0
        targets = list(t_grid)
        if targets and targets[0] == 0.0:
            out.append(psi.copy())
            targets.pop(0)
        for t_next in targets:
            n_steps = max(1, int(math.ceil((t_next - t) / dt - 1e-12)))
            h = (t_next - t) / n_steps
            for _ in range(n_steps):
                k1 = rhs(t, psi)
                k2 = rhs(t + 0.5 * h, psi + 0.5 * h * k1)
                k3 = rhs(t + 0.5 * h, psi + 0.5 * h * k2)
                k4 = rhs(t + h, psi + h * k3)
                psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                psi /= np.linalg.norm(psi)
                t += h
            out.append(psi.copy())
        return out

    states = run(dt_ref)
    for _ in range(max_halvings):
        dt_ref *= 0.5
        finer = run(dt_ref)
        drift = 1.0 - abs(np.vdot(states[-1], finer[-1])) ** 2
        states = finer
        if drift < tol:
            return t_grid, [DenseState(lat, s) for s in states]
    raise RuntimeError(f"exact evolution did not converge (last drift {drift:.2e})")


def infidelity(psi_exact: DenseState, log_amplitude, chunk: int = 65536) -> float:
    """1 - |<exact|psi>|^2 / (<exact|exact><psi|psi>) for an unnormalized
    wavefunction given as a log-amplitude callable over configurations."""
    lat = psi_exact.lat
    states = enumerate_states(lat.n_tri)
    logs = np.empty(len(states), dtype=np.complex128)
    for start in range(0, len(states), chunk):
        logs[start : start + chunk] = np.asarray(log_amplitude(states[start : start + chunk]))
    shift = logs.real.max()
    amps = np.exp(logs - shift)
    overlap = np.vdot(psi_exact.amps, amps)
    denom = psi_exact.norm**2 * np.vdot(amps, amps).real
    return float(1.0 - abs(overlap) ** 2 / denom)


# ---------------------------------------------------------------------------
# exact reduced density matrices


def renyi2_entropy_support(lat: RubyLattice, configs, amps, atoms,
                           max_side: int = 1 << 22) -> float:
    """Renyi-2 entropy of an atom subset for a state given by its support.

    ``configs`` (n, n_tri) and ``amps`` (n,) list the nonzero amplitudes.
    The partial trace runs in the per-atom occupation basis, so subsets may
    cut through triangles.  Guarded by the compressed Schmidt dimensions.
    """
    atoms = np.asarray(sorted(set(int(a) for a in np.asarray(atoms).ravel())), dtype=np.int64)
    amps = np.asarray(amps, dtype=np.complex128)
    if atoms.size == 0:
        return 0.0
    rest = np.setdiff1d(np.arange(lat.n_atoms), atoms)
    occ = decode(lat, np.asarray(configs))
    key_a = occ[:, atoms] @ (1 << np.arange(atoms.size, dtype=np.int64))
    if rest.size:
        key_b = occ[:, rest] @ (1 << np.arange(rest.size, dtype=np.int64))
    else:
        key_b = np.zeros(len(occ), dtype=np.int64)
    ra = np.unique(key_a, return_inverse=True)[1]
    rb = np.unique(key_b, return_inverse=True)[1]
    n_ra, n_rb = int(ra.max()) + 1, int(rb.max()) + 1
    if min(n_ra, n_rb) ** 2 > max_side:
        raise ValueError("subset too large for the dense reduced density matrix")
    M = sp.coo_matrix((amps, (ra, rb)), shape=(n_ra, n_rb)).tocsr()
    G = (M @ M.getH()) if n_ra <= n_rb else (M.getH() @ M)
    purity = (np.abs(G.toarray()) ** 2).sum()
    total = (np.abs(amps) ** 2).sum()
    return float(-np.log(purity / total**2))


def renyi2_entropy(psi: DenseState, atoms, max_side: int = 1 << 22) -> float:
    """Renyi-2 entropy of an atom subset of a dense exact state."""
    nz = np.nonzero(psi.amps)[0]
    configs = enumerate_states(psi.lat.n_tri)[nz]
    return renyi2_entropy_support(psi.lat, configs, psi.amps[nz], atoms, max_side)


def kitaev_preskill(entropies: dict) -> float:
    """-gamma from the seven-region combination; keys A1, A2, A3, A1A2,
    A2A3, A1A3, A1A2A3."""
    s = entropies
    neg_gamma = (s["A1"] + s["A2"] + s["A3"] - s["A1A2"] - s["A2A3"] - s["A1A3"]
                 + s["A1A2A3"])
    return float(-neg_gamma)


def exact_kitaev_preskill(psi: DenseState, regions: dict) -> float:
    """gamma of an exact state for a three-wedge partition dict with keys
    A1, A2, A3 (atom index arrays)."""
    a1, a2, a3 = (np.asarray(regions[k]) for k in ("A1", "A2", "A3"))
    parts = {
        "A1": a1, "A2": a2, "A3": a3,
        "A1A2": np.concatenate([a1, a2]),
        "A2A3": np.concatenate([a2, a3]),
        "A1A3": np.concatenate([a1, a3]),
        "A1A2A3": np.concatenate([a1, a2, a3]),
    }
    return kitaev_preskill({k: renyi2_entropy(psi, v) for k, v in parts.items()})


class FullBasisAnsatz:
    """Full-rank variational state: one complex parameter (the log-amplitude)
    per basis configuration.  With this parametrization the variational
    evolution has no projection error, so it serves as a convergence oracle
    for the time-stepping machinery.  Exposes the same interface as the
    network ansatz."""

    def __init__(self, lat: RubyLattice, params=None):
        _check_size(lat)
        self.lat = lat
        self.n_params = 4 ** lat.n_tri
        if params is None:
            params = np.zeros(self.n_params, dtype=np.complex128)
        self.set_params(params)

    def set_params(self, params):
        params = np.asarray(params, dtype=np.complex128)
        if params.shape != (self.n_params,):
            raise ValueError("parameter count mismatch")
        self.params = params.copy()

    def get_params(self):
        return self.params.copy()

    def replace_params(self, params):
        return FullBasisAnsatz(self.lat, params)

    def log_amplitude(self, states):
        return self.params[state_index(np.atleast_2d(np.asarray(states)))]

    def log_derivatives(self, states):
        states = np.atleast_2d(np.asarray(states))
        idx = state_index(states)
        O = np.zeros((len(idx), self.n_params), dtype=np.complex128)
        O[np.arange(len(idx)), idx] = 1.0
        return O, self.params[idx]

    def dense_state(self) -> DenseState:
        shift = self.params.real.max()
        return DenseState(self.lat, np.exp(self.params - shift))


def resonance_orbit(lat: RubyLattice, reference) -> np.ndarray:
    """All configurations reachable from ``reference`` by hexagon resonance
    moves (breadth-first, batched)."""
    ref = np.asarray(reference, dtype=np.uint8)
    seen = {ref.tobytes()}
    orbit = [ref]
    frontier = ref[None, :]
    while len(frontier):
        cand = np.concatenate(
            [flip_plaquette(lat, frontier, p) for p in range(lat.n_hex)], axis=0)
        fresh = []
        for cfg in cand:
            b = cfg.tobytes()
            if b not in seen:
                seen.add(b)
                fresh.append(cfg)
        frontier = (np.array(fresh, dtype=np.uint8) if fresh
                    else np.empty((0, lat.n_tri), dtype=np.uint8))
        orbit.extend(fresh)
    return np.array(orbit, dtype=np.uint8)


def dimer_liquid_state(lat: RubyLattice, reference_cover) -> DenseState:
    """Uniform superposition over the resonance-move orbit of one dimer
    cover: an exact ground state of the stabilizer Hamiltonian built without
    diagonalization (used as an independent cross-check)."""
    orbit = resonance_orbit(lat, reference_cover)
    amps = np.zeros(4 ** lat.n_tri, dtype=np.complex128)
    amps[state_index(orbit)] = 1.0 / math.sqrt(len(orbit))
    return DenseState(lat, amps)
