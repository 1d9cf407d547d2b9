"""Dimer-liquid diagnostics: Wilson loops, open strings, the fractional
string order parameter, crystal order parameters, and length-scale fits.

Two operator families act on the restricted space:

* Z type: diagonal products of s_i = +-1 over an atom set.  A Z loop around
  a vertex region equals the product of the enclosed vertex parities (atoms
  shared by two enclosed vertices cancel), so its geometry is specified by
  the enclosed vertices and the area is their count.
* X type: products of the per-triangle excitation-shuffling operators.  A
  cluster of hexagon resonances reduces to leg operators on the boundary
  triangles only (a triangle surrounded by three selected hexagons drops
  out), giving the perimeter scaling its meaning.  Open leg paths terminate
  on two vertices and flip the parity there.

All estimators here are pure reductions over frozen sample tables and are
trivially sample-parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import local_energies
from .lattice import RubyLattice, apply_leg_ops, decode, reduce_leg_ops
from .sampler import EstimateRecord, estimate


@dataclass(frozen=True)
class LoopSpec:
    """Geometry of one loop or string operator.

    ``atoms`` carries the diagonal support of Z types; ``tris``/``legs`` the
    leg operators of X types.  ``area`` counts enclosed vertices (loops),
    ``length`` path atoms (strings), ``perimeter`` the boundary weight.
    """

    kind: str
    atoms: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    tris: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    legs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    area: int = 0
    length: int = 0
    perimeter: int = 0

    def __post_init__(self):
        if self.kind not in ("z_loop", "x_loop", "z_string", "x_string"):
            raise ValueError(f"unknown loop kind {self.kind!r}")


# ---------------------------------------------------------------------------
# geometry builders


def z_loop_from_vertices(lat: RubyLattice, vertices) -> LoopSpec:
    """Z loop as the product of vertex parities over ``vertices``: supported
    on the atoms touching exactly one enclosed vertex."""
    vertices = np.asarray(sorted(set(int(v) for v in np.asarray(vertices).ravel())))
    counts = np.zeros(lat.n_atoms, dtype=np.int64)
    for v in vertices:
        counts[lat.vert_atoms[v]] += 1
    atoms = np.nonzero(counts == 1)[0]
    return LoopSpec(kind="z_loop", atoms=atoms, area=len(vertices),
                    perimeter=len(atoms))


def _sorted_by_distance(lat: RubyLattice, points, center):
    disp = points - center
    if lat.periodic:
        best = np.linalg.norm(disp, axis=1)
        for k1 in (-1, 0, 1):
            for k2 in (-1, 0, 1):
                cand = np.linalg.norm(disp + k1 * lat.L1 * lat.a1 + k2 * lat.L2 * lat.a2, axis=1)
                best = np.minimum(best, cand)
        return best
    return np.linalg.norm(disp, axis=1)


def concentric_z_loops(lat: RubyLattice, center_hex: int = 0, n_loops: int = 3):
    """Loops around growing vertex disks centered on a hexagon."""
    r = _sorted_by_distance(lat, lat.vert_pos, lat.hex_pos[center_hex])
    radii = np.unique(np.round(r, 6))
    specs = []
    for k in range(min(n_loops, len(radii))):
        vertices = np.nonzero(r <= radii[k] + 1e-9)[0]
        specs.append(z_loop_from_vertices(lat, vertices))
    return specs


def x_loop_from_hexagons(lat: RubyLattice, hexagons) -> LoopSpec:
    """Product of hexagon resonances reduced to boundary leg operators."""
    hexagons = sorted(set(int(h) for h in np.asarray(hexagons).ravel()))
    tris, legs = [], []
    for h in hexagons:
        tris.extend(lat.hex_tris[h])
        legs.extend(lat.hex_legs[h])
    t, l = reduce_leg_ops(tris, legs)
    return LoopSpec(kind="x_loop", tris=t, legs=l, area=len(hexagons),
                    perimeter=len(t))


def concentric_x_loops(lat: RubyLattice, center_hex: int = 0, n_loops: int = 3):
    r = _sorted_by_distance(lat, lat.hex_pos, lat.hex_pos[center_hex])
    radii = np.unique(np.round(r, 6))
    specs = []
    for k in range(min(n_loops, len(radii))):
        hexes = np.nonzero(r <= radii[k] + 1e-9)[0]
        specs.append(x_loop_from_hexagons(lat, hexes))
    return specs


def straight_string_atoms(lat: RubyLattice, length: int, start_cell: int = 0):
    """Atoms on a straight line along the first cell vector: alternating
    up-triangle local-0 and down-triangle local-0 sites of consecutive
    cells.  Adjacent path atoms share a vertex."""
    if not lat.periodic:
        raise ValueError("string builder assumes the periodic torus")
    n1, n2 = lat.cells[start_cell]
    atoms = []
    grid = lat.cell_index_grid()
    for k in range(length):
        cell = grid[(n1 + k // 2) % lat.L1, n2]
        local = 0 if k % 2 == 0 else 3
        atoms.append(lat.tri_atoms[lat.cell_tris[cell][local // 3]][local % 3])
    return np.asarray(atoms, dtype=np.int64)


def straight_z_string(lat: RubyLattice, length: int, start_cell: int = 0) -> LoopSpec:
    atoms = straight_string_atoms(lat, length, start_cell)
    return LoopSpec(kind="z_string", atoms=atoms, length=length)


def straight_x_string(lat: RubyLattice, length: int, start_cell: int = 0) -> LoopSpec:
    atoms = straight_string_atoms(lat, length, start_cell)
    t, l = reduce_leg_ops(lat.atom_tri[atoms], lat.atom_local[atoms])
    return LoopSpec(kind="x_string", tris=t, legs=l, length=length)


def bffm_pair(lat: RubyLattice, center_hex: int = 0):
    """(closed loop, half string) specs for both channels around a hexagon.

    Z channel: the twelve spoke atoms around the hexagon (the parity product
    of its six corner vertices) and the six consecutive spokes of one half.
    X channel: the hexagon resonance itself and half of its legs.
    """
    corners = []
    for atom in lat.hex_atoms[center_hex]:
        corners.extend(lat.atom_verts[atom])
    corners = sorted(set(int(v) for v in corners))
    loop_z = z_loop_from_vertices(lat, corners)
    center = lat.hex_pos[center_hex]
    disp = lat.atom_pos[loop_z.atoms] - center
    if lat.periodic:
        for k1 in (-1, 0, 1):
            for k2 in (-1, 0, 1):
                cand = disp + k1 * lat.L1 * lat.a1 + k2 * lat.L2 * lat.a2
                closer = np.linalg.norm(cand, axis=1) < np.linalg.norm(disp, axis=1)
                disp[closer] = cand[closer]
    order = np.argsort(np.arctan2(disp[:, 1], disp[:, 0]))
    spokes = loop_z.atoms[order]
    half_z = LoopSpec(kind="z_string", atoms=spokes[: len(spokes) // 2],
                      length=len(spokes) // 2)
    loop_x = x_loop_from_hexagons(lat, [center_hex])
    half_tris = lat.hex_tris[center_hex][:3]
    half_legs = lat.hex_legs[center_hex][:3]
    half_x = LoopSpec(kind="x_string", tris=half_tris, legs=half_legs, length=3)
    return {"z": (loop_z, half_z), "x": (loop_x, half_x)}


# ---------------------------------------------------------------------------
# estimators


def _z_values(lat, spec, samples):
    if spec.atoms.size == 0:
        return np.ones(samples.shape[0])
    occ = decode(lat, samples)
    flips = occ[:, spec.atoms].sum(axis=1)
    return 1.0 - 2.0 * (flips % 2)


def _x_ratios(lat, spec, samples, log_amplitude, base_logs=None):
    if base_logs is None:
        base_logs = np.asarray(log_amplitude(samples))
    moved = apply_leg_ops(lat, samples, spec.tris, spec.legs)
    with np.errstate(over="ignore", invalid="ignore"):
        r = np.exp(np.asarray(log_amplitude(moved)) - base_logs)
    return np.where(np.isfinite(r), r, 0.0)


def measure_loop(spec: LoopSpec, samples, lat: RubyLattice, log_amplitude=None,
                 base_logs=None) -> EstimateRecord:
    """Monte Carlo expectation of a loop or string operator.

    ``samples`` may be flat (n, n_tri) or shaped (chains, n, n_tri); Z types
    need no amplitudes, X types evaluate one moved configuration per sample.
    """
    samples = np.asarray(samples)
    shaped = samples.ndim == 3
    flat = samples.reshape(-1, samples.shape[-1])
    if spec.kind.startswith("z"):
        vals = _z_values(lat, spec, flat)
    else:
        if log_amplitude is None:
            raise ValueError("X-type operators need the wavefunction")
        vals = _x_ratios(lat, spec, flat, log_amplitude, base_logs).real
    series = vals.reshape(samples.shape[0], -1) if shaped else None
    return estimate(vals.astype(complex), series=series)


def measure_many(specs, samples, lat, log_amplitude=None):
    """Measure a family of loop specs, reusing the base amplitudes."""
    samples = np.asarray(samples)
    flat = samples.reshape(-1, samples.shape[-1])
    base = None
    if any(s.kind.startswith("x") for s in specs) and log_amplitude is not None:
        base = np.asarray(log_amplitude(flat))
    return [measure_loop(s, samples, lat, log_amplitude, base_logs=base) for s in specs]


def bffm(loop: LoopSpec, half: LoopSpec, samples, lat, log_amplitude=None):
    """Half-loop expectation over the square root of the full loop.

    Returns (value, err, ok); flagged not-ok when the loop expectation is
    non-positive within error (the ratio is then undefined).
    """
    num = measure_loop(half, samples, lat, log_amplitude)
    den = measure_loop(loop, samples, lat, log_amplitude)
    d = den.mean.real
    if d <= max(2 * den.stderr, 0.0):
        return float("nan"), float("inf"), False
    value = num.mean.real / math.sqrt(d)
    err = abs(value) * math.sqrt(
        (num.stderr / max(abs(num.mean.real), 1e-30)) ** 2
        + (0.5 * den.stderr / d) ** 2) if num.mean.real != 0 else num.stderr / math.sqrt(d)
    return float(value), float(err), True


# ---------------------------------------------------------------------------
# crystal order parameters


def order_parameters(lat: RubyLattice, samples):
    """Staggered up-triangle correlation sums detecting the checkerboard and
    stripe patterns.  Requires a periodic torus with even cell counts."""
    if not lat.periodic or lat.L1 % 2 or lat.L2 % 2:
        raise ValueError("order parameters need a periodic torus with even L1, L2")
    samples = np.asarray(samples)
    flat = samples.reshape(-1, samples.shape[-1])
    grid = lat.cell_index_grid()
    up = lat.cell_tris[:, 0]
    s00 = flat[:, up[grid[0, 0]]]
    s10 = flat[:, up[grid[1 % lat.L1, 0]]]
    match_10_00 = np.where(s10 == s00, 1.0, -1.0)
    m_vbs = np.zeros(flat.shape[0])
    m_ss = np.zeros(flat.shape[0])
    for n1 in range(lat.L1):
        for n2 in range(lat.L2):
            s = flat[:, up[grid[n1, n2]]]
            if n1 % 2 == 0:
                u = np.where(s == s00, 1.0, -1.0)
            else:
                u = np.where(s == s10, 1.0, -1.0) * match_10_00
            m_vbs += ((-1.0) ** (n1 + n2)) * u
            m_ss += ((-1.0) ** n1) * u
    n_cell = lat.n_cells
    shaped = samples.ndim == 3
    vbs = m_vbs / n_cell
    ss = m_ss / n_cell
    rec_v = estimate(vbs.astype(complex),
                     series=vbs.reshape(samples.shape[0], -1) if shaped else None)
    rec_s = estimate(ss.astype(complex),
                     series=ss.reshape(samples.shape[0], -1) if shaped else None)
    return rec_v, rec_s


# ---------------------------------------------------------------------------
# length-scale fits


@dataclass
class LambdaFit:
    lambda_: float
    inv_lambda_sq: float
    residual: float
    ok: bool


def fit_lambda(areas, loops, loops_gs) -> LambdaFit:
    """Fit ln(W/W_gs) = -|A| / lambda^2 after dividing out the (-1)^|A| sign.

    ``loops_gs`` comes from a converged reference run at the same final
    Hamiltonian; the fit is flagged when any sign-corrected ratio is
    non-positive."""
    areas = np.asarray(areas, dtype=np.float64)
    signs = (-1.0) ** np.asarray(areas)
    w = np.asarray(loops, dtype=np.float64) * signs
    wg = np.asarray(loops_gs, dtype=np.float64) * signs
    if len(areas) < 3:
        raise ValueError("need at least three loop areas")
    if np.any(w <= 0) or np.any(wg <= 0):
        return LambdaFit(float("nan"), float("nan"), float("inf"), False)
    y = np.log(w / wg)
    slope = -(areas @ y) / (areas @ areas)
    resid = float(np.sqrt(np.mean((y + slope * areas) ** 2)))
    if slope <= 0:
        return LambdaFit(float("inf"), float(slope), resid, False)
    return LambdaFit(float(1.0 / math.sqrt(slope)), float(slope), resid, True)


@dataclass
class XiFit:
    xi: float
    amp1: float
    amp2: float
    residual: float
    ok: bool


def string_amplitude_class(lengths) -> np.ndarray:
    """Residue split of string lengths: class 0 when (L - 1) % 4 == 0."""
    L = np.asarray(lengths, dtype=np.int64)
    return np.where((L - 1) % 4 == 0, 0, 1)


def fit_xi(lengths, values) -> XiFit:
    """Joint exponential fit  value ~ A_class * exp(-L / xi)  with one
    amplitude per residue class of the length."""
    lengths = np.asarray(lengths, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(lengths) < 4:
        raise ValueError("need at least four string lengths")
    cls = string_amplitude_class(lengths)
    if len(set(cls.tolist())) < 2:
        return XiFit(float("nan"), float("nan"), float("nan"), float("inf"), False)
    if np.any(values <= 0):
        return XiFit(float("nan"), float("nan"), float("nan"), float("inf"), False)
    y = np.log(values)
    X = np.stack([cls == 0, cls == 1, -lengths], axis=1).astype(np.float64)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    inv_xi = coef[2]
    if inv_xi <= 0:
        return XiFit(float("inf"), math.exp(coef[0]), math.exp(coef[1]), resid, False)
    return XiFit(float(1.0 / inv_xi), float(math.exp(coef[0])),
                 float(math.exp(coef[1])), resid, True)


def poisson_parity(alpha: float, k_max: int | None = None) -> float:
    """Mean of (-1)^k under a Poisson(alpha) count.

    With ``k_max`` the truncated sum is returned; the closed form is
    exp(-2*alpha)."""
    if k_max is None:
        return math.exp(-2.0 * alpha)
    total, term = 0.0, math.exp(-alpha)
    for k in range(k_max + 1):
        total += term if k % 2 == 0 else -term
        term *= alpha / (k + 1)
    return total


def defect_density(av_mean: float) -> float:
    """Charge-defect concentration from the mean vertex parity."""
    return 0.5 * (1.0 + av_mean)


def crossover_length(lambda_: float, xi: float) -> float:
    """Scale where the boundary term overtakes the bulk term: lambda^2/xi."""
    return lambda_ * lambda_ / xi


# ---------------------------------------------------------------------------
# excitation gaps from string operators


def string_gap(spec: LoopSpec, ham, samples, lat, log_amplitude) -> EstimateRecord:
    """Energy cost of acting with a string operator:

        Delta = <S psi| H |S psi> / <S psi|S psi> - <psi| H |psi>

    estimated on |psi|^2 samples.  Z strings reweight the local energy by the
    diagonal string signs; X strings evaluate the local energy of the
    string-moved state (the string is a permutation, so the norm is
    unchanged)."""
    samples = np.asarray(samples)
    flat = samples.reshape(-1, samples.shape[-1])
    e_plain = local_energies(flat, ham, log_amplitude)
    if spec.kind.startswith("z"):
        z = _z_values(lat, spec, flat)
        configs, elements, valid = ham.moves(flat)
        zc = np.stack([_z_values(lat, spec, configs[:, m, :])
                       for m in range(configs.shape[1])], axis=1)
        base = np.asarray(log_amplitude(flat))
        n, n_moves = valid.shape
        logs = np.full((n, n_moves), -np.inf, dtype=np.complex128)
        sel = np.nonzero(valid.reshape(-1))[0]
        flat_cfg = configs.reshape(-1, lat.n_tri)
        logs.reshape(-1)[sel] = np.asarray(log_amplitude(flat_cfg[sel]))
        with np.errstate(over="ignore", invalid="ignore"):
            ratios = np.exp(logs - base[:, None])
        ratios[~valid] = 0.0
        # z(c) * sum_c' H z(c') ratio: the diagonal term carries z(c)^2 = 1
        vals = ham.diagonal(flat) + z * (elements * ratios * zc).sum(axis=1)
    else:
        # <X psi|H|X psi>/<psi|psi> = E_{d~|psi|^2}[ E_loc at X d with the
        # amplitude X-transformed ]: the string is an involution, so the
        # transformed state has the same norm
        moved = apply_leg_ops(lat, flat, spec.tris, spec.legs)

        def x_logpsi(cfgs):
            return log_amplitude(apply_leg_ops(lat, np.asarray(cfgs), spec.tris, spec.legs))

        vals = local_energies(moved, ham, x_logpsi)
    diff = vals - e_plain
    good = np.isfinite(diff)
    return estimate(diff[good])