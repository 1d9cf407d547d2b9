"""Ruby-lattice geometry, restricted configurations and point-group symmetry.

The ruby lattice consists of up/down triangles of side ``a`` (the code unit of
length) arranged like the edges of a kagome lattice.  Each unit cell holds one
up and one down triangle, six atoms total, so ``N = 6*L1*L2`` on a periodic
``L1 x L2`` torus.  The aspect ratio ``rho`` controls the inter-triangle gap:
the rectangle between two facing triangle edges has sides ``a x rho*a``.  At
the default ``rho = sqrt(3)`` the atoms sit exactly on kagome-edge midpoints
and the three shortest distances are ``a, sqrt(3)*a, 2*a``.

Strong intra-triangle repulsion restricts each triangle to four states: empty
or a single excitation on one of its three atoms.  Configurations are stored
as ``uint8`` arrays over triangles with values

    0 = empty, 1 = excitation on local atom 0, 2 = on local atom 1,
    3 = on local atom 2,

i.e. two bits per triangle, little-endian: state code ``s`` packs as
``(s & 1, s >> 1)`` giving ``(0,0), (1,0), (0,1), (1,1)``.  All functions
accept batches: configuration arrays have shape ``(..., n_triangles)``.

A ``RubyLattice`` is immutable after construction and safe to share between
threads; configurations are plain value arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT3 = math.sqrt(3.0)

# Reference kagome geometry at rho = sqrt(3), triangle side a = 1.
# Cell vectors scale with s(rho) = (sqrt(3)*rho + 1)/4, triangle shape fixed.
_A1_REF = np.array([4.0, 0.0])
_A2_REF = np.array([2.0, 2.0 * SQRT3])
_UP_CENTER = np.array([1.0, 1.0 / SQRT3])
_DN_CENTER = np.array([3.0, -1.0 / SQRT3])
_UP_OFFSETS = np.array([[0.0, -1.0 / SQRT3], [0.5, 0.5 / SQRT3], [-0.5, 0.5 / SQRT3]])
_DN_OFFSETS = np.array([[0.0, 1.0 / SQRT3], [0.5, -0.5 / SQRT3], [-0.5, -0.5 / SQRT3]])
_VERTEX_REF = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, SQRT3]])
_HEX_CENTER_REF = np.array([3.0, SQRT3])

# Per-triangle action of the excitation-shuffling operator attached to local
# atom k: swaps empty <-> "excited on k" and exchanges the other two states.
# These three 4-state permutations commute pairwise and compose to identity.
LEG_PERMS = np.array([[1, 0, 3, 2], [2, 3, 0, 1], [3, 2, 1, 0]], dtype=np.uint8)


class EncodingError(ValueError):
    """Occupation pattern with two excitations in one triangle."""


@dataclass(frozen=True)
class PointGroupElement:
    """A lattice isometry stored as an atom permutation.

    ``atom_perm[i]`` is the image of atom ``i``.  ``tri_perm`` and
    ``state_maps`` give the induced action on triangles: triangle ``t`` maps
    to ``tri_perm[t]`` and its local state ``s`` becomes
    ``state_maps[t, s]`` there (a reflection moves a triangle and also
    relabels which atom carries the excitation).
    """

    name: str
    atom_perm: np.ndarray
    tri_perm: np.ndarray
    state_maps: np.ndarray


@dataclass(frozen=True)
class RubyLattice:
    L1: int
    L2: int
    boundary: str
    rho: float
    a1: np.ndarray
    a2: np.ndarray
    atom_pos: np.ndarray          # (N, 2)
    cells: np.ndarray             # (n_cells, 2) integer (n1, n2)
    cell_tris: np.ndarray         # (n_cells, 2) up / down triangle index
    cell_verts: np.ndarray        # (n_cells, 3)
    tri_atoms: np.ndarray         # (n_tri, 3)
    tri_is_up: np.ndarray         # (n_tri,) bool
    tri_cell: np.ndarray          # (n_tri,)
    atom_tri: np.ndarray          # (N,)
    atom_local: np.ndarray        # (N,) index within its triangle
    vert_atoms: np.ndarray        # (n_vert, 4)
    vert_pos: np.ndarray          # (n_vert, 2)
    atom_verts: np.ndarray        # (N, 2) the two vertices touching an atom
    hex_atoms: np.ndarray         # (n_hex, 6)
    hex_tris: np.ndarray          # (n_hex, 6)
    hex_legs: np.ndarray          # (n_hex, 6) local atom index facing hexagon
    hex_pos: np.ndarray           # (n_hex, 2)
    dist: np.ndarray              # (N, N) minimum-image pair distances
    point_group: tuple = field(default=())

    @property
    def n_atoms(self) -> int:
        return self.atom_pos.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_tri(self) -> int:
        return self.tri_atoms.shape[0]

    @property
    def n_vert(self) -> int:
        return self.vert_atoms.shape[0]

    @property
    def n_hex(self) -> int:
        return self.hex_atoms.shape[0]

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def cell_index_grid(self) -> np.ndarray:
        """(L1, L2) grid of cell indices, -1 for cells removed by a mask."""
        grid = -np.ones((self.L1, self.L2), dtype=np.int64)
        for idx, (n1, n2) in enumerate(self.cells):
            grid[n1, n2] = idx
        return grid

    def spec_dict(self) -> dict:
        spec = {
            "L1": self.L1,
            "L2": self.L2,
            "boundary": self.boundary,
            "rho": self.rho,
        }
        if self.n_cells != self.L1 * self.L2:
            spec["cell_mask"] = [[int(a), int(b)] for a, b in self.cells]
        return spec


def _scale(rho: float) -> float:
    return (SQRT3 * rho + 1.0) / 4.0


def _wrap_key(frac: np.ndarray) -> tuple:
    f = frac - np.floor(frac + 1e-9)
    return tuple(np.round(f, 6))


def build_lattice(L1, L2, boundary="periodic", rho=SQRT3, cell_mask=None) -> RubyLattice:
    """Construct a ruby lattice with all incidence maps and its point group.

    ``cell_mask`` (open boundary only) lists the (n1, n2) unit cells to keep;
    vertices and hexagons missing any atom are dropped from the incidence
    records.
    """
    if boundary not in ("periodic", "open"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if boundary == "periodic" and (L1 < 2 or L2 < 2):
        raise ValueError("periodic boundary needs L1, L2 >= 2 (minimum image)")
    if rho <= 1.0:
        raise ValueError("rho must exceed 1")
    if cell_mask is not None and boundary == "periodic":
        raise ValueError("cell masks only apply to open boundaries")

    s = _scale(rho)
    a1 = s * _A1_REF
    a2 = s * _A2_REF

    if cell_mask is None:
        kept = [(n1, n2) for n1 in range(L1) for n2 in range(L2)]
    else:
        kept = [tuple(c) for c in cell_mask]
        if len(set(kept)) != len(kept):
            raise ValueError("duplicate cells in mask")
        for n1, n2 in kept:
            if not (0 <= n1 < L1 and 0 <= n2 < L2):
                raise ValueError(f"masked cell {(n1, n2)} outside {L1}x{L2} grid")
    cells = np.array(kept, dtype=np.int64)
    n_cells = len(kept)
    cell_of = {c: i for i, c in enumerate(kept)}

    # Atoms: 6 per cell, locals 0-2 on the up triangle, 3-5 on the down one.
    origins = cells[:, :1] * a1 + cells[:, 1:] * a2
    up = s * _UP_CENTER + _UP_OFFSETS[None, :, :] + origins[:, None, :]
    dn = s * _DN_CENTER + _DN_OFFSETS[None, :, :] + origins[:, None, :]
    atom_pos = np.concatenate([up, dn], axis=1).reshape(-1, 2)
    n_atoms = 6 * n_cells

    tri_atoms = np.arange(n_atoms, dtype=np.int64).reshape(-1, 3)
    n_tri = 2 * n_cells
    tri_is_up = np.tile(np.array([True, False]), n_cells)
    tri_cell = np.repeat(np.arange(n_cells), 2)
    atom_tri = np.repeat(np.arange(n_tri), 3)
    atom_local = np.tile(np.arange(3), n_tri)
    cell_tris = np.arange(n_tri, dtype=np.int64).reshape(-1, 2)

    # Minimum-image metric.  Atom positions are rational in cell coordinates,
    # so fractional keys are exact up to round-off.
    T = np.stack([L1 * a1, L2 * a2], axis=1) if boundary == "periodic" else None

    def pair_dist(p, q):
        d = p[:, None, :] - q[None, :, :]
        if T is None:
            return np.linalg.norm(d, axis=-1)
        best = np.full(d.shape[:2], np.inf)
        for k1 in (-1, 0, 1):
            for k2 in (-1, 0, 1):
                shift = k1 * L1 * a1 + k2 * L2 * a2
                best = np.minimum(best, np.linalg.norm(d + shift, axis=-1))
        return best

    dist = pair_dist(atom_pos, atom_pos)

    # Kagome vertices: 3 per cell, each touching 4 atoms at distance s*1 in the
    # reference geometry (contact distance scales with the cell).
    vert_candidates = (s * _VERTEX_REF)[None, :, :] + origins[:, None, :]
    vert_candidates = vert_candidates.reshape(-1, 2)
    dva = pair_dist(vert_candidates, atom_pos)
    contact = np.isclose(dva, dva.min(), atol=1e-9)
    vert_rows, vert_atom_lists, vert_pos_list = [], [], []
    for v in range(vert_candidates.shape[0]):
        atoms = np.nonzero(contact[v])[0]
        if len(atoms) == 4:
            vert_atom_lists.append(atoms)
            vert_pos_list.append(vert_candidates[v])
            vert_rows.append(v)
    vert_atoms = np.array(vert_atom_lists, dtype=np.int64).reshape(-1, 4)
    vert_pos = np.array(vert_pos_list).reshape(-1, 2)
    cell_verts = -np.ones((n_cells, 3), dtype=np.int64)
    for new, old in enumerate(vert_rows):
        cell_verts[old // 3, old % 3] = new

    atom_verts = -np.ones((n_atoms, 2), dtype=np.int64)
    for v, atoms in enumerate(vert_atoms):
        for i in atoms:
            slot = 0 if atom_verts[i, 0] < 0 else 1
            atom_verts[i, slot] = v

    # Hexagons: one per cell, bordered by 6 atoms (one per adjacent triangle)
    # at distance sqrt(3)*s from the hexagon center in reference units.
    hex_candidates = (s * _HEX_CENTER_REF)[None, :] + origins
    dha = pair_dist(hex_candidates, atom_pos)
    target = SQRT3 * s
    hex_keep, hex_atom_lists, hex_pos_list = [], [], []
    for h in range(n_cells):
        atoms = np.nonzero(np.isclose(dha[h], target, atol=1e-9))[0]
        if len(atoms) == 6:
            hex_atom_lists.append(atoms)
            hex_pos_list.append(hex_candidates[h])
            hex_keep.append(h)
    hex_atoms = np.array(hex_atom_lists, dtype=np.int64).reshape(-1, 6)
    hex_pos = np.array(hex_pos_list).reshape(-1, 2)
    hex_tris = atom_tri[hex_atoms] if hex_atoms.size else hex_atoms.copy()
    hex_legs = atom_local[hex_atoms] if hex_atoms.size else hex_atoms.copy()
    if hex_atoms.size:
        for h in range(hex_atoms.shape[0]):
            if len(set(hex_tris[h])) != 6:
                raise AssertionError("hexagon must touch six distinct triangles")

    lat = RubyLattice(
        L1=L1, L2=L2, boundary=boundary, rho=float(rho), a1=a1, a2=a2,
        atom_pos=atom_pos, cells=cells, cell_tris=cell_tris, cell_verts=cell_verts,
        tri_atoms=tri_atoms, tri_is_up=tri_is_up, tri_cell=tri_cell,
        atom_tri=atom_tri, atom_local=atom_local,
        vert_atoms=vert_atoms, vert_pos=vert_pos, atom_verts=atom_verts,
        hex_atoms=hex_atoms, hex_tris=hex_tris, hex_legs=hex_legs, hex_pos=hex_pos,
        dist=dist,
    )
    object.__setattr__(lat, "point_group", tuple(_find_point_group(lat)))
    for axis in (lat.atom_pos, lat.dist, lat.vert_atoms, lat.hex_atoms):
        axis.setflags(write=False)
    return lat


def _find_point_group(lat: RubyLattice):
    """Point-group elements found by trial: rotations and reflections about a
    hexagon center that map the atom set onto itself (modulo the torus)."""
    if lat.n_hex == 0:
        return [_element_from_perm(lat, "identity", np.arange(lat.n_atoms))]
    center = lat.hex_pos[0]
    if lat.periodic:
        T = np.stack([lat.L1 * lat.a1, lat.L2 * lat.a2], axis=1)
        Tinv = np.linalg.inv(T)
        keys = {_wrap_key(Tinv @ (p - center)): i for i, p in enumerate(lat.atom_pos)}

        def match(points, linear):
            # The linear part must map the torus superlattice onto itself,
            # otherwise folding representatives produces no well-defined map.
            frac = Tinv @ linear @ T
            if not np.allclose(frac, np.round(frac), atol=1e-9):
                return None
            perm = np.empty(len(points), dtype=np.int64)
            for i, p in enumerate(points):
                k = _wrap_key(Tinv @ (p - center))
                if k not in keys:
                    return None
                perm[i] = keys[k]
            return perm
    else:
        keys = {tuple(np.round(p - center, 6)): i for i, p in enumerate(lat.atom_pos)}

        def match(points, linear):
            perm = np.empty(len(points), dtype=np.int64)
            for i, p in enumerate(points):
                k = tuple(np.round(p - center, 6))
                if k not in keys:
                    return None
                perm[i] = keys[k]
            return perm

    elements = []
    rel = lat.atom_pos - center
    for k in range(6):
        ang = k * math.pi / 3.0
        R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
        perm = match(rel @ R.T + center, R)
        if perm is not None:
            name = "identity" if k == 0 else f"C6^{k}"
            elements.append(_element_from_perm(lat, name, perm))
    for k in range(6):
        ang = k * math.pi / 6.0
        c, s = math.cos(2 * ang), math.sin(2 * ang)
        M = np.array([[c, s], [s, -c]])
        perm = match(rel @ M.T + center, M)
        if perm is not None:
            elements.append(_element_from_perm(lat, f"mirror_{k * 30}", perm))
    if len(set(e.atom_perm.tobytes() for e in elements)) != len(elements):
        raise AssertionError("duplicate point-group elements")
    return elements


def _element_from_perm(lat: RubyLattice, name, atom_perm) -> PointGroupElement:
    n_tri = lat.n_tri
    tri_perm = np.empty(n_tri, dtype=np.int64)
    state_maps = np.zeros((n_tri, 4), dtype=np.uint8)
    for t in range(n_tri):
        images = atom_perm[lat.tri_atoms[t]]
        tt = lat.atom_tri[images[0]]
        if not np.all(lat.atom_tri[images] == tt):
            raise AssertionError("symmetry candidate splits a triangle")
        tri_perm[t] = tt
        for k in range(3):
            state_maps[t, k + 1] = lat.atom_local[images[k]] + 1
    return PointGroupElement(name=name, atom_perm=np.asarray(atom_perm),
                             tri_perm=tri_perm, state_maps=state_maps)


# ---------------------------------------------------------------------------
# configuration encoding


def decode(lat: RubyLattice, states) -> np.ndarray:
    """Triangle states -> per-atom occupations, shape (..., N)."""
    states = np.asarray(states)
    occ = np.zeros(states.shape[:-1] + (lat.n_atoms,), dtype=np.uint8)
    excited = states[..., lat.atom_tri] == (lat.atom_local + 1)
    occ[excited] = 1
    return occ


def encode(lat: RubyLattice, occ) -> np.ndarray:
    """Per-atom occupations -> triangle states.

    Raises :class:`EncodingError` if any triangle holds two excitations
    (outside the restricted space).
    """
    occ = np.asarray(occ, dtype=np.uint8)
    tri_occ = occ[..., lat.tri_atoms]                     # (..., n_tri, 3)
    if np.any(tri_occ.sum(axis=-1) > 1):
        raise EncodingError("two excitations in one triangle")
    weights = np.array([1, 2, 3], dtype=np.uint8)
    return (tri_occ * weights).sum(axis=-1).astype(np.uint8)


def spins(lat: RubyLattice, states) -> np.ndarray:
    """Ising variables s_i = +1 (ground) / -1 (excited), shape (..., N)."""
    return 1.0 - 2.0 * decode(lat, states)


def parity_charges(lat: RubyLattice, states) -> np.ndarray:
    """Vertex charges: product of s_i over the 4 atoms at each vertex."""
    occ = decode(lat, states)
    counts = occ[..., lat.vert_atoms].sum(axis=-1)
    return np.where(counts % 2 == 0, 1, -1).astype(np.int8)


def apply_symmetry(lat: RubyLattice, g: PointGroupElement, states) -> np.ndarray:
    """Transform a configuration by a point-group element."""
    states = np.asarray(states)
    mapped = g.state_maps[np.arange(lat.n_tri), states]
    out = np.empty_like(states)
    out[..., g.tri_perm] = mapped
    return out


def apply_leg_ops(lat: RubyLattice, states, tris, legs) -> np.ndarray:
    """Apply excitation-shuffling operators on (triangle, leg) pairs.

    The per-triangle operators commute, and repeated legs on one triangle
    compose by table lookup, so the pairs may be given in any order provided
    no triangle appears twice in ``tris`` (compose such pairs first with
    :func:`reduce_leg_ops`).
    """
    out = np.array(states, copy=True)
    out[..., tris] = LEG_PERMS[legs, out[..., tris]]
    return out


def reduce_leg_ops(tris, legs):
    """Combine repeated per-triangle leg operators into at most one each.

    Two distinct legs on a triangle compose to the third; all three cancel.
    Returns (tris, legs) with unique triangles.
    """
    acc = {}
    for t, leg in zip(np.asarray(tris).ravel(), np.asarray(legs).ravel()):
        cur = acc.get(int(t))
        if cur is None:
            acc[int(t)] = int(leg)
        elif cur == int(leg):
            del acc[int(t)]
        else:
            acc[int(t)] = 3 - cur - int(leg)
    if not acc:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    tris_out = np.fromiter(acc.keys(), dtype=np.int64)
    legs_out = np.fromiter(acc.values(), dtype=np.int64)
    return tris_out, legs_out


def flip_plaquette(lat: RubyLattice, states, p: int) -> np.ndarray:
    """Resonance move on hexagon ``p``: on each bordering triangle, create or
    remove the excitation facing the hexagon, or shuffle it between the two
    non-facing atoms.  An involution that preserves every vertex charge."""
    return apply_leg_ops(lat, states, lat.hex_tris[p], lat.hex_legs[p])


# ---------------------------------------------------------------------------
# derived structure


def inter_triangle_classes(lat: RubyLattice, r_max: float):
    """Distinct inter-triangle pair distances below ``r_max``.

    Returns (values, pair_lists) where pair_lists[k] is an (m, 2) array of
    atom pairs (i < j) at distance values[k].
    """
    iu, ju = np.triu_indices(lat.n_atoms, k=1)
    different = lat.atom_tri[iu] != lat.atom_tri[ju]
    d = lat.dist[iu, ju]
    sel = different & (d < r_max - 1e-9)
    vals = np.unique(np.round(d[sel], 9))
    pairs = []
    for v in vals:
        m = sel & np.isclose(d, v, atol=1e-8)
        pairs.append(np.stack([iu[m], ju[m]], axis=1))
    return vals, pairs


def enumerate_states(n_tri: int) -> np.ndarray:
    """All 4**n_tri restricted configurations, index = sum_t s_t * 4**t."""
    n = 4 ** n_tri
    idx = np.arange(n, dtype=np.int64)
    out = np.empty((n, n_tri), dtype=np.uint8)
    for t in range(n_tri):
        out[:, t] = (idx >> (2 * t)) & 3
    return out


def state_index(states) -> np.ndarray:
    """Inverse of :func:`enumerate_states` ordering (2 bits per triangle,
    little-endian), usable as a dense-basis index."""
    states = np.asarray(states, dtype=np.int64)
    shifts = 2 * np.arange(states.shape[-1], dtype=np.int64)
    return (states << shifts).sum(axis=-1)


def swap_region(lat: RubyLattice, sigma, eta, atoms):
    """Exchange the occupations of an atom subset between two configurations.

    Returns (swap1, swap2, valid): ``swap1`` carries eta's occupations on
    ``atoms`` and sigma's elsewhere, ``swap2`` the reverse.  Rows where the
    exchange puts two excitations in one triangle are returned unswapped with
    ``valid = False`` (their amplitude weight is zero in the restricted
    space).
    """
    atoms = np.asarray(atoms)
    occ_s = decode(lat, sigma)
    occ_e = decode(lat, eta)
    sw1 = occ_s.copy()
    sw2 = occ_e.copy()
    sw1[..., atoms] = occ_e[..., atoms]
    sw2[..., atoms] = occ_s[..., atoms]
    tri1 = sw1[..., lat.tri_atoms].sum(axis=-1)
    tri2 = sw2[..., lat.tri_atoms].sum(axis=-1)
    valid = (tri1 <= 1).all(axis=-1) & (tri2 <= 1).all(axis=-1)
    sw1[~valid] = occ_s[~valid]
    sw2[~valid] = occ_e[~valid]
    return encode(lat, sw1), encode(lat, sw2), valid


def tile_states(src: RubyLattice, states, dst: RubyLattice) -> np.ndarray:
    """Repeat a configuration of a small periodic lattice over a larger one
    whose cell counts are multiples of the source's (cell residues map)."""
    if dst.L1 % src.L1 or dst.L2 % src.L2:
        raise ValueError("destination cell counts must be multiples of the source")
    states = np.asarray(states, dtype=np.uint8)
    src_cell = {tuple(c): i for i, c in enumerate(src.cells)}
    out = np.zeros(states.shape[:-1] + (dst.n_tri,), dtype=np.uint8)
    for c, (n1, n2) in enumerate(dst.cells):
        sc = src_cell[(n1 % src.L1, n2 % src.L2)]
        out[..., dst.cell_tris[c][0]] = states[..., src.cell_tris[sc][0]]
        out[..., dst.cell_tris[c][1]] = states[..., src.cell_tris[sc][1]]
    return out


def lattice_dump(lat: RubyLattice) -> str:
    """Structured text dump of positions and incidence maps, for plotting."""
    lines = [
        f"# ruby lattice L1={lat.L1} L2={lat.L2} boundary={lat.boundary} rho={lat.rho:.9f}",
        f"# atoms={lat.n_atoms} triangles={lat.n_tri} vertices={lat.n_vert} hexagons={lat.n_hex}",
        "[atoms]  # index x y triangle local",
    ]
    for i, (x, y) in enumerate(lat.atom_pos):
        lines.append(f"{i} {x:.9f} {y:.9f} {lat.atom_tri[i]} {lat.atom_local[i]}")
    lines.append("[triangles]  # index up atoms")
    for t in range(lat.n_tri):
        a = " ".join(str(x) for x in lat.tri_atoms[t])
        lines.append(f"{t} {int(lat.tri_is_up[t])} {a}")
    lines.append("[vertices]  # index x y atoms")
    for v in range(lat.n_vert):
        a = " ".join(str(x) for x in lat.vert_atoms[v])
        lines.append(f"{v} {lat.vert_pos[v, 0]:.9f} {lat.vert_pos[v, 1]:.9f} {a}")
    lines.append("[hexagons]  # index x y atoms | triangles | legs")
    for h in range(lat.n_hex):
        a = " ".join(str(x) for x in lat.hex_atoms[h])
        t = " ".join(str(x) for x in lat.hex_tris[h])
        g = " ".join(str(x) for x in lat.hex_legs[h])
        lines.append(f"{h} {lat.hex_pos[h, 0]:.9f} {lat.hex_pos[h, 1]:.9f} {a} | {t} | {g}")
    lines.append("[point_group]")
    for g in lat.point_group:
        lines.append(f"{g.name} " + " ".join(str(x) for x in g.atom_perm))
    return "\n".join(lines) + "\n"
