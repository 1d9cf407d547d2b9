import itertools
import math

import numpy as np
import pytest

from rubyvmc.lattice import (
    EncodingError,
    apply_symmetry,
    build_lattice,
    decode,
    encode,
    enumerate_states,
    flip_plaquette,
    inter_triangle_classes,
    lattice_dump,
    parity_charges,
    reduce_leg_ops,
    state_index,
)

SQRT3 = math.sqrt(3.0)


def test_counts_2x2(torus22):
    assert torus22.n_atoms == 24
    assert torus22.n_tri == 8
    assert torus22.n_hex == 4
    assert torus22.n_vert == 12


def test_counts_8x8():
    lat = build_lattice(8, 8)
    assert lat.n_atoms == 384


def test_nearest_distances_brute_force(torus22):
    # enumerate the distance table and sort: the three shortest classes are
    # a, sqrt(3) a and 2 a, all below the blockade radius 2.4 a
    iu, ju = np.triu_indices(torus22.n_atoms, k=1)
    d = np.sort(np.unique(np.round(torus22.dist[iu, ju], 9)))
    assert np.allclose(d[:3], [1.0, SQRT3, 2.0], atol=1e-9)
    assert d[0] > 0
    assert np.all(d[:3] <= 2.4)
    assert d[3] > 2.4


def test_intra_triangle_distance_exact(torus22):
    for t in range(torus22.n_tri):
        a, b, c = torus22.tri_atoms[t]
        for i, j in ((a, b), (b, c), (a, c)):
            assert abs(torus22.dist[i, j] - 1.0) < 1e-12


def test_every_atom_in_one_triangle(torus22):
    seen = np.zeros(torus22.n_atoms, dtype=int)
    for t in range(torus22.n_tri):
        seen[torus22.tri_atoms[t]] += 1
    assert np.all(seen == 1)


def test_vertex_and_hexagon_incidence(torus22):
    assert torus22.vert_atoms.shape == (12, 4)
    assert torus22.hex_atoms.shape == (4, 6)
    for h in range(torus22.n_hex):
        # one bordering atom per adjacent triangle
        assert len(set(torus22.hex_tris[h])) == 6
        assert np.all(torus22.atom_local[torus22.hex_atoms[h]] == torus22.hex_legs[h])


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_lattice(1, 2)
    with pytest.raises(ValueError):
        build_lattice(2, 1)
    with pytest.raises(ValueError):
        build_lattice(2, 2, rho=0.9)
    build_lattice(1, 2, boundary="open")  # open boundary has no minimum image


def test_general_rho_rectangle_gap():
    for rho in (1.5, SQRT3, 2.2):
        lat = build_lattice(2, 2, rho=rho)
        vals, _ = inter_triangle_classes(lat, 100.0)
        assert abs(vals[0] - rho) < 1e-9  # shortest inter-triangle distance


def test_encode_decode_round_trip(torus22, rng):
    states = rng.integers(0, 4, size=(32, torus22.n_tri)).astype(np.uint8)
    assert np.array_equal(encode(torus22, decode(torus22, states)), states)


def test_encode_trivial_cases(torus22):
    occ = np.zeros(torus22.n_atoms, dtype=np.uint8)
    assert np.all(encode(torus22, occ) == 0)
    occ[0] = 1
    st = encode(torus22, occ)
    assert st[torus22.atom_tri[0]] == torus22.atom_local[0] + 1
    assert np.sum(st != 0) == 1


def test_encode_rejects_double_excitation(torus22):
    occ = np.zeros(torus22.n_atoms, dtype=np.uint8)
    a, b, _ = torus22.tri_atoms[0]
    occ[a] = occ[b] = 1
    with pytest.raises(EncodingError):
        encode(torus22, occ)


def test_parity_charges_all_ground(torus22):
    st = np.zeros(torus22.n_tri, dtype=np.uint8)
    assert np.all(parity_charges(torus22, st) == 1)


def test_parity_charges_single_excitation(torus22):
    for atom in (0, 7, 23):
        occ = np.zeros(torus22.n_atoms, dtype=np.uint8)
        occ[atom] = 1
        ch = parity_charges(torus22, encode(torus22, occ))
        neg = np.nonzero(ch == -1)[0]
        assert sorted(neg) == sorted(torus22.atom_verts[atom])


def test_parity_charges_dimer_cover(torus22, dimer_cover22):
    assert np.all(parity_charges(torus22, dimer_cover22) == -1)


def test_state_index_round_trip(torus22):
    states = enumerate_states(torus22.n_tri)
    assert np.array_equal(state_index(states), np.arange(4**torus22.n_tri))


def test_apply_symmetry_identity_and_rotation(torus22, rng):
    ident = torus22.point_group[0]
    st = rng.integers(0, 4, size=torus22.n_tri).astype(np.uint8)
    assert np.array_equal(apply_symmetry(torus22, ident, st), st)
    ground = np.zeros(torus22.n_tri, dtype=np.uint8)
    for g in torus22.point_group:
        assert np.array_equal(apply_symmetry(torus22, g, ground), ground)


def test_apply_symmetry_matches_geometric_action(torus22):
    # single excitation moves to the geometrically mapped atom position
    for g in torus22.point_group:
        for atom in (0, 5, 13):
            occ = np.zeros(torus22.n_atoms, dtype=np.uint8)
            occ[atom] = 1
            out = decode(torus22, apply_symmetry(torus22, g, encode(torus22, occ)))
            assert out.sum() == 1
            assert out[g.atom_perm[atom]] == 1


def test_symmetry_preserves_charge_multiset(torus22, rng):
    st = rng.integers(0, 4, size=(8, torus22.n_tri)).astype(np.uint8)
    base = np.sort(parity_charges(torus22, st), axis=-1)
    for g in torus22.point_group:
        out = np.sort(parity_charges(torus22, apply_symmetry(torus22, g, st)), axis=-1)
        assert np.array_equal(out, base)


def test_point_group_closure_and_inverse(torus22):
    perms = {g.atom_perm.tobytes(): g.name for g in torus22.point_group}
    n = torus22.n_atoms
    for g in torus22.point_group:
        inv = np.empty(n, dtype=np.int64)
        inv[g.atom_perm] = np.arange(n)
        assert inv.tobytes() in perms
        for h in torus22.point_group:
            comp = g.atom_perm[h.atom_perm]
            assert comp.tobytes() in perms
    assert len(torus22.point_group) == 12  # C6v on the L1 = L2 torus


def test_point_group_isometry(torus22):
    for g in torus22.point_group:
        sub = torus22.dist[np.ix_(g.atom_perm, g.atom_perm)]
        assert np.allclose(sub, torus22.dist, atol=1e-9)


def test_rectangular_torus_loses_c6():
    names = [g.name for g in build_lattice(3, 2).point_group]
    assert "identity" in names
    assert "C6^1" not in names


def test_distance_table_symmetric_triangle_inequality(torus22):
    d = torus22.dist
    assert np.allclose(d, d.T)
    n = torus22.n_atoms
    for i, j, k in itertools.islice(itertools.combinations(range(n), 3), 500):
        assert d[i, j] <= d[i, k] + d[k, j] + 1e-9


def test_plaquette_flip_involution_and_charges(torus22, rng):
    st = rng.integers(0, 4, size=(16, torus22.n_tri)).astype(np.uint8)
    for p in range(torus22.n_hex):
        flipped = flip_plaquette(torus22, st, p)
        assert np.array_equal(flip_plaquette(torus22, flipped, p), st)
        assert np.array_equal(parity_charges(torus22, flipped), parity_charges(torus22, st))


def test_reduce_leg_ops_composition():
    tris = [3, 3]
    legs = [0, 1]
    t, l = reduce_leg_ops(tris, legs)
    assert list(t) == [3] and list(l) == [2]
    t, l = reduce_leg_ops([3, 3, 3], [0, 1, 2])
    assert len(t) == 0
    t, l = reduce_leg_ops([3, 3], [1, 1])
    assert len(t) == 0


def test_open_boundary_mask():
    mask = [(0, 0), (1, 0), (0, 1), (1, 1)]
    lat = build_lattice(3, 3, boundary="open", cell_mask=mask)
    assert lat.n_atoms == 24
    assert lat.n_tri == 8
    # all incidence entries reference existing atoms
    if lat.n_vert:
        assert lat.vert_atoms.max() < lat.n_atoms
    names = [g.name for g in lat.point_group]
    assert "identity" in names


def test_lattice_dump_contains_sections(torus22):
    text = lattice_dump(torus22)
    for section in ("[atoms]", "[triangles]", "[vertices]", "[hexagons]", "[point_group]"):
        assert section in text
