import math

import numpy as np
import pytest

from rubyvmc.entropy import (
    EntropyEstimate,
    amplitude_phase_split,
    amplitude_swap_estimator,
    hexagonal_region,
    kitaev_preskill,
    kp_unions,
    kp_wedge_regions,
    phase_swap_estimator,
    ratio_path,
    swap_estimator,
)
from rubyvmc.hamiltonian import RampProtocol, RydbergHamiltonian, StabilizerHamiltonian
from rubyvmc.lattice import build_lattice, decode, enumerate_states, state_index
from rubyvmc.oracle import (
    DenseState,
    evolve_exact,
    ground_state,
    product_ground_state,
    renyi2_entropy,
)
from rubyvmc.sampler import SamplerConfig, sample_doubled


@pytest.fixture(scope="module")
def lat12():
    return build_lattice(1, 2, boundary="open")


@pytest.fixture(scope="module")
def random_state12(lat12):
    rng = np.random.default_rng(21)
    n = 4**lat12.n_tri
    amps = rng.normal(size=n) + 1j * rng.normal(size=n)
    # soften the distribution so sampling mixes quickly
    amps = amps * np.exp(-0.2 * decode(lat12, enumerate_states(lat12.n_tri)).sum(axis=1))
    return DenseState(lat12, amps)


def _doubled(lat, psi, n=40000, atoms=None, seed=3):
    cfg = SamplerConfig(n_chains=32, n_samples=n // 32, burn_in=8, thinning=4,
                        seed=seed)
    return sample_doubled(cfg, psi.log_amplitude, lat, np.zeros(lat.n_tri, dtype=np.uint8),
                          atoms=atoms)


def test_empty_region_entropy_zero(lat12, random_state12):
    table = _doubled(lat12, random_state12, n=2000)
    rec = swap_estimator(lat12, table, random_state12.log_amplitude, np.empty(0))
    assert rec.value == 0.0 and rec.ok


def test_product_state_entropy_zero(lat12):
    psi = product_ground_state(lat12)
    # sampling a delta state: all chains sit on the vacuum
    table = _doubled(lat12, psi, n=2000)
    rec = swap_estimator(lat12, table, psi.log_amplitude, np.arange(5))
    assert rec.ok
    assert abs(rec.value) < 1e-12


def test_swap_estimator_matches_exact_rdm(lat12, random_state12):
    atoms = np.array([0, 2, 5, 7, 8])
    exact = renyi2_entropy(random_state12, atoms)
    table = _doubled(lat12, random_state12, n=60000)
    rec = swap_estimator(lat12, table, random_state12.log_amplitude, atoms)
    assert rec.ok
    assert abs(rec.value - exact) < 3 * rec.stderr + 0.01


def test_amplitude_plus_phase_equals_total(lat12, random_state12):
    atoms = np.array([1, 3, 4, 9])
    exact_total = renyi2_entropy(random_state12, atoms)
    amp_state = DenseState(lat12, np.abs(random_state12.amps).astype(complex))
    exact_am = renyi2_entropy(amp_state, atoms)
    cfg = SamplerConfig(n_chains=32, n_samples=1500, burn_in=8, thinning=4, seed=6)
    s_am, s_ph = amplitude_phase_split(lat12, random_state12.log_amplitude, atoms,
                                       cfg, np.zeros(lat12.n_tri, dtype=np.uint8))
    assert s_am.ok and s_ph.ok
    assert abs(s_am.value - exact_am) < 3 * s_am.stderr + 0.01
    total = s_am.value + s_ph.value
    err = math.hypot(s_am.stderr, s_ph.stderr)
    assert abs(total - exact_total) < 3 * err + 0.015


def test_phase_entropy_zero_for_real_state(lat12):
    rng = np.random.default_rng(4)
    amps = np.abs(rng.normal(size=4**lat12.n_tri)) + 0.01
    psi = DenseState(lat12, amps.astype(complex))
    atoms = np.array([0, 1, 2, 6])
    table = _doubled(lat12, psi, n=4000, atoms=atoms)
    rec = phase_swap_estimator(lat12, table, psi.log_amplitude, atoms)
    assert rec.ok
    assert abs(rec.value) < 1e-12


def test_swap_estimator_flags_tiny_mean(lat12, random_state12):
    # entropy far beyond what 40 samples can resolve -> flagged, not faked
    rng = np.random.default_rng(11)
    n = 4**lat12.n_tri
    hard = DenseState(lat12, (rng.normal(size=n) + 1j * rng.normal(size=n)))
    cfg = SamplerConfig(n_chains=4, n_samples=10, burn_in=2, thinning=2, seed=2)
    table = sample_doubled(cfg, hard.log_amplitude, lat12,
                           np.zeros(lat12.n_tri, dtype=np.uint8))
    atoms = np.arange(lat12.n_atoms // 2)
    rec = swap_estimator(lat12, table, hard.log_amplitude, atoms)
    assert (not rec.ok) or rec.stderr > 0.05


def test_ratio_path_identical_checkpoints(lat12, random_state12):
    cfg = SamplerConfig(n_chains=16, n_samples=200, burn_in=6, thinning=4, seed=8)
    atoms = np.array([0, 2, 5])
    wfs = [random_state12.log_amplitude] * 4
    series = ratio_path(lat12, wfs, [0.0, 0.1, 0.2, 0.3], atoms, cfg, master_seed=3)
    assert series.ok
    assert np.allclose(series.increments, 0.0, atol=3 * series.increment_errors.max() + 1e-3)


def test_ratio_path_telescopes_to_exact(lat12):
    # evolve a small system exactly and check the telescoped amplitude
    # entropy against the dense reduced density matrix at the endpoint
    ramp = RampProtocol.piecewise_linear([(0.0, 1.0, -1.0), (1.5, 1.0, 1.2)])
    base = RydbergHamiltonian(lat12, omega=1.0, delta=-1.0, tail_cutoff=0.0)
    psi0 = product_ground_state(lat12)
    t_grid = np.linspace(0.0, 1.5, 7)
    _, traj = evolve_exact(psi0, ramp, base, t_grid=t_grid, dt_ref=2e-3)
    atoms = np.array([0, 1, 2, 3, 4, 5])
    amp_states = [DenseState(lat12, np.abs(s.amps).astype(complex)) for s in traj]
    exact_am = [renyi2_entropy(a, atoms) for a in amp_states]
    cfg = SamplerConfig(n_chains=32, n_samples=800, burn_in=8, thinning=4, seed=5)
    base_est = EntropyEstimate(value=exact_am[0], stderr=0.0, ok=True)
    cache = {}
    series = ratio_path(lat12, [s.log_amplitude for s in traj], t_grid, atoms, cfg,
                        s_base=base_est, master_seed=17, empty_cache=cache)
    assert series.ok
    assert len(cache) == len(t_grid) - 1
    err = series.stderr[-1]
    assert abs(series.s_am[-1] - exact_am[-1]) < 3 * err + 0.02
    # the subsystem-independent cache is reused by a second region
    atoms2 = np.array([6, 7, 8])
    series2 = ratio_path(lat12, [s.log_amplitude for s in traj], t_grid, atoms2, cfg,
                         s_base=EntropyEstimate(renyi2_entropy(amp_states[0], atoms2), 0.0, True),
                         master_seed=17, empty_cache=cache)
    assert series2.ok


def test_kp_regions_partition_properties(torus22):
    regions = kp_wedge_regions(torus22, 0, scale=2)
    a1, a2, a3 = regions["A1"], regions["A2"], regions["A3"]
    assert len(set(a1) & set(a2)) == 0
    assert len(set(a2) & set(a3)) == 0
    assert len(set(a1) & set(a3)) == 0
    union = np.sort(np.concatenate([a1, a2, a3]))
    assert np.array_equal(union, np.sort(hexagonal_region(torus22, 0, 2)))
    names = set(kp_unions(regions))
    assert names == {"A1", "A2", "A3", "A1A2", "A2A3", "A1A3", "A1A2A3"}


def test_kitaev_preskill_product_state_zero(lat12):
    psi = product_ground_state(lat12)
    ents = {k: 0.0 for k in ("A1", "A2", "A3", "A1A2", "A2A3", "A1A3", "A1A2A3")}
    gamma, err = kitaev_preskill(ents, {k: 0.01 for k in ents})
    assert gamma == 0.0
    assert abs(err - 0.01 * math.sqrt(7)) < 1e-12


def test_kitaev_preskill_error_propagation():
    ents = {"A1": 1.0, "A2": 1.1, "A3": 0.9, "A1A2": 1.8, "A2A3": 1.7,
            "A1A3": 1.6, "A1A2A3": 2.2}
    gamma, err = kitaev_preskill(ents)
    assert np.isclose(gamma, -(1.0 + 1.1 + 0.9 - 1.8 - 1.7 - 1.6 + 2.2))
    assert err == 0.0
