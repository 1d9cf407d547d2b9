import numpy as np
import pytest

from rubyvmc.lattice import (
    build_lattice,
    decode,
    enumerate_states,
    parity_charges,
    state_index,
)
from rubyvmc.sampler import (
    DoubledTable,
    SamplerConfig,
    effective_sample_size,
    estimate,
    run_chains,
    sample_doubled,
    split_rhat,
)


def uniform_logpsi(states):
    return np.zeros(np.asarray(states).shape[0], dtype=complex)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(p_plaquette=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(n_chains=1)


def test_split_rhat_identical_chains(rng):
    # identical deterministic streams carry no between-chain evidence
    constant = np.full((2, 200), 1.7)
    assert split_rhat(constant) == 1.0
    row = rng.normal(size=200)
    series = np.vstack([row, row])
    assert 1.0 <= split_rhat(series) < 1.03


def test_split_rhat_frozen_chain_flagged(rng):
    live = rng.normal(size=400)
    frozen = np.full(400, 0.3)
    assert split_rhat(np.vstack([live, frozen])) > 1.5


def test_split_rhat_well_mixed_chains(rng):
    series = rng.normal(size=(4, 500))
    assert split_rhat(series) < 1.02


def test_effective_sample_size_iid(rng):
    series = rng.normal(size=(4, 400))
    ess = effective_sample_size(series)
    assert 800 < ess <= 1600 * 1.2


def test_first_proposal_from_vacuum_accepted(torus22, rng):
    cfg = SamplerConfig(n_chains=4, n_samples=1, burn_in=0, thinning=1,
                        p_plaquette=0.0, seed=5)
    table = run_chains(cfg, uniform_logpsi, torus22,
                       np.zeros(torus22.n_tri, dtype=np.uint8))
    assert table.acceptance_rate == 1.0  # every toggle from the vacuum is valid


def test_uniform_target_histogram_chi_square(torus22):
    # p = 0 single-flip sampling of the uniform state over all 4^8 configs
    cfg = SamplerConfig(n_chains=512, n_samples=2048, burn_in=20, thinning=12,
                        p_plaquette=0.0, seed=11)
    table = run_chains(cfg, uniform_logpsi, torus22,
                       np.zeros(torus22.n_tri, dtype=np.uint8))
    idx = state_index(table.flat())
    counts = np.bincount(idx, minlength=4**torus22.n_tri)
    n, k = idx.size, 4**torus22.n_tri
    assert n >= 1_000_000
    expected = n / k
    chi2 = ((counts - expected) ** 2 / expected).sum()
    df = k - 1
    assert abs(chi2 - df) < 4 * np.sqrt(2 * df)


def test_detailed_balance_brute_force(rng):
    # transition matrix of the single-flip rule on the 1x2 open lattice
    lat = build_lattice(1, 2, boundary="open")
    states = enumerate_states(lat.n_tri)
    n = len(states)
    logs = 0.4 * (rng.normal(size=n) + 1j * rng.normal(size=n))
    pi = np.exp(2 * logs.real)
    T = np.zeros((n, n))
    toggle = np.array([[1, 2, 3], [0, -1, -1], [-1, 0, -1], [-1, -1, 0]])
    for a in range(n):
        for atom in range(lat.n_atoms):
            t = lat.atom_tri[atom]
            new = toggle[states[a, t], lat.atom_local[atom]]
            if new < 0:
                T[a, a] += 1.0 / lat.n_atoms
                continue
            cfg = states[a].copy()
            cfg[t] = new
            b = int(state_index(cfg))
            acc = min(1.0, np.exp(2 * (logs[b].real - logs[a].real)))
            T[a, b] += acc / lat.n_atoms
            T[a, a] += (1 - acc) / lat.n_atoms
    assert np.allclose(T.sum(axis=1), 1.0)
    flow = pi[:, None] * T
    assert np.abs(flow - flow.T).max() < 1e-10


def test_empirical_flow_matches_amplitude_ratio(rng):
    # observed transition frequencies reproduce exp(2 Re dlogpsi)
    lat = build_lattice(1, 2, boundary="open")
    states = enumerate_states(lat.n_tri)
    logs = 0.3 * rng.normal(size=len(states)) + 0j
    logpsi = lambda s: logs[state_index(s)]
    cfg = SamplerConfig(n_chains=64, n_samples=3000, burn_in=4, thinning=1,
                        p_plaquette=0.0, seed=2)
    table = run_chains(cfg, logpsi, lat, np.zeros(lat.n_tri, dtype=np.uint8))
    idx = state_index(table.samples).reshape(64, -1)
    # pick the two most visited states that differ by one toggle
    counts = np.bincount(idx.reshape(-1), minlength=len(states))
    a = int(np.argmax(counts))
    occ = decode(lat, states[a])
    atom = int(np.nonzero(occ == 0)[0][0])
    cfgb = states[a].copy()
    cfgb[lat.atom_tri[atom]] = lat.atom_local[atom] + 1
    b = int(state_index(cfgb))
    n_ab = np.sum((idx[:, :-1] == a) & (idx[:, 1:] == b))
    n_ba = np.sum((idx[:, :-1] == b) & (idx[:, 1:] == a))
    if min(n_ab, n_ba) > 40:
        ratio = n_ab / n_ba
        expect = np.exp(2 * (logs[b].real - logs[a].real))
        assert abs(np.log(ratio / expect)) < 0.5


def test_plaquette_moves_preserve_charges(torus22):
    cfg = SamplerConfig(n_chains=8, n_samples=32, burn_in=2, thinning=4,
                        p_plaquette=1.0, seed=3)
    init = np.zeros(torus22.n_tri, dtype=np.uint8)
    table = run_chains(cfg, uniform_logpsi, torus22, init)
    ref = parity_charges(torus22, init)
    charges = parity_charges(torus22, table.flat())
    assert np.array_equal(charges, np.tile(ref, (charges.shape[0], 1)))


def test_gauss_sector_reachable_through_full_graph(torus22, all_states22):
    # all dimer covers communicate once single flips may leave the sector
    charges = parity_charges(torus22, all_states22)
    covers = set(state_index(all_states22[(charges == -1).all(axis=1)]).tolist())
    toggle = np.array([[1, 2, 3], [0, -1, -1], [-1, 0, -1], [-1, -1, 0]])
    from rubyvmc.lattice import flip_plaquette

    start = next(iter(covers))
    seen = {start}
    frontier = [start]
    states = all_states22
    while frontier:
        nxt = []
        for a in frontier:
            neighbors = []
            for atom in range(torus22.n_atoms):
                t = torus22.atom_tri[atom]
                new = toggle[states[a, t], torus22.atom_local[atom]]
                if new >= 0:
                    cfg = states[a].copy()
                    cfg[t] = new
                    neighbors.append(int(state_index(cfg)))
            for p in range(torus22.n_hex):
                neighbors.append(int(state_index(flip_plaquette(torus22, states[a], p))))
            for b in neighbors:
                if b not in seen:
                    seen.add(b)
                    nxt.append(b)
        frontier = nxt
    assert covers <= seen


def test_seeded_determinism(torus22):
    cfg = SamplerConfig(n_chains=4, n_samples=16, burn_in=2, thinning=8,
                        p_plaquette=0.3, seed=42)
    t1 = run_chains(cfg, uniform_logpsi, torus22, np.zeros(torus22.n_tri, dtype=np.uint8))
    t2 = run_chains(cfg, uniform_logpsi, torus22, np.zeros(torus22.n_tri, dtype=np.uint8))
    assert np.array_equal(t1.samples, t2.samples)
    assert t1.acceptance_rate == t2.acceptance_rate


def test_estimate_record_fields(rng):
    values = rng.normal(size=(4, 100)) + 0j
    rec = estimate(values, acceptance_rate=0.4)
    assert rec.stderr >= 0
    assert rec.r_hat >= 1.0 or np.isnan(rec.r_hat)
    assert rec.acceptance_rate == 0.4


def test_doubled_sampler_product_state_marginals(torus22):
    # factorized target: each half behaves like an independent |psi|^2 chain,
    # so per-triangle excitation probabilities take the closed product form
    A = 0.8
    logpsi = lambda s: (A * (1 - 2 * decode(torus22, s).astype(float)).sum(-1)).astype(complex)
    w_exc = 3 * np.exp(2 * A)          # three single-excitation states
    w_gnd = np.exp(6 * A)
    n_exact = torus22.n_tri * w_exc / (w_exc + w_gnd)
    cfg = SamplerConfig(n_chains=32, n_samples=300, burn_in=6, thinning=8, seed=9)
    table = sample_doubled(cfg, logpsi, torus22, np.zeros(torus22.n_tri, dtype=np.uint8))
    sig, eta = table.flat()
    n_s = decode(torus22, sig).sum(axis=1).mean()
    n_e = decode(torus22, eta).sum(axis=1).mean()
    assert abs(n_s - n_exact) < 0.06
    assert abs(n_e - n_exact) < 0.06


def test_doubled_sampler_uniform_pairs(torus22):
    cfg = SamplerConfig(n_chains=32, n_samples=400, burn_in=4, thinning=6, seed=13)
    table = sample_doubled(cfg, uniform_logpsi, torus22,
                           np.zeros(torus22.n_tri, dtype=np.uint8))
    sig, eta = table.flat()
    # marginal occupation of every atom is the uniform-space value 1/4 + 3/4*...
    occ = decode(torus22, sig).mean(axis=0)
    # each triangle state uniform over 4 -> per-atom occupation = 1/4
    assert np.abs(occ - 0.25).max() < 0.03
    occ_eta = decode(torus22, eta).mean(axis=0)
    assert np.abs(occ_eta - 0.25).max() < 0.03
