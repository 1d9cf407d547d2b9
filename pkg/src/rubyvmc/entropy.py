"""Renyi-2 entanglement entropy estimators on the doubled configuration space
and the Kitaev-Preskill combination for the topological term.

A doubled-space sample is a pair of configurations ``(sigma, eta)``.  For an
atom subset ``A`` the swap weight

    F(x; A, psi) = psi(eta_A, eta_B) psi(sigma_A, sigma_B)
                   psi*(eta_A, sigma_B) psi*(sigma_A, eta_B)

(with ``B`` the complement) drives every estimator here; swapped
configurations that leave the restricted space carry zero weight.  ``F`` with
the amplitude part ``Psi = |psi|`` is non-negative and defines the sampling
densities used by the reweighted and ratio estimators.

Estimators are pure reductions over frozen sample tables; per-region and
per-increment jobs are independent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import RubyLattice, swap_region
from .sampler import SamplerConfig, sample_doubled

log = logging.getLogger(__name__)


@dataclass
class EntropyEstimate:
    value: float
    stderr: float
    ok: bool
    n_samples: int = 0


# ---------------------------------------------------------------------------
# partitions


def minimum_image_displacements(lat: RubyLattice, center: np.ndarray) -> np.ndarray:
    """Displacement of every atom from ``center``, wrapped on the torus."""
    d = lat.atom_pos - center
    if not lat.periodic:
        return d
    best = d.copy()
    best_n = np.linalg.norm(best, axis=1)
    for k1 in (-1, 0, 1):
        for k2 in (-1, 0, 1):
            cand = d + k1 * lat.L1 * lat.a1 + k2 * lat.L2 * lat.a2
            n = np.linalg.norm(cand, axis=1)
            closer = n < best_n
            best[closer] = cand[closer]
            best_n[closer] = n[closer]
    return best


# Radius covering the hexagon spokes at scale 2 and growing by one kagome
# link (2a) per unit of scale; chosen so the smallest region is the hexagon
# disk with its twelve surrounding atoms.
_RADIUS_PER_SCALE = 1.33


def hexagonal_region(lat: RubyLattice, center_hex: int, scale: int) -> np.ndarray:
    """Atoms within the hexagonal window of linear scale ``scale`` (in kagome
    links) around a hexagon center."""
    disp = minimum_image_displacements(lat, lat.hex_pos[center_hex])
    r = np.linalg.norm(disp, axis=1)
    radius = _RADIUS_PER_SCALE * scale
    if lat.periodic:
        extent = min(lat.L1 * np.linalg.norm(lat.a1), lat.L2 * np.linalg.norm(lat.a2))
        if 2 * radius >= extent:
            log.warning("entropy region of scale %d wraps around the torus", scale)
    return np.nonzero(r <= radius + 1e-9)[0]


def kp_wedge_regions(lat: RubyLattice, center_hex: int, scale: int,
                     angle_offset: float = 0.0) -> dict:
    """Split the hexagonal region into three adjacent 120-degree wedges.

    Atoms exactly on a sector border go to the lower sector index
    (deterministic tie-break).  Returns {"A1": atoms, "A2": atoms, "A3":
    atoms}; the union is the full region.
    """
    atoms = hexagonal_region(lat, center_hex, scale)
    disp = minimum_image_displacements(lat, lat.hex_pos[center_hex])[atoms]
    ang = (np.arctan2(disp[:, 1], disp[:, 0]) - angle_offset) % (2 * np.pi)
    out = {}
    for k in range(3):
        lo, hi = k * 2 * np.pi / 3, (k + 1) * 2 * np.pi / 3
        sel = (ang >= lo - 1e-12) & (ang < hi - 1e-12)
        out[f"A{k + 1}"] = atoms[sel]
    if any(len(v) == 0 for v in out.values()):
        raise ValueError("empty wedge; increase the region scale")
    return out


KP_REGION_NAMES = ("A1", "A2", "A3", "A1A2", "A2A3", "A1A3", "A1A2A3")


def kp_unions(regions: dict) -> dict:
    a1, a2, a3 = regions["A1"], regions["A2"], regions["A3"]
    return {
        "A1": a1, "A2": a2, "A3": a3,
        "A1A2": np.concatenate([a1, a2]),
        "A2A3": np.concatenate([a2, a3]),
        "A1A3": np.concatenate([a1, a3]),
        "A1A2A3": np.concatenate([a1, a2, a3]),
    }


def kitaev_preskill(entropies: dict, errors: dict | None = None):
    """Topological term from the seven-region combination.

    Returns (gamma, err); the error propagates in quadrature assuming the
    region estimates are independent (separate sample sets per region).
    """
    signs = {"A1": 1, "A2": 1, "A3": 1, "A1A2": -1, "A2A3": -1, "A1A3": -1,
             "A1A2A3": 1}
    neg_gamma = sum(signs[k] * entropies[k] for k in KP_REGION_NAMES)
    err = 0.0
    if errors is not None:
        err = math.sqrt(sum(errors[k] ** 2 for k in KP_REGION_NAMES))
    return -neg_gamma, err


# ---------------------------------------------------------------------------
# doubled-space estimators


def _mean_to_entropy(ratios, n_eff_scale=1.0) -> EntropyEstimate:
    ratios = np.asarray(ratios)
    n = ratios.size
    m = float(ratios.real.mean())
    err_m = float(ratios.real.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if m <= max(err_m, 0.0):
        log.warning("swap mean %.3g consistent with zero; entropy too large "
                    "for this sample size", m)
        return EntropyEstimate(value=float("nan"), stderr=float("inf"), ok=False,
                               n_samples=n)
    return EntropyEstimate(value=-math.log(m), stderr=err_m / m, ok=True, n_samples=n)


def swap_estimator(lat: RubyLattice, table, log_amplitude, atoms) -> EntropyEstimate:
    """Renyi-2 entropy from doubled samples drawn from F(x; {}, psi).

    Swap weight per sample:  conj( psi(sw1) psi(sw2) / (psi(sigma) psi(eta)) )
    with zero weight when the swapped configurations leave the restricted
    space.  The empty subset returns zero exactly.
    """
    atoms = np.asarray(atoms)
    sigma, eta = table.flat()
    if atoms.size == 0:
        return EntropyEstimate(0.0, 0.0, True, sigma.shape[0])
    sw1, sw2, valid = swap_region(lat, sigma, eta, atoms)
    base = np.asarray(log_amplitude(sigma)) + np.asarray(log_amplitude(eta))
    ratios = np.zeros(sigma.shape[0], dtype=np.complex128)
    nz = np.nonzero(valid)[0]
    if nz.size:
        moved = np.asarray(log_amplitude(sw1[nz])) + np.asarray(log_amplitude(sw2[nz]))
        ratios[nz] = np.exp(np.conj(moved - base[nz]))
    return _mean_to_entropy(ratios)


def amplitude_swap_estimator(lat, table, log_amplitude, atoms) -> EntropyEstimate:
    """Amplitude-sector entropy: the same swap estimator evaluated with the
    modulus |psi| (samples from F(x; {}, Psi) = F(x; {}, psi))."""
    atoms = np.asarray(atoms)
    sigma, eta = table.flat()
    if atoms.size == 0:
        return EntropyEstimate(0.0, 0.0, True, sigma.shape[0])
    sw1, sw2, valid = swap_region(lat, sigma, eta, atoms)
    base = np.asarray(log_amplitude(sigma)).real + np.asarray(log_amplitude(eta)).real
    ratios = np.zeros(sigma.shape[0])
    nz = np.nonzero(valid)[0]
    if nz.size:
        moved = (np.asarray(log_amplitude(sw1[nz])).real
                 + np.asarray(log_amplitude(sw2[nz])).real)
        ratios[nz] = np.exp(moved - base[nz])
        if np.any(ratios < 0):
            raise AssertionError("amplitude swap weight must be non-negative")
    return _mean_to_entropy(ratios)


def phase_swap_estimator(lat, table_swapped, log_amplitude, atoms) -> EntropyEstimate:
    """Phase-sector entropy from samples of F(x; A, Psi): the reweighting
    factor is the pure phase exp(i [th(sigma) + th(eta) - th(sw1) - th(sw2)]).

    Identically zero for real non-negative wavefunctions.
    """
    atoms = np.asarray(atoms)
    sigma, eta = table_swapped.flat()
    if atoms.size == 0:
        return EntropyEstimate(0.0, 0.0, True, sigma.shape[0])
    sw1, sw2, valid = swap_region(lat, sigma, eta, atoms)
    if not np.all(valid):
        raise ValueError("samples of F(x; A, Psi) must have valid swaps")
    theta = (np.asarray(log_amplitude(sigma)).imag + np.asarray(log_amplitude(eta)).imag
             - np.asarray(log_amplitude(sw1)).imag - np.asarray(log_amplitude(sw2)).imag)
    return _mean_to_entropy(np.exp(1j * theta))


def amplitude_phase_split(lat, log_amplitude, atoms, cfg: SamplerConfig, init,
                          rng=None):
    """Sample both sectors and return (S_am, S_ph) estimates.

    S_am uses plain doubled samples; S_ph reweights samples of the
    A-swapped amplitude density.  The total entropy is their sum.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    plain = sample_doubled(cfg, log_amplitude, lat, init, atoms=None, rng=rng)
    s_am = amplitude_swap_estimator(lat, plain, log_amplitude, atoms)
    swapped = sample_doubled(cfg, log_amplitude, lat, init, atoms=atoms, rng=rng)
    s_ph = phase_swap_estimator(lat, swapped, log_amplitude, atoms)
    return s_am, s_ph


# ---------------------------------------------------------------------------
# sequential ratio estimators along a checkpoint path


@dataclass
class EntropySeries:
    times: np.ndarray
    s_am: np.ndarray               # cumulative amplitude entropy
    s_base: float
    increments: np.ndarray
    increment_errors: np.ndarray
    stderr: np.ndarray             # cumulative, quadrature
    ok: bool
    failed_steps: list = field(default_factory=list)


def _increment_term(lat, log_amp_old, log_amp_new, table, atoms):
    """mean of F(x; A, Psi_new) / F(x; A, Psi_old) over x ~ F(x; A, Psi_old)."""
    sigma, eta = table.flat()
    configs = [sigma, eta]
    if atoms is not None and len(atoms):
        sw1, sw2, valid = swap_region(lat, sigma, eta, atoms)
        if not np.all(valid):
            raise ValueError("reference samples must have valid swaps")
        configs += [sw1, sw2]
    delta = np.zeros(sigma.shape[0])
    for cfg_block in configs:
        delta += (np.asarray(log_amp_new(cfg_block)).real
                  - np.asarray(log_amp_old(cfg_block)).real)
    if atoms is None or len(atoms) == 0:
        delta *= 2.0  # F(x; {}, Psi) squares both halves
    ratios = np.exp(delta)
    n = ratios.size
    m = float(ratios.mean())
    err = float(ratios.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, err


def ratio_path(lat, wavefunctions, times, atoms, cfg: SamplerConfig,
               s_base: EntropyEstimate | None = None, master_seed: int = 0,
               empty_cache: dict | None = None) -> EntropySeries:
    """Amplitude entropy along a path of checkpoints by telescoping ratios.

    Each increment from checkpoint k-1 to k draws samples from
    F(x; A, Psi_{k-1}) for the subsystem term and from F(x; {}, Psi_{k-1})
    for the subsystem-independent normalization term (cached in
    ``empty_cache`` and shared between subsystems).  The base entropy at the
    first checkpoint is estimated naively unless supplied.
    """
    atoms = np.asarray(atoms)
    times = np.asarray(times, dtype=float)
    if len(wavefunctions) != len(times):
        raise ValueError("one wavefunction per checkpoint time")
    init = np.zeros(lat.n_tri, dtype=np.uint8)
    if s_base is None:
        rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(0,)))
        table0 = sample_doubled(cfg, wavefunctions[0], lat, init, atoms=None, rng=rng)
        s_base = amplitude_swap_estimator(lat, table0, wavefunctions[0], atoms)
    incs = np.zeros(len(times) - 1)
    errs = np.zeros(len(times) - 1)
    failed = []
    for k in range(1, len(times)):
        old, new = wavefunctions[k - 1], wavefunctions[k]
        rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(1, k)))
        table_a = sample_doubled(cfg, old, lat, init, atoms=atoms, rng=rng)
        m1, e1 = _increment_term(lat, old, new, table_a, atoms)
        cache_key = k
        if empty_cache is not None and cache_key in empty_cache:
            m2, e2 = empty_cache[cache_key]
        else:
            rng2 = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(2, k)))
            table_0 = sample_doubled(cfg, old, lat, init, atoms=None, rng=rng2)
            m2, e2 = _increment_term(lat, old, new, table_0, None)
            if empty_cache is not None:
                empty_cache[cache_key] = (m2, e2)
        if m1 <= e1 or m2 <= e2:
            failed.append(k)
            incs[k - 1] = np.nan
            errs[k - 1] = np.inf
            continue
        incs[k - 1] = -math.log(m1) + math.log(m2)
        errs[k - 1] = math.hypot(e1 / m1, e2 / m2)
    s_am = s_base.value + np.concatenate([[0.0], np.cumsum(incs)])
    stderr = np.sqrt(s_base.stderr**2 + np.concatenate([[0.0], np.cumsum(errs**2)]))
    return EntropySeries(times=times, s_am=s_am, s_base=s_base.value,
                         increments=incs, increment_errors=errs, stderr=stderr,
                         ok=(not failed) and s_base.ok, failed_steps=failed)


