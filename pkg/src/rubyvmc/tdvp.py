"""Variational time evolution and ground-state optimization.

One evolution step solves ``S a' = -iF`` (real time) or ``S a' = -F``
(imaginary time / stochastic reconfiguration) where

    S_jk = <conj(O_j) O_k> - <conj(O_j)><O_k>
    F_j  = <conj(O_j) E_loc> - <conj(O_j)><E_loc>

with ``O`` the holomorphic log-derivatives.  Instead of regularizing small
eigenvalues of ``S``, the solution is clipped per eigencoordinate: with
eigenvalues ``lam`` sorted under ``lam_max``,

    |a'_k| <= mu_k,  mu_k = inf   for lam_k/lam_max > 1e-5
                           0.5    for 1e-8 < lam_k/lam_max <= 1e-5
                           0.01   otherwise

(phases preserved; coordinates in the top band are returned bit-identical to
the unclipped solution).  Time stepping uses the second-order Heun rule with
a fresh sampling epoch for each of the two stage evaluations.

Within one epoch the parameters are immutable; sampling, local energies and
the O-table fill are batched over chains, and the eigen-solve is the serial
barrier of the step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .hamiltonian import local_energies
from .lattice import enumerate_states
from .sampler import SamplerConfig, run_chains, split_rhat

log = logging.getLogger(__name__)


class RhatCeilingError(RuntimeError):
    """Sampling repeatedly failed the split R-hat ceiling."""


def derived_rng(master_seed: int, *key) -> np.random.Generator:
    """Counter-based stream derivation: the same (seed, key) always yields
    the same stream regardless of execution order."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ClipRule:
    thresholds: tuple = (1e-5, 1e-8)
    clips: tuple = (math.inf, 0.5, 0.01)

    def __post_init__(self):
        if list(self.thresholds) != sorted(self.thresholds, reverse=True):
            raise ValueError("thresholds must decrease")
        if len(self.clips) != len(self.thresholds) + 1:
            raise ValueError("need one clip per band")
        if list(self.clips) != sorted(self.clips, reverse=True):
            raise ValueError("clips must not increase")

    def bands(self, ratios: np.ndarray) -> np.ndarray:
        out = np.full(ratios.shape, len(self.thresholds), dtype=np.int64)
        for k in range(len(self.thresholds) - 1, -1, -1):
            out[ratios > self.thresholds[k]] = k
        return out

    def caps(self, ratios: np.ndarray) -> np.ndarray:
        return np.asarray(self.clips, dtype=np.float64)[self.bands(ratios)]


@dataclass
class GeometricTensorEstimate:
    S: np.ndarray
    F: np.ndarray
    n_samples: int
    o_mean: np.ndarray
    e_mean: complex


def assemble(o_table, e_loc, weights=None) -> GeometricTensorEstimate:
    """Covariances of the log-derivative table against itself and the local
    energies.  ``weights`` switches from sample averages to exact-summation
    probabilities; rows with non-finite local energy are dropped."""
    o_table = np.asarray(o_table)
    e_loc = np.asarray(e_loc, dtype=np.complex128)
    good = np.isfinite(e_loc)
    if not good.all():
        log.warning("dropping %d samples with non-finite local energy", (~good).sum())
        o_table, e_loc = o_table[good], e_loc[good]
        if weights is not None:
            weights = weights[good]
    n = len(e_loc)
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    o_mean = w @ o_table
    e_mean = complex(w @ e_loc)
    oc = o_table - o_mean
    S = (oc.conj() * w[:, None]).T @ oc
    F = (oc.conj() * w[:, None]).T @ (e_loc - e_mean)
    return GeometricTensorEstimate(S=S, F=F, n_samples=n, o_mean=o_mean, e_mean=e_mean)


def solve_update(est: GeometricTensorEstimate, rule: ClipRule, mode: str):
    """Clipped eigenbasis solve; returns (alpha_dot, info dict)."""
    if mode not in ("real_time", "imaginary_time"):
        raise ValueError(f"unknown mode {mode!r}")
    S, F = est.S, est.F
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(F))):
        raise ValueError("non-finite entries in the geometric tensor estimate")
    lam, U = np.linalg.eigh(0.5 * (S + S.conj().T))
    rhs = (-1j * F) if mode == "real_time" else (-F)
    f_tilde = U.conj().T @ rhs
    lam_max = lam.max()
    ratios = lam / lam_max if lam_max > 0 else np.zeros_like(lam)
    caps = rule.caps(ratios)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = f_tilde / lam
    mags = np.abs(raw)
    over = ~np.isfinite(mags) | (mags > caps)
    clipped = raw.copy()
    if np.any(over):
        with np.errstate(invalid="ignore", divide="ignore"):
            phases = np.where(
                np.isfinite(raw[over]) & (raw[over] != 0),
                raw[over] / np.abs(raw[over]),
                _safe_phase(f_tilde[over], lam[over]),
            )
        clipped[over] = caps[over] * phases
    bands = rule.bands(ratios)
    info = {
        "lambda_max": float(lam_max),
        "clip_counts": tuple(int((bands == k).sum()) for k in range(len(rule.clips))),
        "n_clipped": int(over.sum()),
    }
    return U @ clipped, info


def _safe_phase(f, lam):
    out = np.ones(f.shape, dtype=np.complex128)
    nz = f != 0
    out[nz] = f[nz] / np.abs(f[nz])
    out[nz] *= np.where(lam[nz] < 0, -1.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# sampling pipeline


@dataclass
class EpochResult:
    alpha_dot: np.ndarray
    energy: complex
    energy_err: float
    r_hat: float
    acceptance: float
    lambda_max: float
    clip_counts: tuple
    n_samples: int


class TdvpEngine:
    """Owns the chain state, derives per-epoch streams from a master seed,
    and turns (parameters, Hamiltonian) into a clipped update direction."""

    def __init__(self, ansatz, ham_factory, sampler_cfg: SamplerConfig,
                 rule: ClipRule | None = None, mode: str = "real_time",
                 master_seed: int = 0, exact_sum: bool = False,
                 rhat_ceiling: float = 1.2, max_retries: int = 2,
                 param_mask=None, chain_init=None):
        self.ansatz = ansatz
        self.ham_factory = ham_factory          # t -> Hamiltonian
        self.sampler_cfg = sampler_cfg
        self.rule = rule or ClipRule()
        self.mode = mode
        self.master_seed = master_seed
        self.exact_sum = exact_sum
        self.rhat_ceiling = rhat_ceiling
        self.max_retries = max_retries
        self.param_mask = param_mask
        self.chain_init = chain_init            # cold-start configuration
        self._chain_states = None
        self._epoch = 0

    # -- single epoch -------------------------------------------------------

    def epoch(self, params, t: float) -> EpochResult:
        self.ansatz.set_params(params)
        ham = self.ham_factory(t)
        if self.exact_sum:
            return self._epoch_exact(ham)
        cfg = self.sampler_cfg
        lat = self.ansatz.lat
        for attempt in range(self.max_retries + 1):
            rng = derived_rng(self.master_seed, 1, self._epoch, attempt)
            self._epoch += 1
            if self._chain_states is None:
                init = (np.zeros(lat.n_tri, dtype=np.uint8)
                        if self.chain_init is None else self.chain_init)
                table = run_chains(cfg, self.ansatz.log_amplitude, lat, init, rng=rng)
            else:
                table = run_chains(cfg, self.ansatz.log_amplitude, lat,
                                   self._chain_states, rng=rng, skip_burn_in=True)
            samples = table.flat()
            e_loc = local_energies(samples, ham, self.ansatz.log_amplitude)
            r_hat = split_rhat(e_loc.real.reshape(cfg.n_chains, cfg.n_samples))
            if np.isnan(r_hat):
                r_hat = table.r_hat
            if r_hat <= self.rhat_ceiling:
                self._chain_states = table.final_states
                break
            log.warning("epoch r_hat %.3f above ceiling %.3f (attempt %d)",
                        r_hat, self.rhat_ceiling, attempt)
            self._chain_states = None
        else:
            raise RhatCeilingError(f"r_hat {r_hat:.3f} after {self.max_retries + 1} attempts")
        o_table, _ = self.ansatz.log_derivatives(samples)
        if self.param_mask is not None:
            o_table = o_table[:, self.param_mask]
        est = assemble(o_table, e_loc)
        alpha_dot, info = solve_update(est, self.rule, self.mode)
        if self.param_mask is not None:
            full = np.zeros(self.ansatz.n_params, dtype=np.complex128)
            full[self.param_mask] = alpha_dot
            alpha_dot = full
        good = np.isfinite(e_loc)
        stderr = float(np.std(e_loc[good].real, ddof=1) /
                       math.sqrt(max(1, good.sum()))) if good.sum() > 1 else 0.0
        return EpochResult(alpha_dot=alpha_dot, energy=est.e_mean, energy_err=stderr,
                           r_hat=float(r_hat), acceptance=table.acceptance_rate,
                           lambda_max=info["lambda_max"], clip_counts=info["clip_counts"],
                           n_samples=est.n_samples)

    def _epoch_exact(self, ham) -> EpochResult:
        lat = self.ansatz.lat
        states = enumerate_states(lat.n_tri)
        logs = self.ansatz.log_amplitude(states)
        w = np.exp(2.0 * (logs.real - logs.real.max()))
        w /= w.sum()
        keep = w > 1e-300
        states, w = states[keep], w[keep]
        e_loc = local_energies(states, ham, self.ansatz.log_amplitude)
        o_table, _ = self.ansatz.log_derivatives(states)
        if self.param_mask is not None:
            o_table = o_table[:, self.param_mask]
        est = assemble(o_table, e_loc, weights=w)
        alpha_dot, info = solve_update(est, self.rule, self.mode)
        if self.param_mask is not None:
            full = np.zeros(self.ansatz.n_params, dtype=np.complex128)
            full[self.param_mask] = alpha_dot
            alpha_dot = full
        return EpochResult(alpha_dot=alpha_dot, energy=est.e_mean, energy_err=0.0,
                           r_hat=1.0, acceptance=1.0, lambda_max=info["lambda_max"],
                           clip_counts=info["clip_counts"], n_samples=len(w))

    # -- integrators ----------------------------------------------------------

    def heun_step(self, params, t: float, dt: float):
        """Second-order step: two epochs, each with fresh samples."""
        if dt < 0:
            raise ValueError("dt must be non-negative")
        if dt == 0:
            k1 = self.epoch(params, t)
            return params.copy(), k1
        k1 = self.epoch(params, t)
        k2 = self.epoch(params + dt * k1.alpha_dot, t + dt)
        new = params + 0.5 * dt * (k1.alpha_dot + k2.alpha_dot)
        return new, k1

    def euler_step(self, params, t: float, dt: float):
        k1 = self.epoch(params, t)
        return params + dt * k1.alpha_dot, k1


def optimize_ground_state(ansatz, ham, sampler_cfg: SamplerConfig,
                          dt: float = 1e-2, mf_steps: int = 200,
                          joint_steps: int = 300, master_seed: int = 0,
                          exact_sum: bool = False, rule: ClipRule | None = None,
                          rhat_ceiling: float = 3.0, chain_init=None, callback=None):
    """Imaginary-time flow: first the mean-field block alone, then all
    parameters jointly.  Returns (params, energy_history).

    The default R-hat ceiling is loose: the descent tolerates occasional
    poorly mixed epochs, unlike real-time evolution.  ``chain_init`` seeds
    the first sampling epoch (e.g. the crystal pattern of a seeded run)."""
    mask = np.zeros(ansatz.n_params, dtype=bool)
    mask[ansatz.param_slices["mf_A"]] = True
    mask[ansatz.param_slices["mf_B"]] = True
    params = ansatz.get_params()
    history = []
    for phase, (steps, use_mask) in enumerate(((mf_steps, True), (joint_steps, False))):
        engine = TdvpEngine(ansatz, lambda t: ham, sampler_cfg, rule=rule,
                            mode="imaginary_time", master_seed=master_seed + phase,
                            exact_sum=exact_sum, rhat_ceiling=rhat_ceiling,
                            param_mask=mask if use_mask else None,
                            chain_init=chain_init)
        for k in range(steps):
            params, rec = engine.euler_step(params, 0.0, dt)
            history.append(rec)
            if callback is not None:
                callback(phase, k, params, rec)
    ansatz.set_params(params)
    return params, history
