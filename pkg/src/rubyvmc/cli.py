"""Command-line orchestration: ground-state search, ramp evolution, rate
sweeps, measurement passes, entropy scans and the exact-diagonalization
reference tools.

Every run takes a JSON config (see :mod:`rubyvmc.config`), derives all
random streams from one master seed via counter-based keys, embeds the
config hash in every output, and writes: JSON-lines step logs, CSV summary
tables, and binary parameter checkpoints.  A killed ramp resumes from its
latest checkpoint bit-identically (chain states are stored alongside the
parameters).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .ansatz import (
    initial_params,
    seed_pattern_params,
    ss_occupations,
    vbs_occupations,
)
from .checkpoint import load_ansatz, read_header, save_checkpoint
from .entropy import (
    amplitude_swap_estimator,
    kitaev_preskill,
    kp_unions,
    kp_wedge_regions,
    phase_swap_estimator,
    ratio_path,
)
from .hamiltonian import stabilizer_expectations
from .lattice import encode, lattice_dump
from .observables import (
    bffm,
    bffm_pair,
    concentric_x_loops,
    concentric_z_loops,
    fit_lambda,
    fit_xi,
    measure_many,
    order_parameters,
    straight_x_string,
    straight_z_string,
    string_gap,
)
from .oracle import (
    DenseState,
    evolve_exact,
    exact_kitaev_preskill,
    ground_state,
    infidelity,
    product_ground_state,
    spectrum,
)
from .sampler import run_chains, sample_doubled
from .tdvp import TdvpEngine, derived_rng, optimize_ground_state

log = logging.getLogger(__name__)


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return v


def _out_dir(cfg, override=None) -> Path:
    out = Path(override) if override else Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# measurement passes


def measure_state(cfg, lat, ansatz, ham, seed, sampler_cfg=None):
    """Sample |psi|^2 once and evaluate the configured observable manifest.

    Returns (rows, sample_table): rows are (name, mean, stderr, r_hat,
    n_effective) tuples.
    """
    obs = cfg["observables"]
    sampler_cfg = sampler_cfg or cfgmod.sampler_from(cfg, seed, late=True)
    rng = derived_rng(seed, 90)
    table = run_chains(sampler_cfg, ansatz.log_amplitude, lat,
                       np.zeros(lat.n_tri, dtype=np.uint8), rng=rng)
    samples = table.samples
    rows = []

    (av, av_err), (bp, bp_err) = stabilizer_expectations(
        lat, table.flat(), ansatz.log_amplitude)
    rows.append(("vertex_parity", av, av_err, table.r_hat, table.n_effective))
    rows.append(("hexagon_resonance", bp, bp_err, table.r_hat, table.n_effective))

    z_specs = concentric_z_loops(lat, obs["center_hex"], obs["z_loops"])
    x_specs = concentric_x_loops(lat, obs["center_hex"], obs["x_loops"])
    for spec, rec in zip(z_specs, measure_many(z_specs, samples, lat)):
        rows.append((f"wilson_z_area{spec.area}", rec.mean.real, rec.stderr,
                     rec.r_hat, rec.n_effective))
    for spec, rec in zip(x_specs, measure_many(x_specs, samples, lat,
                                               ansatz.log_amplitude)):
        rows.append((f"wilson_x_hex{spec.area}", rec.mean.real, rec.stderr,
                     rec.r_hat, rec.n_effective))
    for L in obs["string_lengths"]:
        spec = straight_z_string(lat, L)
        rec = measure_many([spec], samples, lat)[0]
        rows.append((f"string_z_L{L}", rec.mean.real, rec.stderr, rec.r_hat,
                     rec.n_effective))
    if obs["bffm"]:
        pair = bffm_pair(lat, obs["center_hex"])
        for channel in ("z", "x"):
            val, err, ok = bffm(*pair[channel], samples, lat, ansatz.log_amplitude)
            rows.append((f"bffm_{channel}", val if ok else float("nan"), err,
                         float("nan"), float("nan")))
    if obs["order_parameters"] and lat.periodic and lat.L1 % 2 == 0 and lat.L2 % 2 == 0:
        rec_v, rec_s = order_parameters(lat, samples)
        rows.append(("order_vbs", rec_v.mean.real, rec_v.stderr, rec_v.r_hat,
                     rec_v.n_effective))
        rows.append(("order_ss", rec_s.mean.real, rec_s.stderr, rec_s.r_hat,
                     rec_s.n_effective))
    if obs["string_gaps"] and ham is not None:
        flat = table.flat()
        for kind, builder in (("x", straight_x_string), ("z", straight_z_string)):
            spec = builder(lat, 2)
            rec = string_gap(spec, ham, flat, lat, ansatz.log_amplitude)
            rows.append((f"gap_{kind}_string", rec.mean.real, rec.stderr,
                         rec.r_hat, rec.n_effective))
    return rows, table


def entropy_scan(cfg, lat, log_amplitude, seed):
    """Kitaev-Preskill entropies for each configured scale; returns rows of
    (scale, region, S, err) plus (scale, gamma, err)."""
    ent = cfg["entropy"]
    sampler = cfgmod.sampler_from(cfg, seed, late=True)
    sampler = type(sampler)(n_chains=ent["n_chains"], n_samples=ent["n_samples"],
                            burn_in=ent["burn_in"], thinning=ent["thinning"],
                            p_plaquette=sampler.p_plaquette, seed=seed)
    init = np.zeros(lat.n_tri, dtype=np.uint8)
    region_rows, gamma_rows = [], []
    for scale in ent["scales"]:
        regions = kp_unions(kp_wedge_regions(lat, ent["center_hex"], scale))
        entropies, errors = {}, {}
        for j, (name, atoms) in enumerate(sorted(regions.items())):
            rng = derived_rng(seed, 70, scale, j)
            plain = sample_doubled(sampler, log_amplitude, lat, init, rng=rng)
            s_am = amplitude_swap_estimator(lat, plain, log_amplitude, atoms)
            rng2 = derived_rng(seed, 71, scale, j)
            swapped = sample_doubled(sampler, log_amplitude, lat, init,
                                     atoms=atoms, rng=rng2)
            s_ph = phase_swap_estimator(lat, swapped, log_amplitude, atoms)
            entropies[name] = s_am.value + s_ph.value
            errors[name] = math.hypot(s_am.stderr, s_ph.stderr)
            region_rows.append((scale, name, entropies[name], errors[name]))
        gamma, err = kitaev_preskill(entropies, errors)
        gamma_rows.append((scale, gamma, err))
    return region_rows, gamma_rows


# ---------------------------------------------------------------------------
# workflows


def run_ground_state(cfg, out=None):
    lat = cfgmod.lattice_from(cfg)
    ham = cfgmod.hamiltonian_from(cfg, lat)
    out = _out_dir(cfg, out)
    chash = cfgmod.config_hash(cfg)
    gs_cfg = cfg["ground_state"]
    results = []
    for k, seeding in enumerate(gs_cfg["seedings"]):
        sub = json.loads(json.dumps(cfg))
        if seeding != "symmetric":
            sub["ansatz"]["site_dependent_A"] = True
        ansatz = cfgmod.ansatz_from(sub, lat)
        rng = derived_rng(cfg["seed"], 10, k)
        chain_init = None
        if seeding == "symmetric":
            params = initial_params(ansatz, rng, nn_scale=sub["ansatz"]["init_scale"])
        elif seeding == "vbs":
            occ = vbs_occupations(lat)
            params = seed_pattern_params(ansatz, occ, rng,
                                         nn_scale=sub["ansatz"]["init_scale"])
            chain_init = encode(lat, occ)
        elif seeding == "ss":
            occ = ss_occupations(lat)
            params = seed_pattern_params(ansatz, occ, rng,
                                         nn_scale=sub["ansatz"]["init_scale"])
            chain_init = encode(lat, occ)
        else:
            raise cfgmod.ConfigError(f"unknown seeding {seeding!r}")
        ansatz.set_params(params)
        sampler_cfg = cfgmod.sampler_from(cfg, cfg["seed"] + 1000 + k)
        params, history = optimize_ground_state(
            ansatz, ham, sampler_cfg, dt=gs_cfg["dt"], mf_steps=gs_cfg["mf_steps"],
            joint_steps=gs_cfg["joint_steps"], master_seed=cfg["seed"] + 17 * k,
            exact_sum=cfg["tdvp"]["exact_sum"], rule=cfgmod.clip_rule_from(cfg),
            chain_init=chain_init)
        rec = history[-1]
        rows, table = measure_state(cfg, lat, ansatz, ham, cfg["seed"] + 500 + k)
        ckpt = out / f"ground_state_{seeding}.ckpt"
        save_checkpoint(ckpt, ansatz, extra={"seeding": seeding,
                                             "energy": rec.energy.real,
                                             "config_hash": chash})
        results.append({
            "seeding": seeding,
            "energy": rec.energy.real,
            "energy_err": rec.energy_err,
            "rows": rows,
            "checkpoint": str(ckpt),
        })
        log.info("seeding %-9s energy %.6f +- %.6f", seeding, rec.energy.real,
                 rec.energy_err)
    winner = min(results, key=lambda r: r["energy"])
    summary = [(r["seeding"], r["energy"], r["energy_err"],
                dict([(row[0], row[1]) for row in r["rows"]]).get("order_vbs", float("nan")),
                dict([(row[0], row[1]) for row in r["rows"]]).get("order_ss", float("nan")),
                int(r is winner)) for r in results]
    _write_csv(out / "ground_state.csv", [f"config_hash={chash}"],
               ["seeding", "energy", "energy_err", "order_vbs", "order_ss", "winner"],
               summary)
    report = {"winner": winner["seeding"], "results": [
        {k: v for k, v in r.items() if k != "rows"} for r in results]}
    (out / "ground_state.json").write_text(json.dumps(report, indent=1))
    return report


def run_ramp(cfg, out=None, resume=None, measure=True, max_steps=None):
    lat = cfgmod.lattice_from(cfg)
    ramp = cfgmod.ramp_from(cfg)
    ham_sec = cfg["hamiltonian"]
    base = ramp.base_hamiltonian(lat, Rb_over_a=ham_sec["Rb_over_a"],
                                 tail_cutoff=ham_sec["tail_cutoff"])
    out = _out_dir(cfg, out)
    chash = cfgmod.config_hash(cfg)
    dt = cfg["tdvp"]["dt"]
    T = ramp.total_time
    n_steps = int(round(T / dt))
    late_t = cfg["sampler"]["late_fraction"] * T

    if resume:
        ansatz, header = load_ansatz(resume, lat)
        extra = header["extra"]
        step0 = extra["step"]
        epoch0 = extra["epoch"]
        chains = np.asarray(extra["chain_states"], dtype=np.uint8)
        params = ansatz.get_params()
        mode = "a"
    else:
        ansatz = cfgmod.ansatz_from(cfg, lat)
        rng = derived_rng(cfg["seed"], 20)
        params = initial_params(ansatz, rng, nn_scale=cfg["ansatz"]["init_scale"],
                                mf_A=cfg["ansatz"]["init_mf_A"])
        ansatz.set_params(params)
        step0, epoch0, chains, mode = 0, 0, None, "w"

    engine = TdvpEngine(
        ansatz, lambda t: base.with_drive(ramp.omega(t), ramp.delta(t)),
        cfgmod.sampler_from(cfg, cfg["seed"]), rule=cfgmod.clip_rule_from(cfg),
        mode=cfg["tdvp"]["mode"], master_seed=cfg["seed"],
        exact_sum=cfg["tdvp"]["exact_sum"],
        rhat_ceiling=cfg["tdvp"]["rhat_ceiling"],
        max_retries=cfg["tdvp"]["max_retries"])
    engine._epoch = epoch0
    engine._chain_states = chains

    log_path = out / "ramp_log.jsonl"
    ckpt_path = out / "ramp_last.ckpt"
    cadence = cfg["checkpoint_every"]
    stop = n_steps if max_steps is None else min(n_steps, step0 + max_steps)
    with open(log_path, mode) as fh:
        for step in range(step0, stop):
            t = step * dt
            engine.sampler_cfg = cfgmod.sampler_from(cfg, cfg["seed"], late=t >= late_t)
            h = min(dt, T - t)
            try:
                params, rec = engine.heun_step(params, t, h)
            except Exception:
                _save_ramp_ckpt(ckpt_path, ansatz, params, step, t, engine, chash)
                raise
            record = {
                "step": step, "t": t + h, "omega": ramp.omega(t + h),
                "delta": ramp.delta(t + h), "energy": rec.energy.real,
                "energy_err": rec.energy_err, "r_hat": rec.r_hat,
                "acceptance": rec.acceptance, "lambda_max": rec.lambda_max,
                "clip_counts": list(rec.clip_counts), "config_hash": chash,
            }
            fh.write(json.dumps(record) + "\n")
            if (step + 1) % cadence == 0 or step == stop - 1:
                ansatz.set_params(params)
                _save_ramp_ckpt(ckpt_path, ansatz, params, step + 1, t + h, engine, chash)
    ansatz.set_params(params)
    if stop < n_steps:
        return {"checkpoint": str(ckpt_path), "log": str(log_path),
                "t_final": stop * dt, "interrupted": True}

    results = {"checkpoint": str(ckpt_path), "log": str(log_path), "t_final": T}
    if measure:
        ham_final = base.with_drive(ramp.omega(T), ramp.delta(T))
        rows, _ = measure_state(cfg, lat, ansatz, ham_final, cfg["seed"] + 7)
        _write_csv(out / "ramp_observables.csv", [f"config_hash={chash}", f"t={T}"],
                   ["observable", "mean", "stderr", "r_hat", "n_effective"], rows)
        region_rows, gamma_rows = entropy_scan(cfg, lat, ansatz.log_amplitude,
                                               cfg["seed"] + 8)
        _write_csv(out / "ramp_entropy.csv", [f"config_hash={chash}", f"t={T}"],
                   ["scale", "region", "S", "err"], region_rows)
        _write_csv(out / "ramp_tee.csv", [f"config_hash={chash}", f"t={T}"],
                   ["scale", "gamma", "err"], gamma_rows)
        results["observables"] = rows
        results["tee"] = gamma_rows
    return results


def _save_ramp_ckpt(path, ansatz, params, step, t, engine, chash):
    current = ansatz.get_params()
    ansatz.set_params(params)
    save_checkpoint(path, ansatz, extra={
        "step": step, "t": t, "epoch": engine._epoch,
        "chain_states": engine._chain_states, "config_hash": chash,
    })
    ansatz.set_params(current)


def run_sweep(cfg, out=None):
    out = _out_dir(cfg, out)
    chash = cfgmod.config_hash(cfg)
    axis = cfg["sweep"]["axis"]
    rows = []
    for k, value in enumerate(cfg["sweep"]["grid"]):
        sub = json.loads(json.dumps(cfg))
        sub["ramp"]["kind"] = "linear_rate"
        if axis == "rate":
            sub["ramp"]["rate"] = value
        elif axis == "delta_final":
            sub["ramp"]["delta_final"] = value
        else:
            raise cfgmod.ConfigError(f"unknown sweep axis {axis!r}")
        sub["seed"] = cfg["seed"] + 101 * k
        sub["output_dir"] = str(out / f"point_{k}")
        try:
            res = run_ramp(sub, measure=True)
        except Exception as exc:   # keep partial results
            log.error("sweep point %s=%g failed: %s", axis, value, exc)
            rows.append([value] + [float("nan")] * 4)
            continue
        obs = dict((r[0], (r[1], r[2])) for r in res["observables"])
        gamma0 = res["tee"][0] if res["tee"] else (float("nan"), float("nan"), float("nan"))
        rows.append([value, obs["vertex_parity"][0], obs["hexagon_resonance"][0],
                     gamma0[1], gamma0[2]])
    _write_csv(out / "sweep_summary.csv", [f"config_hash={chash}", f"axis={axis}"],
               [axis, "vertex_parity", "hexagon_resonance", "tee", "tee_err"], rows)
    return rows


# ---------------------------------------------------------------------------
# entry point


def main(argv=None):
    parser = argparse.ArgumentParser(prog="rubyvmc",
                                     description="ruby-lattice dimer-liquid engine")
    parser.add_argument("--config", type=str, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None)
    parser.add_argument("--resume", type=str, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    lat_p = sub.add_parser("lattice", help="lattice tools")
    lat_sub = lat_p.add_subparsers(dest="lattice_command", required=True)
    lat_sub.add_parser("dump", help="write positions and incidence maps")

    sub.add_parser("ground-state", help="seeded ground-state optimization")
    sub.add_parser("ramp", help="dynamical preparation run")
    sub.add_parser("sweep", help="grid of ramp runs")

    meas_p = sub.add_parser("measure", help="observable pass on a checkpoint")
    meas_p.add_argument("checkpoint", type=str)
    ent_p = sub.add_parser("entropy", help="entropy pass on a checkpoint")
    ent_p.add_argument("checkpoint", type=str)

    orc = sub.add_parser("oracle", help="exact-diagonalization reference")
    orc_sub = orc.add_subparsers(dest="oracle_command", required=True)
    spec_p = orc_sub.add_parser("spectrum")
    spec_p.add_argument("-k", type=int, default=8)
    orc_sub.add_parser("evolve")
    inf_p = orc_sub.add_parser("infidelity")
    inf_p.add_argument("checkpoint", type=str)
    rdm_p = orc_sub.add_parser("rdm-entropy")
    rdm_p.add_argument("--scale", type=int, default=2)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    cfg = cfgmod.load_config(args.config, overrides)

    if args.command == "lattice":
        lat = cfgmod.lattice_from(cfg)
        out = _out_dir(cfg, args.out)
        path = out / "lattice.txt"
        path.write_text(lattice_dump(lat))
        print(path)
    elif args.command == "ground-state":
        report = run_ground_state(cfg, args.out)
        print(json.dumps(report, indent=1))
    elif args.command == "ramp":
        res = run_ramp(cfg, args.out, resume=args.resume)
        print(json.dumps({k: v for k, v in res.items()
                          if k in ("checkpoint", "log", "t_final", "tee")}, indent=1))
    elif args.command == "sweep":
        rows = run_sweep(cfg, args.out)
        print(json.dumps(rows, indent=1))
    elif args.command == "measure":
        ansatz, header = load_ansatz(args.checkpoint)
        lat = ansatz.lat
        ham = cfgmod.hamiltonian_from(cfg, lat)
        rows, _ = measure_state(cfg, lat, ansatz, ham, cfg["seed"])
        out = _out_dir(cfg, args.out)
        _write_csv(out / "observables.csv",
                   [f"config_hash={cfgmod.config_hash(cfg)}"],
                   ["observable", "mean", "stderr", "r_hat", "n_effective"], rows)
        print(out / "observables.csv")
    elif args.command == "entropy":
        ansatz, header = load_ansatz(args.checkpoint)
        region_rows, gamma_rows = entropy_scan(cfg, ansatz.lat,
                                               ansatz.log_amplitude, cfg["seed"])
        out = _out_dir(cfg, args.out)
        _write_csv(out / "entropy.csv", [f"config_hash={cfgmod.config_hash(cfg)}"],
                   ["scale", "region", "S", "err"], region_rows)
        _write_csv(out / "tee.csv", [f"config_hash={cfgmod.config_hash(cfg)}"],
                   ["scale", "gamma", "err"], gamma_rows)
        print(out / "tee.csv")
    elif args.command == "oracle":
        _oracle_command(args, cfg)
    return 0


def _oracle_command(args, cfg):
    lat = cfgmod.lattice_from(cfg)
    if args.oracle_command == "spectrum":
        ham = cfgmod.hamiltonian_from(cfg, lat)
        vals = spectrum(ham, k=args.k, lat=lat)
        for v in vals:
            print(f"{v:.12g}")
    elif args.oracle_command == "evolve":
        ramp = cfgmod.ramp_from(cfg)
        base = ramp.base_hamiltonian(lat, Rb_over_a=cfg["hamiltonian"]["Rb_over_a"],
                                     tail_cutoff=cfg["hamiltonian"]["tail_cutoff"])
        psi0 = product_ground_state(lat)
        grid = np.linspace(0, ramp.total_time, 9)
        _, traj = evolve_exact(psi0, ramp, base, t_grid=grid)
        out = _out_dir(cfg, args.out)
        rows = [(t, float(np.abs(s.amps[0]) ** 2)) for t, s in zip(grid, traj)]
        _write_csv(out / "exact_evolution.csv",
                   [f"config_hash={cfgmod.config_hash(cfg)}"],
                   ["t", "vacuum_weight"], rows)
        print(out / "exact_evolution.csv")
    elif args.oracle_command == "infidelity":
        ansatz, header = load_ansatz(args.checkpoint)
        ramp = cfgmod.ramp_from(cfg)
        base = ramp.base_hamiltonian(ansatz.lat,
                                     Rb_over_a=cfg["hamiltonian"]["Rb_over_a"],
                                     tail_cutoff=cfg["hamiltonian"]["tail_cutoff"])
        psi0 = product_ground_state(ansatz.lat)
        t = float(header.get("extra", {}).get("t", ramp.total_time))
        _, (psi_t,) = evolve_exact(psi0, ramp, base, t_grid=[t])
        print(f"{infidelity(psi_t, ansatz.log_amplitude):.6g}")
    elif args.oracle_command == "rdm-entropy":
        ham = cfgmod.hamiltonian_from(cfg, lat)
        _, (gs,) = ground_state(ham, k=1)
        regions = kp_wedge_regions(lat, cfg["entropy"]["center_hex"], args.scale)
        gamma = exact_kitaev_preskill(gs, regions)
        print(f"{gamma:.12g}")


if __name__ == "__main__":
    sys.exit(main())
