"""Short dynamical-preparation benchmark against exact evolution (N = 24).

Drives the first stretch of the two-stage protocol with the variational
engine and compares against the exact integrator.  Uses reduced settings so
it finishes in a few minutes; the full-length benchmark lives in the
acceptance suite.
"""

import time

import numpy as np

from rubyvmc.ansatz import NetworkShape, RubyAnsatz, initial_params
from rubyvmc.hamiltonian import RampProtocol
from rubyvmc.lattice import build_lattice
from rubyvmc.oracle import evolve_exact, infidelity, product_ground_state
from rubyvmc.sampler import SamplerConfig
from rubyvmc.tdvp import TdvpEngine

T = 2.0
lat = build_lattice(2, 2)
ramp = RampProtocol.experimental_style(t_rise=2.0, t_sweep=10.0, delta_final=4.0)
base = ramp.base_hamiltonian(lat)

print("exact reference ...")
t_grid = [0.5, 1.0, 1.5, 2.0]
_, exact = evolve_exact(product_ground_state(lat), ramp, base, t_grid=t_grid)

ans = RubyAnsatz(lat, NetworkShape(features=4, symmetrize=False))
rng = np.random.default_rng(7)
params = initial_params(ans, rng, nn_scale=1e-2, mf_A=2.5)
ans.set_params(params)

engine = TdvpEngine(
    ans, lambda t: base.with_drive(ramp.omega(t), ramp.delta(t)),
    SamplerConfig(n_chains=48, n_samples=16, burn_in=20, thinning=12,
                  p_plaquette=0.1, seed=1),
    master_seed=11, rhat_ceiling=2.0)

dt, t = 0.01, 0.0
marks = dict(zip(t_grid, range(len(t_grid))))
t0 = time.time()
for step in range(int(T / dt)):
    params, rec = engine.heun_step(params, t, dt)
    t = round(t + dt, 10)
    if t in marks:
        ans.set_params(params)
        inf = infidelity(exact[marks[t]], ans.log_amplitude)
        print(f"t = {t:4.2f}  infidelity = {inf:.5f}  <E> = {rec.energy.real:+.4f} "
              f"  R-hat = {rec.r_hat:.3f}")
print(f"done in {time.time() - t0:.0f}s")
