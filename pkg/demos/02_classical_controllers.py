"""LQR and Ziegler-Nichols PID from the same batch.

The LQR gain comes from a least-squares linear model of the batch; the PID
search looks for the critical proportional gain in closed loop.

    python3 demos/02_classical_controllers.py
"""
#%%
import math

import numpy as np

from cpbrl import classical as cl
from cpbrl.dynamics import TrueDynamics, gen_batch, load_states
from cpbrl.policies import ZeroPolicy, serialize
from cpbrl.surrogate import penalty

batch = gen_batch(10_000, seed=42)
states = load_states()

#%% identified linear model
lm = cl.fit_linear_model(batch)
np.set_printoptions(precision=4, suppress=True)
print("U =\n", lm.U)
print("V =", lm.V.ravel())
print("open-loop spectral radius", round(cl.spectral_radius(lm.U), 4))

#%% LQR
w = cl.LqrWeights()
P, K = cl.solve_dare(lm.U, lm.V, w.Q, w.R)
lqr = cl.lqr_policy(lm, w)
print(serialize(lqr))
print("DARE residual", cl.dare_residual(P, lm.U, lm.V, w.Q, w.R))
print("closed-loop radius", round(cl.spectral_radius(lm.U - lm.V @ K), 4))
print("system penalty", round(penalty(lqr, "system", states), 3))

#%% critical point of the theta loop on the simulator
search = cl.CriticalSearch(bounds=(-60.0, 0.0), max_steps=2000, growth_tolerance=math.inf)
crit = cl.find_critical("theta", TrueDynamics(), search)
print(f"theta: k_c {crit.k_c:.2f}, period {crit.p_c:.1f} steps")

#%% PID with the tabulated reference critical points
pid = cl.reference_pid()
print(serialize(pid))
for name, pol in (("PID", pid), ("zero", ZeroPolicy())):
    print(f"{name:5s} system penalty {penalty(pol, 'system', states):.3f}")
