"""World model from random exploration.

Collect a batch with random actions, fit the four delta regressors and the
reward classifier, then check how closely the model tracks the simulator
under a fixed linear controller. Run from the repo root:

    python3 demos/01_world_model.py
"""
#%%
import numpy as np

from cpbrl.dynamics import TrueDynamics, gen_batch, load_states
from cpbrl.policies import LinearPolicy
from cpbrl.surrogate import fit, holdout_report, policy_returns

batch = gen_batch(10_000, seed=42)
S, A, S2, R, F = batch.arrays()
print(len(batch), "transitions,", int(F.sum()), "into failure")
print("reward classes:", {r: int(np.sum(np.isclose(R, r))) for r in (0.0, -0.1, -1.0)})

#%% fit takes about half a minute
model = fit(batch)
report = holdout_report(model, gen_batch(2_000, seed=43))
for name, v in report["delta_rmse"].items():
    print(f"hold-out RMSE {name:10s} {v:.2e}")
print("reward accuracy", round(report["reward_accuracy"], 4))

#%% one start state, model vs simulator
pol = LinearPolicy([30.0, 5.0, 2.0, 2.0])
x0 = np.array([[0.2, 0.0, 0.5, 0.0]])
for name, stepper in (("model", model), ("system", TrueDynamics())):
    trace = []
    ret = policy_returns(stepper, pol, x0, T=100, trace=trace)[0]
    thetas = [x[0, 0] for x, _, _ in trace]
    print(f"{name:6s} return {ret:8.4f}  theta at steps 0/10/50/99: "
          + " ".join(f"{thetas[i]:+.4f}" for i in (0, 10, 50, 99)))

#%% penalty over the shared test states
states = load_states()
pm = -policy_returns(model, pol, states).mean()
ps = -policy_returns(TrueDynamics(), pol, states).mean()
print(f"penalty: model {pm:.3f}, system {ps:.3f}")
