"""Model-based policy search on a learned world model.

PSONN, FPSRL and GPRL each score candidate policies by their penalty on the
model; only the winners are run on the simulator. Budgets here are small so
the script finishes in a few minutes.

    python3 demos/03_policy_search.py
"""
#%%
from cpbrl import gp, pso
from cpbrl.dynamics import gen_batch, load_states
from cpbrl.policies import TreePolicy, ZeroPolicy, describe
from cpbrl.surrogate import fit, penalty

batch = gen_batch(10_000, seed=42)
states = load_states()
model = fit(batch)


def show(name, pol):
    print(f"{name:6s} model {penalty(pol, model, states):6.3f}  system {penalty(pol, 'system', states):6.3f}")


show("zero", ZeroPolicy())

#%% neural policy, weights found by PSO
pol, res = pso.train_psonn(model, states, pso.PsonnConfig(swarm=pso.SwarmConfig(particles=20, iterations=30, seed=1)))
show("PSONN", pol)

#%% two fuzzy rules
pol, res = pso.train_fpsrl(model, states, batch, pso.FpsrlConfig(2, swarm=pso.SwarmConfig(particles=20, iterations=30, seed=1)))
show("FPSRL", pol)
print(describe(pol))

#%% algebraic GP: the front trades size for penalty
res = gp.gprl(model, states, gp.GpConfig(population=100, generations=15, seed=2))
print(gp.describe_front(res.front))
show("GPRL", TreePolicy(res.best.genome))
