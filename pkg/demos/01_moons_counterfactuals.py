# %% [markdown]
# # Counterfactuals that survive retraining
#
# Train a small network on two interleaving moons, ask for the cheapest way to
# flip a rejected point, then check how often that answer still holds once the
# model is retrained with a different seed.

# %%
import numpy as np

from robustcf import cfgen, data, nn
from robustcf.harness import ensembles as ens
from robustcf.harness import evaluation as ev

moons = data.make_moons(400, noise_std=0.1, seed=3)
train, test = data.split(moons, 0.3, seed=1)
cfg = nn.TrainConfig(seed=1, learning_rate=4e-3)
model = nn.fit_mlp([2, 128, 128, 1], train, cfg)
print("test accuracy", nn.accuracy(model, test))

# %% [markdown]
# Queries are test points with label 0 that the model also rejects.

# %%
rows = ev.true_negative_queries(model, test)[:20]
queries = test.features[rows]
tcfg = cfgen.TrexConfig(tau=0.7, k=1000, sigma2=0.01, eta=0.01)
scfg = tcfg.stability_config()

cheap = [cfgen.min_cost_cf(model, x, "l2", stability_cfg=scfg) for x in queries]
robust = [cfgen.trex_i(model, x, c, tcfg) for x, c in zip(queries, cheap)]
pairs = [(c, r) for c, r in zip(cheap, robust) if c.usable and r.usable]
for c, r in pairs[:5]:
    print(f"cost {c.cost:.3f} -> {r.cost:.3f}   m {c.m_cf:.2f} -> {r.m_cf:.2f}   "
          f"R_hat {c.stability:.2f} -> {r.stability:.2f}")

# %% [markdown]
# Ten retrained models stand in for "the same model after an update".

# %%
wi = ens.retrain_ensemble(train, [2, 128, 128, 1], cfg, 10, ens.WEIGHT_INIT, master_seed=100, base=model)
print("validity min-cost ", ev.validity(cheap, wi))
print("validity with T-Rex", ev.validity(robust, wi))

# %% [markdown]
# Data-supported alternatives: the nearest accepted training row, and the
# nearest one that also passes the robustness test.

# %%
near = [cfgen.nn_cf(model, x, train, "l2", scfg) for x in queries]
near_robust = [cfgen.trex_nn(model, x, train, tcfg, "l2") for x in queries]
print("validity NN     ", ev.validity(near, wi))
print("validity T-Rex:NN", ev.validity(near_robust, wi))
print("mean cost", np.mean([r.cost for r in near]), np.mean([r.cost for r in near_robust]))
