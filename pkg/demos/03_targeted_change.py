# %% [markdown]
# # Many models agree on the data, yet one can be built to break a counterfactual
#
# Retrained models disagree little on the training data, and that disagreement is
# bounded by the square root of the largest per-point variance. A deliberately
# fine-tuned model, however, can reject a chosen point far from the data while
# keeping almost every other decision.

# %%
import numpy as np

from robustcf import data, nn
from robustcf.harness import ensembles as ens
from robustcf.harness import theory

moons = data.make_moons(400, noise_std=0.1, seed=3)
train, _ = data.split(moons, 0.3, seed=1)
cfg = nn.TrainConfig(seed=1, learning_rate=4e-3)
model = nn.fit_mlp([2, 128, 128, 1], train, cfg)

wi = ens.retrain_ensemble(train, [2, 128, 128, 1], cfg, 8, ens.WEIGHT_INIT, master_seed=100, base=model)
lhs, bound, holds = theory.rashomon_bound_check(wi, train)
print(f"mean |M - m| {lhs:.4f} <= {bound:.4f}: {holds}")

# %%
target = theory.offmanifold_target(model, train)
dist = np.min(np.linalg.norm(train.features - target, axis=1))
print("target", target, "m", nn.forward(model, target), "distance to data", dist)

res = theory.targeted_invalidation(model, target, train, fidelity_weight=10.0, budget=5000)
print(f"after {res.steps} steps: M(target) = {res.m_target:.3f}, agreement {res.agreement:.3%}")
