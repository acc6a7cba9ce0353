# %% [markdown]
# # Checking the probabilistic guarantee
#
# A synthetic model change moves every output up or down by `v(x)` with equal
# probability, so the conditional mean equals the original model exactly and
# the Lipschitz constant is known. That makes the guarantee testable.

# %%
from robustcf import data, nn
from robustcf.harness import ensembles as ens
from robustcf.harness import theory

moons = data.make_moons(400, noise_std=0.1, seed=3)
train, _ = data.split(moons, 0.3, seed=1)
model = nn.fit_mlp([2, 128, 128, 1], train, nn.TrainConfig(seed=1, learning_rate=4e-3))
change = ens.synthetic_natural_ensemble(model, v_max=0.05, n_pairs=20, seed=5)
print("Lip(m) bound", change.change.base_lipschitz, " member bound", change.change.member_lipschitz)

# %% [markdown]
# Violation rate of `M(x) < R(x) - eps` next to the closed-form failure bound.
# With Lipschitz bounds this loose the bound is close to 1.

# %%
rows = theory.coverage_check(change, train.features[:20], k=1000, sigma2=0.01,
                                      eps_grid=[0.05, 0.1, 0.2], n_sample_seeds=2, seed=9)
print(theory.coverage_csv(rows))

# %% [markdown]
# With this model's constants the bound needs millions of samples to bite.

# %%
g, gm = change.change.member_lipschitz, change.change.base_lipschitz
for k in (10**3, 10**5, 10**6, 10**7):
    print(k, theory.concentration_bound(k, eps=0.1, gamma=g, gamma_m=gm, sigma2=0.01))
