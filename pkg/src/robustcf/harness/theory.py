"""Falsifiable checks of the validity guarantee and related bounds.

* ``concentration_bound``: the failure probability ``exp(-k eps^2 / (8 (gamma + gamma_m)^2 sigma2))``.
* ``coverage_check``: Monte-Carlo frequency of ``M(x) < R(x) - eps`` under a
  synthetic natural change, next to the bound. It also reports the tail of the
  averaged output gap ``Z = (1/k) sum(m(X_i) - M(X_i))``.
* ``rashomon_bound_check``: mean on-data disagreement ``|M - m|`` against ``sqrt(max variance)``.
* ``targeted_invalidation``: fine-tune a copy of ``m`` so that it rejects one chosen
  counterfactual while keeping (almost) all decisions on the data.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import nn
from ..rng import SplitMix64, derive_seed
from .ensembles import SYNTHETIC, ModelEnsemble


def concentration_bound(k: int, eps: float, gamma: float, gamma_m: float, sigma2: float) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if not gamma >= 0 or not gamma_m >= 0 or not gamma + gamma_m > 0:
        raise ValueError("gamma and gamma_m must be >= 0 with a positive sum")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    expo = -k * eps**2 / (8.0 * (gamma + gamma_m) ** 2 * sigma2)
    return min(1.0, max(0.0, math.exp(expo)))


@dataclass
class CoverageRow:
    eps: float
    k: int
    trials: int
    violations: int
    violation_rate: float
    bound: float
    z_tail_rate: float
    gamma: float
    gamma_m: float
    sigma2: float

    @property
    def holds(self) -> bool:
        return self.violation_rate <= self.bound


def coverage_check(ensemble: ModelEnsemble, queries, k: int, sigma2: float, eps_grid: Sequence[float],
                            n_sample_seeds: int, seed: int) -> list:
    """Empirical violation rates over (query, member, neighbourhood draw) triples.

    Uses ``gamma = Lip(m) + Lip(v)`` and ``gamma_m = Lip(m)`` with ``Lip(m)`` the
    spectral-norm product bound. The pairing of ``+v`` and ``-v`` members makes
    the conditional-mean condition exact, so no extra slack enters the bound.
    """
    if ensemble.kind != SYNTHETIC or ensemble.change is None:
        raise ValueError("coverage needs a synthetic-natural ensemble (retrained ensembles have no certified Lipschitz constant)")
    change = ensemble.change
    model = ensemble.base
    gamma_m = change.base_lipschitz
    gamma = change.member_lipschitz
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    signs = np.array([M.sign for M in ensemble.members], dtype=np.float64)
    d = Q.shape[1]

    # per (query, draw): m(x), v(x), sampled mean of m, sampled mean distance, sampled mean of v
    m_x = nn.forward(model, Q)
    v_x = change.v(Q)
    mean_m = np.empty((len(Q), n_sample_seeds))
    mean_dist = np.empty_like(mean_m)
    mean_v = np.empty_like(mean_m)
    for qi, x in enumerate(Q):
        for j in range(n_sample_seeds):
            gen = SplitMix64(derive_seed(seed, "coverage", k, qi, j))
            pts = x + np.sqrt(sigma2) * gen.normal((k, d))
            mean_m[qi, j] = nn.forward(model, pts).mean()
            mean_dist[qi, j] = np.linalg.norm(pts - x, axis=1).mean()
            mean_v[qi, j] = change.v(pts).mean()
    R = mean_m - gamma * mean_dist  # (q, s)
    M_x = m_x[:, None] + signs[None, :] * v_x[:, None]  # (q, members)
    Z = -signs[None, None, :] * mean_v[:, :, None]  # (q, s, members)
    trials = R.size * len(signs)
    rows = []
    for eps in eps_grid:
        viol = int(np.sum(M_x[:, None, :] < (R[:, :, None] - eps)))
        z_tail = float(np.mean(Z >= eps))
        bound = concentration_bound(k, eps, gamma, gamma_m, sigma2)
        rows.append(CoverageRow(float(eps), int(k), trials, viol, viol / trials, bound, z_tail, gamma, gamma_m, sigma2))
    return rows


def coverage_csv(rows: Sequence[CoverageRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "k", "trials", "violations", "violation_rate", "bound", "z_tail_rate", "gamma", "gamma_m",
                "sigma2", "holds"])
    for r in rows:
        w.writerow([repr(r.eps), r.k, r.trials, r.violations, repr(r.violation_rate), repr(r.bound),
                    repr(r.z_tail_rate), repr(r.gamma), repr(r.gamma_m), repr(r.sigma2), int(r.holds)])
    return buf.getvalue()


def rashomon_bound_check(ensemble: ModelEnsemble, data) -> tuple[float, float, bool]:
    """``(lhs, bound, holds)`` with ``lhs = mean_members mean_i |M(x_i) - m(x_i)|`` and
    ``bound = sqrt(max_i Var_members M(x_i))`` (population variance)."""
    X = np.asarray(getattr(data, "features", data), dtype=np.float64)
    base = nn.forward(ensemble.base, X)
    out = ensemble.outputs(X)
    dev = out - base[None, :]
    lhs = float(np.mean(np.abs(dev)))
    # variance is shift invariant; centring on m first keeps exact copies at exactly 0
    bound = float(np.sqrt(np.max(np.var(dev, axis=0))))
    return lhs, bound, lhs <= bound + 1e-9


@dataclass
class TargetedResult:
    model: nn.MlpModel
    agreement: float
    m_target: float
    success: bool
    steps: int


def targeted_invalidation(model: nn.MlpModel, target, data, fidelity_weight: float, budget: int,
                          learning_rate: float = 1e-3, min_agreement: float = 0.99) -> TargetedResult:
    """Fine-tune a copy of ``model`` with Adam on
    ``fidelity_weight * mean((M(x) - m(x))^2) + M(target)^2``.

    Stops at the first step where ``M(target) < 0.5`` and at least
    ``min_agreement`` of the data keep their decision. When the budget runs out
    the last model is returned with ``success=False``.
    """
    target = np.asarray(target, dtype=np.float64)
    if nn.forward(model, target) < 0.5:
        raise ValueError("target must be a counterfactual of the original model (m(target) >= 0.5)")
    X = np.asarray(getattr(data, "features", data), dtype=np.float64)
    ref = nn.forward(model, X)
    ref_dec = ref >= 0.5
    batch = np.vstack([X, target])
    n = X.shape[0]
    ws = [np.array(w) for w in model.weights]
    bs = [np.array(b) for b in model.biases]
    work = nn._MutableMlp(model.layer_sizes, ws, bs)
    opt = nn.Adam(ws + bs, learning_rate)

    def dz(p):
        p = p[:, 0]
        dp = np.empty_like(p)
        dp[:n] = 2.0 * fidelity_weight * (p[:n] - ref) / n
        dp[n] = 2.0 * p[n]
        return (dp * p * (1.0 - p))[:, None]

    def status():
        out = nn.forward(work, batch)
        agree = float(np.mean((out[:n] >= 0.5) == ref_dec))
        return agree, float(out[n])

    agree, m_t = status()
    steps = 0
    while steps < budget and not (m_t < 0.5 and agree >= min_agreement):
        _, gws, gbs = nn._param_grads(work, batch, dz)
        opt.step(gws + gbs)
        steps += 1
        agree, m_t = status()
    new = nn.MlpModel(model.layer_sizes, tuple(ws), tuple(bs))
    return TargetedResult(new, agree, m_t, bool(m_t < 0.5 and agree >= min_agreement), steps)


def offmanifold_target(model: nn.MlpModel, data, resolution: int = 41, min_output: float = 0.5) -> np.ndarray:
    """Point of a regular grid over the data's bounding box that the model accepts
    (``m >= min_output``) and that lies farthest from every data row."""
    X = np.asarray(getattr(data, "features", data), dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    if len(axes) > 3:
        raise ValueError("grid search is limited to d <= 3")
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    grid = grid[nn.forward(model, grid) >= min_output]
    if len(grid) == 0:
        raise ValueError("model accepts no grid point")
    nearest = np.array([np.min(np.linalg.norm(X - g, axis=1)) for g in grid])
    return grid[int(np.argmax(nearest))]
