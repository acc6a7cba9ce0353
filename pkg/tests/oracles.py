"""Independent reference implementations used only by the tests.

They deliberately avoid the package's vectorized code paths: plain Python
loops, textbook formulas and finite differences.
"""
from __future__ import annotations

import math

import numpy as np

MASK = (1 << 64) - 1


def splitmix_stream(seed: int, n: int) -> list[int]:
    """Reference SplitMix64: state += golden gamma, then the finalizer."""
    out = []
    state = seed & MASK
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def box_muller(raw: list[int]) -> list[float]:
    out = []
    for a, b in zip(raw[0::2], raw[1::2]):
        u1 = ((a >> 11) + 1) / 2.0**53
        u2 = (b >> 11) / 2.0**53
        r = math.sqrt(-2.0 * math.log(u1))
        out += [r * math.cos(2 * math.pi * u2), r * math.sin(2 * math.pi * u2)]
    return out


def mlp_forward_loops(weights, biases, x) -> float:
    """Forward pass with explicit loops over units."""
    a = [float(v) for v in x]
    for li, (W, b) in enumerate(zip(weights, biases)):
        z = [sum(W[i][j] * a[j] for j in range(len(a))) + b[i] for i in range(len(b))]
        a = z if li == len(weights) - 1 else [max(0.0, v) for v in z]
    return 1.0 / (1.0 + math.exp(-a[0]))


def central_diff(f, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def lof_bruteforce(S, q, k: int) -> float:
    """Local outlier factor written straight from its definition.

    L_k(p): the k nearest points of S to p (excluding p itself when p is in S),
    ties broken by row index; d_k(p): distance to the k-th of them;
    rd_k(p, o) = max(dist(p, o), d_k(o)); lrd_k(p) = |L_k(p)| / sum rd_k(p, o);
    LOF(q) = mean over o in L_k(q) of lrd_k(o) / lrd_k(q).
    """
    S = [tuple(float(v) for v in row) for row in np.atleast_2d(S)]
    q = tuple(float(v) for v in np.atleast_1d(q))

    def dist(a, b):
        return math.sqrt(sum((u - v) ** 2 for u, v in zip(a, b)))

    def neighbours(p, self_row):
        cand = [(dist(p, S[i]), i) for i in range(len(S)) if i != self_row]
        cand.sort()
        return [i for _, i in cand[:k]]

    def self_row_of(p):
        for i, s in enumerate(S):
            if dist(p, s) <= 1e-12:
                return i
        return None

    def k_distance(i):
        return max(dist(S[i], S[j]) for j in neighbours(S[i], i))

    def lrd(p, self_row):
        L = neighbours(p, self_row)
        return len(L) / sum(max(dist(p, S[o]), k_distance(o)) for o in L)

    sr = self_row_of(q)
    L = neighbours(q, sr)
    lq = lrd(q, sr)
    return sum(lrd(S[o], o) / lq for o in L) / len(L)


def relaxed_stability_loops(f, x, offsets) -> float:
    """(1/k) sum(f(x_i) - |f(x) - f(x_i)|) with x_i = x + offsets[i], via a loop."""
    fx = f(np.asarray(x))
    tot = 0.0
    for d in offsets:
        fi = f(np.asarray(x) + d)
        tot += fi - abs(fx - fi)
    return tot / len(offsets)


def min_preactivation(model, X) -> float:
    """Smallest ``|z|`` over all hidden units and rows of ``X``."""
    a = np.atleast_2d(X)
    low = np.inf
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ W.T + b
        low = min(low, float(np.abs(z).min()))
        a = np.maximum(z, 0)
    return low


def relaxed_gradient_fd_check(n_instances: int, h: float = 1e-5, margin: float = 1e-4) -> tuple[float, int]:
    """Worst relative error of the relaxed-stability gradient against central differences.

    Random (network, point) instances are drawn until ``n_instances`` usable ones
    are found. An instance is unusable when a kink could fall inside the
    difference stencil: a ReLU pre-activation (at the centre or any neighbour)
    or a neighbour's output gap ``|m(x) - m(x_i)|`` within ``margin`` of zero.
    """
    from robustcf import nn
    from robustcf.rng import SplitMix64, derive_seed
    from robustcf.stability import StabilityConfig, sample_offsets, stability_gradient, stability_relaxed

    worst, used, i = 0.0, 0, 0
    while used < n_instances:
        i += 1
        d = 2 + i % 3
        m = nn.init_mlp([d, 8, 8, 1], derive_seed(31, i))
        cfg = StabilityConfig(k=64, sigma2=0.05, seed=derive_seed(32, i))
        x = SplitMix64(derive_seed(33, i)).normal(d) * 0.5
        pts = np.vstack([x, x + sample_offsets(x, cfg)])
        gap = np.abs(nn.forward(m, pts[:1]) - nn.forward(m, pts[1:]))
        if gap.min() < margin or min_preactivation(m, pts) < margin:
            continue
        an = stability_gradient(m, x, cfg)
        fd = central_diff(lambda v: stability_relaxed(m, v, cfg), x, h=h)
        worst = max(worst, float(np.max(np.abs(an - fd)) / max(np.max(np.abs(fd)), 1e-8)))
        used += 1
    return worst, used


def lof_random_instances(n_instances: int, seed: int = 0):
    """Small random (S, queries, k) problems with queries both off and on S."""
    from robustcf.rng import SplitMix64, derive_seed

    for i in range(n_instances):
        g = SplitMix64(derive_seed(seed, i))
        n = 5 + int(g.raw(1)[0] % 26)
        d = 1 + int(g.raw(1)[0] % 3)
        k = 1 + int(g.raw(1)[0] % (n - 1))
        S = g.uniform((n, d))
        Q = np.vstack([g.uniform((3, d)) * 1.4 - 0.2, S[:2]])
        yield S, Q, k


def lof_worst_error(n_instances: int) -> float:
    from robustcf.lof import build_index, lof_scores

    worst = 0.0
    for S, Q, k in lof_random_instances(n_instances):
        got = lof_scores(build_index(S, k), Q)
        ref = np.array([lof_bruteforce(S, q, k) for q in Q])
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst


def projection_onto_boundary(w, b, x):
    """Orthogonal projection of ``x`` onto ``w.x + b = 0``."""
    return x - (w @ x + b) / (w @ w) * w


def linear_projection_worst(n_models: int) -> float:
    """Largest l2 gap between the min-cost counterfactual and the exact projection
    over random logistic models with the query 0.3 to 1.3 inside the negative side."""
    from robustcf import cfgen, nn
    from robustcf.rng import SplitMix64, derive_seed

    worst = 0.0
    for i in range(n_models):
        g = SplitMix64(derive_seed(404, i))
        w = g.normal(2) * 3
        x = g.uniform(2)
        b = -float(w @ x) - (0.3 + g.uniform()) * np.linalg.norm(w)
        model = nn.MlpModel((2, 1), (w[None, :],), (np.array([b]),))
        rec = cfgen.min_cost_cf(model, x, "l2")
        worst = max(worst, float(np.linalg.norm(rec.x_cf - projection_onto_boundary(w, b, x))))
    return worst
