"""Stability of a counterfactual under model change.

All measures average over a Gaussian neighbourhood ``x_i = x + delta_i`` with
``delta_i ~ N(0, sigma2 I)``:

* ``stability_exact``    mean of ``m(x_i) - gamma * ||x - x_i||``
* ``stability_relaxed``  mean of ``m(x_i) - |m(x) - m(x_i)|``
* ``stability_maxratio`` the exact form with ``gamma`` replaced by the largest
  sampled ratio ``|m(x) - m(x_i)| / ||x - x_i||``
* ``stability_mean``     mean of ``m(x_i)``
* ``stability_point``    ``m(x)``

In ``"frozen"`` mode the offsets ``delta_i`` depend only on ``(seed, k, d)``, so
the same offsets are re-centred at every query point (common random numbers);
this is what makes the relaxed measure differentiable in ``x``. In ``"fresh"``
mode the offsets also depend on the exact bytes of ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .rng import SplitMix64, array_seed, derive_seed

FROZEN = "frozen"
FRESH = "fresh"
_RESERVED_DISTRIBUTIONS = ("truncated-gaussian", "uniform")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StabilityConfig:
    k: int = 1000
    sigma2: float = 0.01
    gamma: float | None = None
    gamma_m: float | None = None
    seed: int = 0
    sample_mode: str = FROZEN
    distribution: str = "gaussian"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.sigma2 >= 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        for name in ("gamma", "gamma_m"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")
        if self.sample_mode not in (FROZEN, FRESH):
            raise ConfigError(f"sample_mode must be 'frozen' or 'fresh', got {self.sample_mode!r}")
        if self.distribution in _RESERVED_DISTRIBUTIONS:
            raise NotImplementedError(f"{self.distribution} sampling is not implemented")
        if self.distribution != "gaussian":
            raise ConfigError(f"unknown distribution {self.distribution!r}")


@dataclass(frozen=True, eq=False)
class NeighborhoodSample:
    center: np.ndarray
    points: np.ndarray
    seed: int

    @property
    def offsets(self) -> np.ndarray:
        return self.points - self.center


def sample_seed(x, cfg: StabilityConfig) -> int:
    """Seed of the offset stream used for query point ``x``."""
    if cfg.sample_mode == FROZEN:
        return derive_seed(cfg.seed, "neighborhood")
    return derive_seed(cfg.seed, "neighborhood", array_seed(x))


def sample_offsets(x, cfg: StabilityConfig) -> np.ndarray:
    """``k x d`` offsets ``sqrt(sigma2) * z`` with ``z`` standard normal, row-major."""
    x = np.asarray(x, dtype=np.float64)
    gen = SplitMix64(sample_seed(x, cfg))
    return np.sqrt(cfg.sigma2) * gen.normal((cfg.k, x.shape[0]))


def sample_gaussian_neighborhood(x, cfg: StabilityConfig) -> NeighborhoodSample:
    x = np.asarray(x, dtype=np.float64)
    return NeighborhoodSample(x.copy(), x + sample_offsets(x, cfg), sample_seed(x, cfg))


def _outputs(model, x, cfg):
    x = np.asarray(x, dtype=np.float64)
    pts = x + sample_offsets(x, cfg)
    return nn.forward(model, x), nn.forward(model, pts), pts


def stability_exact(model, x, cfg: StabilityConfig) -> float:
    """``(1/k) sum(m(x_i) - gamma * ||x - x_i||)``; needs ``cfg.gamma``."""
    if cfg.gamma is None:
        raise ConfigError("stability_exact needs a Lipschitz constant (cfg.gamma)")
    x = np.asarray(x, dtype=np.float64)
    _, m_i, pts = _outputs(model, x, cfg)
    return float(np.mean(m_i - cfg.gamma * np.linalg.norm(pts - x, axis=1)))


def relaxed_from_outputs(m_x: float, m_i) -> float:
    """``mean(m_i - |m_x - m_i|)`` for an output at the centre and at its neighbours."""
    m_i = np.asarray(m_i, dtype=np.float64)
    return float(np.mean(m_i - np.abs(m_x - m_i)))


def stability_relaxed(model, x, cfg: StabilityConfig) -> float:
    m_x, m_i, _ = _outputs(model, x, cfg)
    return relaxed_from_outputs(m_x, m_i)


def max_ratio_lipschitz(model, x, cfg: StabilityConfig) -> float:
    """Largest sampled ``|m(x) - m(x_i)| / ||x - x_i||``, skipping ``x_i == x``."""
    if not cfg.sigma2 > 0:
        raise ConfigError("the max-ratio estimate needs sigma2 > 0")
    x = np.asarray(x, dtype=np.float64)
    m_x, m_i, pts = _outputs(model, x, cfg)
    dist = np.linalg.norm(pts - x, axis=1)
    ok = dist > 0
    if not np.any(ok):
        raise ValueError("every sampled point coincides with x")
    return float(np.max(np.abs(m_x - m_i[ok]) / dist[ok]))


def stability_maxratio(model, x, cfg: StabilityConfig) -> float:
    x = np.asarray(x, dtype=np.float64)
    gamma_hat = max_ratio_lipschitz(model, x, cfg)
    _, m_i, pts = _outputs(model, x, cfg)
    return float(np.mean(m_i - gamma_hat * np.linalg.norm(pts - x, axis=1)))


def stability_point(model, x, cfg: StabilityConfig | None = None) -> float:
    return nn.forward(model, np.asarray(x, dtype=np.float64))


def stability_mean(model, x, cfg: StabilityConfig) -> float:
    return float(np.mean(_outputs(model, x, cfg)[1]))


def _require_frozen(cfg):
    if cfg.sample_mode != FROZEN:
        raise ConfigError("gradients need sample_mode='frozen'")


def relaxed_value_and_grad(model, x, offsets: np.ndarray):
    """Relaxed stability and its gradient with the offsets held fixed.

    ``grad = (1/k) sum((1 + s_i) dm(x_i)) - mean(s_i) dm(x)`` with
    ``s_i = sign(m(x) - m(x_i))`` and ``sign(0) = 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    p, g = nn.forward_and_gradient(model, np.vstack([x, x + offsets]))
    m_x, m_i = p[0], p[1:]
    s = np.sign(m_x - m_i)
    value = relaxed_from_outputs(m_x, m_i)
    grad = ((1.0 + s)[:, None] * g[1:]).mean(axis=0) - s.mean() * g[0]
    return value, grad


def mean_value_and_grad(model, x, offsets: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    p, g = nn.forward_and_gradient(model, x + offsets)
    return float(p.mean()), g.mean(axis=0)


def point_value_and_grad(model, x, offsets=None):
    x = np.asarray(x, dtype=np.float64)
    p, g = nn.forward_and_gradient(model, x[None, :])
    return float(p[0]), g[0]


def stability_gradient(model, x, cfg: StabilityConfig) -> np.ndarray:
    """Gradient of ``stability_relaxed`` w.r.t. ``x`` on the frozen sample."""
    _require_frozen(cfg)
    x = np.asarray(x, dtype=np.float64)
    return relaxed_value_and_grad(model, x, sample_offsets(x, cfg))[1]


# measure name -> (value, gradient) on fixed offsets; used by the ablation
MEASURES = {
    "point": point_value_and_grad,
    "mean": mean_value_and_grad,
    "relaxed": relaxed_value_and_grad,
}
