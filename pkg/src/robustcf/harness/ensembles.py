"""Families of changed models ``M`` around a base model ``m``."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .. import nn
from ..data import leave_out_resample
from ..rng import SplitMix64, derive_seed

WEIGHT_INIT = "weight-init"
LEAVE_OUT = "leave-out"
SYNTHETIC = "synthetic-natural"
KINDS = (WEIGHT_INIT, LEAVE_OUT, SYNTHETIC)

MARGIN = "margin"
CONSTANT = "constant"


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SyntheticNaturalChange:
    """Output perturbation ``v`` with ``M_s(x) = m(x) + s * v(x)``, ``s = +-1``.

    ``"margin"`` profile: ``v(x) = sigmoid(w.x + b) * min(v_max, m(x), 1 - m(x))``,
    so ``M`` stays inside ``[0, 1]`` and ``Lip(v) <= v_max*||w||/4 + Lip(m)``.
    ``"constant"`` profile: ``v(x) = v_max``; outputs may leave ``[0, 1]`` where
    ``m`` is within ``v_max`` of 0 or 1.
    """

    model: nn.MlpModel
    v_max: float
    w: np.ndarray
    b: float
    profile: str = MARGIN

    def __post_init__(self):
        if not 0 <= self.v_max < 0.5:
            raise ValueError(f"v_max must be in [0, 0.5), got {self.v_max}")
        if self.profile not in (MARGIN, CONSTANT):
            raise ValueError(f"unknown profile {self.profile!r}")

    def v(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.profile == CONSTANT:
            return np.full(X.shape[0], float(self.v_max))
        p = nn.forward(self.model, X)
        gate = nn._sigmoid(X @ self.w + self.b)
        return gate * np.minimum(self.v_max, np.minimum(p, 1.0 - p))

    @property
    def base_lipschitz(self) -> float:
        return nn.analytic_lipschitz(self.model)

    @property
    def lipschitz_v(self) -> float:
        if self.profile == CONSTANT or self.v_max == 0:
            return 0.0
        return self.v_max * float(np.linalg.norm(self.w)) / 4.0 + self.base_lipschitz

    @property
    def member_lipschitz(self) -> float:
        """Lipschitz bound shared by ``m`` and every ``M_s``."""
        return self.base_lipschitz + self.lipschitz_v


@dataclass(frozen=True, eq=False)
class SyntheticMember:
    change: SyntheticNaturalChange
    sign: int

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        Xb = np.atleast_2d(X)
        out = nn.forward(self.change.model, Xb) + self.sign * self.change.v(Xb)
        return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class ModelEnsemble:
    base: nn.MlpModel
    members: tuple
    kind: str
    seeds: tuple
    change: SyntheticNaturalChange | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")

    def __len__(self):
        return len(self.members)

    def outputs(self, X) -> np.ndarray:
        """``(n_members, n_points)`` matrix of member outputs."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        rows = []
        for M in self.members:
            rows.append(nn.forward(M, X) if isinstance(M, nn.MlpModel) else M(X))
        return np.vstack(rows)


def member_seeds(master_seed: int, n_models: int) -> tuple:
    return tuple(derive_seed(master_seed, i) for i in range(n_models))


def retrain_ensemble(data, layer_sizes: Sequence[int], base_cfg: nn.TrainConfig, n_models: int, kind: str,
                     master_seed: int, base: nn.MlpModel | None = None,
                     leave_out_fraction: float = 0.01) -> ModelEnsemble:
    """Retrain ``n_models`` models from scratch.

    Member ``i`` uses seed ``derive_seed(master_seed, i)`` for both weight
    initialization and batch order. ``"leave-out"`` members also drop a fresh
    random ``leave_out_fraction`` of the rows, drawn from the same seed.
    """
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    if kind not in (WEIGHT_INIT, LEAVE_OUT):
        raise ValueError(f"retraining supports {WEIGHT_INIT!r} or {LEAVE_OUT!r}, got {kind!r}")
    seeds = member_seeds(master_seed, n_models)
    members = []
    for i, seed in enumerate(seeds):
        train_data = data if kind == WEIGHT_INIT else leave_out_resample(data, leave_out_fraction, seed)
        try:
            members.append(nn.fit_mlp(layer_sizes, train_data, replace(base_cfg, seed=seed)))
        except Exception as exc:  # noqa: BLE001 - re-raised with the member index
            raise EnsembleError(f"training ensemble member {i} failed: {exc}") from exc
    if base is None:
        base = members[0]
    return ModelEnsemble(base, tuple(members), kind, seeds)


def synthetic_natural_ensemble(model: nn.MlpModel, v_max: float, n_pairs: int, seed: int,
                               profile: str = MARGIN, gate_norm: float = 4.0) -> ModelEnsemble:
    """``2 * n_pairs`` members ``m + v, m - v, m + v, ...``.

    The gate direction ``w`` is a seeded random unit vector times ``gate_norm``;
    ``b`` centres the gate at the middle of the unit cube.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    d = model.input_dim
    z = SplitMix64(derive_seed(seed, "synthetic-gate")).normal(d)
    w = gate_norm * z / np.linalg.norm(z)
    b = -float(w.sum()) * 0.5
    change = SyntheticNaturalChange(model, float(v_max), w, b, profile)
    members = []
    for _ in range(n_pairs):
        members += [SyntheticMember(change, +1), SyntheticMember(change, -1)]
    return ModelEnsemble(model, tuple(members), SYNTHETIC, (int(seed),), change)
