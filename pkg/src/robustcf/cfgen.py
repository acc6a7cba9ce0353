"""Counterfactual generators and the robustness test.

* ``min_cost_cf``: closest counterfactual by a penalty method.
* ``nn_cf``: closest favourably classified dataset row.
* ``trex_i``: gradient ascent on a stability measure from any base counterfactual.
* ``trex_nn``: first of the K nearest favourable rows that passes the robustness test.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import nn
from .stability import FROZEN, MEASURES, StabilityConfig, relaxed_value_and_grad, sample_offsets, stability_relaxed

MIN_COST = "min-cost"
NN = "nn"
TREX_I = "trex-i"
TREX_NN = "trex-nn"
GENERATORS = (MIN_COST, TREX_I, NN, TREX_NN)
NORMS = ("l1", "l2")

FOUND = "found"
UNMET = "unmet"  # ascent hit max_steps before reaching tau
INVALID = "invalid"  # output ended on the unfavourable side
NOT_FOUND = "not-found"


@dataclass(frozen=True, eq=False)
class CounterfactualRecord:
    x: np.ndarray | None
    x_cf: np.ndarray | None
    generator: str
    norm: str
    cost: float
    m_cf: float
    stability: float
    verdict: str
    steps: int = 0
    row_id: int = -1

    @property
    def usable(self) -> bool:
        """An output point exists and the original model classifies it favourably."""
        return self.x_cf is not None and self.verdict in (FOUND, UNMET)


@dataclass(frozen=True)
class TrexConfig:
    k: int = 1000
    sigma2: float = 0.01
    seed: int = 0
    tau: float = 0.7
    eta: float = 0.01
    max_steps: int = 100
    K: int = 1000

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        self.stability_config()  # validates k and sigma2

    def stability_config(self) -> StabilityConfig:
        return StabilityConfig(k=self.k, sigma2=self.sigma2, seed=self.seed, sample_mode=FROZEN)


@dataclass(frozen=True)
class MinCostParams:
    """Penalty-method schedule: ``lam0 * factor**r`` for ``r < max_rounds``."""

    lam0: float = 0.1
    factor: float = 2.0
    max_rounds: int = 20
    inner_steps: int = 500
    lr: float = 0.01
    target: float = 1.0
    refine_iters: int = 60


def lp_distance(a, b, norm: str) -> np.ndarray | float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if norm == "l1":
        return np.abs(diff).sum(axis=-1)
    if norm == "l2":
        return np.sqrt((diff**2).sum(axis=-1))
    raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")


def robustness_test(model, x, cfg: TrexConfig) -> bool:
    """Relaxed stability at ``x`` is at least ``tau`` (inclusive)."""
    return stability_relaxed(model, x, cfg.stability_config()) >= cfg.tau


def _not_found(x, generator, norm, row_id=-1, steps=0):
    return CounterfactualRecord(x, None, generator, norm, float("nan"), float("nan"), float("nan"),
                                NOT_FOUND, steps, row_id)


def _require_unfavourable(model, x):
    if nn.forward(model, x) >= 0.5:
        raise ValueError("query point must have m(x) < 0.5")


def _prox(u, x, t, norm):
    # proximal map of t * ||. - x||_p
    v = u - x
    if norm == "l1":
        return x + np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    nv = np.linalg.norm(v)
    return x if nv <= t else x + v * (1.0 - t / nv)


def _refine(model, lo, hi, iters):
    # lo infeasible, hi feasible; bisect the segment towards the boundary crossing
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if nn.forward(model, mid) >= 0.5:
            hi = mid
        else:
            lo = mid
    return hi


def min_cost_cf(model, x, norm: str = "l2", params: MinCostParams | None = None,
                stability_cfg: StabilityConfig | None = None, row_id: int = -1) -> CounterfactualRecord:
    """Closest counterfactual via ``lam * (m(x') - target)**2 + ||x - x'||_p``.

    Each round runs ``inner_steps`` of proximal gradient descent with a larger
    ``lam``, warm-started from the previous round's end point. Stationary points
    of the penalty are the cheapest points at their own output level, so the
    first round that ends with ``m >= 0.5`` brackets the boundary together with
    the round before it; that segment is bisected down to the boundary.
    """
    params = params or MinCostParams()
    if norm not in NORMS:
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    x = np.asarray(x, dtype=np.float64)
    _require_unfavourable(model, x)
    total = 0
    xc = x.copy()
    for r in range(params.max_rounds):
        lam = params.lam0 * params.factor**r
        start = xc
        for _ in range(params.inner_steps):
            p, g = nn.forward_and_gradient(model, xc[None, :])
            nxt = _prox(xc - params.lr * 2.0 * lam * (p[0] - params.target) * g[0], x, params.lr, norm)
            total += 1
            done = np.max(np.abs(nxt - xc)) < 1e-12
            xc = nxt
            if done:
                break
        if nn.forward(model, xc) >= 0.5:
            x_cf = _refine(model, start, xc, params.refine_iters)
            return _finish(model, x, x_cf, MIN_COST, norm, total, stability_cfg, row_id)
    return _not_found(x, MIN_COST, norm, row_id, total)


def _finish(model, x, x_cf, generator, norm, steps, stability_cfg, row_id, verdict=None, stab=None):
    m_cf = nn.forward(model, x_cf)
    if stab is None:
        stab = stability_relaxed(model, x_cf, stability_cfg) if stability_cfg else float("nan")
    if verdict is None:
        verdict = FOUND if m_cf >= 0.5 else INVALID
    return CounterfactualRecord(x, np.array(x_cf), generator, norm, float(lp_distance(x, x_cf, norm)),
                                m_cf, float(stab), verdict, steps, row_id)


def positive_candidates(model, x, dataset, norm: str, K: int | None = None):
    """Rows with ``m >= 0.5`` ordered by distance to ``x`` (ties: lower row first)."""
    X = np.asarray(getattr(dataset, "features", dataset), dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    pos = np.flatnonzero(nn.forward(model, X) >= 0.5)
    dist = lp_distance(X[pos], x, norm)
    order = np.argsort(dist, kind="stable")
    if K is not None:
        order = order[:K]
    return pos[order], dist[order]


def nn_cf(model, x, dataset, norm: str = "l2", stability_cfg: StabilityConfig | None = None,
          row_id: int = -1) -> CounterfactualRecord:
    """Closest dataset row that the model classifies favourably."""
    x = np.asarray(x, dtype=np.float64)
    _require_unfavourable(model, x)
    rows, _ = positive_candidates(model, x, dataset, norm, K=1)
    if len(rows) == 0:
        return _not_found(x, NN, norm, row_id)
    X = np.asarray(getattr(dataset, "features", dataset), dtype=np.float64)
    return _finish(model, x, X[rows[0]], NN, norm, 0, stability_cfg, row_id)


def trex_i(model, x, base: CounterfactualRecord, cfg: TrexConfig, measure: str = "relaxed",
           return_path: bool = False):
    """Gradient ascent from ``base.x_cf`` while ``measure < tau`` and ``steps < max_steps``.

    ``measure`` is ``"relaxed"`` (default), ``"mean"`` or ``"point"``. The
    neighbourhood offsets are drawn once and reused at every step. With
    ``return_path`` the visited points and their measure values are returned too.
    """
    fn = MEASURES[measure]
    x = np.asarray(x, dtype=np.float64)
    if base.x_cf is None:
        rec = _not_found(x, TREX_I, base.norm, base.row_id)
        return (rec, []) if return_path else rec
    scfg = cfg.stability_config()
    offsets = sample_offsets(base.x_cf, scfg)
    xc = np.array(base.x_cf, dtype=np.float64)
    value, grad = fn(model, xc, offsets)
    path = [(xc.copy(), value)]
    steps = 0
    while value < cfg.tau and steps < cfg.max_steps:
        xc = xc + cfg.eta * grad
        steps += 1
        value, grad = fn(model, xc, offsets)
        path.append((xc.copy(), value))
    relaxed = value if measure == "relaxed" else relaxed_value_and_grad(model, xc, offsets)[0]
    m_cf = nn.forward(model, xc)
    verdict = INVALID if m_cf < 0.5 else (FOUND if value >= cfg.tau else UNMET)
    rec = _finish(model, x, xc, TREX_I, base.norm, steps, None, base.row_id, verdict, relaxed)
    return (rec, path) if return_path else rec


def trex_nn(model, x, dataset, cfg: TrexConfig, norm: str = "l2", row_id: int = -1) -> CounterfactualRecord:
    """Scan the ``K`` nearest favourable rows and return the first robust one.

    ``steps`` counts the candidates examined. If none passes, the record's
    verdict is ``"not-found"``.
    """
    x = np.asarray(x, dtype=np.float64)
    _require_unfavourable(model, x)
    rows, _ = positive_candidates(model, x, dataset, norm, K=cfg.K)
    X = np.asarray(getattr(dataset, "features", dataset), dtype=np.float64)
    scfg = cfg.stability_config()
    for i, row in enumerate(rows, start=1):
        stab = stability_relaxed(model, X[row], scfg)
        if stab >= cfg.tau:
            return _finish(model, x, X[row], TREX_NN, norm, i, None, row_id, FOUND, stab)
    return _not_found(x, TREX_NN, norm, row_id, len(rows))


CSV_COLUMNS = ("row_id", "generator", "norm", "cost", "m_cf", "stability", "verdict", "steps")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_records_csv(path, records: Sequence[CounterfactualRecord], feature_names: Sequence[str]) -> None:
    """One row per record; feature cells are empty when no counterfactual exists."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CSV_COLUMNS) + list(feature_names))
        for r in records:
            feats = [""] * len(feature_names) if r.x_cf is None else [_fmt(float(v)) for v in r.x_cf]
            w.writerow([r.row_id, r.generator, r.norm, _fmt(r.cost), _fmt(r.m_cf), _fmt(r.stability),
                        r.verdict, r.steps] + feats)


def read_records_csv(path, queries=None) -> list[CounterfactualRecord]:
    """Inverse of :func:`write_records_csv`; ``queries[row_id]`` restores ``x`` if given."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[: len(CSV_COLUMNS)]) != CSV_COLUMNS:
            raise ValueError(f"{path}: not a counterfactual CSV (header {header[:len(CSV_COLUMNS)]})")
        for row in reader:
            fnum = lambda s: float(s) if s else float("nan")  # noqa: E731
            feats = row[len(CSV_COLUMNS):]
            x_cf = None if all(c == "" for c in feats) else np.array([float(c) for c in feats])
            row_id = int(row[0])
            x = None if queries is None or row_id < 0 else np.asarray(queries[row_id], dtype=np.float64)
            out.append(CounterfactualRecord(x, x_cf, row[1], row[2], fnum(row[3]), fnum(row[4]), fnum(row[5]),
                                            row[6], int(row[7]), row_id))
    return out


def with_row_id(record: CounterfactualRecord, row_id: int) -> CounterfactualRecord:
    return replace(record, row_id=row_id)
