"""Validity, cost and LOF metrics, full evaluation runs and the measure ablation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .. import cfgen, nn
from ..lof import DEFAULT_THRESHOLD, LofIndex, lof_scores

LABELS = {
    cfgen.MIN_COST: "min Cost",
    cfgen.TREX_I: "min Cost+T-Rex:I",
    cfgen.NN: "NN",
    cfgen.TREX_NN: "T-Rex:NN",
}
MEASURE_LABELS = {"point": "r", "mean": "r_k", "relaxed": "R_hat"}


def _usable(records):
    return [r for r in records if r.usable]


def _points(records):
    recs = _usable(records)
    if not recs:
        raise ValueError("no usable counterfactuals to evaluate")
    return np.vstack([r.x_cf for r in recs])


def validity(records, ensemble) -> float:
    """Percent of (counterfactual, member) pairs with ``M(x') >= 0.5``."""
    X = _points(records)
    return float(np.mean(ensemble.outputs(X) >= 0.5) * 100.0)


def cost_summary(records) -> dict:
    """``{norm: (mean, std)}`` of the costs of usable records."""
    recs = _usable(records)
    if not recs:
        raise ValueError("no usable counterfactuals to summarize")
    out = {}
    for norm in sorted({r.norm for r in recs}):
        c = np.array([r.cost for r in recs if r.norm == norm])
        out[norm] = (float(c.mean()), float(c.std()))
    return out


def lof_summary(records, index: LofIndex, threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """Mean LOF prediction (+1 inlier / -1 outlier) and mean raw score at ``x'``."""
    scores = lof_scores(index, _points(records))
    preds = np.where(scores > threshold, -1, 1)
    return float(preds.mean()), float(scores.mean())


@dataclass
class ReportRow:
    generator: str
    norm: str
    count: int
    n_queries: int
    cost_mean: float
    cost_std: float
    lof_pred_mean: float
    lof_score_mean: float
    validity: dict = field(default_factory=dict)


REPORT_COLUMNS = ("generator", "norm", "count", "n_queries", "cost_mean", "cost_std", "lof_pred_mean",
                  "lof_score_mean")


def _f(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


@dataclass
class RobustnessReport:
    rows: list
    ensemble_kinds: tuple
    config: dict = field(default_factory=dict)

    def row(self, generator: str, norm: str) -> ReportRow:
        for r in self.rows:
            if r.generator == generator and r.norm == norm:
                return r
        raise KeyError((generator, norm))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(REPORT_COLUMNS) + [f"validity_{k}" for k in self.ensemble_kinds])
        for r in self.rows:
            w.writerow([r.generator, r.norm, r.count, r.n_queries, _f(r.cost_mean), _f(r.cost_std),
                        _f(r.lof_pred_mean), _f(r.lof_score_mean)]
                       + [_f(r.validity.get(k)) for k in self.ensemble_kinds])
        return buf.getvalue()

    def to_text(self) -> str:
        """Table with one line per generator and COST/LOF/validity blocks per norm."""
        norms = [n for n in cfgen.NORMS if any(r.norm == n for r in self.rows)]
        short = {"weight-init": "WI VAL.", "leave-out": "LO VAL.", "synthetic-natural": "SYN VAL."}
        cols = ["COST", "LOF"] + [short.get(k, k) for k in self.ensemble_kinds]
        width = 9
        head1 = f"{'Method':<18}" + "".join(f"{n + ' based':^{width * len(cols)}}" for n in norms)
        head2 = f"{'':<18}" + "".join(f"{c:>{width}}" for _ in norms for c in cols)
        lines = [head1, head2, "-" * len(head2)]
        gens = [g for g in cfgen.GENERATORS if any(r.generator == g for r in self.rows)]
        for g in gens:
            cells = []
            for n in norms:
                try:
                    r = self.row(g, n)
                except KeyError:
                    cells += ["-"] * len(cols)
                    continue
                cells += [f"{r.cost_mean:.2f}", f"{r.lof_pred_mean:.2f}"]
                cells += [f"{r.validity[k]:.1f}%" if k in r.validity else "-" for k in self.ensemble_kinds]
            lines.append(f"{LABELS.get(g, g):<18}" + "".join(f"{c:>{width}}" for c in cells))
        return "\n".join(lines) + "\n"


def true_negative_queries(model, test) -> np.ndarray:
    """Row indices of test points with label 0 that the model also rejects."""
    p = nn.forward(model, test.features)
    return np.flatnonzero((np.asarray(test.labels) == 0) & (p < 0.5))


def generate(model, queries: np.ndarray, row_ids: Sequence[int], dataset, generators: Sequence[str],
             norms: Sequence[str], trex_cfg: cfgen.TrexConfig,
             min_cost_params: cfgen.MinCostParams | None = None) -> dict:
    """Counterfactuals for every query, keyed by ``(generator, norm)``.

    T-Rex:I starts from the min-cost counterfactual of the same norm.
    """
    unknown = set(generators) - set(cfgen.GENERATORS)
    if unknown:
        raise ValueError(f"unknown generators {sorted(unknown)}")
    scfg = trex_cfg.stability_config()
    out = {}
    for norm in norms:
        base = None
        if cfgen.MIN_COST in generators or cfgen.TREX_I in generators:
            base = [cfgen.min_cost_cf(model, x, norm, min_cost_params, scfg, int(rid))
                    for x, rid in zip(queries, row_ids)]
        for g in generators:
            if g == cfgen.MIN_COST:
                recs = base
            elif g == cfgen.TREX_I:
                recs = [cfgen.trex_i(model, x, b, trex_cfg) for x, b in zip(queries, base)]
            elif g == cfgen.NN:
                recs = [cfgen.nn_cf(model, x, dataset, norm, scfg, int(rid)) for x, rid in zip(queries, row_ids)]
            else:
                recs = [cfgen.trex_nn(model, x, dataset, trex_cfg, norm, int(rid)) for x, rid in zip(queries, row_ids)]
            out[(g, norm)] = recs
    return out


def report_from_records(records: Mapping, ensembles: Mapping, lof_index: LofIndex,
                        lof_threshold: float = DEFAULT_THRESHOLD, config: dict | None = None) -> RobustnessReport:
    kinds = tuple(ensembles)
    rows = []
    for g in cfgen.GENERATORS:
        for n in cfgen.NORMS:
            if (g, n) not in records:
                continue
            recs = records[(g, n)]
            usable = _usable(recs)
            if usable:
                cm, cs = cost_summary(usable)[n]
                lp, ls = lof_summary(usable, lof_index, lof_threshold)
                val = {k: validity(usable, ens) for k, ens in ensembles.items()}
            else:
                cm = cs = lp = ls = float("nan")
                val = {}
            rows.append(ReportRow(g, n, len(usable), len(recs), cm, cs, lp, ls, val))
    return RobustnessReport(rows, kinds, dict(config or {}))


def evaluate(train, test, model, generators: Sequence[str], norms: Sequence[str], trex_cfg: cfgen.TrexConfig,
             ensembles: Mapping, lof_index: LofIndex, lof_threshold: float = DEFAULT_THRESHOLD,
             max_queries: int | None = None, min_cost_params: cfgen.MinCostParams | None = None):
    """Generate counterfactuals for the true-negative test points and score them.

    Nearest-neighbour generators search ``train``. Returns ``(report, records)``.
    """
    rows = true_negative_queries(model, test)
    if max_queries is not None:
        rows = rows[:max_queries]
    records = generate(model, test.features[rows], rows, train, generators, norms, trex_cfg, min_cost_params)
    report = report_from_records(records, ensembles, lof_index, lof_threshold)
    return report, records


@dataclass
class AblationRow:
    tau: float
    measure: str
    norm: str
    count: int
    cost_mean: float
    lof_pred_mean: float
    validity: dict


def ablation(model, base_records: Mapping, ensembles: Mapping, taus: Sequence[float], trex_cfg: cfgen.TrexConfig,
             lof_index: LofIndex, measures: Sequence[str] = ("point", "mean", "relaxed"),
             lof_threshold: float = DEFAULT_THRESHOLD) -> list:
    """T-Rex:I with each measure as both acceptance test and ascent objective.

    ``base_records`` maps a norm to its min-cost counterfactuals.
    """
    out = []
    for tau in taus:
        cfg = replace(trex_cfg, tau=float(tau))
        for norm, base in base_records.items():
            for measure in measures:
                recs = [cfgen.trex_i(model, b.x, b, cfg, measure=measure) for b in base]
                usable = _usable(recs)
                if usable:
                    cost = cost_summary(usable)[norm][0]
                    lp = lof_summary(usable, lof_index, lof_threshold)[0]
                    val = {k: validity(usable, e) for k, e in ensembles.items()}
                else:
                    cost = lp = float("nan")
                    val = {}
                out.append(AblationRow(float(tau), measure, norm, len(usable), cost, lp, val))
    return out


def ablation_csv(rows: Sequence[AblationRow], kinds: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "measure", "norm", "count", "cost_mean", "lof_pred_mean"] + [f"validity_{k}" for k in kinds])
    for r in rows:
        w.writerow([_f(r.tau), r.measure, r.norm, r.count, _f(r.cost_mean), _f(r.lof_pred_mean)]
                   + [_f(r.validity.get(k)) for k in kinds])
    return buf.getvalue()
