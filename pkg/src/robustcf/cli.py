"""Command-line runs driven by a JSON config.

    robustcf train    --config run.json [--out DIR] [--seed N] [--quiet]
    robustcf generate --config run.json ...
    robustcf evaluate --config run.json ...
    robustcf theory   --config run.json ...
    robustcf run-all  --config run.json ...

Every stage writes under the output directory and updates ``manifest.json``
with the config hash, derived seeds, library versions and a sha256 per file.
Exit codes: 0 success, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, cfgen, data, nn
from .harness import ensembles as ens
from .harness import evaluation, theory
from .lof import build_index
from .rng import derive_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
U64_MAX = 2**64 - 1

_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0, "maximum": U64_MAX}
_prob = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "seed": _seed,
    "data": _obj({
        "source": {"enum": ["moons", "csv"]},
        "n": _int1,
        "noise": {"type": "number", "minimum": 0},
        "path": {"type": "string"},
        "label": {"type": "string"},
        "columns": {"type": "array", "minItems": 1, "items": _obj({
            "name": {"type": "string"},
            "kind": {"enum": [data.NUMERIC, data.CATEGORICAL]},
        }, required=["name"])},
        "one_hot": {"type": "boolean"},
        "normalize": {"type": "boolean"},
        "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": _seed,
    }, required=["source"]),
    "model": _obj({
        "layer_sizes": {"type": "array", "items": _int1, "minItems": 2},
        "epochs": _int1,
        "batch_size": _int1,
        "learning_rate": _pos,
        "seed": _seed,
    }, required=["layer_sizes"]),
    "trex": _obj({
        "k": _int1,
        "sigma2": _pos,
        "tau": _prob,
        "eta": _pos,
        "max_steps": {"type": "integer", "minimum": 0},
        "K": _int1,
        "seed": _seed,
    }),
    "ensembles": _obj({
        "kinds": {"type": "array", "uniqueItems": True, "items": {"enum": [ens.WEIGHT_INIT, ens.LEAVE_OUT]}},
        "n_models": _int1,
        "leave_out_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": _seed,
    }),
    "evaluation": _obj({
        "generators": {"type": "array", "uniqueItems": True, "minItems": 1, "items": {"enum": list(cfgen.GENERATORS)}},
        "norms": {"type": "array", "uniqueItems": True, "minItems": 1, "items": {"enum": list(cfgen.NORMS)}},
        "taus": {"type": "array", "items": _prob},
        "measures": {"type": "array", "uniqueItems": True, "items": {"enum": ["point", "mean", "relaxed"]}},
        "max_queries": _int1,
        "lof_k": _int1,
        "lof_threshold": {"type": "number", "exclusiveMinimum": 1},
    }),
    "theory": _obj({
        "v_max": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "n_pairs": _int1,
        "eps": {"type": "array", "minItems": 1, "items": _pos},
        "ks": {"type": "array", "minItems": 1, "items": _int1},
        "n_sample_seeds": _int1,
        "n_queries": _int1,
        "bound_ks": {"type": "array", "items": _int1},
        "fidelity_weight": {"type": "number", "minimum": 0},
        "budget": {"type": "integer", "minimum": 0},
        "invalidation_lr": _pos,
        "seed": _seed,
    }),
    "output": _obj({"dir": {"type": "string"}}),
}, required=["data", "model"])

DEFAULTS = {
    "seed": 0,
    "data": {"n": 400, "noise": 0.1, "label": "label", "one_hot": True, "normalize": True, "test_fraction": 0.3},
    "model": {"epochs": 50, "batch_size": 32, "learning_rate": 1e-3},
    "trex": {"k": 1000, "sigma2": 0.01, "tau": 0.7, "eta": 0.01, "max_steps": 100, "K": 1000},
    "ensembles": {"kinds": [ens.WEIGHT_INIT, ens.LEAVE_OUT], "n_models": 50, "leave_out_fraction": 0.01},
    "evaluation": {"generators": list(cfgen.GENERATORS), "norms": list(cfgen.NORMS), "taus": [],
                   "measures": ["point", "mean", "relaxed"], "lof_k": 20, "lof_threshold": 1.5},
    "theory": {"v_max": 0.05, "n_pairs": 20, "eps": [0.05, 0.1, 0.2], "ks": [100, 1000], "n_sample_seeds": 5,
               "n_queries": 50, "bound_ks": [125, 250, 500, 1000, 2000], "fidelity_weight": 10.0, "budget": 5000,
               "invalidation_lr": 1e-3},
    "output": {"dir": "run"},
}
SEEDED_SECTIONS = ("data", "model", "trex", "ensembles", "theory")


class ConfigError(ValueError):
    pass


def _pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate_config(doc) -> None:
    """Raise :class:`ConfigError` naming the JSON pointer of the first problem."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_pointer(e.absolute_path)}: {e.message}")
    d = doc["data"]
    if d["source"] == "csv":
        for key in ("path", "columns"):
            if key not in d:
                raise ConfigError(f"/data/{key}: required when source is 'csv'")
    elif "path" in d or "columns" in d:
        raise ConfigError("/data: 'path' and 'columns' apply only to source 'csv'")
    sizes = doc["model"]["layer_sizes"]
    if sizes[-1] != 1:
        raise ConfigError("/model/layer_sizes: the output layer must have size 1")


def resolve_config(doc: dict, seed_override: int | None = None) -> dict:
    """Validated config with defaults filled in and every section seed made explicit."""
    validate_config(doc)
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in doc.items():
        if isinstance(val, dict):
            cfg[key].update(copy.deepcopy(val))
        else:
            cfg[key] = val
    if seed_override is not None:
        if not 0 <= seed_override <= U64_MAX:
            raise ConfigError("--seed: must be in [0, 2**64 - 1]")
        cfg["seed"] = seed_override
        for sec in SEEDED_SECTIONS:
            cfg[sec].pop("seed", None)
    for sec in SEEDED_SECTIONS:
        cfg[sec].setdefault("seed", derive_seed(cfg["seed"], sec))
    return cfg


def load_config(path, seed_override: int | None = None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve_config(doc, seed_override)


def config_hash(cfg: dict) -> str:
    """sha256 of the resolved config; the output location does not enter the hash."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class Prepared:
    train: data.Dataset
    test: data.Dataset


def prepare_data(cfg: dict) -> Prepared:
    d = cfg["data"]
    seed = d["seed"]
    if d["source"] == "moons":
        ds = data.make_moons(d["n"], d["noise"], derive_seed(seed, "moons"), normalize=d["normalize"])
    else:
        cols = [(c["name"], c.get("kind", data.NUMERIC)) for c in d["columns"]]
        ds = data.load_csv(d["path"], cols, label=d["label"])
        if d["one_hot"]:
            ds = data.one_hot_encode(ds)
        if d["normalize"]:
            ds, _ = data.normalize_minmax(ds)
    train, test = data.split(ds, d["test_fraction"], derive_seed(seed, "split"))
    return Prepared(train, test)


def train_config(cfg: dict, seed: int | None = None) -> nn.TrainConfig:
    m = cfg["model"]
    return nn.TrainConfig(epochs=m["epochs"], batch_size=m["batch_size"], learning_rate=m["learning_rate"],
                          seed=m["seed"] if seed is None else seed)


def trex_config(cfg: dict) -> cfgen.TrexConfig:
    t = cfg["trex"]
    return cfgen.TrexConfig(k=t["k"], sigma2=t["sigma2"], seed=t["seed"], tau=t["tau"], eta=t["eta"],
                            max_steps=t["max_steps"], K=t["K"])


class Run:
    """Output directory plus the manifest being built."""

    def __init__(self, cfg: dict, out: Path, quiet: bool):
        self.cfg = cfg
        self.out = out
        self.quiet = quiet
        out.mkdir(parents=True, exist_ok=True)

    def log(self, msg: str) -> None:
        if not self.quiet:
            print(msg, file=sys.stderr)

    def write_text(self, name: str, text: str) -> None:
        with open(self.out / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def require(self, name: str) -> Path:
        path = self.out / name
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run the earlier stage first")
        return path

    def update_manifest(self) -> None:
        files = {}
        for p in sorted(self.out.iterdir()):
            if p.is_file() and p.name != "manifest.json":
                files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        self.write_json("manifest.json", {
            "config_sha256": config_hash(self.cfg),
            "config": self.cfg,
            "seeds": {"master": self.cfg["seed"], **{s: self.cfg[s]["seed"] for s in SEEDED_SECTIONS}},
            "versions": {"robustcf": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "jsonschema": _jsonschema_version()},
            "files": files,
        })


def _jsonschema_version() -> str:
    from importlib.metadata import version
    return version("jsonschema")


def _cf_file(gen: str) -> str:
    return f"counterfactuals_{gen}.csv"


def cmd_train(run: Run) -> None:
    prep = prepare_data(run.cfg)
    sizes = run.cfg["model"]["layer_sizes"]
    if sizes[0] != prep.train.d:
        raise ConfigError(f"/model/layer_sizes: input size {sizes[0]} != number of features {prep.train.d}")
    model = nn.fit_mlp(sizes, prep.train, train_config(run.cfg))
    nn.save_model(model, run.out / "model.json")
    metrics = {"train_accuracy": nn.accuracy(model, prep.train), "test_accuracy": nn.accuracy(model, prep.test),
               "n_train": prep.train.n, "n_test": prep.test.n, "lipschitz_bound": nn.analytic_lipschitz(model)}
    run.write_json("metrics.json", metrics)
    run.log(f"train accuracy {metrics['train_accuracy']:.4f}, test accuracy {metrics['test_accuracy']:.4f}")


def _queries(run: Run, model, prep: Prepared):
    rows = evaluation.true_negative_queries(model, prep.test)
    mq = run.cfg["evaluation"].get("max_queries")
    return rows if mq is None else rows[:mq]


def cmd_generate(run: Run) -> None:
    prep = prepare_data(run.cfg)
    model = nn.load_model(run.require("model.json"))
    rows = _queries(run, model, prep)
    ev = run.cfg["evaluation"]
    gens = list(ev["generators"])
    if cfgen.TREX_I in gens and cfgen.MIN_COST not in gens:
        gens.insert(0, cfgen.MIN_COST)  # T-Rex:I starts from min-cost outputs
    recs = evaluation.generate(model, prep.test.features[rows], rows, prep.train, gens, ev["norms"],
                               trex_config(run.cfg))
    for g in gens:
        flat = [r for n in ev["norms"] for r in recs[(g, n)]]
        cfgen.write_records_csv(run.out / _cf_file(g), flat, prep.train.column_names)
    run.log(f"{len(rows)} queries, generators {gens}")


def _build_ensembles(run: Run, model, prep: Prepared) -> dict:
    e = run.cfg["ensembles"]
    out = {}
    for kind in e["kinds"]:
        run.log(f"training {e['n_models']} {kind} models")
        out[kind] = ens.retrain_ensemble(prep.train, run.cfg["model"]["layer_sizes"], train_config(run.cfg),
                                         e["n_models"], kind, derive_seed(e["seed"], kind), base=model,
                                         leave_out_fraction=e["leave_out_fraction"])
    return out


def cmd_evaluate(run: Run) -> None:
    prep = prepare_data(run.cfg)
    model = nn.load_model(run.require("model.json"))
    ev = run.cfg["evaluation"]
    records = {}
    for g in ev["generators"]:
        for r in cfgen.read_records_csv(run.require(_cf_file(g)), prep.test.features):
            if r.norm in ev["norms"]:
                records.setdefault((g, r.norm), []).append(r)
    ensembles = _build_ensembles(run, model, prep)
    index = build_index(prep.train, ev["lof_k"])
    report = evaluation.report_from_records(records, ensembles, index, ev["lof_threshold"])
    run.write_text("report.csv", report.to_csv())
    run.write_text("report.txt", report.to_text())
    run.log(report.to_text())
    if ev["taus"]:
        base = {n: cfgen.read_records_csv(run.require(_cf_file(cfgen.MIN_COST)), prep.test.features)
                for n in ev["norms"]}
        base = {n: [r for r in recs if r.norm == n and r.x_cf is not None] for n, recs in base.items()}
        rows = evaluation.ablation(model, base, ensembles, ev["taus"], trex_config(run.cfg), index,
                                   ev["measures"], ev["lof_threshold"])
        run.write_text("ablation.csv", evaluation.ablation_csv(rows, tuple(ensembles)))


def cmd_theory(run: Run) -> None:
    prep = prepare_data(run.cfg)
    model = nn.load_model(run.require("model.json"))
    th = run.cfg["theory"]
    seed = th["seed"]
    sigma2 = run.cfg["trex"]["sigma2"]
    syn = ens.synthetic_natural_ensemble(model, th["v_max"], th["n_pairs"], derive_seed(seed, "synthetic"))
    queries = prep.test.features[: th["n_queries"]]
    rows = []
    for k in th["ks"]:
        rows += theory.coverage_check(syn, queries, k, sigma2, th["eps"], th["n_sample_seeds"],
                                               derive_seed(seed, "coverage"))
    run.write_text("theory_coverage.csv", theory.coverage_csv(rows))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ensemble", "lhs", "bound", "holds"])
    constant = ens.synthetic_natural_ensemble(model, th["v_max"], th["n_pairs"], derive_seed(seed, "synthetic"),
                                              profile=ens.CONSTANT)
    for name, e in (("synthetic-margin", syn), ("synthetic-constant", constant)):
        lhs, bound, holds = theory.rashomon_bound_check(e, prep.train)
        w.writerow([name, repr(lhs), repr(bound), int(holds)])
    run.write_text("theory_rashomon.csv", buf.getvalue())

    gamma_m = syn.change.base_lipschitz
    gamma = syn.change.member_lipschitz
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "eps", "gamma", "gamma_m", "sigma2", "bound"])
    for k in th["bound_ks"]:
        for eps in th["eps"]:
            w.writerow([k, repr(float(eps)), repr(gamma), repr(gamma_m), repr(sigma2),
                        repr(theory.concentration_bound(k, eps, gamma, gamma_m, sigma2))])
    run.write_text("theory_bound.csv", buf.getvalue())

    target = theory.offmanifold_target(model, prep.train) if prep.train.d <= 3 else None
    if target is None:
        run.log("targeted invalidation skipped: grid target search needs d <= 3")
        return
    res = theory.targeted_invalidation(model, target, prep.train, th["fidelity_weight"], th["budget"],
                                       th["invalidation_lr"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m_before", "m_after", "agreement", "steps", "success"] + [f"x_{c}" for c in prep.train.column_names])
    w.writerow([repr(float(nn.forward(model, target))), repr(res.m_target), repr(res.agreement), res.steps,
                int(res.success)] + [repr(float(v)) for v in target])
    run.write_text("theory_targeted.csv", buf.getvalue())
    run.log(f"targeted invalidation: success={res.success}, agreement={res.agreement:.4f}")


COMMANDS = {"train": [cmd_train], "generate": [cmd_generate], "evaluate": [cmd_evaluate], "theory": [cmd_theory],
            "run-all": [cmd_train, cmd_generate, cmd_evaluate, cmd_theory]}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustcf", description="Robust counterfactual generation and evaluation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run config")
        s.add_argument("--out", help="output directory (overrides output.dir)")
        s.add_argument("--seed", type=int, help="master seed override (unsigned 64-bit)")
        s.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out if args.out is not None else cfg["output"]["dir"])
    cfg["output"]["dir"] = str(out)
    try:
        run = Run(cfg, out, args.quiet)
        for stage in COMMANDS[args.command]:
            stage(run)
            run.update_manifest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except data.SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
