"""Config-driven experiment runner: generate datasets, estimate effects,
train the sweep, audit the margin theorem, and render tables and plots.

Every subcommand is a pure function of (config file, seed list), so re-running
a pinned config reproduces all records byte-for-byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
import time

import numpy as np
import yaml

from . import estimators as E
from . import theory
from . import trainer as T
from .records import (ESTIMATES_CSV_COLUMNS, RUNS_CSV_COLUMNS,
                      THEOREM_CSV_COLUMNS, RunRecord, config_hash, read_csv,
                      write_csv)
from .scm import DgpSpec
from .synth import (default_renderer, make_split_datasets, read_datasets,
                    renderer_from_dict, spurious_attr_for, write_datasets)

CONFIG_VERSION = 1
DEFAULT_SIZES = {"train": 600, "val": 200, "test": 200}
REPORT_METRICS = ("acc_maj", "acc_min", "acc_avg", "acc_worst", "delta_prob")


class ConfigError(ValueError):
    pass


def load_config(path: str, seed_override: int | None = None,
                out_override: str | None = None) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    if cfg.get("config_version") != CONFIG_VERSION:
        raise ConfigError(f"config_version must be {CONFIG_VERSION}")
    cfg.setdefault("sizes", dict(DEFAULT_SIZES))
    cfg.setdefault("renderer", "default")
    cfg.setdefault("selection", "accuracy")
    if seed_override is not None:
        cfg["seeds"] = [int(seed_override)]
    if out_override is not None:
        cfg["output_dir"] = out_override
    if not cfg.get("output_dir"):
        raise ConfigError("output_dir is required (config key or --out)")
    seeds = cfg.get("seeds") or []
    if not seeds:
        raise ConfigError("seeds must be a nonempty list")
    kappas = cfg.get("kappas") or []
    if not kappas:
        raise ConfigError("kappas must be a nonempty list")
    for k in kappas:
        if not 0.5 <= float(k) < 1.0:
            raise ConfigError(f"kappa {k} outside [0.5, 1)")
    if "dgp" not in cfg or "template" not in cfg["dgp"]:
        raise ConfigError("dgp.template is required")
    return cfg


def dataset_id(template: str, kappa: float, seed: int) -> str:
    return f"{template}_k{kappa:g}_s{seed}"


def data_path(out: str, did: str) -> str:
    return os.path.join(out, "data", f"{did}.jsonl")


def build_renderer(cfg: dict, dgp_spec: DgpSpec, seed: int):
    if cfg["renderer"] == "default":
        return default_renderer(dgp_spec, seed)
    spec = renderer_from_dict(dict(cfg["renderer"]))
    return dataclasses.replace(spec, seed=seed)


def iter_cells(cfg: dict):
    for kappa in cfg["kappas"]:
        for seed in cfg["seeds"]:
            yield float(kappa), int(seed)


def _load_splits(cfg: dict, kappa: float, seed: int):
    did = dataset_id(cfg["dgp"]["template"], kappa, seed)
    path = data_path(cfg["output_dir"], did)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset {did} missing at {path}; run gen first")
    return did, read_datasets(path)


# ------------------------------------------------------------------ gen

def cmd_gen(cfg: dict) -> list[str]:
    out = cfg["output_dir"]
    os.makedirs(os.path.join(out, "data"), exist_ok=True)
    written = []
    for kappa, seed in iter_cells(cfg):
        spec = DgpSpec(cfg["dgp"]["template"], kappa,
                       cfg["dgp"].get("cpd_overrides", {}))
        renderer = build_renderer(cfg, spec, seed)
        datasets = make_split_datasets(spec, renderer, kappa, seed,
                                       sizes=cfg["sizes"],
                                       spurious_attr=spurious_attr_for(spec))
        path = data_path(out, dataset_id(spec.template, kappa, seed))
        write_datasets(path, datasets)
        written.append(path)
        print(f"gen: wrote {path} "
              f"({sum(len(d) for d in datasets.values())} examples)")
    return written


# ------------------------------------------------------------------ estimate

def _stderr(vals: np.ndarray) -> float:
    if len(vals) < 2:
        return 0.0
    return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def cmd_estimate(cfg: dict) -> str:
    est_cfg = cfg.get("estimators", {}) or {}
    names = tuple(est_cfg.get("names", E.ESTIMATORS))
    if not names:
        raise ConfigError("estimator list is empty")
    selections = tuple(est_cfg.get("selections", E.SELECTIONS))
    r2_grid = tuple(est_cfg.get("r2_grid", E.DEFAULT_R2_GRID))
    fit_overrides = est_cfg.get("fit") or {}
    out = cfg["output_dir"]
    rows = []
    for kappa, seed in iter_cells(cfg):
        did, splits = _load_splits(cfg, kappa, seed)
        fit = dataclasses.replace(E.default_fit_config(splits["train"]),
                                  **fit_overrides) if fit_overrides else None
        for est in E.estimate_all(splits["train"], splits["val"], config=fit,
                                  seed=seed, estimators=names,
                                  selections=selections, r2_grid=r2_grid):
            rows.append({"dataset": did, "attribute": est.attribute,
                         "estimator": est.estimator, "selection": est.selection,
                         "raw": est.raw, "snapped": est.snapped, "seed": seed,
                         "kappa": kappa})
        print(f"estimate: {did} done ({len(names)} estimators)")
    path = os.path.join(out, "estimates.csv")
    write_csv(path, ESTIMATES_CSV_COLUMNS,
              [{k: r[k] for k in ESTIMATES_CSV_COLUMNS} for r in rows])
    _write_estimate_summary(cfg, rows)
    return path


def _write_estimate_summary(cfg: dict, rows: list[dict]) -> None:
    """One row per (estimator, selection, attribute); kappa columns hold the
    seed-mean raw estimate with its standard error, next to the generating
    process's exact effect."""
    template = cfg["dgp"]["template"]
    kappas = [float(k) for k in cfg["kappas"]]
    scm = DgpSpec(template, kappas[0]).build(int(cfg["seeds"][0]))
    keys = sorted({(r["estimator"], r["selection"], r["attribute"]) for r in rows})
    columns = ["estimator", "selection", "attribute", "ground_truth"] + \
        [f"k={k:g}" for k in kappas]
    table = []
    for est, sel, attr in keys:
        row = {"estimator": est, "selection": sel, "attribute": attr,
               "ground_truth": format(scm.ace(attr), ".3f")}
        for k in kappas:
            vals = np.array([r["raw"] for r in rows
                             if (r["estimator"], r["selection"], r["attribute"])
                             == (est, sel, attr) and r["kappa"] == k])
            row[f"k={k:g}"] = (f"{np.mean(vals):.3f}±{_stderr(vals):.3f}"
                               if len(vals) else "")
        table.append(row)
    write_csv(os.path.join(cfg["output_dir"], "estimate_summary.csv"),
              columns, table)


# ------------------------------------------------------------------ train

def _method_name(method: dict) -> str:
    return str(method.get("name", method["objective"]))


def _base_config(cfg: dict, method: dict, seed: int) -> T.TrainConfig:
    overrides = dict(cfg.get("train") or {})
    for key in ("jtt_lambda_up", "jtt_first_epochs", "irm_lambda"):
        if key in method:
            overrides[key] = method[key]
    if "hidden" in overrides:
        overrides["hidden"] = tuple(overrides["hidden"])
    return dataclasses.replace(T.TrainConfig(), seed=seed, **overrides)


def _targets_for(cfg: dict, method: dict, did: str, seed: int) -> dict[str, float]:
    path = os.path.join(cfg["output_dir"], "estimates.csv")
    if not os.path.exists(path):
        raise FileNotFoundError("estimates.csv missing; run estimate first")
    src = method.get("targets_from", {}) or {}
    estimator = src.get("estimator", "Direct")
    selection = src.get("selection", "val_loss")
    ests = [E.EffectEstimate(r["attribute"], r["estimator"], r["selection"],
                             float(r["raw"]), float(r["snapped"]),
                             int(r["seed"]), epoch=0)
            for r in read_csv(path)
            if r["dataset"] == did and int(r["seed"]) == seed]
    return E.targets_from_estimates(ests, estimator, selection)


def _run_method_cell(cfg: dict, method: dict, kappa: float, seed: int):
    """One sweep cell: train the method, apply the selection criterion over
    every produced checkpoint, return (selected result, checkpoint, targets)."""
    did, splits = _load_splits(cfg, kappa, seed)
    tr, va, te = splits["train"], splits["val"], splits["test"]
    base = _base_config(cfg, method, seed)
    objective = method["objective"]
    targets: dict[str, float] = {}
    if objective == "ERM":
        runs = [T.train(dataclasses.replace(base, objective="ERM"), tr, va, te)]
    elif objective == "AutoACER":
        targets = _targets_for(cfg, method, did, seed)
        r_grid = tuple(method.get("r_grid", T.DEFAULT_R_GRID))
        runs = T.sweep_autoacer(base, tr, va, targets, r_grid, te)
    elif objective == "CAD":
        if method.get("detect"):
            invariant = T.mouli_detect(tr, va, attributes=(tr.spurious_attr,),
                                       config=T.default_detection_config(seed))
        else:
            invariant = tuple(method.get("invariant_set", (tr.spurious_attr,)))
        runs = [T.train_cad(base, tr, va, invariant, te)]
    elif objective == "JTT":
        runs = [T.train_jtt(base, tr, va, te)]
    elif objective == "IRM":
        env_kappas = [float(k) for k in method.get("env_kappas", [])] or [kappa]
        envs = []
        for ek in env_kappas:
            _, esp = _load_splits(cfg, ek, seed)
            envs.append(esp["train"])
        runs = [T.train_irm(base, envs, va, te)]
    else:
        raise ConfigError(f"unknown objective {objective!r}")
    result, ck = T.select_best(runs, cfg["selection"])
    return did, result, ck, targets


def _cell_hash(cfg: dict, method: dict, kappa: float, seed: int) -> str:
    body = {
        "config_version": CONFIG_VERSION,
        "dgp": {"template": cfg["dgp"]["template"],
                "cpd_overrides": cfg["dgp"].get("cpd_overrides", {})},
        "renderer": cfg["renderer"], "sizes": cfg["sizes"],
        "kappa": kappa, "seed": seed, "method": method,
        "train": cfg.get("train") or {}, "selection": cfg["selection"],
    }
    return config_hash(body)


def _train_cell(args) -> RunRecord:
    cfg, method, kappa, seed = args
    name = _method_name(method)
    chash = _cell_hash(cfg, method, kappa, seed)
    did = dataset_id(cfg["dgp"]["template"], kappa, seed)
    t0 = time.perf_counter()
    try:
        did, result, ck, targets = _run_method_cell(cfg, method, kappa, seed)
        metrics = {k: float(v) for k, v in ck.items()
                   if k not in ("epoch", "diverged", "params")}
        return RunRecord(chash, did, name, kappa, seed,
                         R=float(result.config.R), epoch=int(ck["epoch"]),
                         selection=cfg["selection"], metrics=metrics,
                         effect_targets=targets,
                         wall_time=time.perf_counter() - t0)
    except FileNotFoundError:
        raise
    except Exception as exc:  # persisted with a failure flag, never dropped
        return RunRecord(chash, did, name, kappa, seed, R=float("nan"),
                         epoch=-1, selection=cfg["selection"], metrics={},
                         failed=True, error=f"{type(exc).__name__}: {exc}",
                         wall_time=time.perf_counter() - t0)


def cmd_train(cfg: dict, jobs: int = 1) -> str:
    methods = cfg.get("methods") or []
    if not methods:
        raise ConfigError("methods list is empty")
    out = cfg["output_dir"]
    os.makedirs(os.path.join(out, "records"), exist_ok=True)
    cells = [(cfg, method, kappa, seed)
             for method in methods for kappa, seed in iter_cells(cfg)]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_train_cell, cells))
    else:
        records = [_train_cell(c) for c in cells]
    rows, failed_rows = [], []
    for rec in records:
        fname = f"{rec.dataset_id}_{rec.method}_{rec.config_hash[:8]}.json"
        with open(os.path.join(out, "records", fname), "w") as fh:
            fh.write(rec.to_json())
        if rec.failed:
            failed_rows.append({**rec.runs_row(), "error": rec.error})
            print(f"train: {rec.dataset_id} {rec.method} FAILED: {rec.error}")
        else:
            rows.append(rec.runs_row())
            print(f"train: {rec.dataset_id} {rec.method} -> "
                  f"R={rec.R:g} epoch={rec.epoch} "
                  f"avg={rec.metrics.get('test_avg', float('nan')):.3f}")
    order = {(_method_name(m)): i for i, m in enumerate(methods)}
    rows.sort(key=lambda r: (order[r["method"]], r["kappa"], r["seed"]))
    write_csv(os.path.join(out, "runs.csv"), RUNS_CSV_COLUMNS, rows)
    if failed_rows:
        write_csv(os.path.join(out, "runs_failed.csv"),
                  RUNS_CSV_COLUMNS + ("error",), failed_rows)
    return os.path.join(out, "runs.csv")


# ------------------------------------------------------------------ theorem

def cmd_theorem(cfg: dict) -> str:
    th = cfg.get("theorem") or {}
    n = int(th.get("n_instances", 100))
    seed = int(th.get("seed", 0))
    records = theory.audit(n_instances=n, seed=seed)
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "theorem_audit.csv")
    write_csv(path, THEOREM_CSV_COLUMNS,
              [{k: r[k] for k in THEOREM_CSV_COLUMNS} for r in records])
    n_holds = sum(r["holds"] for r in records)
    n_counter = theory.count_counterexamples(records)
    strict_violations = sum(1 for r in records if r["strict"] and not r["holds"])
    ok = n_counter == 0 and strict_violations == 0
    summary = (f"instances={len(records)} mean_condition_holds={n_holds} "
               f"counterexamples={n_counter} "
               f"strict_without_mean={strict_violations} "
               f"result={'PASS' if ok else 'FAIL'}")
    with open(os.path.join(out, "theorem_summary.txt"), "w") as fh:
        fh.write(summary + "\n")
    print(f"theorem: {summary}")
    return path


# ------------------------------------------------------------------ report

def _load_records(records_dir: str) -> list[RunRecord]:
    if not os.path.isdir(records_dir):
        raise FileNotFoundError(f"no records directory at {records_dir}")
    recs = []
    for fname in sorted(os.listdir(records_dir)):
        if fname.endswith(".json"):
            with open(os.path.join(records_dir, fname)) as fh:
                recs.append(RunRecord.from_json(fh.read()))
    if not recs:
        raise FileNotFoundError(f"no run records in {records_dir}")
    return recs


def _template_of(dataset_id_: str) -> str:
    return dataset_id_.split("_k")[0]


def aggregate_records(recs: list[RunRecord]) -> list[dict]:
    """mean +- stderr per (method, kappa, metric) over seeds; cells missing a
    seed that other cells of the same dataset have are flagged, not averaged."""
    ok = [r for r in recs if not r.failed]
    out = []
    for template in sorted({_template_of(r.dataset_id) for r in recs}):
        sub = [r for r in ok if _template_of(r.dataset_id) == template]
        all_seeds = sorted({r.seed for r in sub})
        for method in sorted({r.method for r in sub}):
            for kappa in sorted({r.kappa for r in sub}):
                cell = [r for r in sub if r.method == method and r.kappa == kappa]
                seeds = sorted({r.seed for r in cell})
                row = {"dataset": template, "method": method, "kappa": kappa,
                       "n_seeds": len(seeds),
                       "flag": "" if seeds == all_seeds else
                       f"missing_seeds={sorted(set(all_seeds) - set(seeds))}"}
                for metric in REPORT_METRICS:
                    vals = np.array([r.runs_row()[metric] for r in cell], float)
                    if row["flag"] or not len(vals):
                        row[metric] = ""
                    else:
                        row[metric] = f"{np.mean(vals):.4f}±{_stderr(vals):.4f}"
                out.append(row)
    return out


def _plot_report(recs: list[RunRecord], template: str, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "cereg"
    sub = [r for r in recs if not r.failed
           and _template_of(r.dataset_id) == template]
    methods = sorted({r.method for r in sub})
    kappas = sorted({r.kappa for r in sub})
    fig, (ax_top, ax_bot) = plt.subplots(2, 1, figsize=(5.0, 6.0), sharex=True)
    for method in methods:
        mean_acc, se_acc, mean_dp, se_dp = [], [], [], []
        for kappa in kappas:
            cell = [r for r in sub if r.method == method and r.kappa == kappa]
            acc = np.array([r.metrics.get("test_avg", np.nan) for r in cell])
            dp = np.array([r.metrics.get("test_dprob", np.nan) for r in cell])
            mean_acc.append(np.mean(acc) if len(acc) else np.nan)
            se_acc.append(_stderr(acc) if len(acc) else np.nan)
            mean_dp.append(np.mean(dp) if len(dp) else np.nan)
            se_dp.append(_stderr(dp) if len(dp) else np.nan)
        ax_top.errorbar(kappas, mean_acc, yerr=se_acc, marker="o", capsize=3,
                        label=method)
        ax_bot.errorbar(kappas, mean_dp, yerr=se_dp, marker="o", capsize=3,
                        label=method)
    ax_top.set_ylabel("average group accuracy")
    ax_bot.set_ylabel("prediction gap on spurious flip")
    ax_bot.set_xlabel("predictive correlation")
    ax_top.set_title(template)
    ax_top.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(out_dir: str) -> list[str]:
    recs = _load_records(os.path.join(out_dir, "records"))
    rows = aggregate_records(recs)
    written = []
    for template in sorted({r["dataset"] for r in rows}):
        table = [r for r in rows if r["dataset"] == template]
        columns = ["dataset", "method", "kappa", "n_seeds", "flag",
                   *REPORT_METRICS]
        csv_path = os.path.join(out_dir, f"report_{template}.csv")
        write_csv(csv_path, columns, table)
        svg_path = os.path.join(out_dir, f"report_{template}.svg")
        _plot_report(recs, template, svg_path)
        written.extend([csv_path, svg_path])
        print(f"report: wrote {csv_path} and {svg_path}")
    return written


# ------------------------------------------------------------------ main

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cereg",
        description="causal-effect-regularized classification experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "estimate", "train", "theorem", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="path to the YAML experiment config")
        sp.add_argument("--seed-override", type=int, default=None,
                        help="replace the config's seed list with this seed")
        sp.add_argument("--jobs", type=int, default=1,
                        help="worker processes for independent sweep cells")
        sp.add_argument("--out", default=None,
                        help="output directory (overrides config output_dir)")
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            out_dir = args.out
            if out_dir is None:
                if not args.config:
                    raise ConfigError("report needs --out or --config")
                out_dir = load_config(args.config)["output_dir"]
            cmd_report(out_dir)
            return 0
        if not args.config:
            raise ConfigError(f"{args.command} requires --config")
        cfg = load_config(args.config, args.seed_override, args.out)
        if args.command == "gen":
            cmd_gen(cfg)
        elif args.command == "estimate":
            cmd_estimate(cfg)
        elif args.command == "train":
            cmd_train(cfg, jobs=max(1, args.jobs))
        elif args.command == "theorem":
            cmd_theorem(cfg)
        return 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"cereg {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
