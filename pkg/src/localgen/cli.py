"""Command-line driver: generate, train, evaluate, xi, sweep."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, dataset, learner
from . import quantum_core as qc
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("localgen")


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _provenance(cfg: RunConfig) -> dict:
    g = cfg.get
    return {**cfg.spin_model().as_dict(), "dt": g("data", "dt"), "T": g("data", "T_train"),
            "seed": g("data", "seed"), "sampler": g("data", "sampler")}


def cmd_generate(cfg: RunConfig, jobs: int = 1) -> dict:
    g = cfg.get
    model = cfg.spin_model()
    out = _outdir(cfg)
    kind = g("train", "kind")
    ds, trajs = dataset.make_dataset(model, kind, g("data", "n_train"), g("data", "n_val"),
                                     g("data", "T_train"), g("data", "dt"), g("data", "seed"),
                                     g("data", "split"), g("data", "fraction"), jobs=jobs)
    head = _provenance(cfg)
    dataset.save_trajectories(trajs, out / "trajectories.txt", head)
    dataset.save_dataset(ds, out / "dataset.txt", {**head, **ds.metadata})
    cfg.write(out / "effective_config.ini")
    return {"trajectories": len(trajs), "points": len(trajs[0].times), "train": len(ds.train),
            "val": len(ds.val)}


def cmd_train(cfg: RunConfig, dataset_path=None) -> dict:
    out = _outdir(cfg)
    path = Path(dataset_path) if dataset_path else out / "dataset.txt"
    if not path.is_file():
        raise CLIError("missing_file", f"dataset not found: {path}")
    ds = dataset.load_dataset(path)
    tc = cfg.train_config()
    T_train = float(ds.metadata.get("T", cfg.get("data", "T_train")))
    model, hist = learner.train(tc.kind, ds, tc, T_train=T_train)
    dt = float(ds.metadata.get("dt", cfg.get("data", "dt")))
    meta = {"dt": dt, "T_train": T_train, "seed": tc.seed, **{f"config.{k}": v for k, v in tc.as_dict().items()}}
    meta["first_row_deviation"] = repr(learner.first_row_deviation(model))
    learner.save_model(model, out / "model.txt", meta)
    rows = [(e, a, b) for e, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss))]
    analysis._write_csv(out / "loss_history.csv", {"kind": "loss_history", **_provenance(cfg),
                                                   "best_epoch": hist.best_epoch},
                        ["epoch", "train_loss", "val_loss"], rows)
    cfg.write(out / "effective_config.ini")
    log.info("first-row deviation from (1,0,0,0): %s", meta["first_row_deviation"])
    return {"best_epoch": hist.best_epoch, "val_loss": hist.val_loss[hist.best_epoch]}


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise CLIError("missing_file", f"model not found: {path}")
    return learner.load_model(path)


def cmd_evaluate(cfg: RunConfig, model_path=None) -> dict:
    """Roll the learned model out to T_tot from exact initial states and compare."""
    g = cfg.get
    out = _outdir(cfg)
    model, _ = _load_model(model_path or out / "model.txt")
    spin = cfg.spin_model()
    dt, T_tot = g("data", "dt"), g("data", "T_tot")
    times, maps = qc.dynamical_map(spin, T_tot, dt)
    if g("evaluate", "initial"):
        inits = [tuple(float(c) for c in g("evaluate", "initial").split(","))]
        labels = [None]
    else:
        rng = np.random.default_rng([int(g("data", "seed")), 5])
        cs = [dataset.sample_initial_diagonal(rng) for _ in range(g("evaluate", "n_init"))]
        inits = [dataset.diagonal_bloch(c) for c in cs]
        labels = cs
    head = {**_provenance(cfg), "T_tot": T_tot, "model_kind": model.kind}
    rows = []
    for k, (ini, c) in enumerate(zip(inits, labels)):
        v0 = np.array([1.0, *ini])
        exact = maps @ v0
        _, pred = learner.rollout(model, v0, len(times) - 1, dt)
        rep = analysis.error_report((times, pred), (times, exact), model.kind, ini)
        n_train = int(round(g("data", "T_train") / dt))
        in_window = analysis.epsilon((times[:n_train + 1], pred[:n_train + 1]),
                                     (times[:n_train + 1], exact[:n_train + 1]))
        rows.append((k, "" if c is None else c, *ini, rep.epsilon, in_window))
        analysis.write_comparison_csv(times, exact, pred, out / f"comparison_{k}.csv",
                                      {**head, "initial": ", ".join(repr(x) for x in ini)})
    eps_bar = float(np.mean([r[5] for r in rows]))
    analysis._write_csv(out / "errors.csv", {**head, "kind": "error_report", "epsilon_bar": repr(eps_bar)},
                        ["init", "c", "x", "y", "z", "epsilon", "epsilon_train_window"], rows)
    cfg.write(out / "effective_config.ini")
    return {"epsilon_bar": eps_bar}


def cmd_xi(cfg: RunConfig, model_path=None) -> dict:
    out = _outdir(cfg)
    model, head = _load_model(model_path or out / "model.txt")
    if model.kind != "hyper":
        raise CLIError("bad_model", "xi needs a hypermodel file (kind = hyper)")
    T = cfg.get("data", "T_train")
    gens = analysis.GeneratorTimeSeries.from_model(model, T, cfg.get("data", "dt"))
    xi = gens.xi
    Xi = analysis.xi_average(xi, gens.times, T)
    analysis.write_xi_csv(gens.times, xi, out / "xi.csv", {**_provenance(cfg), "Xi": repr(Xi)})
    cfg.write(out / "effective_config.ini")
    return {"Xi": Xi}


def cmd_sweep(cfg: RunConfig, preset=None, jobs: int = 1) -> dict:
    out = _outdir(cfg)
    preset = preset or cfg.get("sweep", "preset")
    scfg = cfg.sweep_config()
    if preset:
        grid = analysis.sweep_preset(preset, scfg, jobs)
    else:
        grid = analysis.sweep(scfg.family, (cfg.get("sweep", "axis1"), cfg.axis_values("axis1")),
                              (cfg.get("sweep", "axis2"), cfg.axis_values("axis2")),
                              cfg.get("sweep", "metric"), scfg, jobs)
    analysis.write_sweep_csv(grid, out / "sweep.csv", {"preset": preset or "none"})
    cfg.write(out / "effective_config.ini")
    failed = sum(s != "ok" for row in grid.status for s in row)
    return {"cells": grid.values.size, "failed": failed}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="override data.seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for generation and sweeps")
    common.add_argument("--out", help="output directory (output.dir)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="localgen", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate trajectories and write the dataset")
    t = sub.add_parser("train", parents=[common], help="train a model on a dataset file")
    t.add_argument("--dataset", help="dataset file (default OUT/dataset.txt)")
    e = sub.add_parser("evaluate", parents=[common], help="roll out a model and compare with exact dynamics")
    e.add_argument("--model", help="model file (default OUT/model.txt)")
    x = sub.add_parser("xi", parents=[common], help="time-dependence of a hypermodel generator")
    x.add_argument("--model", help="hypermodel file (default OUT/model.txt)")
    s = sub.add_parser("sweep", parents=[common], help="parameter sweep of epsilon_bar or Xi")
    s.add_argument("--preset", choices=sorted(analysis.PRESETS))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"data.seed={args.seed}")
    if args.out:
        overrides.append(f"output.dir={args.out}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            res = cmd_generate(cfg, args.jobs)
        elif args.command == "train":
            res = cmd_train(cfg, args.dataset)
        elif args.command == "evaluate":
            res = cmd_evaluate(cfg, args.model)
        elif args.command == "xi":
            res = cmd_xi(cfg, args.model)
        else:
            res = cmd_sweep(cfg, args.preset, args.jobs)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except CLIError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing_file: {exc}", file=sys.stderr)
        return 1
    except (ValueError, learner.DivergenceError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(" ".join(f"{k}={v}" for k, v in res.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
