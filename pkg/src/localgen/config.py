"""Run configuration: INI sections with defaults, overrides and validation."""
from __future__ import annotations

import configparser
from pathlib import Path

from .analysis import METRICS, PRESETS, SweepConfig
from .learner import TrainConfig
from .quantum_core import SpinModel, Variant

DEFAULTS = {
    "model": {
        "family": "ModelI", "N": "9", "omega": "1.0", "V": "0.1", "alpha": "3.0",
        "omega_prime": "", "v_prime": "0.2", "beta": "0.4",
    },
    "data": {
        "n_train": "100", "n_val": "20", "T_train": "10.0", "T_tot": "20.0", "dt": "0.01",
        "seed": "0", "sampler": "ball", "split": "time", "fraction": "0.8",
    },
    "train": {
        "kind": "linear", "batch_size": "auto", "batches_per_epoch": "auto", "epochs": "auto",
        "lr": "0.001", "beta1": "0.9", "beta2": "0.999", "eps": "1e-08", "hidden": "64",
        "init": "identity", "loss": "norm",
    },
    "evaluate": {"n_init": "5", "initial": ""},
    "sweep": {
        "preset": "", "metric": "epsilon_bar", "axis1": "V", "axis1_values": "0.1, 2.0",
        "axis2": "alpha", "axis2_values": "1.0, 3.0",
    },
    "output": {"dir": "out"},
}

_TYPES = {
    ("model", "N"): int, ("model", "omega"): float, ("model", "V"): float, ("model", "alpha"): float,
    ("model", "v_prime"): float, ("model", "beta"): float,
    ("data", "n_train"): int, ("data", "n_val"): int, ("data", "T_train"): float, ("data", "T_tot"): float,
    ("data", "dt"): float, ("data", "seed"): int, ("data", "fraction"): float,
    ("train", "lr"): float, ("train", "beta1"): float, ("train", "beta2"): float, ("train", "eps"): float,
    ("train", "hidden"): int, ("evaluate", "n_init"): int,
}
_AUTO_INTS = {"batch_size", "batches_per_epoch", "epochs"}
_SWEEP_AXES = {"V", "alpha", "omega", "omega_prime", "v_prime", "beta"}


def _auto_int(s: str):
    return None if s == "auto" else int(s)


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class RunConfig:
    """Resolved, validated configuration. Access values as ``cfg.get(section, key)``."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser
        self.values = {}
        problems = []
        unknown = []
        for sec, keys in DEFAULTS.items():
            for key in keys:
                raw = parser.get(sec, key).strip()
                conv = _TYPES.get((sec, key), str)
                if sec == "train" and key in _AUTO_INTS:
                    conv = _auto_int
                try:
                    self.values[(sec, key)] = conv(raw)
                except ValueError:
                    problems.append(f"{sec}.{key}: cannot parse {raw!r} as {conv.__name__}")
        for sec in parser.sections():
            if sec not in DEFAULTS:
                unknown.append(f"unknown section [{sec}]")
                continue
            for key in parser[sec]:
                if key not in DEFAULTS[sec]:
                    unknown.append(f"{sec}.{key}: unknown key")
        if not problems:
            # type errors would make the range checks meaningless
            problems.extend(self._validate())
        if problems or unknown:
            raise ConfigError(unknown + problems)

    def get(self, section, key):
        return self.values[(section, key)]

    def _validate(self) -> list[str]:
        p = []
        g = self.get
        try:
            Variant(g("model", "family"))
        except ValueError:
            p.append(f"model.family: must be ModelI or ModelII, got {g('model', 'family')!r}")
        else:
            try:
                self.spin_model().system_site
            except ValueError as exc:
                p.append(f"model: {exc}")
        if not g("model", "omega") > 0:
            p.append("model.omega: must be > 0 (it sets the energy unit)")
        if g("model", "omega_prime"):
            try:
                float(g("model", "omega_prime"))
            except ValueError:
                p.append("model.omega_prime: must be a number or empty")
        for key in ("n_train", "n_val"):
            if g("data", key) < 1:
                p.append(f"data.{key}: must be >= 1")
        for key in ("T_train", "T_tot", "dt"):
            if not g("data", key) > 0:
                p.append(f"data.{key}: must be > 0")
        if g("data", "dt") > 0:
            for key in ("T_train", "T_tot"):
                n = g("data", key) / g("data", "dt")
                if abs(n - round(n)) > 1e-6:
                    p.append(f"data.{key}: must be a multiple of data.dt")
        if g("data", "T_tot") < g("data", "T_train"):
            p.append("data.T_tot: must be >= data.T_train")
        if g("data", "sampler") not in ("ball", "diagonal"):
            p.append("data.sampler: must be ball or diagonal")
        if g("data", "split") not in ("time", "trajectories"):
            p.append("data.split: must be time or trajectories")
        if not 0 < g("data", "fraction") < 1:
            p.append("data.fraction: must lie in (0, 1)")
        if g("train", "kind") not in ("linear", "hyper"):
            p.append("train.kind: must be linear or hyper")
        if g("train", "init") not in ("zero", "identity"):
            p.append("train.init: must be zero or identity")
        if g("train", "loss") not in ("norm", "squared"):
            p.append("train.loss: must be norm or squared")
        for key in _AUTO_INTS:
            if g("train", key) is not None and g("train", key) < 1:
                p.append(f"train.{key}: must be >= 1 or auto")
        if not g("train", "lr") > 0:
            p.append("train.lr: must be > 0")
        for key in ("beta1", "beta2"):
            if not 0 <= g("train", key) < 1:
                p.append(f"train.{key}: must lie in [0, 1)")
        if g("train", "hidden") < 1:
            p.append("train.hidden: must be >= 1")
        if g("evaluate", "n_init") < 1:
            p.append("evaluate.n_init: must be >= 1")
        if g("evaluate", "initial"):
            try:
                xyz = [float(c) for c in g("evaluate", "initial").split(",")]
                if len(xyz) != 3 or sum(c * c for c in xyz) > 1:
                    p.append("evaluate.initial: must be x, y, z inside the unit ball")
            except ValueError:
                p.append("evaluate.initial: must be three numbers")
        preset = g("sweep", "preset")
        if preset and preset not in PRESETS:
            p.append(f"sweep.preset: unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
        if g("sweep", "metric") not in METRICS:
            p.append(f"sweep.metric: must be one of {', '.join(METRICS)}")
        for ax in ("axis1", "axis2"):
            if g("sweep", ax) not in _SWEEP_AXES:
                p.append(f"sweep.{ax}: must be one of {', '.join(sorted(_SWEEP_AXES))}")
            try:
                vals = self.axis_values(ax)
                if not vals:
                    p.append(f"sweep.{ax}_values: must be nonempty")
            except ValueError:
                p.append(f"sweep.{ax}_values: must be comma-separated numbers")
        return p

    def axis_values(self, axis):
        raw = self.get("sweep", axis + "_values")
        return [float(s) for s in raw.split(",") if s.strip()]

    def spin_model(self, **overrides) -> SpinModel:
        g = self.get
        op = g("model", "omega_prime")
        kw = dict(omega=g("model", "omega"), V=g("model", "V"), alpha=g("model", "alpha"),
                  v_prime=g("model", "v_prime"), beta=g("model", "beta"),
                  omega_prime=float(op) if op else g("model", "omega"))
        kw.update(overrides)
        return SpinModel(Variant(g("model", "family")), g("model", "N"), **kw)

    def train_config(self, kind: str | None = None) -> TrainConfig:
        g = self.get
        return TrainConfig(
            kind=kind or g("train", "kind"), batch_size=g("train", "batch_size"),
            batches_per_epoch=g("train", "batches_per_epoch"), epochs=g("train", "epochs"),
            lr=g("train", "lr"), betas=(g("train", "beta1"), g("train", "beta2")), eps=g("train", "eps"),
            seed=g("data", "seed"), hidden=g("train", "hidden"), init=g("train", "init"),
            squared=g("train", "loss") == "squared")

    def sweep_config(self) -> SweepConfig:
        g = self.get
        op = g("model", "omega_prime")
        train = {k: g("train", k) for k in ("lr", "eps", "hidden", "init")}
        train["betas"] = (g("train", "beta1"), g("train", "beta2"))
        train["squared"] = g("train", "loss") == "squared"
        for k in _AUTO_INTS:
            if g("train", k) is not None:
                train[k] = g("train", k)
        return SweepConfig(
            family=g("model", "family"), N=g("model", "N"), omega=g("model", "omega"), V=g("model", "V"),
            alpha=g("model", "alpha"), omega_prime=float(op) if op else None, v_prime=g("model", "v_prime"),
            beta=g("model", "beta"), T_train=g("data", "T_train"), T_tot=g("data", "T_tot"), dt=g("data", "dt"),
            n_train=g("data", "n_train"), n_val=g("data", "n_val"), split=g("data", "split"),
            n_init=g("evaluate", "n_init"), seed=g("data", "seed"), train=train)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.parser.write(fh)


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    problems = []
    for item in overrides:
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            problems.append(f"--set {item!r}: expected section.key=value")
            continue
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, name, value.strip())
    if problems:
        raise ConfigError(problems)
    return RunConfig(parser)
