"""Error and time-dependence diagnostics, parameter sweeps and CSV output."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import quantum_core as qc
from .dataset import (Trajectory, diagonal_bloch, make_dataset, sample_initial_diagonal, _header_lines,
                      _fmt)
from .learner import TrainConfig, extract_generator, rollout, train
from .quantum_core import SpinModel, Variant

log = logging.getLogger(__name__)


def _grid(traj):
    if isinstance(traj, Trajectory):
        return traj.times, traj.vectors
    times, vectors = traj
    return np.asarray(times, dtype=float), np.asarray(vectors, dtype=float)


def _trapezoid_mean(y, times) -> float:
    span = times[-1] - times[0]
    return float(np.trapezoid(y, times) / span)


@dataclass
class ErrorReport:
    epsilon: float
    times: np.ndarray
    residuals: np.ndarray
    T_tot: float
    model_id: str = ""
    initial: tuple = ()


def residual_norms(predicted, exact) -> tuple[np.ndarray, np.ndarray]:
    tp, vp = _grid(predicted)
    te, ve = _grid(exact)
    if tp.shape != te.shape or np.max(np.abs(tp - te), initial=0.0) > 1e-9 * max(1.0, te[-1]):
        raise ValueError("predicted and exact trajectories are on different time grids")
    return te, np.linalg.norm(vp - ve, axis=1)


def epsilon(predicted, exact) -> float:
    """Time average of |v_mod(t) - v_ex(t)| by the trapezoidal rule."""
    times, r = residual_norms(predicted, exact)
    if len(times) < 2:
        raise ValueError("need at least two time points")
    return _trapezoid_mean(r, times)


def error_report(predicted, exact, model_id="", initial=()) -> ErrorReport:
    times, r = residual_norms(predicted, exact)
    return ErrorReport(_trapezoid_mean(r, times), times, r, float(times[-1] - times[0]), model_id,
                       tuple(initial))


@dataclass
class EpsilonBar:
    value: float
    c_values: list
    epsilons: list


def epsilon_bar(model: SpinModel, learned, n_init: int = 5, seed: int = 0, T_tot: float = 20.0,
                dt: float = 0.01, details: bool = False):
    """Mean epsilon over ``n_init`` diagonal initial states with random c.

    The learned model is started from the exact v(0) and rolled out to T_tot.
    """
    rng = np.random.default_rng([int(seed), 5])
    cs = [sample_initial_diagonal(rng) for _ in range(n_init)]
    times, maps = qc.dynamical_map(model, T_tot, dt)
    eps = []
    for c in cs:
        v0 = np.array([1.0, *diagonal_bloch(c)])
        exact = maps @ v0
        _, pred = rollout(learned, v0, len(times) - 1, dt)
        eps.append(epsilon((times, pred), (times, exact)))
    out = EpsilonBar(float(np.mean(eps)), cs, eps)
    return out if details else out.value


@dataclass
class GeneratorTimeSeries:
    times: np.ndarray
    matrices: np.ndarray

    @classmethod
    def from_model(cls, net, T: float = 10.0, dt: float = 0.01) -> "GeneratorTimeSeries":
        times = qc.time_grid(T, dt)
        return cls(times, extract_generator(net.matrices(times), dt))

    @property
    def xi(self) -> np.ndarray:
        return xi_series(self)


def xi_series(gens: GeneratorTimeSeries) -> np.ndarray:
    """Frobenius norm of dL/dt; central differences inside, one-sided 2nd order at the ends."""
    times = np.asarray(gens.times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least 3 time points")
    steps = np.diff(times)
    if np.ptp(steps) > 1e-9 * max(1.0, times[-1]):
        raise ValueError("generator series must be on a uniform grid")
    Ldot = np.gradient(np.asarray(gens.matrices, dtype=float), steps[0], axis=0, edge_order=2)
    return np.sqrt(np.einsum("tij,tij->t", Ldot, Ldot))


def xi_average(xi, times, T: float | None = None) -> float:
    """Trapezoidal time average of xi over [0, T]."""
    xi = np.asarray(xi, dtype=float)
    times = np.asarray(times, dtype=float)
    T = times[-1] if T is None else T
    tol = 1e-9 * max(1.0, T)
    if times[0] > tol or times[-1] < T - tol:
        raise ValueError(f"series covers [{times[0]}, {times[-1]}], not [0, {T}]")
    sel = times <= T + tol
    return _trapezoid_mean(xi[sel], times[sel])


def exact_generator_series(model: SpinModel, T: float = 10.0, dt: float = 0.01) -> GeneratorTimeSeries:
    """L_t = dPhi/dt Phi^-1 from the exact reduced map (reference diagnostic)."""
    times, maps = qc.dynamical_map(model, T, dt)
    dmaps = np.gradient(maps, dt, axis=0, edge_order=2)
    return GeneratorTimeSeries(times, dmaps @ np.linalg.inv(maps))


# --- sweeps ------------------------------------------------------------

@dataclass
class SweepConfig:
    family: str = "ModelI"
    N: int = 7
    omega: float = 1.0
    V: float = 1.0
    alpha: float = 1.0
    omega_prime: float | None = None
    v_prime: float = 0.0
    beta: float = 0.0
    T_train: float = 10.0
    T_tot: float = 20.0
    dt: float = 0.01
    n_train: int = 100
    n_val: int = 20
    split: str = "time"
    n_init: int = 5
    seed: int = 0
    train: dict = field(default_factory=dict)

    def model(self, **overrides) -> SpinModel:
        p = dict(omega=self.omega, V=self.V, alpha=self.alpha, v_prime=self.v_prime, beta=self.beta,
                 omega_prime=self.omega if self.omega_prime is None else self.omega_prime)
        p.update(overrides)
        return SpinModel(Variant(self.family), self.N, **p)


PRESETS = {
    # reduced grids for quick runs
    "ci3a": dict(family="ModelI", metric="epsilon_bar", axis1=("V", [0.1, 2.0]), axis2=("alpha", [1.0, 3.0])),
    "ci3b": dict(family="ModelII", metric="epsilon_bar", axis1=("v_prime", [0.2, 2.0]),
                 axis2=("beta", [0.0, 1.0])),
    "ci4b": dict(family="ModelII", metric="Xi", axis1=("v_prime", [0.2, 1.0, 2.0]), axis2=("beta", [0.4]),
                 train={"epochs": 100}),
    # figure-resolution grids
    "fig3a": dict(family="ModelI", metric="epsilon_bar", axis1=("V", list(np.round(np.linspace(0.1, 2.0, 8), 4))),
                  axis2=("alpha", [1.0, 1.5, 2.0, 2.5, 3.0]), N=9),
    "fig3b": dict(family="ModelII", metric="epsilon_bar",
                  axis1=("v_prime", list(np.round(np.linspace(0.1, 2.0, 8), 4))),
                  axis2=("beta", [0.0, 0.25, 0.5, 0.75, 1.0]), N=9),
    "fig4b": dict(family="ModelII", metric="Xi", axis1=("v_prime", list(np.round(np.linspace(0.1, 2.0, 8), 4))),
                  axis2=("beta", [0.0, 0.25, 0.5, 0.75, 1.0]), N=9),
}

METRICS = ("epsilon_bar", "Xi")


@dataclass
class SweepGrid:
    family: str
    metric: str
    axis1: tuple
    axis2: tuple
    values: np.ndarray
    status: list
    cell_meta: list
    config: SweepConfig

    def rows(self):
        for i, a in enumerate(self.axis1[1]):
            for j, b in enumerate(self.axis2[1]):
                yield a, b, self.values[i, j], self.status[i][j], self.cell_meta[i][j]


def evaluate_cell(metric: str, model: SpinModel, cfg: SweepConfig) -> tuple[float, dict]:
    """Generate data, train the matching model and evaluate one metric."""
    if metric == "epsilon_bar":
        ds, _ = make_dataset(model, "linear", cfg.n_train, cfg.n_val, cfg.T_train, cfg.dt, cfg.seed, cfg.split)
        tc = TrainConfig(**{"kind": "linear", "seed": cfg.seed, **cfg.train})
        learned, _ = train("linear", ds, tc, T_train=cfg.T_train)
        eb = epsilon_bar(model, learned, cfg.n_init, cfg.seed, cfg.T_tot, cfg.dt, details=True)
        return eb.value, {"c_values": eb.c_values}
    if metric == "Xi":
        ds, _ = make_dataset(model, "hyper", cfg.n_train, cfg.n_val, cfg.T_train, cfg.dt, cfg.seed)
        tc = TrainConfig(**{"kind": "hyper", "seed": cfg.seed, **cfg.train})
        net, _ = train("hyper", ds, tc, T_train=cfg.T_train)
        gens = GeneratorTimeSeries.from_model(net, cfg.T_train, cfg.dt)
        return xi_average(gens.xi, gens.times, cfg.T_train), {}
    raise ValueError(f"unknown metric {metric!r}")


def _run_cell(args):
    metric, cfg, overrides = args
    try:
        value, meta = evaluate_cell(metric, cfg.model(**overrides), cfg)
        return value, "ok", meta
    except Exception as exc:  # recorded per cell, the sweep carries on
        msg = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        log.warning("sweep cell %s failed: %s", overrides, msg)
        return float("nan"), "error: " + msg, {}


def sweep(family: str, axis1, axis2, metric: str, config: SweepConfig | None = None,
          jobs: int = 1) -> SweepGrid:
    """Evaluate ``metric`` on every (axis1, axis2) cell.

    Axes are ``(parameter name, values)`` pairs naming SpinModel fields. Cells
    are independent; with ``jobs > 1`` they run in worker processes and are
    merged in grid order.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    name1, vals1 = axis1[0], [float(x) for x in axis1[1]]
    name2, vals2 = axis2[0], [float(x) for x in axis2[1]]
    if not vals1 or not vals2:
        raise ValueError("sweep axes must be nonempty")
    cfg = replace(config or SweepConfig(), family=Variant(family).value)
    tasks = [(metric, cfg, {name1: a, name2: b}) for a in vals1 for b in vals2]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    n1, n2 = len(vals1), len(vals2)
    values = np.array([r[0] for r in results]).reshape(n1, n2)
    status = [[results[i * n2 + j][1] for j in range(n2)] for i in range(n1)]
    meta = [[results[i * n2 + j][2] for j in range(n2)] for i in range(n1)]
    return SweepGrid(cfg.family, metric, (name1, vals1), (name2, vals2), values, status, meta, cfg)


def sweep_preset(name: str, config: SweepConfig | None = None, jobs: int = 1) -> SweepGrid:
    p = dict(PRESETS[name])
    cfg = config or SweepConfig()
    cfg = replace(cfg, train={**p.pop("train", {}), **cfg.train}, **({"N": p.pop("N")} if "N" in p else {}))
    return sweep(p["family"], p["axis1"], p["axis2"], p["metric"], cfg, jobs)


# --- CSV output ------------------------------------------------------------

def _write_csv(path, header: dict, columns, rows) -> None:
    buf = io.StringIO()
    buf.write("\n".join(_header_lines(header)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_sweep_csv(grid: SweepGrid, path, header: dict | None = None) -> None:
    head = {"kind": "sweep", "model": grid.family, "metric": grid.metric, "axis1": grid.axis1[0],
            "axis2": grid.axis2[0], "N": grid.config.N, "dt": grid.config.dt, "T": grid.config.T_train,
            "T_tot": grid.config.T_tot, "seed": grid.config.seed, **(header or {})}
    n_init = grid.config.n_init if grid.metric == "epsilon_bar" else 0
    rows = [(a, b, float(val), n_init, grid.config.seed, status) for a, b, val, status, _ in grid.rows()]
    _write_csv(path, head, ["axis1", "axis2", "metric", "n_init", "seed", "status"], rows)


def write_comparison_csv(times, exact, predicted, path, header: dict | None = None) -> None:
    exact = np.asarray(exact)
    predicted = np.asarray(predicted)
    r = np.linalg.norm(predicted - exact, axis=1)
    rows = [(float(t), *map(float, e[1:]), *map(float, p[1:]), float(n))
            for t, e, p, n in zip(times, exact, predicted, r)]
    cols = ["t", "v1_ex", "v2_ex", "v3_ex", "v1_mod", "v2_mod", "v3_mod", "residual_norm"]
    _write_csv(path, {"kind": "comparison", **(header or {})}, cols, rows)


def write_xi_csv(times, xi, path, header: dict | None = None) -> None:
    _write_csv(path, {"kind": "xi", **(header or {})}, ["t", "xi"],
               [(float(t), float(x)) for t, x in zip(times, xi)])


def read_csv_records(path) -> tuple[dict, list[dict]]:
    """Header block and data rows of a CSV written by this module."""
    from .dataset import parse_header

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head, n = parse_header(lines)
    reader = csv.DictReader(lines[n:])
    return head, list(reader)
