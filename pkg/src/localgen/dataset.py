"""Trajectory generation, one-step samples, train/validation splits and text I/O."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import quantum_core as qc
from .quantum_core import SpinModel, Variant

SCHEMA_VERSION = 1
C_RANGE = (0.01, 0.7)
_SAMPLER_CODE = {"ball": 0, "diagonal": 1}


class SchemaVersionError(ValueError):
    pass


class DataValidationError(ValueError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    vectors: np.ndarray
    initial: tuple = (0.0, 0.0, 0.0)
    model: SpinModel | None = None
    traj_id: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.vectors = np.asarray(self.vectors, dtype=float)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def validate(self) -> None:
        if self.vectors.shape != (len(self.times), 4):
            raise DataValidationError(
                f"trajectory {self.traj_id}: {len(self.times)} times but vectors of shape {self.vectors.shape}")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if not (steps > 0).all() or np.ptp(steps) > 1e-9 * max(1.0, self.T):
                raise DataValidationError(f"trajectory {self.traj_id}: time grid is not uniform")
        _validate_bloch_rows(self.vectors, f"trajectory {self.traj_id}")


def _validate_bloch_rows(vectors: np.ndarray, where: str) -> None:
    if not np.all(vectors[:, 0] == 1.0):
        raise DataValidationError(f"{where}: v0 component differs from 1")
    r2 = np.einsum("ti,ti->t", vectors[:, 1:], vectors[:, 1:])
    if np.any(r2 > 1 + qc.BLOCH_NORM_TOL):
        raise DataValidationError(f"{where}: Bloch vector norm exceeds 1")


class Sample(NamedTuple):
    v: np.ndarray
    v_next: np.ndarray
    t: float


@dataclass
class SampleSet:
    """Column store of one-step samples (v(t), v(t+dt), t)."""

    v: np.ndarray
    v_next: np.ndarray
    t: np.ndarray
    traj_id: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Sample:
        return Sample(self.v[i], self.v_next[i], float(self.t[i]))

    def subset(self, mask_or_idx) -> "SampleSet":
        return SampleSet(self.v[mask_or_idx], self.v_next[mask_or_idx], self.t[mask_or_idx],
                         self.traj_id[mask_or_idx], self.index[mask_or_idx])

    @classmethod
    def concat(cls, parts) -> "SampleSet":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("v", "v_next", "t", "traj_id", "index")))

    @classmethod
    def from_arrays(cls, v, v_next, t) -> "SampleSet":
        n = len(t)
        return cls(np.asarray(v, float), np.asarray(v_next, float), np.asarray(t, float),
                   np.full(n, -1), np.arange(n))


@dataclass
class Dataset:
    train: SampleSet
    val: SampleSet
    metadata: dict = field(default_factory=dict)


def sample_initial_bloch(rng: np.random.Generator) -> tuple[float, float, float]:
    """Uniform point in the open unit ball (rejection from the cube)."""
    while True:
        p = rng.uniform(-1.0, 1.0, size=3)
        if p @ p < 1.0:
            return tuple(float(c) for c in p)


def sample_initial_diagonal(rng: np.random.Generator) -> float:
    lo, hi = C_RANGE
    while True:
        c = float(rng.uniform(lo, hi))
        if lo < c < hi:
            return c


def diagonal_bloch(c: float) -> tuple[float, float, float]:
    return (0.0, 0.0, 1.0 - 2.0 * c)


def trajectory_rng(seed: int, sampler: str, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _SAMPLER_CODE[sampler], int(index)])


def draw_initial(sampler: str, seed: int, index: int) -> tuple[float, float, float]:
    rng = trajectory_rng(seed, sampler, index)
    if sampler == "ball":
        return sample_initial_bloch(rng)
    if sampler == "diagonal":
        return diagonal_bloch(sample_initial_diagonal(rng))
    raise ValueError(f"unknown sampler {sampler!r}")


def generate_trajectories(model: SpinModel, count: int = 100, T: float = 10.0, dt: float = 0.01,
                          sampler: str = "ball", seed: int = 0, method: str = "map",
                          jobs: int = 1, initials=None) -> list[Trajectory]:
    """Exact reduced trajectories from ``count`` independent initial states.

    ``method="map"`` evolves the four Bloch basis inputs once and combines them
    linearly; ``method="direct"`` evolves every initial state separately. Both
    give the same vectors up to round-off. Initial state ``i`` depends only on
    ``(seed, sampler, i)``, so results do not depend on ``jobs``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if initials is None:
        initials = [draw_initial(sampler, seed, i) for i in range(count)]
    H = qc.build_hamiltonian(model)
    bath = qc.build_bath_state(model)
    site = model.system_site

    if method == "map":
        times, maps = qc.dynamical_map(model, T, dt, H=H, bath=bath)
        vecs = [maps @ np.array([1.0, *ini]) for ini in initials]
        for v in vecs:
            v[:, 0] = 1.0
    elif method == "direct":
        spec = qc.SpectralDecomposition.of(H)

        def one(ini):
            rho0 = qc.initial_product_state(ini, bath, site)
            return qc.evolve_reduced(H, rho0, site, T, dt, spectral=spec)[1]

        times = qc.time_grid(T, dt)
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as pool:
                vecs = list(pool.map(one, initials))
        else:
            vecs = [one(ini) for ini in initials]
    else:
        raise ValueError(f"unknown method {method!r}")
    return [Trajectory(times, v, tuple(ini), model, i) for i, (ini, v) in enumerate(zip(initials, vecs))]


def build_samples(trajectories) -> SampleSet:
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories")
    parts = []
    for tr in trajectories:
        n = len(tr.times) - 1
        if n < 1:
            raise ValueError(f"trajectory {tr.traj_id} has fewer than 2 points")
        parts.append(SampleSet(tr.vectors[:-1], tr.vectors[1:], tr.times[:-1],
                               np.full(n, tr.traj_id), np.arange(n)))
    return SampleSet.concat(parts)


def split_time_independent(samples: SampleSet, fraction: float = 0.8) -> Dataset:
    """Per trajectory, the first fraction of the steps train and the rest validate."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if len(samples) == 0:
        raise ValueError("no samples")
    train_mask = np.zeros(len(samples), dtype=bool)
    for tid in np.unique(samples.traj_id):
        sel = samples.traj_id == tid
        n_steps = int(samples.index[sel].max()) + 1
        cut = math.ceil(fraction * n_steps - 1e-9)
        if cut >= n_steps:
            raise ValueError(f"trajectory {tid}: fraction {fraction} leaves no validation samples")
        if cut < 1:
            raise ValueError(f"trajectory {tid}: fraction {fraction} leaves no training samples")
        train_mask[sel] = samples.index[sel] < cut
    return Dataset(samples.subset(train_mask), samples.subset(~train_mask),
                   {"split": "time", "fraction": fraction})


def split_by_trajectory(train_trajectories, val_trajectories) -> Dataset:
    """Whole trajectories for training, others (same sampler) for validation."""
    if not train_trajectories or not val_trajectories:
        raise ValueError("both trajectory lists must be nonempty")
    return Dataset(build_samples(train_trajectories), _relabel(build_samples(val_trajectories)),
                   {"split": "trajectories"})


def split_hypermodel(train_trajectories, eval_trajectories, n_val: int | None = None,
                     seed: int = 0) -> Dataset:
    """Training samples from ball-sampled states, validation from diagonal states.

    Validation samples are drawn at random (without replacement) from the
    evaluation trajectories; ``n_val=None`` keeps all of them, shuffled.
    """
    if not train_trajectories or not eval_trajectories:
        raise ValueError("both trajectory lists must be nonempty")
    train = build_samples(train_trajectories)
    pool = _relabel(build_samples(eval_trajectories))
    rng = np.random.default_rng([int(seed), 7])
    k = len(pool) if n_val is None else min(int(n_val), len(pool))
    val = pool.subset(np.sort(rng.choice(len(pool), size=k, replace=False)))
    return Dataset(train, val, {"split": "hilbert"})


def _relabel(samples: SampleSet) -> SampleSet:
    # evaluation trajectory ids live in a separate id range from training ones
    samples.traj_id = samples.traj_id + 1_000_000
    return samples


# --- text I/O -----------------------------------------------------------

def _header_lines(meta: dict) -> list[str]:
    lines = [f"# schema_version = {SCHEMA_VERSION}"]
    for k, v in meta.items():
        if k != "schema_version":
            lines.append(f"# {k} = {v}")
    return lines


def _fmt(x: float) -> str:
    return repr(float(x))


def parse_header(lines) -> tuple[dict, int]:
    """Leading ``# key = value`` lines; returns (header, number of lines consumed)."""
    header = {}
    n = 0
    for line in lines:
        s = line.strip()
        if not s.startswith("#"):
            break
        body = s[1:].strip()
        if "=" not in body:
            break
        key, _, value = body.partition("=")
        key = key.strip()
        if key == "section":
            break
        header[key] = value.strip()
        n += 1
    return header, n


def _check_schema(header: dict, path) -> None:
    ver = header.get("schema_version")
    if ver is None:
        raise SchemaVersionError(f"{path}: missing schema_version header")
    if ver != str(SCHEMA_VERSION):
        raise SchemaVersionError(f"{path}: schema_version {ver} unsupported (expected {SCHEMA_VERSION})")


def model_metadata(model: SpinModel | None) -> dict:
    return {} if model is None else model.as_dict()


def model_from_metadata(meta: dict) -> SpinModel | None:
    if "model" not in meta:
        return None
    variant = Variant(meta["model"])
    kw = {k: float(meta[k]) for k in ("omega", "V", "alpha", "omega_prime", "v_prime", "beta") if k in meta}
    return SpinModel(variant, int(meta["N"]), **kw)


def save_trajectories(trajectories, path, meta: dict | None = None) -> None:
    trajectories = list(trajectories)
    head = dict(model_metadata(trajectories[0].model) if trajectories else {})
    if trajectories:
        head.update(dt=_fmt(trajectories[0].dt) if len(trajectories[0].times) > 1 else "",
                    T=_fmt(trajectories[0].T))
    head.update(meta or {})
    head["kind"] = "trajectories"
    head["count"] = len(trajectories)
    lines = _header_lines(head)
    for tr in trajectories:
        lines.append(f"# initial {tr.traj_id} = " + ", ".join(_fmt(c) for c in tr.initial))
    for tr in trajectories:
        for t, v in zip(tr.times, tr.vectors):
            lines.append(f"{tr.traj_id}, {_fmt(t)}, {_fmt(v[1])}, {_fmt(v[2])}, {_fmt(v[3])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _records(lines, ncols, path):
    rows = []
    for ln, line in lines:
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = [p.strip() for p in s.split(",")]
        if len(parts) not in ncols:
            raise DataValidationError(f"{path}:{ln}: expected {' or '.join(map(str, ncols))} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataValidationError(f"{path}:{ln}: {exc}") from None
    return rows


def _with_v0(block: np.ndarray, width: int) -> np.ndarray:
    # records store v1..v3; an explicit leading v0 column is accepted and validated
    if block.shape[1] == width + 1:
        return block
    return np.hstack([np.ones((len(block), 1)), block])


def load_trajectories(path) -> tuple[list[Trajectory], dict]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header, _ = parse_header(text)
    _check_schema(header, path)
    model = model_from_metadata(header)
    initials = {}
    for line in text:
        s = line.strip()
        if s.startswith("# initial "):
            key, _, val = s[len("# initial "):].partition("=")
            initials[int(key)] = tuple(float(c) for c in val.split(","))
    rows = _records(enumerate(text, 1), (5, 6), path)
    if not rows:
        raise DataValidationError(f"{path}: no records")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise DataValidationError(f"{path}: inconsistent column count")
    arr = np.array(rows)
    out = []
    for tid in dict.fromkeys(arr[:, 0].astype(int)):
        block = arr[arr[:, 0] == tid]
        vec = _with_v0(block[:, 2:], 3)
        tr = Trajectory(block[:, 1], vec, initials.get(tid, tuple(vec[0, 1:])), model, int(tid))
        tr.validate()
        out.append(tr)
    return out, header


def save_dataset(dataset: Dataset, path, meta: dict | None = None) -> None:
    head = dict(dataset.metadata)
    head.update(meta or {})
    head["kind"] = "samples"
    head["n_train"] = len(dataset.train)
    head["n_val"] = len(dataset.val)
    lines = _header_lines(head)
    for name, part in (("train", dataset.train), ("val", dataset.val)):
        lines.append(f"# section = {name}")
        for t, v, w in zip(part.t, part.v, part.v_next):
            lines.append(", ".join(_fmt(x) for x in (t, v[1], v[2], v[3], w[1], w[2], w[3])))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header, _ = parse_header(text)
    _check_schema(header, path)
    sections = {"train": [], "val": []}
    current = None
    for ln, line in enumerate(text, 1):
        s = line.strip()
        if s.replace(" ", "").startswith("#section="):
            current = s.split("=", 1)[1].strip()
            if current not in sections:
                raise DataValidationError(f"{path}:{ln}: unknown section {current!r}")
            continue
        if current is not None:
            sections[current].append((ln, line))
    parts = {}
    for name, lines in sections.items():
        rows = _records(lines, (7, 9), path)
        arr = np.array(rows).reshape(-1, 7) if rows and len(rows[0]) == 7 else np.array(rows).reshape(-1, 9)
        if arr.shape[1] == 9:
            v, vn = arr[:, 1:5], arr[:, 5:9]
        else:
            v, vn = _with_v0(arr[:, 1:4], 3), _with_v0(arr[:, 4:7], 3)
        _validate_bloch_rows(v, f"{path} [{name}]")
        _validate_bloch_rows(vn, f"{path} [{name}]")
        if np.any(arr[:, 0] < 0):
            raise DataValidationError(f"{path} [{name}]: negative sample time")
        parts[name] = SampleSet.from_arrays(v, vn, arr[:, 0])
    for key in ("n_train", "n_val"):
        if key in header and int(header[key]) != len(parts[key[2:]]):
            raise DataValidationError(f"{path}: header {key}={header[key]} but found {len(parts[key[2:]])} records")
    meta = {k: v for k, v in header.items() if k not in ("schema_version", "kind", "n_train", "n_val")}
    return Dataset(parts["train"], parts["val"], meta)


def make_dataset(model: SpinModel, kind: str = "linear", n_train: int = 100, n_val: int = 20,
                 T: float = 10.0, dt: float = 0.01, seed: int = 0, split: str = "time",
                 fraction: float = 0.8, jobs: int = 1) -> tuple[Dataset, list[Trajectory]]:
    """Training data for either model kind, with self-describing metadata.

    ``kind="linear"`` with ``split="time"`` splits each of ``n_train`` ball
    trajectories in time; ``split="trajectories"`` adds ``n_val`` further ball
    trajectories for validation. ``kind="hyper"`` validates on ``n_val``
    diagonal-state trajectories. Returns the dataset and all trajectories used.
    """
    train = generate_trajectories(model, n_train, T, dt, "ball", seed, jobs=jobs)
    if kind == "hyper":
        extra = generate_trajectories(model, n_val, T, dt, "diagonal", seed, jobs=jobs)
        ds = split_hypermodel(train, extra, seed=seed)
    elif split == "time":
        extra = []
        ds = split_time_independent(build_samples(train), fraction)
    elif split == "trajectories":
        inis = [draw_initial("ball", seed, n_train + i) for i in range(n_val)]
        extra = generate_trajectories(model, n_val, T, dt, "ball", seed, initials=inis, jobs=jobs)
        ds = split_by_trajectory(train, extra)
    else:
        raise ValueError(f"unknown split {split!r}")
    ds.metadata.update(model.as_dict())
    ds.metadata.update(kind=kind, seed=seed, dt=dt, T=T, n_train_traj=n_train,
                       n_val_traj=len(extra) if extra else 0)
    return ds, train + extra
