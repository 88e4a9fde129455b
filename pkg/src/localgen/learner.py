"""One-step propagator models for Bloch vectors and their training.

Two models map a Bloch vector v(t) to a prediction of v(t + dt):

* ``LinearPropagator``: a single learnable 4x4 matrix M, so M = 1 + L dt
  for a time-averaged generator L.
* ``HyperMLP``: an MLP that maps the time t to the 16 entries of M_t, so
  M_t = 1 + L_t dt for a time-dependent generator.

Both keep their parameters in one flat float64 array so the optimizer and
the model file treat them the same way.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import SampleSet, Dataset

log = logging.getLogger(__name__)

ID4 = np.eye(4)


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"rollout produced non-finite values at step {step}")
        self.step = step


class LinearPropagator:
    kind = "linear"

    def __init__(self, M=None):
        self.params = np.array(ID4 if M is None else M, dtype=float).reshape(16).copy()

    @property
    def M(self) -> np.ndarray:
        return self.params.reshape(4, 4)

    def matrices(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.broadcast_to(self.M, (len(t), 4, 4))

    def loss_and_grad(self, v, v_next, t=None, squared=False):
        loss, G = kernels.linear_loss_grad(self.M, np.ascontiguousarray(v), np.ascontiguousarray(v_next),
                                           squared)
        return loss, np.asarray(G).reshape(16)

    def loss(self, v, v_next, t=None, squared=False) -> float:
        return _residual_loss(np.einsum("ij,bj->bi", self.M, v) - v_next, squared)

    def copy(self) -> "LinearPropagator":
        return LinearPropagator(self.M)

    def header(self) -> dict:
        return {}


class HyperMLP:
    """MLP t -> 4x4 matrix with tanh hidden layers 1 -> h -> h -> h -> 16.

    The time input is scaled by ``T_train``. With ``init="zero"`` the output
    layer starts at zero so M_t = 0; ``init="identity"`` adds a fixed identity
    to the output so training starts from M_t = 1.
    """

    kind = "hyper"
    n_hidden_layers = 3

    def __init__(self, hidden: int = 64, T_train: float = 10.0, seed: int = 0, init: str = "identity",
                 params=None):
        if init not in ("zero", "identity"):
            raise ValueError(f"unknown init {init!r}")
        self.hidden = int(hidden)
        self.T_train = float(T_train)
        self.init = init
        h = self.hidden
        self.shapes = [(1, h), (h,), (h, h), (h,), (h, h), (h,), (h, 16), (16,)]
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.params = np.zeros(sum(sizes))
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.shape != self.params.shape:
                raise ValueError(f"expected {self.params.size} parameters, got {params.size}")
            self.params[:] = params
        else:
            rng = np.random.default_rng([int(seed), 11])
            for k, fan_in in enumerate((1, h, h)):
                bound = 1.0 / np.sqrt(fan_in)
                for j in (2 * k, 2 * k + 1):
                    self._view(j)[...] = rng.uniform(-bound, bound, size=self.shapes[j])

    def _view(self, j):
        a, b = self._offsets[j], self._offsets[j + 1]
        return self.params[a:b].reshape(self.shapes[j])

    @property
    def layers(self):
        return [(self._view(2 * k), self._view(2 * k + 1)) for k in range(4)]

    def _forward(self, t):
        x = (np.asarray(t, dtype=float) / self.T_train).reshape(-1, 1)
        acts = [x]
        for k, (W, b) in enumerate(self.layers):
            z = acts[-1] @ W + b
            acts.append(np.tanh(z) if k < 3 else z)
        M = acts[-1].reshape(-1, 4, 4)
        if self.init == "identity":
            M = M + ID4
        return M, acts

    def matrices(self, t) -> np.ndarray:
        return self._forward(np.atleast_1d(t))[0]

    def loss_and_grad(self, v, v_next, t, squared=False):
        Ms, acts = self._forward(t)
        loss, G = kernels.batched_loss_grad(np.ascontiguousarray(Ms), np.ascontiguousarray(v),
                                            np.ascontiguousarray(v_next), squared)
        return loss, self._backward(np.asarray(G).reshape(-1, 16), acts)

    def _backward(self, delta, acts):
        grad = np.empty_like(self.params)
        layers = self.layers
        for k in range(3, -1, -1):
            W, _ = layers[k]
            a, b = self._offsets[2 * k], self._offsets[2 * k + 1]
            grad[a:b] = (acts[k].T @ delta).ravel()
            grad[b:self._offsets[2 * k + 2]] = delta.sum(axis=0)
            if k:
                delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
        return grad

    def loss(self, v, v_next, t, squared=False) -> float:
        return _residual_loss(np.einsum("bij,bj->bi", self.matrices(t), v) - v_next, squared)

    def copy(self) -> "HyperMLP":
        return HyperMLP(self.hidden, self.T_train, init=self.init, params=self.params.copy())

    def header(self) -> dict:
        return {"h": self.hidden, "T_train": self.T_train, "init": self.init}


def _residual_loss(r, squared=False) -> float:
    sq = np.einsum("bi,bi->b", r, r)
    return float(np.mean(sq if squared else np.sqrt(sq)))


def linear_forward(model: LinearPropagator, v) -> np.ndarray:
    """M v, without renormalising the v0 component."""
    return np.asarray(v, dtype=float) @ model.M.T


def hyper_forward(net: HyperMLP, t) -> np.ndarray:
    """4x4 propagator M_t (or a stack of them for an array of times)."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be >= 0")
    M = net.matrices(t)
    return M[0] if np.ndim(t) == 0 else M


def _batch_arrays(batch):
    if isinstance(batch, SampleSet):
        v, vn, t = batch.v, batch.v_next, batch.t
    else:
        batch = list(batch)
        v = np.array([s.v for s in batch], dtype=float)
        vn = np.array([s.v_next for s in batch], dtype=float)
        t = np.array([s.t for s in batch], dtype=float)
    if len(t) == 0:
        raise ValueError("empty batch")
    return v, vn, t


def loss_linear(model: LinearPropagator, batch, squared=False) -> float:
    v, vn, _ = _batch_arrays(batch)
    return model.loss(v, vn, squared=squared)


def loss_hyper(net: HyperMLP, batch, squared=False) -> float:
    v, vn, t = _batch_arrays(batch)
    return net.loss(v, vn, t, squared=squared)


def backprop_and_grad(model, batch, squared=False) -> np.ndarray:
    """Gradient of the batch loss with respect to ``model.params``."""
    v, vn, t = _batch_arrays(batch)
    return model.loss_and_grad(v, vn, t, squared)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        return cls(np.zeros_like(params), np.zeros_like(params), 0, lr, betas[0], betas[1], eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    state.step += 1
    kernels.adam_update(params, np.ascontiguousarray(grads, dtype=float), state.m, state.v,
                        state.lr, state.beta1, state.beta2, state.eps, state.step)
    return params, state


_DEFAULTS = {
    "linear": dict(batch_size=256, batches_per_epoch=512, epochs=5),
    "hyper": dict(batch_size=256, batches_per_epoch=256, epochs=500),
}


@dataclass
class TrainConfig:
    kind: str = "linear"
    batch_size: int | None = None
    batches_per_epoch: int | None = None
    epochs: int | None = None
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    hidden: int = 64
    init: str = "identity"
    squared: bool = False

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for k, v in _DEFAULTS[self.kind].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        self.betas = tuple(float(b) for b in self.betas)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = ", ".join(repr(b) for b in self.betas)
        return d


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1


def new_model(config: TrainConfig, T_train: float = 10.0):
    if config.kind == "linear":
        return LinearPropagator()
    return HyperMLP(config.hidden, T_train, seed=config.seed, init=config.init)


def train(kind: str, dataset: Dataset, config: TrainConfig | None = None, T_train: float | None = None,
          model=None):
    """Minibatch Adam on the training split; returns the best-on-validation model.

    Minibatches are drawn with replacement. Validation loss is evaluated on the
    full validation split after every epoch.
    """
    config = config or TrainConfig(kind=kind)
    if config.kind != kind:
        raise ValueError(f"config is for {config.kind!r}, asked to train {kind!r}")
    tr, va = dataset.train, dataset.val
    if len(tr) == 0:
        raise ValueError("empty training split")
    if T_train is None:
        T_train = float(dataset.metadata.get("T", 10.0))
    model = model if model is not None else new_model(config, T_train)
    state = AdamState.zeros_like(model.params, config.lr, config.betas, config.eps)
    rng = np.random.default_rng([int(config.seed), 3])
    hist = History()
    best = None
    best_val = np.inf
    for epoch in range(config.epochs):
        total = 0.0
        for _ in range(config.batches_per_epoch):
            idx = rng.integers(0, len(tr), size=config.batch_size)
            loss, g = model.loss_and_grad(tr.v[idx], tr.v_next[idx], tr.t[idx], config.squared)
            adam_step(state, model.params, g)
            total += loss
        hist.train_loss.append(total / config.batches_per_epoch)
        split = va if len(va) else tr
        val = model.loss(split.v, split.v_next, split.t, config.squared)
        hist.val_loss.append(val)
        if val < best_val or best is None:
            best_val, best = val, model.params.copy()
            hist.best_epoch = epoch
        log.debug("epoch %d train %.3e val %.3e", epoch, hist.train_loss[-1], val)
    model.params[:] = best
    return model, hist


def extract_generator(M, dt: float) -> np.ndarray:
    """Generator L from a one-step propagator M = 1 + L dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return (np.asarray(M, dtype=float) - ID4) / dt


def generator_series(net: HyperMLP, times) -> np.ndarray:
    """L_t = (M_t - 1)/dt on a uniform time grid."""
    times = np.asarray(times, dtype=float)
    return extract_generator(net.matrices(times), float(times[1] - times[0]))


def rollout(model, v0, steps: int, dt: float, t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the learned one-step map from ``v0``; returns (times, vectors)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    v0 = np.asarray(v0, dtype=float)
    times = t0 + np.arange(steps + 1) * dt
    if isinstance(model, LinearPropagator):
        out, bad = kernels.rollout_fixed(np.ascontiguousarray(model.M), v0, steps)
    else:
        out, bad = kernels.rollout_varying(np.ascontiguousarray(model.matrices(times[:-1])), v0)
    if bad >= 0:
        raise DivergenceError(bad)
    return times, np.asarray(out)


def first_row_deviation(model, t=0.0) -> float:
    """Distance of the propagator's first row from (1, 0, 0, 0) (max norm)."""
    M = model.M if isinstance(model, LinearPropagator) else model.matrices(t)[0]
    return float(np.max(np.abs(M[0] - ID4[0])))


# --- model files -------------------------------------------------------

def save_model(model, path, meta: dict | None = None) -> None:
    head = {"schema_version": 1, "kind": model.kind, **model.header(), **(meta or {})}
    head["n_params"] = model.params.size
    lines = [f"# {k} = {v}" for k, v in head.items()]
    lines.extend(f"{x:.17g}" for x in model.params)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path):
    from .dataset import parse_header, SchemaVersionError

    text = Path(path).read_text(encoding="utf-8").splitlines()
    head, n = parse_header(text)
    if head.get("schema_version") != "1":
        raise SchemaVersionError(f"{path}: unsupported model schema_version {head.get('schema_version')}")
    params = np.array([float(s) for s in text[n:] if s.strip()])
    if "n_params" in head and int(head["n_params"]) != params.size:
        raise ValueError(f"{path}: expected {head['n_params']} parameters, found {params.size}")
    kind = head.get("kind")
    if kind == "linear":
        model = LinearPropagator(params.reshape(4, 4))
    elif kind == "hyper":
        model = HyperMLP(int(head["h"]), float(head["T_train"]), init=head.get("init", "identity"), params=params)
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    return model, head
