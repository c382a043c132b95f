"""Training and evaluation loops.

Energies are fitted in standardised units: a per-element reference energy
(least squares on element counts) is removed and the residual divided by its
standard deviation.  The optimised objective is ``lambda_e * mean|dE|`` in
those units; with ``force_training="finite_difference"`` the force term
``lambda_f * mean|dF|`` is added, its parameter gradient obtained as a central
difference of two first-order gradients along the sign pattern of the force
error (no second derivatives on the tape).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import DiffGraph, Tensor
from .fragment import Hypergraph
from .model import GraphBatch, SE3Set, make_batch
from .optim import AdamW, cosine_lr
from .synth import DatasetRecord

FORCE_TRAINING = ("none", "finite_difference")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int | None = None
    epochs: int = 10
    batch_size: int = 8
    lr: float = 3e-3
    min_lr: float = 1e-6
    warmup_steps: int | None = None
    warmup_epochs: float = 1.0
    weight_decay: float = 1e-6
    lambda_e: float = 1.0
    lambda_f: float = 100.0
    force_training: str = "none"
    fd_step: float = 1e-4
    val_fraction: float = 0.0
    eval_every: int = 0
    stop_after: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.epochs < 0 or self.lr < 0 or self.weight_decay < 0:
            raise ValueError("epochs, lr and weight_decay must be non-negative")
        if self.force_training not in FORCE_TRAINING:
            raise ValueError(f"force_training must be one of {FORCE_TRAINING}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.stop_after is not None and self.stop_after < 1:
            raise ValueError("stop_after must be positive")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trainer config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Example:
    record: DatasetRecord
    hypergraph: Hypergraph


@dataclass
class TrainState:
    """Position of an interrupted run: steps done, pending batch order, sampler state."""

    step: int = 0
    order: list[int] = field(default_factory=list)
    rng: dict | None = None

    def to_dict(self) -> dict:
        return {"step": self.step, "order": [int(k) for k in self.order], "rng": self.rng}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainState":
        return cls(int(data["step"]), [int(k) for k in data["order"]], data.get("rng"))


@dataclass
class TrainResult:
    initial_loss: float
    final_loss: float
    step_losses: list[float]
    epochs: list[dict] = field(default_factory=list)
    steps: int = 0
    state: TrainState = field(default_factory=TrainState)
    finished: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["state"] = self.state.to_dict()
        return out


def _rng_state(rng: np.random.Generator) -> dict:
    """JSON-safe copy of a Philox generator state."""
    st = rng.bit_generator.state
    return {
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def _restore_rng(data: dict) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.array(data["counter"], dtype=np.uint64), "key": np.array(data["key"], dtype=np.uint64)},
        "buffer": np.array(data["buffer"], dtype=np.uint64),
        "buffer_pos": data["buffer_pos"],
        "has_uint32": data["has_uint32"],
        "uinteger": data["uinteger"],
    }
    return np.random.Generator(bg)


# --------------------------------------------------------------------------
# scaling
# --------------------------------------------------------------------------


def fit_energy_scaler(model: SE3Set, records: Sequence[DatasetRecord]) -> None:
    """Per-element reference energies and residual scale, stored on the model."""
    zs = sorted({int(z) for r in records for z in r.molecule.numbers})
    A = np.array([[np.sum(r.molecule.numbers == z) for z in zs] for r in records], dtype=np.float64)
    E = np.array([r.energy for r in records])
    coef, *_ = np.linalg.lstsq(A, E, rcond=None)
    shift = np.zeros(model.cfg.max_z + 1)
    shift[zs] = coef
    resid = E - A @ coef
    scale = float(np.std(resid)) if len(records) > 1 else 0.0
    model.energy_shift = shift
    model.energy_scale = scale if scale > 1e-12 else 1.0


def _std_targets(model: SE3Set, batch: GraphBatch, recs: Sequence[DatasetRecord]):
    e = (np.array([r.energy for r in recs]) - model.shift(batch)) / model.energy_scale
    if all(r.forces is not None for r in recs):
        f = np.concatenate([r.forces for r in recs]) / model.energy_scale
    else:
        f = None
    return e, f


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------


def _param_grads(model: SE3Set, pos: np.ndarray, batch: GraphBatch, weights: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Raw energies at ``pos`` and the parameter gradient of ``sum(weights * raw)``."""
    params = list(model.params.values())
    with DiffGraph() as g:
        raw = model.raw_energy(Tensor(pos), batch)
        obj = ag.tsum(raw * weights)
    grads = g.backward(obj, params)
    return raw.data, grads


def _raw_forces(model: SE3Set, batch: GraphBatch) -> tuple[np.ndarray, np.ndarray]:
    pos = Tensor(batch.positions.copy(), requires_grad=True)
    with DiffGraph() as g:
        raw = model.raw_energy(pos, batch)
        total = ag.tsum(raw)
    (grad,) = g.backward(total, [pos])
    return raw.data, -grad


def batch_objective_and_grads(model: SE3Set, batch: GraphBatch, recs: Sequence[DatasetRecord], cfg: TrainConfig):
    """Standardised objective of one batch and its parameter gradients (name -> array)."""
    e_t, f_t = _std_targets(model, batch, recs)
    B = batch.n_mols
    names = list(model.params)
    params = list(model.params.values())
    with DiffGraph() as g:
        raw = model.raw_energy(Tensor(batch.positions), batch)
        raw0 = raw.data
        obj = ag.tsum(raw * (cfg.lambda_e * np.sign(raw0 - e_t) / B))
    grads = g.backward(obj, params)
    loss = cfg.lambda_e * float(np.mean(np.abs(raw0 - e_t)))
    if cfg.force_training == "finite_difference" and cfg.lambda_f:
        if f_t is None:
            raise TrainingError("force training needs force labels on every record")
        _, f_pred = _raw_forces(model, batch)
        s = np.sign(f_pred - f_t)
        n_comp = f_t.size
        loss += cfg.lambda_f * float(np.mean(np.abs(f_pred - f_t)))
        h = cfg.fd_step
        ones = np.ones(B)
        _, gp = _param_grads(model, batch.positions + h * s, batch, ones)
        _, gm = _param_grads(model, batch.positions - h * s, batch, ones)
        # d/dtheta sum_k s_k F_k = -d/dtheta (d/dh) sum raw(x + h s)
        factor = -cfg.lambda_f / n_comp / (2 * h)
        grads = [g + factor * (a - b) for g, a, b in zip(grads, gp, gm)]
    if not math.isfinite(loss):
        raise TrainingError("non-finite training loss")
    return loss, dict(zip(names, grads))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _chunks(items: Sequence, size: int) -> list[Sequence]:
    return [items[k : k + size] for k in range(0, len(items), size)]


def predict(model: SE3Set, examples: Sequence[Example], forces: bool = True, batch_size: int = 16, threads: int = 1):
    """Energies ``(n,)`` and per-molecule force arrays, in input order."""

    def run(chunk):
        batch = make_batch([(ex.record.molecule, ex.hypergraph) for ex in chunk])
        if forces:
            E, F = model.energy_and_forces(batch)
            splits = np.cumsum(batch.atom_counts)[:-1]
            return E, np.split(F, splits)
        return model.energy(batch), [None] * len(chunk)

    parts = _map(run, _chunks(list(examples), batch_size), threads)
    E = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    F = [f for p in parts for f in p[1]]
    return E, F


def evaluate(model: SE3Set, examples: Sequence[Example], cfg: TrainConfig | None = None, threads: int = 1) -> dict:
    """Energy/force MAE in dataset units plus the standardised objective."""
    cfg = cfg or TrainConfig()
    if not examples:
        raise TrainingError("cannot evaluate an empty dataset")
    want_f = all(ex.record.forces is not None for ex in examples)
    E, F = predict(model, examples, forces=want_f, threads=threads)
    E_t = np.array([ex.record.energy for ex in examples])
    out = {
        "count": len(examples),
        "energy_mae": float(np.mean(np.abs(E - E_t))),
        "objective": cfg.lambda_e * float(np.mean(np.abs(E - E_t))) / model.energy_scale,
    }
    if want_f:
        dF = np.concatenate([f - ex.record.forces for f, ex in zip(F, examples)])
        out["force_mae"] = float(np.mean(np.abs(dF)))
        if cfg.force_training == "finite_difference":
            out["objective"] += cfg.lambda_f * out["force_mae"] / model.energy_scale
        out["loss"] = cfg.lambda_e * out["energy_mae"] + cfg.lambda_f * out["force_mae"]
    return out


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------


def split_examples(examples: Sequence[Example], val_fraction: float, seed: int) -> tuple[list[Example], list[Example]]:
    n_val = int(round(val_fraction * len(examples)))
    if n_val == 0:
        return list(examples), []
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(len(examples))
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return [examples[k] for k in train], [examples[k] for k in val]


def train(
    model: SE3Set,
    train_set: Sequence[Example],
    cfg: TrainConfig,
    val_set: Sequence[Example] = (),
    optimizer: AdamW | None = None,
    fit_scaler: bool = True,
    log: Callable[[str], None] | None = None,
    state: TrainState | None = None,
) -> TrainResult:
    """Run (or continue, given ``state``) the optimisation described by ``cfg``.

    The learning-rate schedule spans ``cfg.steps`` (or ``cfg.epochs``) steps in
    total; ``cfg.stop_after`` ends this call early and the returned
    ``result.state`` lets a later call pick up exactly where it stopped.
    """
    if not train_set:
        raise TrainingError("empty training set")
    if fit_scaler and state is None:
        fit_energy_scaler(model, [ex.record for ex in train_set])
    n = len(train_set)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.steps if cfg.steps is not None else cfg.epochs * per_epoch
    warmup = cfg.warmup_steps if cfg.warmup_steps is not None else int(round(cfg.warmup_epochs * per_epoch))
    warmup = min(warmup, total)
    opt = optimizer or AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    if state is None:
        done, order, rng = 0, [], np.random.Generator(np.random.Philox(cfg.seed))
    else:
        done, order = state.step, list(state.order)
        rng = _restore_rng(state.rng) if state.rng else np.random.Generator(np.random.Philox(cfg.seed))
        if any(k >= n for k in order):
            raise TrainingError("saved batch order does not fit this training set")
    last = total if cfg.stop_after is None else min(total, done + cfg.stop_after)

    initial = evaluate(model, train_set, cfg)["objective"]
    result = TrainResult(initial_loss=initial, final_loss=initial, step_losses=[])
    for step in range(done + 1, last + 1):
        if not order:
            order = [int(k) for k in rng.permutation(n)]
        idx = tuple(sorted(order[: cfg.batch_size]))
        order = order[cfg.batch_size :]
        recs = [train_set[k].record for k in idx]
        batch = make_batch([(r.molecule, train_set[k].hypergraph) for k, r in zip(idx, recs)])
        loss, grads = batch_objective_and_grads(model, batch, recs, cfg)
        opt.step(grads, cosine_lr(step, total, cfg.lr, warmup, cfg.min_lr))
        result.step_losses.append(loss)
        epoch_end = step % per_epoch == 0 or step == total
        if epoch_end and (cfg.eval_every and (step // per_epoch) % cfg.eval_every == 0 or step == total):
            row = {"step": step, "epoch": step / per_epoch, "train": evaluate(model, train_set, cfg)}
            if val_set:
                row["val"] = evaluate(model, val_set, cfg)
            result.epochs.append(row)
            if log:
                msg = f"step {step}/{total}: train energy MAE {row['train']['energy_mae']:.6g}"
                if val_set:
                    msg += f", val energy MAE {row['val']['energy_mae']:.6g}"
                log(msg)
    result.steps = last - done
    result.finished = last == total
    result.state = TrainState(last, order, _rng_state(rng))
    result.final_loss = evaluate(model, train_set, cfg)["objective"] if last > done else initial
    return result
