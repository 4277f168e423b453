"""Optimization loop, evaluation, and checkpointing.

Gradients accumulate across sequences and the optimizer consumes their
mean every batch_size sequences (and at epoch end), so a batch is a group
of whole sequences rather than windows.  All randomness flows through one
caller-owned generator, which makes full runs bitwise reproducible.

Checkpoints are a flat binary container: magic, format version, a JSON
header (model config, step, normalization statistics, free-form metadata),
then each tensor as name, shape, and little-endian float64 data.  Adam
moments are stored alongside parameters so training can resume.
"""

import copy
import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as md
from .data import NormStats, SensorSequence
from .losses import LossBreakdown, total_objective
from .metrics import MetricsReport, evaluate_predictions
from .model import ModelConfig, ModelParams
from .sampling import build_example_set

_MAGIC = b"TSEGCKPT"
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.001
    batch_size: int = 32          # sequences per optimizer step
    seed: int = 0
    contrast_weight: float = 1.0
    temperature: float = 0.1
    k_per_class: int = 16
    boundary_radius: int = 2
    include_segments: bool = True  # drop to sample-level contrast only
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainState:
    params: ModelParams
    model_config: ModelConfig
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    norm_stats: NormStats | None = None
    best_params: ModelParams | None = None
    best_metric: float = -1.0
    best_epoch: int = -1

    def snapshot_best(self, metric: float, epoch: int):
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.best_params = copy.deepcopy(self.params)


def init_train_state(model_config: ModelConfig, seed: int) -> TrainState:
    params = md.init_params(model_config, seed)
    m = {name: np.zeros_like(t.values) for name, t in params.named_parameters()}
    v = {name: np.zeros_like(t.values) for name, t in params.named_parameters()}
    return TrainState(params=params, model_config=model_config, m=m, v=v)


def adam_step(state: TrainState, gradients: dict[str, np.ndarray],
              lr: float, betas: tuple[float, float], eps: float) -> TrainState:
    """Bias-corrected adaptive-moment update, in place on state.params."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, tensor in state.params.named_parameters():
        g = gradients[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** t)
        v_hat = state.v[name] / (1 - b2 ** t)
        tensor.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


@dataclass
class EpochStats:
    classification: list[float]     # per stage, averaged over sequences
    contrast: list[float]
    total: float
    optimizer_steps: int


def _sequence_loss(state: TrainState, seq: SensorSequence, cfg: TrainConfig,
                   rng) -> tuple[ad.Tensor, LossBreakdown]:
    outs = md.mstcn_forward(seq.features, state.params, state.model_config)
    if cfg.contrast_weight > 0:
        sets = []
        for out in outs:
            stage_preds = np.argmax(out.probs.values, axis=1)
            samples, segments = build_example_set(
                out.projected, stage_preds, seq.labels, rng,
                k_per_class=cfg.k_per_class,
                boundary_radius=cfg.boundary_radius)
            sets.append((samples, segments if cfg.include_segments else []))
    else:
        sets = [([], [])] * len(outs)
    return total_objective(outs, seq.labels, sets, cfg.contrast_weight,
                           cfg.temperature)


def train_epoch(state: TrainState, sequences: list[SensorSequence],
                cfg: TrainConfig, rng) -> EpochStats:
    """One pass over the shuffled sequences with gradient accumulation."""
    if not sequences:
        raise ValueError("need at least one training sequence")
    n_stages = state.model_config.num_stages
    ce_sums = np.zeros(n_stages)
    con_sums = np.zeros(n_stages)
    total_sum = 0.0
    steps = 0

    order = rng.permutation(len(sequences))
    state.params.zero_grads()
    accumulated = 0
    for idx in order:
        loss, breakdown = _sequence_loss(state, sequences[int(idx)], cfg, rng)
        if not np.isfinite(breakdown.total):
            raise FloatingPointError(
                f"non-finite loss on sequence {int(idx)}")
        loss.backward()
        accumulated += 1
        ce_sums += breakdown.classification
        con_sums += breakdown.contrast
        total_sum += breakdown.total
        if accumulated == cfg.batch_size:
            _apply_accumulated(state, cfg, accumulated)
            accumulated = 0
            steps += 1
    if accumulated:
        _apply_accumulated(state, cfg, accumulated)
        steps += 1

    n = len(sequences)
    return EpochStats(classification=(ce_sums / n).tolist(),
                      contrast=(con_sums / n).tolist(),
                      total=total_sum / n, optimizer_steps=steps)


def _apply_accumulated(state: TrainState, cfg: TrainConfig, count: int):
    gradients = {name: t.grad / count
                 for name, t in state.params.named_parameters()}
    adam_step(state, gradients, cfg.learning_rate,
              (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_epsilon)
    state.params.zero_grads()


def evaluate(params: ModelParams, model_config: ModelConfig,
             sequences: list[SensorSequence]
             ) -> tuple[MetricsReport, list[np.ndarray]]:
    """Frozen-model metrics over a list of sequences, final stage only."""
    truth_parts, pred_parts, prob_parts, per_seq = [], [], [], []
    for seq in sequences:
        outs = md.mstcn_forward(seq.features, params, model_config)
        probs = outs[-1].probs.values
        preds = np.argmax(probs, axis=1)
        truth_parts.append(seq.labels)
        pred_parts.append(preds)
        prob_parts.append(probs)
        per_seq.append(preds)
    report = evaluate_predictions(np.concatenate(truth_parts),
                                  np.concatenate(pred_parts),
                                  np.concatenate(prob_parts),
                                  model_config.num_classes)
    return report, per_seq


def fit(state: TrainState, train_seqs: list[SensorSequence],
        val_seqs: list[SensorSequence], cfg: TrainConfig,
        log_fn=None) -> list[dict]:
    """Run cfg.epochs epochs, snapshotting the best validation F1.

    Returns one JSON-ready record per epoch.  Without validation
    sequences the latest parameters are always the snapshot.
    """
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        stats = train_epoch(state, train_seqs, cfg, rng)
        record = {"epoch": epoch,
                  "classification": stats.classification,
                  "contrast": stats.contrast,
                  "total": stats.total}
        if val_seqs:
            report, _ = evaluate(state.params, state.model_config, val_seqs)
            record["val_macro_f1"] = report.macro_f1
            record["val_jaccard"] = report.jaccard
            state.snapshot_best(report.macro_f1, epoch)
        else:
            state.snapshot_best(float(epoch), epoch)
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    if state.best_params is None:
        state.snapshot_best(0.0, -1)
    return history


def _write_tensor(fh, name: str, values: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", values.ndim))
    for dim in values.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(values.astype("<f8", copy=False).tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("checkpoint truncated")
    return data


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0]
                  for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, count * 8), dtype="<f8")
    return name, data.reshape(shape).astype(np.float64)


def save_checkpoint(state: TrainState, path, metadata: dict | None = None):
    path = Path(path)
    header = {
        "model_config": dataclasses.asdict(state.model_config),
        "step": state.step,
        "norm_mean": (None if state.norm_stats is None
                      else state.norm_stats.mean.tolist()),
        "norm_std": (None if state.norm_stats is None
                     else state.norm_stats.std.tolist()),
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    named = list(state.params.named_parameters())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", 3 * len(named)))
        for name, tensor in named:
            _write_tensor(fh, name, tensor.values)
        for name, _ in named:
            _write_tensor(fh, "adam.m." + name, state.m[name])
        for name, _ in named:
            _write_tensor(fh, "adam.v." + name, state.v[name])


def read_checkpoint_header(path) -> dict:
    """Parse only the JSON header, cheaply and without tensor data."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        return json.loads(_read_exact(fh, header_len).decode("utf-8"))


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = dict(_read_tensor(fh) for _ in range(n_tensors))

    model_config = ModelConfig(**header["model_config"])
    state = init_train_state(model_config, seed=0)
    for name, tensor in state.params.named_parameters():
        if name not in tensors:
            raise ValueError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != tensor.shape:
            raise ValueError(f"checkpoint tensor {name} has shape "
                             f"{tensors[name].shape}, expected {tensor.shape}")
        tensor.values = tensors[name]
        state.m[name] = tensors["adam.m." + name]
        state.v[name] = tensors["adam.v." + name]
    state.step = header["step"]
    if header["norm_mean"] is not None:
        state.norm_stats = NormStats(mean=np.array(header["norm_mean"]),
                                     std=np.array(header["norm_std"]))
    return state
