"""Weighted binary cross-entropy nested over master classes, plus the
optimization loop.

The objective mixes two terms: a subclass loss over the 8 sigmoid outputs
and a master-class loss over 4 derived logits, each master logit being the
mixed top-2 logits of its member subclasses. The mixing ratio weights the
subclass term, so a small ratio prioritizes getting the master class
right. The positive-class weight alpha trades false negatives against
false positives and defaults to the per-class negative/positive count
ratio of the training split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import MultiChannelFeatures
from .labels import MASTER_GROUPS, NUM_MASTERS, NUM_SUBCLASSES, LabelVector
from .model import (
    ModelConfig,
    ParamDict,
    _sigmoid,
    backward_batch,
    forward_batch,
    init_params,
    params_copy,
)

PROB_CLAMP = 1e-7


class TrainingError(Exception):
    pass


class EmptyDataset(TrainingError):
    pass


class DegenerateLabels(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    cbce_ratio: float = 0.1
    dropout: float = 0.2
    learning_rate: float = 0.001
    optimizer: str = "adadelta"
    alpha_mode: str = "class_balanced"
    alpha: float = 1.0
    mix_mode: str = "mean"
    epochs: int = 50
    seed: int = 0
    alpha_sub: tuple[float, ...] | None = None      # resolved per-class weights
    alpha_master: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.cbce_ratio <= 1.0:
            raise TrainingError(f"cbce_ratio must be in [0, 1], got {self.cbce_ratio}")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.optimizer not in ("adadelta", "sgd"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if self.alpha_mode not in ("fixed", "class_balanced"):
            raise TrainingError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.mix_mode not in ("mean", "max", "logsumexp"):
            raise TrainingError(f"unknown mix_mode {self.mix_mode!r}")
        if self.alpha <= 0:
            raise TrainingError("alpha must be positive")


@dataclass
class OptimizerState:
    """Adadelta accumulators: decayed averages of g^2 and of the
    (unscaled) update^2, per parameter."""

    sq_grad: ParamDict
    sq_update: ParamDict
    rho: float = 0.9
    eps: float = 1e-6

    @classmethod
    def for_params(cls, params: ParamDict, rho: float = 0.9, eps: float = 1e-6) -> "OptimizerState":
        return cls(
            sq_grad={k: np.zeros_like(v) for k, v in params.items()},
            sq_update={k: np.zeros_like(v) for k, v in params.items()},
            rho=rho,
            eps=eps,
        )


def cbce(y, yhat, alpha=1.0):
    """Weighted binary cross-entropy on probabilities, elementwise.

    -(alpha * y * log(p) + (1 - y) * log(1 - p)) with p clamped away
    from 0 and 1.
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(yhat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    out = -(alpha * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def _top_k_indices(values: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(values)[::-1]
    return order[:k]


def master_logits(z: np.ndarray, mix_mode: str = "mean") -> np.ndarray:
    """Derive the 4 master-class logits from the 8 subclass logits.

    Within each master class the top-2 member logits (all members, for
    singletons) are mixed; the default mixer is their mean.
    """
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros(NUM_MASTERS)
    for m, members in MASTER_GROUPS.items():
        vals = z[list(members)]
        k = min(2, vals.size)
        top = np.sort(vals)[::-1][:k]
        if mix_mode == "mean":
            out[m] = np.mean(top)
        elif mix_mode == "max":
            out[m] = np.max(top)
        else:
            out[m] = np.log(np.sum(np.exp(top - np.max(top)))) + np.max(top)
    return out


def _master_logits_grad(z: np.ndarray, mix_mode: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per master class: (subclass indices used, d g_m / d z at those)."""
    jac = []
    for m, members in MASTER_GROUPS.items():
        members = np.array(members)
        vals = z[members]
        k = min(2, vals.size)
        sel = members[_top_k_indices(vals, k)]
        if mix_mode == "mean":
            w = np.full(k, 1.0 / k)
        elif mix_mode == "max":
            w = np.zeros(k)
            w[0] = 1.0
        else:
            e = np.exp(z[sel] - np.max(z[sel]))
            w = e / e.sum()
        jac.append((sel, w))
    return jac


def _resolve_alphas(cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.alpha_sub is not None and cfg.alpha_master is not None:
        return np.asarray(cfg.alpha_sub), np.asarray(cfg.alpha_master)
    return np.full(NUM_SUBCLASSES, cfg.alpha), np.full(NUM_MASTERS, cfg.alpha)


def nested_loss(z: np.ndarray, labels: LabelVector, cfg: TrainConfig) -> float:
    """(1 - r) * master loss + r * subclass loss, r = cbce_ratio."""
    z = np.asarray(z, dtype=np.float64)
    alpha_sub, alpha_master = _resolve_alphas(cfg)
    y_sub = np.asarray(labels.subclass, dtype=np.float64)
    y_master = np.asarray(labels.master, dtype=np.float64)
    l_sub = float(np.mean(cbce(y_sub, _sigmoid(z), alpha_sub)))
    g = master_logits(z, cfg.mix_mode)
    l_master = float(np.mean(cbce(y_master, _sigmoid(g), alpha_master)))
    r = cfg.cbce_ratio
    return (1.0 - r) * l_master + r * l_sub


def nested_loss_grad(z: np.ndarray, labels: LabelVector, cfg: TrainConfig) -> tuple[float, np.ndarray]:
    """Loss value and its analytic gradient with respect to the logits."""
    z = np.asarray(z, dtype=np.float64)
    alpha_sub, alpha_master = _resolve_alphas(cfg)
    y_sub = np.asarray(labels.subclass, dtype=np.float64)
    y_master = np.asarray(labels.master, dtype=np.float64)
    r = cfg.cbce_ratio

    p = _sigmoid(z)
    loss_sub = float(np.mean(cbce(y_sub, p, alpha_sub)))
    dz = (r / NUM_SUBCLASSES) * (-alpha_sub * y_sub * (1.0 - p) + (1.0 - y_sub) * p)

    g = master_logits(z, cfg.mix_mode)
    pm = _sigmoid(g)
    loss_master = float(np.mean(cbce(y_master, pm, alpha_master)))
    dg = ((1.0 - r) / NUM_MASTERS) * (-alpha_master * y_master * (1.0 - pm) + (1.0 - y_master) * pm)
    for m, (sel, w) in enumerate(_master_logits_grad(z, cfg.mix_mode)):
        dz[sel] += dg[m] * w

    return (1.0 - r) * loss_master + r * loss_sub, dz


def batch_channels(batch: list[MultiChannelFeatures], select) -> list[list[np.ndarray]]:
    return [select(rec) for rec in batch]


def backward(
    model_cfg: ModelConfig,
    params: ParamDict,
    batch: list[MultiChannelFeatures] | list[tuple[list[np.ndarray], LabelVector]],
    cfg: TrainConfig,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    select=None,
) -> tuple[ParamDict, float]:
    """Gradients of the mean nested loss over a batch, plus the loss.

    The batch is either feature records (three channels each) or
    pre-selected (channel list, label) pairs.
    """
    if not batch:
        raise EmptyDataset("backward needs a non-empty batch")
    if isinstance(batch[0], MultiChannelFeatures):
        select = select or default_channel_select
        pairs = [(select(rec), rec.label) for rec in batch]
    else:
        pairs = list(batch)
    samples = [chans for chans, _ in pairs]
    logits, cache = forward_batch(model_cfg, params, samples, mode=mode, rng=rng)
    bsz = len(pairs)
    dlogits = np.zeros_like(logits)
    total = 0.0
    for b, (_, label) in enumerate(pairs):
        loss_b, dz = nested_loss_grad(logits[b], label, cfg)
        total += loss_b
        dlogits[b] = dz / bsz
    grads = backward_batch(model_cfg, params, cache, dlogits)
    return grads, total / bsz


def default_channel_select(rec: MultiChannelFeatures) -> list[np.ndarray]:
    return [
        np.asarray(rec.channel_time.values, dtype=np.float64),
        np.asarray(rec.channel_spectral.values, dtype=np.float64),
        np.asarray(rec.channel_cepstral.values, dtype=np.float64),
    ]


def adadelta_step(params: ParamDict, grads: ParamDict, state: OptimizerState, lr: float) -> None:
    """One accumulator-scaled update, in place.

    The running update average tracks the unscaled ratio step; the
    learning rate only multiplies what is applied to the parameters.
    """
    rho, eps = state.rho, state.eps
    for k, g in grads.items():
        state.sq_grad[k] = rho * state.sq_grad[k] + (1.0 - rho) * g * g
        delta = np.sqrt(state.sq_update[k] + eps) / np.sqrt(state.sq_grad[k] + eps) * g
        state.sq_update[k] = rho * state.sq_update[k] + (1.0 - rho) * delta * delta
        params[k] -= lr * delta


def sgd_step(params: ParamDict, grads: ParamDict, lr: float) -> None:
    for k, g in grads.items():
        params[k] -= lr * g


def input_norm_stats(pairs: list[tuple[list[np.ndarray], LabelVector]], num_channels: int) -> ParamDict:
    """Per-channel, per-dimension mean and std over all training rows,
    keyed for storage alongside the model parameters."""
    stats: ParamDict = {}
    for c in range(num_channels):
        stacked = np.vstack([chans[c] for chans, _ in pairs])
        stats[f"norm.ch{c}.mean"] = stacked.mean(axis=0)
        stats[f"norm.ch{c}.std"] = np.maximum(stacked.std(axis=0), 1e-8)
    return stats


def class_balanced_alphas(labels: list[LabelVector]) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Per-class negative/positive count ratios over a label list."""
    sub = np.array([lab.subclass for lab in labels], dtype=np.float64)
    master = np.array([lab.master for lab in labels], dtype=np.float64)
    out = []
    for mat in (sub, master):
        pos = mat.sum(axis=0)
        neg = len(labels) - pos
        if np.any(pos == 0) or np.any(neg == 0):
            raise DegenerateLabels("a class has no positive or no negative samples")
        out.append(tuple(neg / pos))
    return out[0], out[1]


def predict_sets(
    model_cfg: ModelConfig,
    params: ParamDict,
    samples: list[list[np.ndarray]],
    batch_size: int = 64,
) -> tuple[list[frozenset[int]], np.ndarray]:
    """Thresholded label sets and the raw logits; predictions are never
    empty (argmax fallback).

    A model trained with positive-class weight a outputs roughly
    a p / (a p + 1 - p) for true posterior p, so the decision "p > 0.5"
    sits at output threshold a / (a + 1); with unit weights that is 0.5.
    """
    thresholds = np.full(NUM_SUBCLASSES, 0.5)
    if "alpha.sub" in params:
        a = params["alpha.sub"]
        thresholds = a / (a + 1.0)
    all_logits = np.zeros((len(samples), NUM_SUBCLASSES))
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo : lo + batch_size]
        logits, _ = forward_batch(model_cfg, params, chunk, mode="eval")
        all_logits[lo : lo + len(chunk)] = logits
    sets = []
    for z in all_logits:
        chosen = frozenset(np.flatnonzero(_sigmoid(z) > thresholds).tolist())
        sets.append(chosen if chosen else frozenset([int(np.argmax(z))]))
    return sets, all_logits


def train(
    dataset: list[MultiChannelFeatures] | list[tuple[list[np.ndarray], LabelVector]],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    val_dataset=None,
    select=None,
) -> tuple[ParamDict, list[tuple[int, float, float]]]:
    """Mini-batch training, returning the best-validation-F1 parameters
    and a history of (epoch, train loss, validation sample-F1).

    When no validation set is supplied a seeded 10% slice is held out.
    """
    from .evaluation import sample_f1

    if len(dataset) < cfg.batch_size:
        raise EmptyDataset(f"dataset of {len(dataset)} smaller than one batch of {cfg.batch_size}")
    if isinstance(dataset[0], MultiChannelFeatures):
        select = select or default_channel_select
        pairs = [(select(rec), rec.label) for rec in dataset]
    else:
        pairs = list(dataset)
    if any(label is None for _, label in pairs):
        raise TrainingError("every training sample needs a label")

    rng = np.random.default_rng(cfg.seed)
    if val_dataset is None:
        order = rng.permutation(len(pairs))
        n_val = max(1, len(pairs) // 10)
        val_pairs = [pairs[i] for i in order[:n_val]]
        pairs = [pairs[i] for i in order[n_val:]]
    else:
        if isinstance(val_dataset[0], MultiChannelFeatures):
            vsel = select or default_channel_select
            val_pairs = [(vsel(rec), rec.label) for rec in val_dataset]
        else:
            val_pairs = list(val_dataset)

    if cfg.alpha_mode == "class_balanced" and cfg.alpha_sub is None:
        a_sub, a_master = class_balanced_alphas([label for _, label in pairs])
        cfg = replace(cfg, alpha_sub=a_sub, alpha_master=a_master)

    model_cfg = replace(model_cfg, dropout=cfg.dropout)
    params = init_params(model_cfg)
    params.update(input_norm_stats(pairs, model_cfg.num_channels))
    alpha_sub, alpha_master = _resolve_alphas(cfg)
    params["alpha.sub"] = np.asarray(alpha_sub, dtype=np.float64)
    params["alpha.master"] = np.asarray(alpha_master, dtype=np.float64)
    state = OptimizerState.for_params(params)
    val_samples = [chans for chans, _ in val_pairs]
    val_truths = [label.subclass_set() for _, label in val_pairs]

    best_f1 = -1.0
    best_params = params_copy(params)
    history: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(pairs) - cfg.batch_size + 1, cfg.batch_size):
            batch = [pairs[i] for i in order[lo : lo + cfg.batch_size]]
            grads, loss = backward(model_cfg, params, batch, cfg, mode="train", rng=rng)
            if cfg.optimizer == "adadelta":
                adadelta_step(params, grads, state, cfg.learning_rate)
            else:
                sgd_step(params, grads, cfg.learning_rate)
            epoch_loss += loss
            n_batches += 1
        preds, _ = predict_sets(model_cfg, params, val_samples)
        val_f1 = sample_f1(preds, val_truths)
        history.append((epoch, epoch_loss / max(1, n_batches), val_f1))
        if val_f1 >= best_f1:  # ties go to the later, better-trained epoch
            best_f1 = val_f1
            best_params = params_copy(params)
    return best_params, history


def write_history(path: str | Path, history: list[tuple[int, float, float]]) -> None:
    lines = [f"{epoch}\t{loss!r}\t{f1!r}" for epoch, loss, f1 in history]
    Path(path).write_text("\n".join(lines) + "\n")
