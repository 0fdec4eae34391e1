"""From-scratch dense classifier: forward, backprop, Adam, dropout.

A single hidden layer with ReLU, inverted dropout, and a sigmoid output,
trained on binary cross-entropy with adaptive-moment updates and early
stopping on validation loss.  Inputs are standardized internally during
training and the affine standardization is folded back into the first
layer's weights, so a trained model consumes raw feature rows and a saved
checkpoint reproduces inference bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .errors import DomainError, TrainingError

logger = logging.getLogger(__name__)


def derive_seed(base: int, *tags) -> int:
    """Stable 63-bit sub-seed from a base seed and arbitrary tags."""
    material = repr((int(base),) + tuple(tags)).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big") >> 1


def _sigmoid(z):
    # clip so float64 never rounds to exactly 0 or 1; the classifier's
    # output contract is the open interval
    return 1.0 / (1.0 + np.exp(-np.clip(z, -36.5, 36.5)))


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # log(1+e^-|z|) + max(z,0) - y*z is the numerically safe form
    return float(np.mean(np.log1p(np.exp(-np.abs(z)))
                         + np.maximum(z, 0.0) - y * z))


@dataclass
class MlpModel:
    """Weights and hyperparameters of the two-layer classifier."""

    input_dim: int
    hidden_dim: int
    w1: np.ndarray  # (hidden_dim, input_dim)
    b1: np.ndarray  # (hidden_dim,)
    w2: np.ndarray  # (hidden_dim,)
    b2: float
    dropout_rate: float
    rng_seed: int

    def copy(self) -> "MlpModel":
        return replace(self, w1=self.w1.copy(), b1=self.b1.copy(),
                       w2=self.w2.copy())


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; defaults follow the training recipe in use."""

    learning_rate: float = 5e-5
    batch_size: int = 120
    max_epochs: int = 5
    patience: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> None:
        if min(self.learning_rate, self.batch_size, self.max_epochs,
               self.patience) <= 0:
            raise ValueError("training config values must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainHistory:
    """Per-epoch losses and validation AUC, plus where training stopped."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_json(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_auc": [None if np.isnan(a) else a for a in self.val_auc],
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
        }


def init_mlp(input_dim: int = 32, hidden_dim: int = 100,
             dropout_rate: float = 0.2, seed: int = 0) -> MlpModel:
    """Glorot-uniform weight init with zero biases, fully seeded."""
    if hidden_dim < 1 or input_dim < 1:
        raise ValueError("layer widths must be >= 1")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    limit1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    limit2 = np.sqrt(6.0 / (hidden_dim + 1))
    return MlpModel(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        w1=rng.uniform(-limit1, limit1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-limit2, limit2, size=hidden_dim),
        b2=0.0,
        dropout_rate=dropout_rate,
        rng_seed=seed,
    )


def forward(model: MlpModel, x: np.ndarray, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> float:
    """Probability for one feature row.

    In train mode, dropout masks the hidden layer with inverted scaling
    (kept units divided by 1-p); inference applies no dropout and is
    deterministic.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_dim,):
        raise DomainError(
            f"input must have shape ({model.input_dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("input contains non-finite values")
    hidden = np.maximum(model.w1 @ x + model.b1, 0.0)
    if train_mode and model.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        keep = rng.random(model.hidden_dim) >= model.dropout_rate
        hidden = hidden * keep / (1.0 - model.dropout_rate)
    return float(_sigmoid(model.w2 @ hidden + model.b2))


def forward_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Inference probabilities for a matrix of rows (no dropout)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DomainError(
            f"input must have shape (n, {model.input_dim}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("input contains non-finite values")
    hidden = np.maximum(X @ model.w1.T + model.b1, 0.0)
    return _sigmoid(hidden @ model.w2 + model.b2)


def _loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray,
                    dropout_mask: np.ndarray | None):
    """Batch BCE loss plus gradients for (w1, b1, w2, b2)."""
    z1 = X @ model.w1.T + model.b1
    hidden = np.maximum(z1, 0.0)
    if dropout_mask is not None:
        scale = 1.0 / (1.0 - model.dropout_rate)
        dropped = hidden * dropout_mask * scale
    else:
        dropped = hidden
    z2 = dropped @ model.w2 + model.b2
    loss = _bce_from_logits(z2, y)
    dz2 = (_sigmoid(z2) - y) / len(y)
    gw2 = dropped.T @ dz2
    gb2 = float(dz2.sum())
    dhidden = np.outer(dz2, model.w2)
    if dropout_mask is not None:
        dhidden = dhidden * dropout_mask * (1.0 / (1.0 - model.dropout_rate))
    dz1 = dhidden * (z1 > 0.0)
    gw1 = dz1.T @ X
    gb1 = dz1.sum(axis=0)
    return loss, gw1, gb1, gw2, gb2


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos_mask = labels > 0.5
    n_pos = int(pos_mask.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[pos_mask].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def train(
    model: MlpModel,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    config: TrainConfig | None = None,
) -> tuple[MlpModel, TrainHistory]:
    """Minibatch Adam on binary cross-entropy with early stopping.

    Shuffling and dropout are seeded from the model's rng_seed, so identical
    inputs give an identical history.  Training stops after ``patience``
    epochs without a validation-loss improvement and the best-validation
    weights are returned, with the internal input standardization folded in.
    """
    config = config or TrainConfig()
    config.validate()
    x_train, y_train = (np.asarray(a, dtype=float) for a in train_set)
    x_val, y_val = (np.asarray(a, dtype=float) for a in val_set)
    if len(x_train) == 0 or len(x_val) == 0:
        raise TrainingError("train and validation sets must be non-empty")
    classes = set(np.unique(y_train))
    if classes != {0.0, 1.0}:
        raise TrainingError("training set must contain both classes")

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    xs_train = (x_train - mean) / std
    xs_val = (x_val - mean) / std

    work = model.copy()
    dropout_rng = np.random.default_rng(derive_seed(model.rng_seed, "dropout"))

    params = [work.w1, work.b1, work.w2]
    moments1 = [np.zeros_like(p) for p in params] + [0.0]
    moments2 = [np.zeros_like(p) for p in params] + [0.0]
    step = 0

    history = TrainHistory()
    best_val = np.inf
    best_weights = work.copy()
    best_epoch = 0
    epochs_without_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        shuffle_rng = np.random.default_rng(
            derive_seed(model.rng_seed, "shuffle", epoch))
        order = shuffle_rng.permutation(len(xs_train))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            xb, yb = xs_train[batch], y_train[batch]
            if work.dropout_rate > 0.0:
                mask = (dropout_rng.random((len(batch), work.hidden_dim))
                        >= work.dropout_rate).astype(float)
            else:
                mask = None
            loss, gw1, gb1, gw2, gb2 = _loss_and_grads(work, xb, yb, mask)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged at epoch {epoch} (non-finite loss)")
            step += 1
            grads = [gw1, gb1, gw2, gb2]
            values = [work.w1, work.b1, work.w2, work.b2]
            new_values = []
            for i, (value, grad) in enumerate(zip(values, grads)):
                moments1[i] = config.beta1 * moments1[i] + (1 - config.beta1) * grad
                moments2[i] = (config.beta2 * moments2[i]
                               + (1 - config.beta2) * np.square(grad))
                m_hat = moments1[i] / (1 - config.beta1 ** step)
                v_hat = moments2[i] / (1 - config.beta2 ** step)
                new_values.append(
                    value - config.learning_rate * m_hat
                    / (np.sqrt(v_hat) + config.epsilon))
            work.w1, work.b1, work.w2 = new_values[0], new_values[1], new_values[2]
            work.b2 = float(new_values[3])

        train_logits = (np.maximum(xs_train @ work.w1.T + work.b1, 0.0)
                        @ work.w2 + work.b2)
        val_logits = (np.maximum(xs_val @ work.w1.T + work.b1, 0.0)
                      @ work.w2 + work.b2)
        epoch_train_loss = _bce_from_logits(train_logits, y_train)
        epoch_val_loss = _bce_from_logits(val_logits, y_val)
        if not (np.isfinite(epoch_train_loss) and np.isfinite(epoch_val_loss)):
            raise TrainingError(
                f"training diverged at epoch {epoch} (non-finite loss)")
        history.train_loss.append(epoch_train_loss)
        history.val_loss.append(epoch_val_loss)
        history.val_auc.append(_rank_auc(_sigmoid(val_logits), y_val))
        history.stopped_epoch = epoch

        if epoch_val_loss < best_val:
            best_val = epoch_val_loss
            best_weights = work.copy()
            best_epoch = epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                logger.info("early stop at epoch %d (best epoch %d)",
                            epoch, best_epoch)
                break

    history.best_epoch = best_epoch
    final = best_weights
    # fold x' = (x - mean) / std into the first layer
    final.w1 = final.w1 / std
    final.b1 = final.b1 - final.w1 @ mean
    return final, history


def check_gradients(model: MlpModel, x: np.ndarray, y: float,
                    step: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Dropout is disabled.  Where both gradients are tiny (below 1e-8) the
    comparison falls back to the absolute difference, which keeps stationary
    points well-defined.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y_arr = np.array([float(y)])
    _, gw1, gb1, gw2, gb2 = _loss_and_grads(model, x, y_arr, None)
    analytic = np.concatenate(
        [gw1.ravel(), gb1.ravel(), gw2.ravel(), [gb2]])

    flat = np.concatenate(
        [model.w1.ravel(), model.b1.ravel(), model.w2.ravel(), [model.b2]])

    def loss_at(theta: np.ndarray) -> float:
        n1 = model.hidden_dim * model.input_dim
        n2 = n1 + model.hidden_dim
        n3 = n2 + model.hidden_dim
        probe = model.copy()
        probe.w1 = theta[:n1].reshape(model.hidden_dim, model.input_dim)
        probe.b1 = theta[n1:n2]
        probe.w2 = theta[n2:n3]
        probe.b2 = float(theta[n3])
        loss, *_ = _loss_and_grads(probe, x, y_arr, None)
        return loss

    worst = 0.0
    for i in range(len(flat)):
        bumped = flat.copy()
        bumped[i] += step
        up = loss_at(bumped)
        bumped[i] -= 2 * step
        down = loss_at(bumped)
        numeric = (up - down) / (2 * step)
        scale = max(abs(analytic[i]), abs(numeric))
        if scale < 1e-8:
            error = abs(analytic[i] - numeric)
        else:
            error = abs(analytic[i] - numeric) / scale
        worst = max(worst, error)
    return worst


def random_baseline(instances: Sequence, seed: int = 0) -> np.ndarray:
    """Seeded uniform(0, 1) score per instance; the chance-level reference."""
    rng = np.random.default_rng(seed)
    return rng.random(len(instances))


# ---------------------------------------------------------------------------
# Checkpoints


def _encode_array(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(data.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(payload["shape"]).copy()


def save_checkpoint(model: MlpModel, fh: IO[str],
                    columns: Sequence[str] | None = None,
                    threshold: float = 0.5) -> None:
    """Write the model as JSON with base64 little-endian float64 weights."""
    json.dump({
        "format": "branchcast-mlp",
        "version": 1,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "dropout_rate": model.dropout_rate,
        "rng_seed": model.rng_seed,
        "threshold": threshold,
        "columns": list(columns) if columns is not None else None,
        "w1": _encode_array(model.w1),
        "b1": _encode_array(model.b1),
        "w2": _encode_array(model.w2),
        "b2": model.b2,
    }, fh, indent=2, sort_keys=True)
    fh.write("\n")


def load_checkpoint(fh: IO[str]) -> tuple[MlpModel, dict]:
    """Load a checkpoint; returns the model and its metadata dict."""
    payload = json.load(fh)
    if payload.get("format") != "branchcast-mlp":
        raise ValueError("not a classifier checkpoint")
    model = MlpModel(
        input_dim=int(payload["input_dim"]),
        hidden_dim=int(payload["hidden_dim"]),
        w1=_decode_array(payload["w1"]),
        b1=_decode_array(payload["b1"]),
        w2=_decode_array(payload["w2"]).reshape(-1),
        b2=float(payload["b2"]),
        dropout_rate=float(payload["dropout_rate"]),
        rng_seed=int(payload["rng_seed"]),
    )
    meta = {
        "columns": payload.get("columns"),
        "threshold": payload.get("threshold", 0.5),
    }
    return model, meta
