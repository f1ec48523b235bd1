"""Cross-entropy SGD training over demonstration datasets, plus the binary
checkpoint format.

Training is a pure function of (dataset, configs, seed): the episode-level
validation split, the per-epoch shuffle and the gradient accumulation order
are all fixed, so reruns produce bit-identical checkpoints.
"""

import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np

from . import mixer
from .imaging import PipelineParams, model_input

MAGIC = b"RCKP"
VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in [0,1)")


@dataclass
class Checkpoint:
    config: mixer.MixerConfig
    pipeline: PipelineParams
    params: dict
    meta: dict = field(default_factory=dict)


def cross_entropy(logits, target):
    """-log softmax(logits)[target] via log-sum-exp; never logs a stored prob."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[-1]
    if not (0 <= target < n):
        raise ValueError(f"target {target} out of range [0,{n})")
    m = logits.max()
    return float(np.log(np.exp(logits - m).sum()) - (logits[target] - m))


def sgd_step(params, grads, lr):
    """Plain SGD update p <- p - lr*g, in place; returns params."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
        params[name] -= (lr * g).astype(params[name].dtype)
    return params


def _batch_loss_and_acc(params, inputs, labels, config, batch=256):
    total, correct = 0.0, 0
    for i in range(0, len(inputs), batch):
        logits, _ = mixer.forward(params, inputs[i:i + batch], config)
        lab = labels[i:i + batch]
        m = logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
        total += float((lse - logits[np.arange(len(lab)), lab]).sum())
        correct += int((logits.argmax(axis=1) == lab).sum())
    return total / len(inputs), correct / len(inputs)


def prepare_arrays(episodes, pipeline):
    """Preprocess every frame once; returns per-episode (inputs, labels)."""
    out = []
    for ep in episodes:
        inputs = np.stack([model_input(s.frame, pipeline).astype(np.float32)
                           for s in ep.steps])
        labels = np.array([s.action for s in ep.steps], dtype=np.int64)
        out.append((inputs, labels))
    return out


def split_episodes(n_episodes, val_fraction, seed):
    """Deterministic episode-level train/val split."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_episodes)
    n_val = int(round(n_episodes * val_fraction))
    if val_fraction > 0 and n_val == 0 and n_episodes > 1:
        n_val = 1
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(episodes, mixer_config, train_config, pipeline=PipelineParams(),
          log=None):
    """Train a fresh model on the episodes; returns (Checkpoint, history).

    History is one dict per epoch: train_loss, val_loss, val_acc.  Validation
    splits whole episodes so temporally adjacent near-duplicate frames never
    straddle the split.
    """
    if not episodes:
        raise ValueError("cannot train on an empty dataset")
    arrays = prepare_arrays(episodes, pipeline)
    tr_idx, va_idx = split_episodes(len(arrays), train_config.val_fraction,
                                    train_config.seed)
    tr_x = np.concatenate([arrays[i][0] for i in tr_idx])
    tr_y = np.concatenate([arrays[i][1] for i in tr_idx])
    if len(va_idx):
        va_x = np.concatenate([arrays[i][0] for i in va_idx])
        va_y = np.concatenate([arrays[i][1] for i in va_idx])
    else:
        va_x, va_y = tr_x[:0], tr_y[:0]

    params = mixer.init_params(mixer_config, train_config.seed)
    rng = np.random.default_rng(train_config.seed + 1)
    history = []
    for epoch in range(train_config.epochs):
        order = (rng.permutation(len(tr_x)) if train_config.shuffle
                 else np.arange(len(tr_x)))
        losses = []
        for i in range(0, len(order), train_config.batch_size):
            idx = order[i:i + train_config.batch_size]
            logits, tape = mixer.forward(params, tr_x[idx], mixer_config)
            if not np.isfinite(logits).all():
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} batch {i}")
            grads = mixer.backward(params, tape, tr_y[idx])
            sgd_step(params, grads, train_config.learning_rate)
            m = logits.max(axis=1, keepdims=True)
            lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
            losses.append(float((lse - logits[np.arange(len(idx)), tr_y[idx]]).mean()))
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if len(va_x):
            vl, va = _batch_loss_and_acc(params, va_x, va_y, mixer_config)
            rec.update(val_loss=vl, val_acc=va)
        history.append(rec)
        if log is not None:
            log(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in rec.items()))
    meta = {
        "seed": train_config.seed,
        "epochs": train_config.epochs,
        "learning_rate": train_config.learning_rate,
        "batch_size": train_config.batch_size,
        "final": history[-1] if history else {},
    }
    return Checkpoint(mixer_config, pipeline, params, meta), history


def evaluate(checkpoint, episodes):
    """Accuracy, mean loss and 5x5 confusion matrix over the episodes."""
    arrays = prepare_arrays(episodes, checkpoint.pipeline)
    cfg = checkpoint.config
    n = cfg.num_classes
    confusion = np.zeros((n, n), dtype=np.int64)
    total_loss, total, correct = 0.0, 0, 0
    for inputs, labels in arrays:
        for i in range(0, len(inputs), 256):
            logits, _ = mixer.forward(checkpoint.params, inputs[i:i + 256], cfg)
            lab = labels[i:i + 256]
            pred = logits.argmax(axis=1)
            for t, p in zip(lab, pred):
                confusion[t, p] += 1
            m = logits.max(axis=1, keepdims=True)
            lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
            total_loss += float((lse - logits[np.arange(len(lab)), lab]).sum())
            total += len(lab)
            correct += int((pred == lab).sum())
    return {
        "accuracy": correct / total,
        "mean_loss": total_loss / total,
        "confusion": confusion,
        "count": total,
    }


def save_checkpoint(checkpoint, path):
    """magic RCKP | u32 version | u32 header len | sorted-key JSON header |
    float32 LE tensors in param_order."""
    header = json.dumps({
        "config": checkpoint.config.to_dict(),
        "pipeline": checkpoint.pipeline.to_dict(),
        "meta": checkpoint.meta,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for name, shape in mixer.param_order(checkpoint.config):
            arr = np.ascontiguousarray(checkpoint.params[name],
                                       dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, want {shape}")
            f.write(arr.astype("<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError("bad checkpoint magic")
    if len(data) < 12:
        raise ValueError("truncated checkpoint header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if len(data) < 12 + hlen:
        raise ValueError("truncated checkpoint header")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    config = mixer.MixerConfig.from_dict(header["config"])
    pipeline = PipelineParams.from_dict(header["pipeline"])
    payload = data[12 + hlen:]
    expect = mixer.count_params(config) * 4
    if len(payload) != expect:
        raise ValueError(f"corrupt checkpoint: payload {len(payload)} bytes, "
                         f"expected {expect}")
    params = {}
    off = 0
    for name, shape in mixer.param_order(config):
        n = int(np.prod(shape)) * 4
        params[name] = np.frombuffer(payload[off:off + n],
                                     dtype="<f4").reshape(shape).copy()
        off += n
    return Checkpoint(config, pipeline, params, header.get("meta", {}))
