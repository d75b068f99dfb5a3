"""Learned pairwise causal estimator.

Windowed convolutional embedding of a stacked (cause, effect) sequence
pair, class token + learned positional embeddings, a pre-norm transformer
encoder, attention pooling and a sigmoid head.  Trained with focal loss by
reverse-mode differentiation (see autodiff), AdamW updates and a cosine
learning-rate schedule.
"""
from __future__ import annotations

import ctypes
import json
import math
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, parameter
from .errors import ConfigError, FormatError, ValidationError

CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1


@dataclass
class EstimatorConfig:
    L: int = 3840
    W: int = 32
    C: int = 64
    depth: int = 2
    heads: int = 2
    ff_hidden: int = 256
    pooler_hidden: int = 64

    def __post_init__(self):
        if self.L % self.W != 0:
            raise ConfigError("L must be divisible by W")
        if self.C % self.heads != 0:
            raise ConfigError("C must be divisible by heads")

    @property
    def n_windows(self) -> int:
        return self.L // self.W


@dataclass
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.05
    batch_size: int = 128
    n_epochs: int = 30
    focal_alpha: float = 0.7
    focal_gamma: float = 3.0
    shift_range: int | None = None     # default L // 3
    shift_quantum: int = 1             # e.g. one clock period in update steps
    cosine_schedule: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.shift_quantum < 1:
            raise ConfigError("shift quantum must be positive")
        if not 0 < self.focal_alpha < 1:
            raise ConfigError("focal alpha must lie in (0, 1)")
        if self.focal_gamma < 0:
            raise ConfigError("focal gamma must be non-negative")


def init_estimator(cfg: EstimatorConfig, seed: int = 0,
                   dtype=np.float32) -> dict[str, Tensor]:
    """Truncated-normal (std 0.02) projections, zero biases, zero output head."""
    rng = np.random.default_rng(seed)

    def trunc_normal(*shape):
        v = rng.normal(0.0, 0.02, size=shape)
        return np.clip(v, -0.04, 0.04).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    C, F, P = cfg.C, cfg.ff_hidden, cfg.pooler_hidden
    w: dict[str, Tensor] = {}
    w["embed_w"] = parameter(trunc_normal(cfg.W * 2, C))
    w["embed_b"] = parameter(zeros(C))
    w["class_token"] = parameter(trunc_normal(1, C))
    w["pos_emb"] = parameter(trunc_normal(cfg.n_windows + 1, C))
    for d in range(cfg.depth):
        w[f"block{d}.ln1_g"] = parameter(np.ones(C, dtype=dtype))
        w[f"block{d}.ln1_b"] = parameter(zeros(C))
        w[f"block{d}.qkv_w"] = parameter(trunc_normal(C, 3 * C))
        w[f"block{d}.qkv_b"] = parameter(zeros(3 * C))
        w[f"block{d}.out_w"] = parameter(trunc_normal(C, C))
        w[f"block{d}.out_b"] = parameter(zeros(C))
        w[f"block{d}.ln2_g"] = parameter(np.ones(C, dtype=dtype))
        w[f"block{d}.ln2_b"] = parameter(zeros(C))
        w[f"block{d}.ff1_w"] = parameter(trunc_normal(C, F))
        w[f"block{d}.ff1_b"] = parameter(zeros(F))
        w[f"block{d}.ff2_w"] = parameter(trunc_normal(F, C))
        w[f"block{d}.ff2_b"] = parameter(zeros(C))
    w["final_ln_g"] = parameter(np.ones(C, dtype=dtype))
    w["final_ln_b"] = parameter(zeros(C))
    w["pool1_w"] = parameter(trunc_normal(C, P))
    w["pool1_b"] = parameter(zeros(P))
    w["pool2_w"] = parameter(trunc_normal(P, 1))
    w["pool2_b"] = parameter(zeros(1))
    w["head_w"] = parameter(zeros(C, 1))      # zero head: p = 0.5 at init
    w["head_b"] = parameter(zeros(1))
    return w


def parameter_count(cfg: EstimatorConfig) -> int:
    return sum(int(np.prod(t.shape))
               for t in init_estimator(cfg, seed=0).values())


def _attention(x: Tensor, w: dict[str, Tensor], prefix: str, heads: int,
               cache: dict | None = None) -> Tensor:
    B, T, C = x.shape
    hd = C // heads
    qkv = x @ w[f"{prefix}.qkv_w"] + w[f"{prefix}.qkv_b"]
    q = qkv.slice((slice(None), slice(None), slice(0, C)))
    k = qkv.slice((slice(None), slice(None), slice(C, 2 * C)))
    v = qkv.slice((slice(None), slice(None), slice(2 * C, 3 * C)))

    def heads_view(t: Tensor) -> Tensor:
        return t.reshape(B, T, heads, hd).transpose(0, 2, 1, 3)

    q, k, v = heads_view(q), heads_view(k), heads_view(v)
    att = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
    att = att.softmax(axis=-1)
    if cache is not None:
        cache[f"{prefix}.attention_map"] = att
    out = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, C)
    return out @ w[f"{prefix}.out_w"] + w[f"{prefix}.out_b"]


def forward_logit(w: dict[str, Tensor], X: np.ndarray | Tensor,
                  cfg: EstimatorConfig,
                  cache: dict | None = None) -> Tensor:
    """Pre-sigmoid logit for a batch of pairs, X shape (B, L, 2)."""
    if not isinstance(X, Tensor):
        X = Tensor(np.asarray(X))
    if X.data.ndim == 2:
        X = X.reshape(1, *X.data.shape)
    B, L, two = X.shape
    if L != cfg.L or two != 2:
        raise ValidationError(f"input shape {X.shape} does not match config")
    if not np.all(np.isfinite(X.data)):
        raise ValidationError("non-finite input")
    N = cfg.n_windows

    tokens = X.reshape(B, N, cfg.W * 2) @ w["embed_w"] + w["embed_b"]
    cls = w["class_token"].reshape(1, 1, cfg.C) + Tensor(
        np.zeros((B, 1, 1), dtype=X.data.dtype))
    x = cls.concat(tokens, axis=1) + w["pos_emb"]

    for d in range(cfg.depth):
        a = _attention(x.layer_norm(w[f"block{d}.ln1_g"], w[f"block{d}.ln1_b"]),
                       w, f"block{d}", cfg.heads, cache=cache)
        x = x + a
        if cache is not None:
            cache[f"block{d}.attn_out"] = x
        h = x.layer_norm(w[f"block{d}.ln2_g"], w[f"block{d}.ln2_b"])
        h = (h @ w[f"block{d}.ff1_w"] + w[f"block{d}.ff1_b"]).gelu()
        x = x + (h @ w[f"block{d}.ff2_w"] + w[f"block{d}.ff2_b"])

    x = x.layer_norm(w["final_ln_g"], w["final_ln_b"])
    scores = ((x @ w["pool1_w"] + w["pool1_b"]).tanh()
              @ w["pool2_w"] + w["pool2_b"])        # (B, T, 1)
    att = scores.softmax(axis=1)
    if cache is not None:
        cache["pool_attention"] = att
    pooled = (x * att).sum(axis=1)                  # (B, C)
    logit = pooled @ w["head_w"] + w["head_b"]      # (B, 1)
    return logit.reshape(B)


def forward(w: dict[str, Tensor], X: np.ndarray, cfg: EstimatorConfig) -> np.ndarray:
    """Confidence p in (0, 1) per pair; shape (B,) (scalar inputs allowed)."""
    logit = forward_logit(w, X, cfg)
    return 1.0 / (1.0 + np.exp(-logit.data))


def focal_loss(p: float | np.ndarray | Tensor, label: int | np.ndarray,
               alpha: float = 0.7, gamma: float = 3.0):
    """Focal loss; label 1: -a(1-p)^g ln p, label 0: -(1-a)p^g ln(1-p)."""
    pv = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    if np.any(pv <= 0.0) or np.any(pv >= 1.0):
        raise ValidationError("p must lie strictly inside (0, 1)")
    y = np.asarray(label, dtype=np.float64)
    if isinstance(p, Tensor):
        one_m_p = 1.0 - p
        pos = (one_m_p ** gamma) * p.log() * (-alpha)
        neg = (p ** gamma) * one_m_p.log() * (-(1.0 - alpha))
        return pos * y + neg * (1.0 - y)
    pos = -alpha * (1.0 - pv) ** gamma * np.log(pv)
    neg = -(1.0 - alpha) * pv ** gamma * np.log(1.0 - pv)
    return y * pos + (1.0 - y) * neg


def focal_loss_from_logit(logit: Tensor, labels: np.ndarray, alpha: float,
                          gamma: float) -> Tensor:
    """Numerically stable focal loss on pre-sigmoid logits; returns the mean."""
    y = np.asarray(labels, dtype=logit.data.dtype)
    p = logit.sigmoid()
    log_p = logit.log_sigmoid()
    log_1mp = (-logit).log_sigmoid()
    pos = ((1.0 - p) ** gamma) * log_p * (-alpha)
    neg = (p ** gamma) * log_1mp * (-(1.0 - alpha))
    return (pos * y + neg * (1.0 - y)).mean()


def grad(w: dict[str, Tensor], X: np.ndarray, labels: np.ndarray,
         cfg: EstimatorConfig, alpha: float = 0.7,
         gamma: float = 3.0) -> tuple[float, dict[str, np.ndarray]]:
    """Exact reverse-mode gradients of the mean batch focal loss."""
    if len(labels) == 0:
        raise ValidationError("empty batch")
    for t in w.values():
        t.zero_grad()
    loss = focal_loss_from_logit(forward_logit(w, X, cfg), labels,
                                 alpha, gamma)
    loss.backward()
    grads = {}
    for name, t in w.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise ValidationError(f"non-finite gradient in {name}")
        grads[name] = g
    return float(loss.data), grads


def random_shift_augment(X: np.ndarray, shift: int) -> np.ndarray:
    """Shift both columns jointly by `shift`, replicating boundary values."""
    L = X.shape[0]
    if abs(shift) >= L:
        raise ValidationError("shift magnitude must be below L")
    if shift == 0:
        return X.copy()
    out = np.empty_like(X)
    if shift > 0:         # content moves later in time
        out[shift:] = X[:L - shift]
        out[:shift] = X[0]
    else:
        s = -shift
        out[:L - s] = X[s:]
        out[L - s:] = X[-1]
    return out


class AdamW:
    """Decoupled-weight-decay Adam (beta 0.9/0.999, eps 1e-8)."""

    def __init__(self, weights: dict[str, Tensor], lr: float,
                 weight_decay: float):
        self.weights = weights
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in weights.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for k, tensor in self.weights.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            update = lr * (mhat / (np.sqrt(vhat) + eps)
                           + self.weight_decay * tensor.data)
            tensor.data = (tensor.data - update).astype(tensor.data.dtype)


def cosine_lr(base_lr: float, epoch: int, n_epochs: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(n_epochs, 1)))


@dataclass
class Checkpoint:
    weights: dict[str, Tensor]
    est_cfg: EstimatorConfig
    train_cfg: TrainConfig
    epoch: int = 0
    val_metric: float = 0.0
    history: list[dict] = field(default_factory=list)


def _release_memory() -> None:
    """Hand freed allocator arenas back to the OS.

    Backward passes churn through hundreds of short-lived float64 buffers
    per batch; glibc retains the freed arenas, so long trainings otherwise
    grow to several GB of resident memory.  No-op off glibc.
    """
    try:
        ctypes.CDLL("libc.so.6").malloc_trim(0)
    except (OSError, AttributeError):
        pass


def train(train_samples, val_samples, train_cfg: TrainConfig,
          est_cfg: EstimatorConfig, log=None) -> Checkpoint:
    """Fit the estimator; returns the best-validation-AUPRC checkpoint.

    Augmentation (joint random shift) is re-drawn per sample per epoch;
    batch order is shuffled per epoch.  Divergence (non-finite loss)
    aborts and returns the last good checkpoint.
    """
    from .metrics import auprc     # local import: avoids a module cycle

    labels = np.array([s.label for s in train_samples], dtype=np.float64)
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValidationError("training set must contain both classes")
    X_all = np.stack([s.X for s in train_samples]).astype(np.float32)
    val_X = (np.stack([s.X for s in val_samples]).astype(np.float32)
             if val_samples else None)
    val_y = np.array([s.label for s in val_samples]) if val_samples else None

    shift_range = (est_cfg.L // 3 if train_cfg.shift_range is None
                   else train_cfg.shift_range)
    rng_shuffle = np.random.default_rng(np.random.SeedSequence(
        [train_cfg.seed, 1]))
    rng_aug = np.random.default_rng(np.random.SeedSequence(
        [train_cfg.seed, 2]))

    weights = init_estimator(est_cfg, seed=train_cfg.seed)
    opt = AdamW(weights, train_cfg.lr, train_cfg.weight_decay)
    best: Checkpoint | None = None
    history = []
    n = len(train_samples)
    for epoch in range(train_cfg.n_epochs):
        lr = (cosine_lr(train_cfg.lr, epoch, train_cfg.n_epochs)
              if train_cfg.cosine_schedule else train_cfg.lr)
        order = rng_shuffle.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            batch = np.empty((len(idx), est_cfg.L, 2), dtype=np.float32)
            for b, sample_idx in enumerate(idx):
                shift = (int(rng_aug.integers(-shift_range, shift_range + 1))
                         if shift_range > 0 else 0)
                # Quantizing (e.g. to whole clock periods) keeps augmented
                # samples phase-aligned with real recordings.
                q = train_cfg.shift_quantum
                shift = (abs(shift) // q) * q * (1 if shift >= 0 else -1)
                batch[b] = random_shift_augment(X_all[sample_idx], shift)
            try:
                loss, grads = grad(weights, batch, labels[idx], est_cfg,
                                   train_cfg.focal_alpha,
                                   train_cfg.focal_gamma)
            except ValidationError:
                if best is not None:
                    return best
                raise
            if not math.isfinite(loss):
                if best is not None:
                    return best
                raise ValidationError("training diverged before any checkpoint")
            opt.step(grads, lr=lr)
            epoch_loss += loss
            n_batches += 1

        _release_memory()
        entry = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1),
                 "lr": lr}
        if val_X is not None and np.any(val_y == 1):
            scores = predict(weights, val_X, est_cfg,
                             batch_size=train_cfg.batch_size)
            entry["val_auprc"] = auprc(scores, val_y)
        history.append(entry)
        if log:
            log(entry)
        metric = entry.get("val_auprc", -entry["loss"])
        if best is None or metric >= best.val_metric:
            best = Checkpoint(
                weights={k: parameter(t.data.copy())
                         for k, t in weights.items()},
                est_cfg=est_cfg, train_cfg=train_cfg, epoch=epoch,
                val_metric=metric, history=list(history))
    best.history = history
    return best


def predict(w: dict[str, Tensor], X: np.ndarray, cfg: EstimatorConfig,
            batch_size: int = 256) -> np.ndarray:
    """Batched inference; X shape (B, L, 2) -> confidences shape (B,)."""
    out = np.empty(X.shape[0], dtype=np.float64)
    for start in range(0, X.shape[0], batch_size):
        out[start:start + batch_size] = forward(
            w, X[start:start + batch_size], cfg)
    return out


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    meta = {
        "est_cfg": asdict(ckpt.est_cfg),
        "train_cfg": asdict(ckpt.train_cfg),
        "epoch": ckpt.epoch,
        "val_metric": ckpt.val_metric,
        "history": ckpt.history,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        for name in sorted(ckpt.weights):
            data = ckpt.weights[name].data.astype("<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path,
                    expect_cfg: EstimatorConfig | None = None) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        weights = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            payload = fh.read(int(np.prod(dims)) * 4)
            if len(payload) != int(np.prod(dims)) * 4:
                raise FormatError(f"{path}: truncated tensor {name}")
            weights[name] = parameter(
                np.frombuffer(payload, dtype="<f4").reshape(dims).copy())
    est_cfg = EstimatorConfig(**meta["est_cfg"])
    if expect_cfg is not None and est_cfg != expect_cfg:
        raise ConfigError("checkpoint config does not match expected config")
    ckpt = Checkpoint(weights=weights, est_cfg=est_cfg,
                      train_cfg=TrainConfig(**meta["train_cfg"]),
                      epoch=meta["epoch"], val_metric=meta["val_metric"],
                      history=meta.get("history", []))
    return ckpt
