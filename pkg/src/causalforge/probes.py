"""Explanation probes: Grad-CAM on the last attention block and the
cause-precedence (temporal reversal) check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ValidationError
from .estimator import Checkpoint, forward_logit


@dataclass
class SaliencyMap:
    values: np.ndarray          # length L, in [0, 1] (all zeros if constant)
    confidence: float
    i: int = -1
    j: int = -1
    m: int = -1
    degenerate: bool = False


def grad_cam(ckpt: Checkpoint, X: np.ndarray, meta=None) -> SaliencyMap:
    """Saliency over the input from the last block's attention output.

    Channel weights are token-mean gradients of the pre-sigmoid logit;
    the rectified weighted channel sum per token (class token dropped) is
    linearly interpolated to input length and min-max normalized.
    """
    cfg = ckpt.est_cfg
    if X.shape != (cfg.L, 2):
        raise ValidationError(f"input shape {X.shape} does not match config")
    cache: dict = {}
    for t in ckpt.weights.values():
        t.zero_grad()
    logit = forward_logit(ckpt.weights, X[None, ...], cfg, cache=cache)
    confidence = float(1.0 / (1.0 + np.exp(-logit.data[0])))
    acts: Tensor = cache[f"block{cfg.depth - 1}.attn_out"]
    acts.requires_grad = True
    logit.backward()
    grads = acts.grad[0]                    # (T, C)
    activations = acts.data[0]

    channel_w = grads.mean(axis=0)          # token-mean gradient per channel
    cam = np.maximum(activations @ channel_w, 0.0)[1:]   # drop class token
    span = cam.max() - cam.min()
    if span <= 0.0:
        return SaliencyMap(values=np.zeros(cfg.L), confidence=confidence,
                           degenerate=True,
                           **_meta_kwargs(meta))
    cam = (cam - cam.min()) / span
    # Window w covers timesteps [w*W, (w+1)*W); interpolate window centers.
    centers = (np.arange(cfg.n_windows) + 0.5) * cfg.W
    values = np.interp(np.arange(cfg.L), centers, cam)
    span = values.max() - values.min()
    values = (values - values.min()) / span if span > 0 else np.zeros(cfg.L)
    return SaliencyMap(values=values, confidence=confidence,
                       **_meta_kwargs(meta))


def _meta_kwargs(meta) -> dict:
    if meta is None:
        return {}
    return {"i": meta.i, "j": meta.j, "m": meta.m}


def shift_effect_backward(X: np.ndarray, shift: int) -> np.ndarray:
    """Move the effect column earlier by `shift` steps (boundary replication)."""
    L = X.shape[0]
    if shift >= L:
        raise ValidationError("shift must be below L")
    out = X.copy()
    if shift > 0:
        out[:L - shift, 1] = X[shift:, 1]
        out[L - shift:, 1] = X[-1, 1]
    return out


def temporal_reversal_probe(ckpt: Checkpoint, X: np.ndarray,
                            shift: int = 30) -> dict[str, float]:
    """Confidence before and after making the effect precede the cause."""
    from .estimator import forward

    p_original = float(forward(ckpt.weights, X, ckpt.est_cfg)[0])
    p_shifted = float(forward(ckpt.weights, shift_effect_backward(X, shift),
                              ckpt.est_cfg)[0])
    return {"p_original": p_original, "p_shifted": p_shifted}
