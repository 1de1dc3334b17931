"""Target attention over a padded history block.

Scores every history item against the target with a small MLP over
[target, item, target - item, target * item, side], softmax-normalizes over
the valid (unmasked) positions, and pools concat[item, side] by those
weights. Rows with an empty history pool to the zero vector.

Forward and backward are vectorized over (batch, position); padded positions
carry exactly zero weight and leak no gradient.
"""

from __future__ import annotations

import numpy as np

from .nn import Mlp

_NEG = -1e30


def att_input_dim(d: int, d_side: int) -> int:
    return 4 * d + d_side


def attention_forward(
    mlp: Mlp,
    target: np.ndarray,
    hist: np.ndarray,
    mask: np.ndarray,
    side: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, tuple]:
    """target (B,d), hist (B,R,d), mask (B,R) bool, side (B,R,ds) optional.

    Returns (pooled (B, d+ds), weights (B,R), cache).
    """
    b, r, d = hist.shape
    t_exp = np.broadcast_to(target[:, None, :], hist.shape)
    parts = [t_exp, hist, t_exp - hist, t_exp * hist]
    if side is not None:
        parts.append(side)
    att_in = np.concatenate(parts, axis=2)
    logits, mlp_cache = mlp.forward(att_in.reshape(b * r, -1))
    logits = logits.reshape(b, r)

    masked = np.where(mask, logits, _NEG)
    shifted = masked - masked.max(axis=1, keepdims=True)
    ex = np.exp(shifted) * mask
    denom = ex.sum(axis=1, keepdims=True)
    weights = ex / np.where(denom == 0.0, 1.0, denom)

    content = hist if side is None else np.concatenate([hist, side], axis=2)
    pooled = np.einsum("br,bre->be", weights, content)
    cache = (target, hist, side, mask, weights, content, mlp_cache)
    return pooled, weights, cache


def attention_backward(
    mlp: Mlp, cache: tuple, d_pooled: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, list]:
    """Returns (d_target, d_hist, d_side, mlp layer grads)."""
    target, hist, side, mask, weights, content, mlp_cache = cache
    b, r, d = hist.shape

    d_content = weights[:, :, None] * d_pooled[:, None, :]
    d_weights = np.einsum("bre,be->br", content, d_pooled)
    # softmax backward; masked positions have weight exactly 0, so they drop out
    row_dot = (weights * d_weights).sum(axis=1, keepdims=True)
    d_logits = weights * (d_weights - row_dot)

    d_att_in_flat, layer_grads = mlp.backward(mlp_cache, d_logits.reshape(b * r, 1))
    d_att_in = d_att_in_flat.reshape(b, r, -1)

    g_t = d_att_in[:, :, 0:d]
    g_h = d_att_in[:, :, d : 2 * d]
    g_diff = d_att_in[:, :, 2 * d : 3 * d]
    g_prod = d_att_in[:, :, 3 * d : 4 * d]
    t_exp = np.broadcast_to(target[:, None, :], hist.shape)

    d_target = (g_t + g_diff + g_prod * hist).sum(axis=1)
    d_hist = g_h - g_diff + g_prod * t_exp + d_content[:, :, :d]
    d_side = None
    if side is not None:
        d_side = d_att_in[:, :, 4 * d :] + d_content[:, :, d:]
    return d_target, d_hist, d_side, layer_grads
