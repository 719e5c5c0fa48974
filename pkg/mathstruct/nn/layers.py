"""
Forward/backward pairs for the encoder building blocks. Each forward returns
its output and a cache; the matching backward takes the upstream gradient
and the cache and returns the input gradient plus parameter gradients.
"""

import math
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import softmax

LN_EPS = 1e-12
MASK_FILL = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return x @ w + b, x


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma)


def layer_norm_backward(dy: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, gamma = cache
    n = xhat.shape[-1]
    dxhat = dy * gamma
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    dgamma = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbeta = dy.reshape(-1, n).sum(axis=0)
    return dx, dgamma, dbeta


def gelu_forward(x: np.ndarray):
    # tanh approximation
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy: np.ndarray, cache) -> np.ndarray:
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du)


def dropout_forward(x: np.ndarray, rate: float, rng: Optional[np.random.Generator]):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy: np.ndarray, keep: Optional[np.ndarray]) -> np.ndarray:
    return dy if keep is None else dy * keep


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, l, h = x.shape
    return x.reshape(b, l, heads, h // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, nh, l, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, nh * d)


def attention_forward(x: np.ndarray, mask: np.ndarray, p: Dict[str, np.ndarray], heads: int):
    """
    Multi-head self-attention over (B, L, H) with a boolean (B, L, L) mask.

    Closed entries get an additive fill before the softmax and are then
    multiplied by zero, so their weight is exactly 0 (fully closed rows,
    i.e. padding, come out all zero).
    """
    q, xq = linear_forward(x, p["wq"], p["bq"])
    k, _ = linear_forward(x, p["wk"], p["bk"])
    v, _ = linear_forward(x, p["wv"], p["bv"])
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    open_ = mask[:, None, :, :]
    scores = qh @ kh.transpose(0, 1, 3, 2) * scale
    scores = np.where(open_, scores, scores + MASK_FILL)
    probs = softmax(scores, axis=-1)
    weights = probs * open_
    ctx = _merge_heads(weights @ vh)
    out, xc = linear_forward(ctx, p["wo"], p["bo"])
    cache = dict(x=xq, qh=qh, kh=kh, vh=vh, probs=probs, weights=weights,
                 open=open_, ctx=xc, scale=scale)
    return out, cache


def attention_backward(dout: np.ndarray, cache, p: Dict[str, np.ndarray]):
    grads: Dict[str, np.ndarray] = {}
    dctx, grads["wo"], grads["bo"] = linear_backward(dout, cache["ctx"], p["wo"])
    heads = cache["qh"].shape[1]
    dctx_h = _split_heads(dctx, heads)
    dweights = dctx_h @ cache["vh"].transpose(0, 1, 3, 2)
    dvh = cache["weights"].transpose(0, 1, 3, 2) @ dctx_h
    dprobs = dweights * cache["open"]
    probs = cache["probs"]
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores = dscores * cache["scale"]
    dqh = dscores @ cache["kh"]
    dkh = dscores.transpose(0, 1, 3, 2) @ cache["qh"]
    x = cache["x"]
    dx = np.zeros_like(x)
    for name, dh in (("q", dqh), ("k", dkh), ("v", dvh)):
        d_in, grads["w" + name], grads["b" + name] = linear_backward(_merge_heads(dh), x, p["w" + name])
        dx += d_in
    return dx, grads
