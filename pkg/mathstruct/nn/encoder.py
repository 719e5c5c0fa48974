"""
Post-LN transformer encoder over padded batches, forward and backward.

Embedding = token + segment + position. Each layer applies masked
multi-head attention and a GELU feed-forward block, both with a residual
connection followed by layer norm.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..errors import NonFiniteError, ShapeError
from ..inputs.assembly import collate
from ..inputs.types import Batch, ModelInput
from . import layers as L
from .config import ModelConfig
from .losses import LossBreakdown
from .params import GradientSet, ParameterSet


@dataclass
class ForwardTrace:
    batch: Batch
    cfg: ModelConfig
    hidden_states: List[np.ndarray]       # layers + 1 entries, (B, L, H) each
    attention: List[np.ndarray]           # per layer, (B, heads, L, L)
    train_mode: bool = False
    caches: List[Dict[str, Any]] = field(default_factory=list, repr=False)
    embed_dropout: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.hidden_states[-1]


def _layer_params(params: ParameterSet, l: int, group: str) -> Dict[str, np.ndarray]:
    prefix = f"layer{l}.{group}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _check_batch(batch: Batch, cfg: ModelConfig) -> None:
    if batch.seq_len > cfg.max_len:
        raise ShapeError(f"sequence length {batch.seq_len} exceeds max_len={cfg.max_len}")
    if batch.mask.shape != (batch.size, batch.seq_len, batch.seq_len):
        raise ShapeError(f"mask shape {batch.mask.shape} does not match ids {batch.ids.shape}")
    if batch.ids.size and (batch.ids.min() < 0 or batch.ids.max() >= cfg.vocab_size):
        raise ShapeError(f"token id outside [0, {cfg.vocab_size})")
    if batch.segments.size and batch.segments.max() >= cfg.segment_count:
        raise ShapeError(f"segment id outside [0, {cfg.segment_count})")
    if batch.positions.size and batch.positions.max() >= cfg.max_len:
        raise ShapeError(f"position outside [0, {cfg.max_len})")


def forward(batch: Union[Batch, ModelInput], params: ParameterSet, cfg: ModelConfig,
            train_mode: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardTrace:
    """
    Run the encoder. Dropout is active only with train_mode and an rng;
    without it forward is deterministic.
    """
    if isinstance(batch, ModelInput):
        batch = collate([batch])
    _check_batch(batch, cfg)
    drop_rng = rng if train_mode and cfg.dropout_rate > 0 else None
    rate = cfg.dropout_rate

    x = (params["embed.token"][batch.ids]
         + params["embed.segment"][batch.segments]
         + params["embed.position"][batch.positions])
    x, embed_keep = L.dropout_forward(x, rate, drop_rng)
    hidden = [x]
    attention, caches = [], []
    for l in range(cfg.layers):
        attn_p = _layer_params(params, l, "attn")
        ffn_p = _layer_params(params, l, "ffn")
        a, attn_cache = L.attention_forward(x, batch.mask, attn_p, cfg.heads)
        a, attn_keep = L.dropout_forward(a, rate, drop_rng)
        h1, ln1 = L.layer_norm_forward(x + a, params[f"layer{l}.ln1.gamma"], params[f"layer{l}.ln1.beta"])
        u, x_ffn = L.linear_forward(h1, ffn_p["w1"], ffn_p["b1"])
        g, gelu_cache = L.gelu_forward(u)
        f, g_in = L.linear_forward(g, ffn_p["w2"], ffn_p["b2"])
        f, ffn_keep = L.dropout_forward(f, rate, drop_rng)
        x, ln2 = L.layer_norm_forward(h1 + f, params[f"layer{l}.ln2.gamma"], params[f"layer{l}.ln2.beta"])
        hidden.append(x)
        attention.append(attn_cache["weights"])
        caches.append(dict(attn=attn_cache, attn_keep=attn_keep, ln1=ln1, x_ffn=x_ffn,
                           gelu=gelu_cache, g_in=g_in, ffn_keep=ffn_keep, ln2=ln2))
    if not np.isfinite(x).all():
        raise NonFiniteError("encoder produced non-finite hidden states")
    return ForwardTrace(batch=batch, cfg=cfg, hidden_states=hidden, attention=attention,
                        train_mode=train_mode, caches=caches, embed_dropout=embed_keep)


def backward(trace: ForwardTrace, losses: LossBreakdown, params: ParameterSet) -> GradientSet:
    """
    Gradient of losses.total w.r.t. every parameter; inactive heads get zeros.
    Raises NonFiniteError naming the first tensor whose gradient is not finite.
    """
    cfg, batch = trace.cfg, trace.batch
    grads = params.zeros_like()
    dx = np.zeros_like(trace.final)
    for result in losses.results.values():
        if result.d_hidden is not None:
            dx += result.d_hidden
        for name, g in result.grads.items():
            grads[name] = grads[name] + g

    for l in reversed(range(cfg.layers)):
        c = trace.caches[l]
        p = f"layer{l}."
        ffn_p = _layer_params(params, l, "ffn")
        d_sum2, dg2, db2 = L.layer_norm_backward(dx, c["ln2"])
        grads[p + "ln2.gamma"] += dg2
        grads[p + "ln2.beta"] += db2
        df = L.dropout_backward(d_sum2, c["ffn_keep"])
        dg, dw2, dbf2 = L.linear_backward(df, c["g_in"], ffn_p["w2"])
        du = L.gelu_backward(dg, c["gelu"])
        dh1_ffn, dw1, dbf1 = L.linear_backward(du, c["x_ffn"], ffn_p["w1"])
        grads[p + "ffn.w2"] += dw2
        grads[p + "ffn.b2"] += dbf2
        grads[p + "ffn.w1"] += dw1
        grads[p + "ffn.b1"] += dbf1
        dh1 = d_sum2 + dh1_ffn

        d_sum1, dg1, db1 = L.layer_norm_backward(dh1, c["ln1"])
        grads[p + "ln1.gamma"] += dg1
        grads[p + "ln1.beta"] += db1
        da = L.dropout_backward(d_sum1, c["attn_keep"])
        dx_attn, attn_grads = L.attention_backward(da, c["attn"], _layer_params(params, l, "attn"))
        for name, g in attn_grads.items():
            grads[p + "attn." + name] += g
        dx = d_sum1 + dx_attn

    dx = L.dropout_backward(dx, trace.embed_dropout)
    np.add.at(grads["embed.token"], batch.ids, dx)
    np.add.at(grads["embed.segment"], batch.segments, dx)
    np.add.at(grads["embed.position"], batch.positions, dx)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"gradient of {name} is not finite")
    return grads
