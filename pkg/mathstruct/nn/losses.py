"""
Task heads and their losses. All losses are sums over the labels in the
batch (not means); a task without labels contributes exactly 0.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, Optional

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax

from .params import ParameterSet

if TYPE_CHECKING:
    from .encoder import ForwardTrace

TASKS = ("mlm", "ccp", "msp", "cls")


@dataclass
class HeadResult:
    loss: float
    correct: int
    total: int
    grads: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    d_hidden: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.total if self.total else None


@dataclass
class LossBreakdown:
    results: Dict[str, HeadResult]

    def __getitem__(self, task: str) -> float:
        r = self.results.get(task)
        return r.loss if r is not None else 0.0

    @property
    def tasks(self):
        return frozenset(self.results)

    @property
    def total(self) -> float:
        return loss_total(*(self[t] for t in TASKS))


def _bce(z: np.ndarray, target: np.ndarray) -> float:
    return float(-(target * log_expit(z) + (1.0 - target) * log_expit(-z)).sum())


def _empty(hidden: np.ndarray) -> HeadResult:
    return HeadResult(0.0, 0, 0, {}, np.zeros_like(hidden))


def mlm_head(trace: "ForwardTrace", params: ParameterSet) -> HeadResult:
    hidden, batch = trace.final, trace.batch
    if len(batch.mlm_targets) == 0:
        return _empty(hidden)
    rows, cols = batch.mlm_index[:, 0], batch.mlm_index[:, 1]
    h = hidden[rows, cols]
    w, b = params["mlm.w"], params["mlm.b"]
    logits = h @ w + b
    target = batch.mlm_targets
    logp = log_softmax(logits, axis=-1)
    loss = float(-logp[np.arange(len(target)), target].sum())
    dlogits = softmax(logits, axis=-1)
    dlogits[np.arange(len(target)), target] -= 1.0
    d_hidden = np.zeros_like(hidden)
    np.add.at(d_hidden, (rows, cols), dlogits @ w.T)
    grads = {"mlm.w": h.T @ dlogits, "mlm.b": dlogits.sum(axis=0)}
    correct = int((logits.argmax(axis=-1) == target).sum())
    return HeadResult(loss, correct, len(target), grads, d_hidden)


def ccp_head(trace: "ForwardTrace", params: ParameterSet) -> HeadResult:
    hidden, batch = trace.final, trace.batch
    if len(batch.ccp_targets) == 0:
        return _empty(hidden)
    rows = batch.ccp_index
    h = hidden[rows, 0]
    w, b = params["ccp.w"], params["ccp.b"]
    z = h @ w + b[0]
    target = batch.ccp_targets
    dz = expit(z) - target
    d_hidden = np.zeros_like(hidden)
    np.add.at(d_hidden, (rows, np.zeros_like(rows)), np.outer(dz, w))
    grads = {"ccp.w": h.T @ dz, "ccp.b": np.array([dz.sum()])}
    correct = int(((z > 0).astype(float) == target).sum())
    return HeadResult(_bce(z, target), correct, len(target), grads, d_hidden)


def msp_head(trace: "ForwardTrace", params: ParameterSet) -> HeadResult:
    """Bilinear-style scorer: <Wa h_i + ba, Wb h_j + bb> -> P(edge)."""
    hidden, batch = trace.final, trace.batch
    if len(batch.msp_targets) == 0:
        return _empty(hidden)
    rows, ii, jj = batch.msp_index[:, 0], batch.msp_index[:, 1], batch.msp_index[:, 2]
    hi, hj = hidden[rows, ii], hidden[rows, jj]
    wa, ba, wb, bb = params["msp.wa"], params["msp.ba"], params["msp.wb"], params["msp.bb"]
    u = hi @ wa + ba
    v = hj @ wb + bb
    z = (u * v).sum(axis=-1)
    target = batch.msp_targets
    dz = (expit(z) - target)[:, None]
    du, dv = dz * v, dz * u
    d_hidden = np.zeros_like(hidden)
    np.add.at(d_hidden, (rows, ii), du @ wa.T)
    np.add.at(d_hidden, (rows, jj), dv @ wb.T)
    grads = {
        "msp.wa": hi.T @ du, "msp.ba": du.sum(axis=0),
        "msp.wb": hj.T @ dv, "msp.bb": dv.sum(axis=0),
    }
    correct = int(((z > 0).astype(float) == target).sum())
    return HeadResult(_bce(z, target), correct, len(target), grads, d_hidden)


def cls_head(trace: "ForwardTrace", params: ParameterSet) -> HeadResult:
    hidden, batch = trace.final, trace.batch
    if len(batch.cls_targets) == 0 or "cls.w" not in params:
        return _empty(hidden)
    rows = batch.cls_index
    h = hidden[rows, 0]
    w, b = params["cls.w"], params["cls.b"]
    logits = h @ w + b
    target = batch.cls_targets
    loss = float(-log_softmax(logits, axis=-1)[np.arange(len(target)), target].sum())
    dlogits = softmax(logits, axis=-1)
    dlogits[np.arange(len(target)), target] -= 1.0
    d_hidden = np.zeros_like(hidden)
    np.add.at(d_hidden, (rows, np.zeros_like(rows)), dlogits @ w.T)
    grads = {"cls.w": h.T @ dlogits, "cls.b": dlogits.sum(axis=0)}
    correct = int((logits.argmax(axis=-1) == target).sum())
    return HeadResult(loss, correct, len(target), grads, d_hidden)


_HEADS = {"mlm": mlm_head, "ccp": ccp_head, "msp": msp_head, "cls": cls_head}


def compute_losses(trace: "ForwardTrace", params: ParameterSet,
                   tasks: Iterable[str] = ("mlm", "ccp", "msp")) -> LossBreakdown:
    results = {}
    for task in tasks:
        if task not in _HEADS:
            raise ValueError(f"unknown task {task!r}")
        results[task] = _HEADS[task](trace, params)
    return LossBreakdown(results)


def loss_mlm(trace: "ForwardTrace", params: ParameterSet) -> float:
    return mlm_head(trace, params).loss


def loss_ccp(trace: "ForwardTrace", params: ParameterSet) -> float:
    return ccp_head(trace, params).loss


def loss_msp(trace: "ForwardTrace", params: ParameterSet) -> float:
    return msp_head(trace, params).loss


def loss_cls(trace: "ForwardTrace", params: ParameterSet) -> float:
    return cls_head(trace, params).loss


def loss_total(mlm: float = 0.0, ccp: float = 0.0, msp: float = 0.0, cls: float = 0.0) -> float:
    return float(mlm + ccp + msp + cls)
