"""
Joint pre-training (MLM + CCP + MSP, per ablation) and topic fine-tuning.

All randomness comes from TrainConfig.seed through derive_rng: the epoch
shuffle, each batch slot's task sampling and dropout use separate streams,
so a run is reproducible from its configs alone.
"""

import dataclasses
import json
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..corpus.dataset import FormulaContextPair, read_dataset
from ..corpus.vocab import Vocab
from ..errors import ArtifactIOError, ConfigError, EmptyDataset, MissingLabel, NonFiniteError
from ..inputs.assembly import assemble, collate
from ..inputs.sampling import derive_rng, sample_ccp, sample_mlm, sample_msp
from ..inputs.types import Ablation, ModelInput
from ..nn.checkpoint import load_checkpoint
from ..nn.config import ModelConfig
from ..nn.encoder import backward, forward
from ..nn.losses import LossBreakdown, compute_losses
from ..nn.params import ParameterSet, add_classifier, init_params
from ..observability.metrics_exporter import MetricsExporter
from ..observability.telemetry_collector import TelemetryCollector
from .checkpoint_manager import CheckpointManager
from .config import TrainConfig
from .optimizer import Adam
from .records import TrainRecord

# stream tags for derive_rng
_SHUFFLE, _SLOT, _DROPOUT = 1, 2, 3

TRAIN_LOG = "train_log.jsonl"
FINETUNE_LOG = "finetune_log.jsonl"
METRICS_FILE = "metrics.prom"
CLASSES_FILE = "classes.json"

DatasetLike = Union[str, Path, Sequence[FormulaContextPair]]


class EpochSampler:
    """Sequential epochs over a seeded permutation; batches may span an epoch boundary."""

    def __init__(self, size: int, batch_size: int, seed: int):
        self.size = size
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = -1
        self.order = np.empty(0, dtype=np.int64)
        self.cursor = 0

    def _next_epoch(self) -> None:
        self.epoch += 1
        self.order = derive_rng(self.seed, _SHUFFLE, self.epoch).permutation(self.size)
        self.cursor = 0

    def next_batch(self) -> List[int]:
        out = []
        while len(out) < self.batch_size:
            if self.cursor >= len(self.order):
                self._next_epoch()
            out.append(int(self.order[self.cursor]))
            self.cursor += 1
        return out


def _load_pairs(dataset: DatasetLike) -> List[FormulaContextPair]:
    if isinstance(dataset, (str, Path)):
        return read_dataset(dataset)
    return list(dataset)


def _fits(pair: FormulaContextPair, max_len: int) -> bool:
    return len(pair.formula_tokens) + 2 <= max_len


def _fitting_pairs(pairs: List[FormulaContextPair], max_len: int,
                   telemetry: TelemetryCollector) -> List[FormulaContextPair]:
    kept = [p for p in pairs if _fits(p, max_len)]
    if len(kept) < len(pairs):
        telemetry.warn("pairs_too_long", {"dropped": len(pairs) - len(kept), "max_len": max_len})
    if not kept:
        raise EmptyDataset("no pair fits the configured max_len")
    return kept


def make_pretrain_input(pairs: Sequence[FormulaContextPair], index: int, vocab: Vocab,
                        max_len: int, tcfg: TrainConfig, rng: np.random.Generator) -> ModelInput:
    """sample_ccp -> assemble -> sample_mlm -> sample_msp, for one pair."""
    tasks = tcfg.ablation.pretrain_tasks
    pair = pairs[index]
    ccp_label = None
    if "ccp" in tasks:
        pair, ccp_label = sample_ccp(pair, pairs, rng, tcfg.ccp_rate, self_index=index)
    x = assemble(pair, vocab, max_len, tcfg.ablation)
    x = dataclasses.replace(x, ccp_label=ccp_label)
    x = sample_mlm(x, rng, len(vocab), tcfg.mlm_rate)
    if "msp" in tasks and x.tree is not None:
        x = sample_msp(x, x.tree, rng, tcfg.msp_rate, tcfg.msp_mask_node_id)
    return x


def _record(step: int, losses: LossBreakdown) -> TrainRecord:
    def acc(task):
        r = losses.results.get(task)
        return r.accuracy if r is not None else None

    return TrainRecord(
        step=step,
        loss_total=losses.total,
        loss_mlm=losses["mlm"],
        loss_ccp=losses["ccp"],
        loss_msp=losses["msp"],
        loss_cls=losses["cls"],
        mlm_masked_accuracy=acc("mlm"),
        ccp_accuracy=acc("ccp"),
        msp_pair_accuracy=acc("msp"),
        cls_accuracy=acc("cls"),
    )


def _train_step(step: int, inputs: List[ModelInput], params: ParameterSet, cfg: ModelConfig,
                tcfg: TrainConfig, optimizer: Adam, tasks) -> LossBreakdown:
    batch = collate(inputs)
    trace = forward(batch, params, cfg, train_mode=True, rng=derive_rng(tcfg.seed, _DROPOUT, step))
    losses = compute_losses(trace, params, sorted(tasks))
    if not math.isfinite(losses.total):
        raise NonFiniteError("loss is not finite", step=step)
    try:
        grads = backward(trace, losses, params)
    except NonFiniteError as e:
        raise NonFiniteError(str(e), step=step) from e
    optimizer.step(params, grads, lr=tcfg.lr_at(step))
    if not params.all_finite():
        raise NonFiniteError("parameters left the finite range", step=step)
    return losses


def _open_log(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", encoding="utf-8", newline="\n")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def _write_metrics(metrics: MetricsExporter, out: Path) -> None:
    try:
        (out / METRICS_FILE).write_bytes(metrics.exposition())
    except OSError as e:
        raise ArtifactIOError(str(out / METRICS_FILE), e.strerror or str(e)) from e


def _run(phase: str, make_inputs, params: ParameterSet, cfg: ModelConfig, tcfg: TrainConfig,
         tasks, size: int, out: Path, log_name: str, metrics: MetricsExporter,
         telemetry: TelemetryCollector) -> List[TrainRecord]:
    manager = CheckpointManager(out)
    optimizer = Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps)
    sampler = EpochSampler(size, tcfg.batch_size, tcfg.seed)
    records: List[TrainRecord] = []
    with _open_log(out / log_name) as log:
        for step in range(1, tcfg.steps + 1):
            started = time.perf_counter()
            inputs = make_inputs(step, sampler.next_batch())
            try:
                losses = _train_step(step, inputs, params, cfg, tcfg, optimizer, tasks)
            except NonFiniteError as e:
                telemetry.warn("training_aborted", {"phase": phase, "step": step, "error": str(e)})
                raise
            record = _record(step, losses)
            records.append(record)
            metrics.record_step(phase, {t: losses[t] for t in tasks}, time.perf_counter() - started)
            if step % tcfg.log_every == 0 or step == tcfg.steps:
                log.write(record.model_dump_json() + "\n")
                telemetry.collect("step_logged", {"phase": phase, "step": step,
                                                  "loss_total": record.loss_total})
            if tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
                manager.save(params, cfg, step)
    manager.save(params, cfg)
    _write_metrics(metrics, out)
    return records


def pretrain(dataset: DatasetLike, vocab: Vocab, mcfg: ModelConfig, tcfg: TrainConfig,
             out: Union[str, Path], metrics: Optional[MetricsExporter] = None,
             params: Optional[ParameterSet] = None) -> List[TrainRecord]:
    """
    Pre-train from scratch (or from params) and write log, checkpoints and
    metrics under out. Returns one record per step.
    """
    telemetry = TelemetryCollector("train")
    metrics = metrics or MetricsExporter()
    pairs = _load_pairs(dataset)
    if not pairs:
        raise EmptyDataset("dataset holds no pairs")
    if mcfg.vocab_size != len(vocab):
        raise ConfigError(f"vocab_size={mcfg.vocab_size} but vocabulary has {len(vocab)} entries")
    pairs = _fitting_pairs(pairs, mcfg.max_len, telemetry)
    params = params.copy() if params is not None else init_params(mcfg, seed=tcfg.seed)
    tasks = tcfg.ablation.pretrain_tasks

    def make_inputs(step: int, indices: List[int]) -> List[ModelInput]:
        return [
            make_pretrain_input(pairs, i, vocab, mcfg.max_len, tcfg, derive_rng(tcfg.seed, _SLOT, step, slot))
            for slot, i in enumerate(indices)
        ]

    telemetry.collect("pretrain_started", {
        "pairs": len(pairs), "steps": tcfg.steps, "ablation": tcfg.ablation.value,
        "parameters": params.num_parameters(),
    })
    records = _run("pretrain", make_inputs, params, mcfg, tcfg, tasks, len(pairs),
                   Path(out), TRAIN_LOG, metrics, telemetry)
    telemetry.collect("pretrain_finished", {"steps": len(records), "loss_total": records[-1].loss_total})
    return records


def topic_classes(pairs: Sequence[FormulaContextPair], classes: int) -> List[str]:
    """Class index -> topic name, topics sorted by name."""
    missing = [i for i, p in enumerate(pairs) if p.topic_label is None]
    if missing:
        raise MissingLabel(f"{len(missing)} pairs have no topic label (first at index {missing[0]})")
    names = sorted({p.topic_label for p in pairs})
    if classes < 2:
        raise ConfigError(f"classes must be at least 2, got {classes}")
    if len(names) > classes:
        raise ConfigError(f"dataset has {len(names)} topics but classes={classes}")
    return names


def classification_input(pair: FormulaContextPair, vocab: Vocab, max_len: int,
                         ablation: Ablation, label: Optional[int] = None) -> ModelInput:
    x = assemble(pair, vocab, max_len, ablation)
    return dataclasses.replace(x, cls_label=label)


def finetune_classify(dataset: DatasetLike, checkpoint: Union[str, Path], classes: int,
                      tcfg: TrainConfig, vocab: Vocab, out: Union[str, Path],
                      metrics: Optional[MetricsExporter] = None) -> Tuple[Path, List[TrainRecord]]:
    """
    Fine-tune a pre-trained encoder for topic classification with a fresh
    zero-initialised softmax head on [CLS]. No pre-training tasks are sampled.
    """
    telemetry = TelemetryCollector("finetune")
    metrics = metrics or MetricsExporter()
    pairs = _load_pairs(dataset)
    if not pairs:
        raise EmptyDataset("dataset holds no pairs")
    names = topic_classes(pairs, classes)
    base, base_cfg = load_checkpoint(str(checkpoint))
    params, cfg = add_classifier(base, base_cfg, classes)
    pairs = _fitting_pairs(pairs, cfg.max_len, telemetry)
    index = {name: i for i, name in enumerate(names)}

    def make_inputs(step: int, indices: List[int]) -> List[ModelInput]:
        return [
            classification_input(pairs[i], vocab, cfg.max_len, tcfg.ablation, index[pairs[i].topic_label])
            for i in indices
        ]

    out = Path(out)
    telemetry.collect("finetune_started", {"pairs": len(pairs), "classes": classes, "steps": tcfg.steps})
    records = _run("finetune", make_inputs, params, cfg, tcfg, {"cls"}, len(pairs),
                   out, FINETUNE_LOG, metrics, telemetry)
    write_classes(names, out / CLASSES_FILE)
    return CheckpointManager(out).path_for(None), records


def write_classes(names: List[str], path: Union[str, Path]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(names, fh, ensure_ascii=False)
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def read_classes(path: Union[str, Path]) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return list(json.load(fh))
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def class_logits(inputs: List[ModelInput], params: ParameterSet, cfg: ModelConfig) -> np.ndarray:
    trace = forward(collate(inputs), params, cfg)
    return trace.final[:, 0] @ params["cls.w"] + params["cls.b"]


def predict_classes(dataset: DatasetLike, params: ParameterSet, cfg: ModelConfig, vocab: Vocab,
                    class_names: List[str], ablation: Ablation = Ablation.FULL,
                    batch_size: int = 32) -> List[Tuple[int, int]]:
    """(gold, predicted) class indices for every labelled pair that fits max_len."""
    if "cls.w" not in params:
        raise ConfigError("checkpoint has no classification head")
    index: Dict[str, int] = {name: i for i, name in enumerate(class_names)}
    pairs = [p for p in _load_pairs(dataset) if _fits(p, cfg.max_len)]
    for p in pairs:
        if p.topic_label not in index:
            raise MissingLabel(f"topic {p.topic_label!r} is not a known class")
    out: List[Tuple[int, int]] = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        inputs = [classification_input(p, vocab, cfg.max_len, Ablation(ablation)) for p in chunk]
        predicted = class_logits(inputs, params, cfg).argmax(axis=-1)
        out.extend((index[p.topic_label], int(k)) for p, k in zip(chunk, predicted))
    return out
