"""
Command-line entry point: `python -m app.main <command> [flags]`.

Every command writes a RunManifest next to its output; `replay` re-runs a
manifest and checks the outputs hash the same.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from threadpoolctl import threadpool_limits

from mathstruct.corpus.builder import build_dataset, read_topics
from mathstruct.corpus.extraction import tokenize_context
from mathstruct.corpus.vocab import Vocab, build_vocab
from mathstruct.errors import ArtifactIOError, ConfigError, DatasetFormatError, MathStructError
from mathstruct.evaluation.classification import eval_classify
from mathstruct.evaluation.demo import DEMO_ANCHOR, DEMO_FORMULAS, format_table, similarity_demo
from mathstruct.evaluation.embedding import POOLING, EncoderModel, embed_many
from mathstruct.evaluation.retrieval import DEFAULT_DEPTH, eval_retrieval, rerank
from mathstruct.evaluation.trec_io import (
    read_embeddings, read_qrels, read_run, write_embeddings, write_run,
)
from mathstruct.inputs.types import Ablation
from mathstruct.nn.checkpoint import load_checkpoint
from mathstruct.nn.config import ModelConfig
from mathstruct.observability.logger import configure_logging
from mathstruct.observability.metrics_exporter import MetricsExporter
from mathstruct.train.checkpoint_manager import FINAL_NAME
from mathstruct.train.config import TrainConfig
from mathstruct.train.trainer import (
    CLASSES_FILE, FINETUNE_LOG, TRAIN_LOG, finetune_classify, predict_classes, pretrain, read_classes,
)

from .config import build_configs, build_train_config, load_config_file, settings
from .models import ErrorLine, ReplayResult, RunManifest, file_digest, manifest_path

EXIT_OK, EXIT_ERROR = 0, 1

# (flag, config key, type, help)
MODEL_FLAGS = [
    ("--layers", "layers", int, "transformer layers"),
    ("--hidden", "hidden", int, "hidden size"),
    ("--heads", "heads", int, "attention heads"),
    ("--ffn-mult", "ffn_mult", int, "feed-forward width multiplier"),
    ("--max-len", "max_len", int, "maximum input length"),
    ("--dropout", "dropout_rate", float, "dropout rate"),
]
TRAIN_FLAGS = [
    ("--steps", "steps", int, "optimizer steps"),
    ("--batch-size", "batch_size", int, "pairs per step"),
    ("--lr", "learning_rate", float, "Adam learning rate"),
    ("--mlm-rate", "mlm_rate", float, "fraction of formula/context tokens masked"),
    ("--ccp-rate", "ccp_rate", float, "probability of swapping the context"),
    ("--msp-rate", "msp_rate", float, "fraction of tree nodes cut"),
    ("--checkpoint-every", "checkpoint_every", int, "steps between checkpoints, 0 = final only"),
    ("--log-every", "log_every", int, "steps between log lines"),
    ("--warmup-steps", "warmup_steps", int, "linear warmup steps"),
]


def _default(key: str) -> Any:
    fields = ModelConfig.model_fields if key in ModelConfig.model_fields else TrainConfig.model_fields
    value = fields[key].default
    return value.value if isinstance(value, Ablation) else value


def _add_config_flags(p: argparse.ArgumentParser, model: bool) -> None:
    p.add_argument("--config", help="flat key=value or YAML config file (default: none)")
    for flag, key, kind, text in (MODEL_FLAGS if model else []) + TRAIN_FLAGS:
        p.add_argument(flag, dest=key, type=kind, default=None, help=f"{text} (default: {_default(key)})")
    p.add_argument("--ablation", dest="ablation", choices=[a.value for a in Ablation], default=None,
                   help=f"input/task setting (default: {_default('ablation')})")
    p.add_argument("--msp-mask-node-id", dest="msp_mask_node_id", action="store_true", default=None,
                   help="also replace cut node ids by [MASK] (default: off)")
    p.add_argument("--seed", type=int, default=None, help=f"global seed (default: {settings.SEED})")
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS threads for the numeric kernels (default: {settings.THREADS})")


def _overrides(args: argparse.Namespace, model: bool) -> Dict[str, Any]:
    keys = [k for _, k, _, _ in (MODEL_FLAGS if model else []) + TRAIN_FLAGS]
    keys += ["ablation", "msp_mask_node_id"]
    values = {k: getattr(args, k) for k in keys}
    values["seed"] = args.seed
    return values


def _file_values(args: argparse.Namespace) -> Dict[str, Any]:
    values = load_config_file(args.config) if args.config else {}
    values.setdefault("seed", settings.SEED)
    return values


def _outputs_manifest(command: str, argv: Sequence[str], anchor: Path, outputs: Dict[str, str],
                      inputs: Dict[str, str], config: Optional[Dict[str, Any]] = None,
                      seed: int = 0) -> RunManifest:
    manifest = RunManifest(
        command=command, argv=list(argv), config=config or {}, inputs=inputs, outputs=outputs,
        digests={k: d for k, d in ((k, file_digest(p)) for k, p in outputs.items()) if d},
        seed=seed,
    )
    manifest.save(manifest_path(anchor))
    return manifest


def _expand_inputs(paths: Sequence[str]) -> List[Path]:
    out: List[Path] = []
    for p in map(Path, paths):
        out.extend(sorted(p.rglob("*.tex")) if p.is_dir() else [p])
    return out


def _blas_threads(args: argparse.Namespace):
    threads = settings.THREADS if args.threads is None else args.threads
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    return threadpool_limits(limits=threads, user_api="blas")


def _write_json(path: Path, payload: str) -> None:
    try:
        path.write_text(payload + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


# commands

def cmd_ingest(args, argv) -> RunManifest:
    topics = read_topics(args.topics) if args.topics else None
    summary = build_dataset(_expand_inputs(args.input), args.out, args.min_context,
                            threads=args.threads or settings.THREADS, topics=topics)
    summary_path = Path(str(args.out) + ".summary.json")
    _write_json(summary_path, summary.model_dump_json(indent=2))
    print(summary.model_dump_json())
    return _outputs_manifest("ingest", argv, Path(args.out), {"dataset": args.out, "summary": str(summary_path)},
                             {"input": ",".join(args.input), **({"topics": args.topics} if args.topics else {})},
                             {"min_context_chars": args.min_context})


def cmd_vocab(args, argv) -> RunManifest:
    vocab = build_vocab(args.dataset, args.min_freq)
    vocab.save(args.out)
    print(json.dumps({"size": len(vocab)}))
    return _outputs_manifest("vocab", argv, Path(args.out), {"vocab": args.out},
                             {"dataset": args.dataset}, {"min_freq": args.min_freq})


def cmd_pretrain(args, argv) -> RunManifest:
    vocab = Vocab.load(args.vocab)
    mcfg, tcfg = build_configs(_file_values(args), _overrides(args, model=True), vocab_size=len(vocab))
    out = Path(args.out)
    with _blas_threads(args):
        records = pretrain(args.dataset, vocab, mcfg, tcfg, out, metrics=MetricsExporter())
    print(records[-1].model_dump_json())
    return _outputs_manifest(
        "pretrain", argv, out,
        {"checkpoint": str(out / FINAL_NAME), "log": str(out / TRAIN_LOG)},
        {"dataset": args.dataset, "vocab": args.vocab},
        {**mcfg.model_dump(), **tcfg.model_dump(mode="json")}, tcfg.seed,
    )


def cmd_finetune(args, argv) -> RunManifest:
    vocab = Vocab.load(args.vocab)
    tcfg = build_train_config(_file_values(args), _overrides(args, model=False))
    out = Path(args.out)
    with _blas_threads(args):
        path, records = finetune_classify(args.dataset, args.checkpoint, args.classes, tcfg, vocab, out,
                                          metrics=MetricsExporter())
    print(records[-1].model_dump_json())
    return _outputs_manifest(
        "finetune", argv, out,
        {"checkpoint": str(path), "log": str(out / FINETUNE_LOG), "classes": str(out / CLASSES_FILE)},
        {"dataset": args.dataset, "vocab": args.vocab, "checkpoint": args.checkpoint},
        {**tcfg.model_dump(mode="json"), "classes": args.classes}, tcfg.seed,
    )


def _read_formula_list(path: str) -> List[tuple]:
    items = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if len(fields) not in (2, 3):
                    raise DatasetFormatError("expected `id<TAB>latex` or `id<TAB>latex<TAB>context`", number)
                if len(fields) == 3 and fields[2].strip():
                    items.append((fields[0], fields[1], tokenize_context(fields[2])))
                else:
                    items.append((fields[0], fields[1]))
    except OSError as e:
        raise ArtifactIOError(path, e.strerror or str(e)) from e
    return items


def cmd_embed(args, argv) -> RunManifest:
    model = EncoderModel.from_files(args.checkpoint, args.vocab)
    done, failed = embed_many(_read_formula_list(args.formulas), model, args.ablation, args.pool,
                              threads=args.threads or settings.THREADS)
    write_embeddings(done, args.out)
    print(json.dumps({"embedded": len(done), "failed": [{"id": i, "reason": r} for i, r in failed]}))
    return _outputs_manifest("embed", argv, Path(args.out), {"embeddings": args.out},
                             {"checkpoint": args.checkpoint, "vocab": args.vocab, "formulas": args.formulas},
                             {"ablation": args.ablation, "pool": args.pool})


def cmd_rank(args, argv) -> RunManifest:
    candidates = read_embeddings(args.candidates)
    queries = read_embeddings(args.queries)
    first_stage = {r.query_id: r.doc_ids for r in read_run(args.first_stage)} if args.first_stage else {}
    runs = []
    for q in queries:
        restrict = first_stage.get(q.id, []) if args.first_stage else None
        runs.append(rerank(q, candidates, restrict, depth=args.depth))
    write_run(runs, args.out)
    print(json.dumps({"queries": len(runs)}))
    inputs = {"candidates": args.candidates, "queries": args.queries}
    if args.first_stage:
        inputs["first_stage"] = args.first_stage
    return _outputs_manifest("rank", argv, Path(args.out), {"run": args.out}, inputs, {"depth": args.depth})


def cmd_eval_ir(args, argv) -> RunManifest:
    report = eval_retrieval(read_run(args.run), read_qrels(args.qrels))
    _write_json(Path(args.out), report.model_dump_json(indent=2))
    print(report.model_dump_json())
    return _outputs_manifest("eval-ir", argv, Path(args.out), {"report": args.out},
                             {"run": args.run, "qrels": args.qrels})


def _read_predictions(path: str) -> List[tuple]:
    pairs = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.split("\t")
                try:
                    pairs.append((int(parts[0]), int(parts[1])))
                except (IndexError, ValueError) as e:
                    raise DatasetFormatError("expected `gold<TAB>predicted` class indices", number) from e
    except OSError as e:
        raise ArtifactIOError(path, e.strerror or str(e)) from e
    return pairs


def cmd_eval_cls(args, argv) -> RunManifest:
    inputs: Dict[str, str] = {}
    if args.predictions:
        predictions = _read_predictions(args.predictions)
        classes = args.classes or (max(max(g, p) for g, p in predictions) + 1 if predictions else 0)
        inputs["predictions"] = args.predictions
    else:
        if not (args.checkpoint and args.vocab and args.dataset):
            raise MathStructError("either --predictions or --checkpoint, --vocab and --dataset are required")
        params, cfg = load_checkpoint(args.checkpoint)
        names_path = args.classes_file or str(Path(args.checkpoint).with_name(CLASSES_FILE))
        names = read_classes(names_path)
        predictions = predict_classes(args.dataset, params, cfg, Vocab.load(args.vocab), names,
                                      Ablation(args.ablation))
        classes = args.classes or cfg.num_classes
        inputs.update(checkpoint=args.checkpoint, vocab=args.vocab, dataset=args.dataset, classes=names_path)
    if classes < 1:
        raise MathStructError("no classes to evaluate")
    report = eval_classify(predictions, classes)
    _write_json(Path(args.out), report.model_dump_json(indent=2))
    print(report.model_dump_json())
    return _outputs_manifest("eval-cls", argv, Path(args.out), {"report": args.out}, inputs, {"classes": classes})


def cmd_demo(args, argv) -> RunManifest:
    model = EncoderModel.from_files(args.checkpoint, args.vocab)
    if args.formulas:
        try:
            others = [l.strip() for l in Path(args.formulas).read_text(encoding="utf-8").splitlines() if l.strip()]
        except OSError as e:
            raise ArtifactIOError(args.formulas, e.strerror or str(e)) from e
    else:
        others = list(DEMO_FORMULAS)
    table = format_table(similarity_demo(args.anchor, others, model, pool=args.pool))
    print(table)
    try:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(args.out, e.strerror or str(e)) from e
    inputs = {"checkpoint": args.checkpoint, "vocab": args.vocab}
    if args.formulas:
        inputs["formulas"] = args.formulas
    return _outputs_manifest("demo", argv, Path(args.out), {"table": args.out}, inputs,
                             {"anchor": args.anchor, "pool": args.pool})


def cmd_replay(args, argv) -> ReplayResult:
    before = RunManifest.load(args.manifest)
    status = main(before.argv)
    if status != EXIT_OK:
        raise MathStructError(f"replayed command exited with status {status}")
    after = RunManifest.load(args.manifest)
    mismatched = sorted(k for k in before.digests if before.digests[k] != after.digests.get(k))
    result = ReplayResult(command=before.command, reproduced=not mismatched, mismatched=mismatched)
    print(result.model_dump_json())
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mathstruct", description="structure-aware formula encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=text, description=text)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "extract formula-context pairs from LaTeX sources")
    p.add_argument("--input", nargs="+", required=True, help=".tex files or directories")
    p.add_argument("--out", required=True, help="dataset JSONL path")
    p.add_argument("--min-context", type=int, default=400, help="minimum context characters (default: 400)")
    p.add_argument("--topics", help="`<file name> <topic>` metadata file (default: none)")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default: {settings.THREADS})")

    p = add("vocab", cmd_vocab, "build the token vocabulary of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-freq", type=int, default=1, help="drop rarer tokens (default: 1)")

    p = add("pretrain", cmd_pretrain, "pre-train the encoder on MLM/CCP/MSP")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p, model=True)

    p = add("finetune", cmd_finetune, "fine-tune a topic classifier")
    p.add_argument("--dataset", required=True, help="dataset with topic labels")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True, help="pre-trained checkpoint")
    p.add_argument("--classes", type=int, required=True, help="number of classes")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p, model=False)

    p = add("embed", cmd_embed, "embed a list of formulas")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--formulas", required=True, help="TSV lines `id<TAB>latex`, optionally `<TAB>context text`")
    p.add_argument("--out", required=True, help="embedding JSONL path")
    p.add_argument("--ablation", choices=[a.value for a in Ablation], default="full",
                   help="layout for formulas with a context (default: full)")
    p.add_argument("--pool", choices=POOLING, default="mean2", help="(default: mean2)")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default: {settings.THREADS})")

    p = add("rank", cmd_rank, "rerank candidates by cosine similarity")
    p.add_argument("--queries", required=True, help="query embedding JSONL")
    p.add_argument("--candidates", required=True, help="candidate embedding JSONL")
    p.add_argument("--first-stage", help="run file restricting candidates per query (default: none)")
    p.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help=f"ranks kept (default: {DEFAULT_DEPTH})")
    p.add_argument("--out", required=True, help="run file path")

    p = add("eval-ir", cmd_eval_ir, "bpref at partial and full relevance")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="report JSON path")

    p = add("eval-cls", cmd_eval_cls, "macro precision/recall/F1")
    p.add_argument("--predictions", help="TSV lines `gold<TAB>predicted` (default: none)")
    p.add_argument("--checkpoint", help="fine-tuned checkpoint (default: none)")
    p.add_argument("--vocab", help="(default: none)")
    p.add_argument("--dataset", help="labelled dataset (default: none)")
    p.add_argument("--classes-file", help="class names (default: classes.json next to the checkpoint)")
    p.add_argument("--classes", type=int, default=None, help="number of classes (default: inferred)")
    p.add_argument("--ablation", choices=[a.value for a in Ablation], default="full", help="(default: full)")
    p.add_argument("--out", required=True, help="report JSON path")

    p = add("demo", cmd_demo, "rank look-alike formulas by similarity to an anchor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--anchor", default=DEMO_ANCHOR, help=f"(default: {DEMO_ANCHOR})")
    p.add_argument("--formulas", help="one formula per line (default: built-in list of 15)")
    p.add_argument("--pool", choices=POOLING, default="mean2", help="(default: mean2)")
    p.add_argument("--out", default="demo_table.txt", help="(default: demo_table.txt)")

    p = add("replay", cmd_replay, "re-run a command from its manifest and compare outputs")
    p.add_argument("manifest")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging(settings.LOG_LEVEL, settings.LOG_FILE)
    args = build_parser().parse_args(argv)  # usage errors exit 2
    try:
        args.func(args, argv)
    except (MathStructError, OSError, ValueError) as e:
        sys.stderr.write(ErrorLine(error=type(e).__name__, message=str(e)).model_dump_json() + "\n")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
