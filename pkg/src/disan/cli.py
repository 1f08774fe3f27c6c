"""Command-line interface: ``disan {train,eval,encode,inspect,params}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
``DISAN_CHECKPOINT_DIR`` sets the default checkpoint directory for ``train``.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import VARIANTS, Model, ModelConfig, build_encoder, build_head, param_count
from .tensor import ShapeError
from .train import HyperParams, NumericError, accuracy, train_loop

log = logging.getLogger("disan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT_ENV = "DISAN_CHECKPOINT_DIR"
RUN_TASKS = ("nli", "classify", "synthetic-order")
METRIC_FIELDS = ("epoch", "train_acc", "dev_acc", "loss", "seconds")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    task: str = "nli"
    variant: str = "disan"
    embeddings: str | None = None
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    checkpoint_dir: str = "checkpoints"
    d_e: int | None = None
    num_classes: int = 2
    head_hidden: int = 300
    c: float = 5.0
    seed: int = 0
    hp_overrides: dict = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)

    @property
    def model_task(self):
        return "nli" if self.task == "nli" else "classify"


def _fmt(x):
    return "%.17g" % x


# ---------------------------------------------------------------- train


def _load_split(path, vocab, config, grow):
    if config.task == "nli":
        return data.load_snli_jsonl(path, vocab, grow=grow)
    return data.load_label_tsv(path, vocab, config.num_classes, grow=grow)


def _prepare_data(config, init_rng):
    """Return ``(vocab, embedding values, train, dev, test)``."""
    if config.task == "synthetic-order":
        syn = config.synthetic
        lengths = (syn["min_len"], syn["max_len"])
        train_s, train_y = data.gen_order_task(syn["train_count"], lengths, syn["vocab_size"], config.seed)
        test_s, test_y = data.gen_order_task(syn["test_count"], lengths, syn["vocab_size"], config.seed + 10_000)
        out = Path(config.checkpoint_dir)
        data.write_label_tsv(out / "train.tsv", train_s, train_y)
        data.write_label_tsv(out / "test.tsv", test_s, test_y)
        vocab = data.Vocabulary()
        train = data.index_sentences(train_s, train_y, vocab, grow=True)
        test = data.index_sentences(test_s, test_y, vocab)
        emb = data.empty_embeddings(config.d_e or 32, init_rng).extend(vocab, init_rng)
        return vocab, emb.values, train, test, test
    if not config.embeddings:
        raise UsageError(f"--embeddings is required for task {config.task}")
    if not config.train:
        raise UsageError(f"--train is required for task {config.task}")
    vocab, emb = data.load_embeddings(config.embeddings, config.d_e or 300, init_rng)
    train = _load_split(config.train, vocab, config, grow=True)
    dev = _load_split(config.dev, vocab, config, grow=False) if config.dev else None
    test = _load_split(config.test, vocab, config, grow=False) if config.test else None
    emb.extend(vocab, init_rng)
    return vocab, emb.values, train, dev, test


def cmd_train(config):
    out = Path(config.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    hp = HyperParams.for_task(config.model_task, seed=config.seed, **config.hp_overrides)
    init_rng = np.random.default_rng([hp.seed, 0])
    vocab, emb, train, dev, test = _prepare_data(config, init_rng)
    model_cfg = ModelConfig(
        task=config.model_task,
        variant=config.variant,
        d_e=emb.shape[0],
        d_h=hp.d_h,
        num_classes=3 if config.task == "nli" else config.num_classes,
        head_hidden=config.head_hidden,
        c=config.c,
    )
    model = Model.create(model_cfg, emb, init_rng)
    meta = {"run_task": config.task, "hyper": hp.to_dict()}
    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        csv.writer(fh).writerow(METRIC_FIELDS)

    def sink(tag, model, state, history):
        if tag == "initial":
            save_checkpoint(out / "initial.ckpt", model, vocab, state, meta)
            return
        if tag == "best":
            save_checkpoint(out / "best.ckpt", model, vocab, state, meta)
            return
        with open(metrics_path, "a", newline="") as fh:
            row = history[-1]
            csv.writer(fh).writerow([row["epoch"]] + [_fmt(row[k]) for k in METRIC_FIELDS[1:]])
        save_checkpoint(out / "last.ckpt", model, vocab, state, meta)

    history = train_loop(model, train, hp, sink, dev=dev)
    if history:
        print(f"final train accuracy {history[-1]['train_acc']:.4f}")
    if test is not None and len(test):
        print(f"test accuracy {accuracy(model, test):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- eval / encode / inspect


def _task_of(ckpt):
    return ckpt.meta.get("run_task", ckpt.model.config.task)


def cmd_eval(checkpoint, dataset):
    ckpt = load_checkpoint(checkpoint)
    cfg = ckpt.model.config
    if cfg.task == "nli":
        ds = data.load_snli_jsonl(dataset, ckpt.vocab)
    else:
        ds = data.load_label_tsv(dataset, ckpt.vocab, cfg.num_classes)
    if len(ds) == 0:
        raise data.DataError(f"{dataset}: no usable examples")
    acc = accuracy(ckpt.model, ds)
    print(f"{acc:.4f}")
    return acc


def encode_sentences(model, vocab, sentences):
    return [model.encode(vocab.lookup(data.tokenize(s))).value for s in sentences]


def cmd_encode(checkpoint, input_path, output_path):
    ckpt = load_checkpoint(checkpoint)
    with open(input_path, encoding="utf-8") as src, open(output_path, "w", encoding="utf-8") as dst:
        for lineno, line in enumerate(src, 1):
            tokens = data.tokenize(line)
            if not tokens:
                log.warning("%s:%d: empty line skipped", input_path, lineno)
                continue
            vec = ckpt.model.encode(ckpt.vocab.lookup(tokens)).value
            dst.write(" ".join(_fmt(v) for v in vec) + "\n")
    return EXIT_OK


def _write_matrix(path, row_labels, col_labels, matrix, corner=""):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([corner] + list(col_labels))
        for label, row in zip(row_labels, matrix):
            w.writerow([label] + [_fmt(v) for v in row])


def inspect_sentence(model, vocab, sentence):
    """Feature-averaged attention maps, gate values and source2token weights for one sentence."""
    tokens = data.tokenize(sentence)
    if not tokens:
        raise data.DataError("cannot inspect an empty sentence")
    trace = model.trace(vocab.lookup(tokens))
    out = {"tokens": tokens, "s2t_probs": trace.s2t_probs}
    for name, block in zip(("fw", "bw"), trace.blocks):
        # [k, i, j] -> token-level [i, j]
        out[f"{name}_attention"] = block.probs.mean(axis=0)
        out[f"{name}_gate"] = block.gate.value.mean(axis=0)
    return out


def cmd_inspect(checkpoint, sentence, output_dir):
    ckpt = load_checkpoint(checkpoint)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = inspect_sentence(ckpt.model, ckpt.vocab, sentence)
    tokens = result["tokens"]
    written = []
    for name in ("fw", "bw"):
        if f"{name}_attention" in result:
            path = out / f"{name}_attention.csv"
            _write_matrix(path, tokens, tokens, result[f"{name}_attention"], corner="attended\\query")
            written.append(path)
    if "fw_gate" in result:
        path = out / "gates.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["token", "fw_gate", "bw_gate"])
            for t, f, b in zip(tokens, result["fw_gate"], result["bw_gate"]):
                w.writerow([t, _fmt(f), _fmt(b)])
        written.append(path)
    if result["s2t_probs"] is not None:
        probs = result["s2t_probs"]
        path = out / "s2t_probs.csv"
        _write_matrix(path, range(probs.shape[0]), tokens, probs, corner="feature")
        written.append(path)
    for path in written:
        print(path)
    return result


def cmd_params(task="nli", variant="disan", d_e=300, d_h=300, num_classes=None, head_hidden=300,
               include_embeddings=False, vocab_size=0):
    classes = 3 if task == "nli" else (num_classes or 2)
    cfg = ModelConfig(task=task, variant=variant, d_e=d_e, d_h=d_h, num_classes=classes, head_hidden=head_hidden)
    rng = np.random.default_rng(0)
    enc = build_encoder(cfg, rng)
    head = build_head(cfg, enc.out_dim, rng)
    count = param_count(enc, head)
    if include_embeddings:
        count += vocab_size * d_e
    print(count)
    return count


# ---------------------------------------------------------------- argument parsing


def build_parser():
    p = _Parser(prog="disan", description="Directional self-attention sentence encoder.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--task", choices=RUN_TASKS, default="nli")
    t.add_argument("--variant", choices=VARIANTS, default="disan")
    t.add_argument("--embeddings")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--test")
    t.add_argument("--checkpoint-dir", default=os.environ.get(CHECKPOINT_ENV, "checkpoints"))
    t.add_argument("--d-e", type=int, help="embedding size (default 300, or 32 for synthetic-order)")
    t.add_argument("--num-classes", type=int, default=2)
    t.add_argument("--head-hidden", type=int, default=300)
    t.add_argument("--c", type=float, default=5.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--initial-lr", type=float)
    t.add_argument("--keep-prob", type=float)
    t.add_argument("--l2-gamma", type=float)
    t.add_argument("--d-h", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--adadelta-rho", type=float)
    t.add_argument("--adadelta-eps", type=float)
    t.add_argument("--freeze-embeddings", action="store_true", default=None)
    t.add_argument("--synthetic-train", type=int, default=2000)
    t.add_argument("--synthetic-test", type=int, default=500)
    t.add_argument("--min-len", type=int, default=8)
    t.add_argument("--max-len", type=int, default=16)
    t.add_argument("--vocab-size", type=int, default=20)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")

    n = sub.add_parser("encode", help="write one sentence encoding per input line")
    n.add_argument("checkpoint")
    n.add_argument("input")
    n.add_argument("output")

    i = sub.add_parser("inspect", help="export attention and gate heatmaps as CSV")
    i.add_argument("checkpoint")
    i.add_argument("sentence")
    i.add_argument("--out", default="inspect")

    c = sub.add_parser("params", help="count trainable parameters")
    c.add_argument("--task", choices=("nli", "classify"), default="nli")
    c.add_argument("--variant", choices=VARIANTS, default="disan")
    c.add_argument("--d-e", type=int, default=300)
    c.add_argument("--d-h", type=int, default=300)
    c.add_argument("--num-classes", type=int)
    c.add_argument("--head-hidden", type=int, default=300)
    c.add_argument("--include-embeddings", action="store_true")
    c.add_argument("--vocab-size", type=int, default=0)
    return p


HP_FLAGS = ("batch_size", "initial_lr", "keep_prob", "l2_gamma", "d_h", "epochs", "adadelta_rho",
            "adadelta_eps", "freeze_embeddings")


def run_config_from_args(args):
    overrides = {k: getattr(args, k) for k in HP_FLAGS if getattr(args, k) is not None}
    if args.task == "synthetic-order":
        overrides.setdefault("d_h", 32)
    return RunConfig(
        task=args.task,
        variant=args.variant,
        embeddings=args.embeddings,
        train=args.train,
        dev=args.dev,
        test=args.test,
        checkpoint_dir=args.checkpoint_dir,
        d_e=args.d_e,
        num_classes=args.num_classes,
        head_hidden=args.head_hidden,
        c=args.c,
        seed=args.seed,
        hp_overrides=overrides,
        synthetic={
            "train_count": args.synthetic_train,
            "test_count": args.synthetic_test,
            "min_len": args.min_len,
            "max_len": args.max_len,
            "vocab_size": args.vocab_size,
        },
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            return cmd_train(run_config_from_args(args))
        if args.command == "eval":
            cmd_eval(args.checkpoint, args.dataset)
        elif args.command == "encode":
            cmd_encode(args.checkpoint, args.input, args.output)
        elif args.command == "inspect":
            cmd_inspect(args.checkpoint, args.sentence, args.out)
        elif args.command == "params":
            cmd_params(args.task, args.variant, args.d_e, args.d_h, args.num_classes, args.head_hidden,
                       args.include_embeddings, args.vocab_size)
        return EXIT_OK
    except (UsageError, ValueError) as exc:
        code = EXIT_DATA if isinstance(exc, (data.DataError, CheckpointError, ShapeError)) else EXIT_USAGE
        print(f"disan: error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"disan: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"disan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
