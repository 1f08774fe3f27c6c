"""Vocabulary, embedding loading, dataset readers, batching and the synthetic
order-sensitivity task."""

import json
import logging
import string
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE

log = logging.getLogger(__name__)

PAD = "<pad>"
OOV = "<oov>"
PAD_ID = 0
OOV_ID = 1

NLI_LABELS = ("entailment", "neutral", "contradiction")

SOURCE_PAD = "pad"
SOURCE_PRETRAINED = "pretrained"
SOURCE_OOV = "oov-random"

OOV_INIT_LIMIT = 0.05


class DataError(ValueError):
    """Malformed input file or inconsistent data."""


class Vocabulary:
    """Token to row-index map with reserved PAD (0) and shared OOV (1) rows."""

    def __init__(self, tokens=()):
        self.itos = [PAD, OOV]
        self.stoi = {PAD: PAD_ID, OOV: OOV_ID}
        for tok in tokens:
            self.add(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def add(self, token):
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def lookup(self, tokens, grow=False):
        if grow:
            return np.array([self.add(t) for t in tokens], dtype=np.intp)
        return np.array([self.stoi.get(t, OOV_ID) for t in tokens], dtype=np.intp)


@dataclass
class EmbeddingMatrix:
    """Column-per-token embedding table (``d_e x V``) with a provenance tag per row."""

    values: np.ndarray
    sources: list

    @property
    def dim(self):
        return self.values.shape[0]

    def extend(self, vocab, rng):
        """Grow to cover ``vocab``; new rows are U(-0.05, 0.05)."""
        extra = len(vocab) - self.values.shape[1]
        if extra <= 0:
            return self
        new = rng.uniform(-OOV_INIT_LIMIT, OOV_INIT_LIMIT, size=(self.dim, extra))
        new[new == -OOV_INIT_LIMIT] = 0.0
        self.values = np.concatenate([self.values, new], axis=1)
        self.sources = self.sources + [SOURCE_OOV] * extra
        return self


def empty_embeddings(dim, rng=None):
    """Embedding table holding only the PAD (zero) and OOV rows."""
    rng = rng if rng is not None else np.random.default_rng(0)
    oov = rng.uniform(-OOV_INIT_LIMIT, OOV_INIT_LIMIT, size=(dim, 1))
    return EmbeddingMatrix(np.concatenate([np.zeros((dim, 1)), oov], axis=1), [SOURCE_PAD, SOURCE_OOV])


def load_embeddings(path, expected_dim, rng=None):
    """Read GloVe text format: ``token v1 ... vd`` per line."""
    vocab = Vocabulary()
    emb = empty_embeddings(expected_dim, rng)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.rstrip(" ").split(" ")
            token, values = parts[0], parts[1:]
            if len(values) != expected_dim:
                raise DataError(f"{path}:{lineno}: expected {expected_dim} values, found {len(values)}")
            if token in vocab:
                log.warning("%s:%d: duplicate token %r ignored", path, lineno, token)
                continue
            try:
                rows.append([float(v) for v in values])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            vocab.add(token)
    if rows:
        emb.values = np.concatenate([emb.values, np.asarray(rows, dtype=DTYPE).T], axis=1)
        emb.sources = emb.sources + [SOURCE_PRETRAINED] * len(rows)
    return vocab, emb


def save_embeddings(path, vocab, emb):
    with open(path, "w", encoding="utf-8") as fh:
        for idx, source in enumerate(emb.sources):
            if source == SOURCE_PAD or vocab.itos[idx] == OOV:
                continue
            fh.write(vocab.itos[idx] + " " + " ".join(repr(float(v)) for v in emb.values[:, idx]) + "\n")


_PUNCT = set(string.punctuation)


def _split_punct(word):
    lead = []
    while word and word[0] in _PUNCT:
        lead.append(word[0])
        word = word[1:]
    trail = []
    while word and word[-1] in _PUNCT:
        trail.append(word[-1])
        word = word[:-1]
    return lead + ([word] if word else []) + trail[::-1]


def tokenize(sentence):
    tokens = []
    for word in sentence.lower().split():
        tokens.extend(_split_punct(word))
    return tokens


@dataclass
class Dataset:
    """Indexed examples. ``inputs[i]`` is an id array, or a pair of them for NLI."""

    inputs: list
    labels: np.ndarray
    paired: bool = False
    skipped: int = 0
    num_classes: int = 2

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        return Dataset([self.inputs[i] for i in index], self.labels[index], self.paired, 0, self.num_classes)


def load_snli_jsonl(path, vocab, grow=False):
    inputs, labels, skipped = [], [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                gold, s1, s2 = obj["gold_label"], obj["sentence1"], obj["sentence2"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed example ({exc!r})") from None
            if gold not in NLI_LABELS:
                skipped += 1
                continue
            t1, t2 = tokenize(s1), tokenize(s2)
            if not t1 or not t2:
                log.warning("%s:%d: empty sentence skipped", path, lineno)
                skipped += 1
                continue
            inputs.append((vocab.lookup(t1, grow), vocab.lookup(t2, grow)))
            labels.append(NLI_LABELS.index(gold))
    return Dataset(inputs, np.array(labels, dtype=np.intp), True, skipped, len(NLI_LABELS))


def load_label_tsv(path, vocab, num_classes, grow=False):
    inputs, labels, skipped = [], [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label, sep, sentence = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected 'label<TAB>sentence'")
            try:
                y = int(label)
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {label!r} is not an integer") from None
            if not 0 <= y < num_classes:
                raise DataError(f"{path}:{lineno}: label {y} outside [0, {num_classes})")
            tokens = tokenize(sentence)
            if not tokens:
                log.warning("%s:%d: empty sentence skipped", path, lineno)
                skipped += 1
                continue
            inputs.append(vocab.lookup(tokens, grow))
            labels.append(y)
    return Dataset(inputs, np.array(labels, dtype=np.intp), False, skipped, num_classes)


def write_label_tsv(path, sentences, labels):
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, y in zip(sentences, labels):
            fh.write(f"{int(y)}\t{' '.join(tokens)}\n")


MARKER_A = "a"
MARKER_B = "b"


def gen_order_task(count, seq_len_range, vocab_size, seed):
    """Sequences holding markers ``a`` and ``b`` once each among distractors.

    The label is 1 when ``a`` comes first. Every sequence is emitted next to
    its twin with the two markers swapped, so labels are exactly balanced
    and the bag of tokens carries no information. Returns
    ``(sentences, labels)`` with sentences as token lists.
    """
    lo, hi = seq_len_range
    if vocab_size < 4:
        raise ValueError(f"vocab_size must be >= 4, got {vocab_size}")
    if lo < 2 or hi < lo:
        raise ValueError(f"infeasible length range {seq_len_range}")
    if count % 2:
        raise ValueError(f"count must be even to pair twins, got {count}")
    rng = np.random.default_rng(seed)
    distractors = [f"t{k}" for k in range(vocab_size - 2)]
    sentences, labels = [], []
    for _ in range(count // 2):
        n = int(rng.integers(lo, hi + 1))
        seq = [distractors[k] for k in rng.integers(0, len(distractors), size=n)]
        pa, pb = rng.choice(n, size=2, replace=False)
        seq[pa], seq[pb] = MARKER_A, MARKER_B
        twin = list(seq)
        twin[pa], twin[pb] = MARKER_B, MARKER_A
        y = int(pa < pb)
        sentences += [seq, twin]
        labels += [y, 1 - y]
    return sentences, np.array(labels, dtype=np.intp)


def index_sentences(sentences, labels, vocab, num_classes=2, grow=False):
    inputs = [vocab.lookup(s, grow) for s in sentences]
    return Dataset(inputs, np.asarray(labels, dtype=np.intp), False, 0, num_classes)


@dataclass
class Batch:
    """Padded id matrices. Pair tasks fill ``ids2``/``lengths2`` too."""

    ids: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray
    ids2: np.ndarray | None = None
    lengths2: np.ndarray | None = None
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    def __len__(self):
        return len(self.labels)

    def example(self, row):
        first = self.ids[row, : self.lengths[row]]
        if self.ids2 is None:
            return first
        return first, self.ids2[row, : self.lengths2[row]]


def pad_sequences(seqs):
    lengths = np.array([len(s) for s in seqs], dtype=np.intp)
    out = np.full((len(seqs), int(lengths.max(initial=0))), PAD_ID, dtype=np.intp)
    for row, s in enumerate(seqs):
        out[row, : len(s)] = s
    return out, lengths


def make_batches(dataset, batch_size, rng=None):
    """Split into padded batches; shuffled when ``rng`` is given. The last partial batch is kept."""
    order = np.arange(len(dataset)) if rng is None else rng.permutation(len(dataset))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if dataset.paired:
            ids, lengths = pad_sequences([dataset.inputs[i][0] for i in idx])
            ids2, lengths2 = pad_sequences([dataset.inputs[i][1] for i in idx])
        else:
            ids, lengths = pad_sequences([dataset.inputs[i] for i in idx])
            ids2 = lengths2 = None
        batches.append(Batch(ids, lengths, dataset.labels[idx], ids2, lengths2, idx))
    return batches
