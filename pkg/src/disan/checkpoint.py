"""Binary checkpoints.

Layout::

    b"DISAN-CKPT\\n"                 magic line
    uint64 little-endian             manifest length in bytes
    manifest                         UTF-8 JSON
    payload                          little-endian float64 tensors

The manifest lists every tensor as ``{name, shape, offset, nbytes}`` with
offsets relative to the start of the payload, and records the element
type, whether optimizer state is included, the model config and the
vocabulary. Values round-trip bit-exactly.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .data import Vocabulary
from .model import Model, ModelConfig
from .train import OptimizerState

MAGIC = b"DISAN-CKPT\n"
ELEMENT_TYPE = "<f8"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


@dataclass
class Checkpoint:
    model: Model
    vocab: Vocabulary
    state: OptimizerState | None
    meta: dict


def _tensors(model, state):
    out = [(name, node.value) for name, node in model.named_tensors().items()]
    if state is not None:
        for name in sorted(state.sq_grad):
            out.append((f"opt.sq_grad.{name}", state.sq_grad[name]))
            out.append((f"opt.sq_delta.{name}", state.sq_delta[name]))
    return out


def save_checkpoint(path, model, vocab, state=None, meta=None):
    entries, chunks, offset = [], [], 0
    for name, value in _tensors(model, state):
        raw = np.ascontiguousarray(value, dtype=ELEMENT_TYPE).tobytes()
        entries.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_VERSION,
        "element_type": ELEMENT_TYPE,
        "optimizer_state": state is not None,
        "optimizer_steps": state.steps if state is not None else 0,
        "config": asdict(model.config),
        "frozen_embeddings": model.frozen_embeddings,
        "vocab": vocab.itos,
        "tensors": entries,
        "meta": meta or {},
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_manifest(fh):
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a DiSAN checkpoint (bad magic)")
    (size,) = struct.unpack("<Q", fh.read(8))
    try:
        manifest = json.loads(fh.read(size).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    if manifest.get("format") != FORMAT_VERSION or manifest.get("element_type") != ELEMENT_TYPE:
        raise CheckpointError("unsupported checkpoint version or element type")
    return manifest


def load_checkpoint(path):
    with open(path, "rb") as fh:
        manifest = read_manifest(fh)
        payload = fh.read()
    arrays = {}
    for entry in manifest["tensors"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"tensor {entry['name']} runs past the end of the file")
        arrays[entry["name"]] = np.frombuffer(payload[lo:hi], dtype=ELEMENT_TYPE).astype(np.float64).reshape(
            entry["shape"]
        )
    config = ModelConfig(**manifest["config"])
    if "embedding" not in arrays:
        raise CheckpointError("checkpoint has no embedding table")
    model = Model.create(config, arrays["embedding"], np.random.default_rng(0))
    model.frozen_embeddings = manifest.get("frozen_embeddings", False)
    for name, node in model.named_tensors().items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if arrays[name].shape != node.value.shape:
            raise CheckpointError(f"{name}: stored shape {arrays[name].shape}, model expects {node.value.shape}")
        node.value = arrays[name].copy()
    vocab = Vocabulary()
    for tok in manifest["vocab"][len(vocab):]:
        vocab.add(tok)
    if len(vocab) != model.embedding.value.shape[1]:
        raise CheckpointError(f"vocabulary has {len(vocab)} entries, embedding has {model.embedding.value.shape[1]}")
    state = None
    if manifest["optimizer_state"]:
        state = OptimizerState(steps=manifest.get("optimizer_steps", 0))
        for name, value in arrays.items():
            if name.startswith("opt.sq_grad."):
                state.sq_grad[name[len("opt.sq_grad."):]] = value.copy()
            elif name.startswith("opt.sq_delta."):
                state.sq_delta[name[len("opt.sq_delta."):]] = value.copy()
    return Checkpoint(model, vocab, state, manifest["meta"])
