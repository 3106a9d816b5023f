"""Checkpoint = named-tensor container + JSON sidecar."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..corpus.vocab import Vocab
from ..errors import FormatError, VocabularyError
from ..tensor import Tensor, load_tensors, save_tensors
from .base import LanguageModel
from .lstm import GATE_ORDER, LstmLm
from .transformer import TransformerLm


def _paths(path: str | Path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".nnlt", ".json"):
        base = base.with_suffix("")
    return base.with_suffix(".nnlt"), base.with_suffix(".json")


def save_checkpoint(model: LanguageModel, path: str | Path) -> Path:
    weights_path, sidecar_path = _paths(path)
    tensors = dict(model.params)
    if isinstance(model, LstmLm):
        for layer, (h, c) in enumerate(model.initial_states):
            tensors[f"init.h{layer}"] = h
            tensors[f"init.c{layer}"] = c
    save_tensors(weights_path, tensors)
    sidecar = {
        "model_type": model.model_type,
        "dims": model.config(),
        "vocab_hash": model.vocab.fingerprint(),
        "vocab": model.vocab.to_list(),
        "gate_order": list(GATE_ORDER) if isinstance(model, LstmLm) else None,
        "mode": getattr(model, "mode", "causal"),
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=1) + "\n", encoding="utf-8")
    return weights_path


def load_checkpoint(path: str | Path, vocab: Vocab | None = None) -> LanguageModel:
    weights_path, sidecar_path = _paths(path)
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    stored = Vocab(meta["vocab"])
    if stored.fingerprint() != meta["vocab_hash"]:
        raise FormatError(f"{sidecar_path}: vocabulary does not match its recorded hash")
    if vocab is not None and vocab.fingerprint() != meta["vocab_hash"]:
        raise VocabularyError(f"{sidecar_path}: checkpoint was trained with a different vocabulary")
    tensors = load_tensors(weights_path)
    dims = meta["dims"]
    if meta["model_type"] == "lstm":
        if meta.get("gate_order") != list(GATE_ORDER):
            raise FormatError(f"{sidecar_path}: unsupported gate order {meta.get('gate_order')}")
        model: LanguageModel = LstmLm(stored, **dims)
        model.initial_states = [
            (tensors.pop(f"init.h{layer}"), tensors.pop(f"init.c{layer}")) for layer in range(model.num_layers)
        ]
    elif meta["model_type"] == "transformer":
        model = TransformerLm(stored, **dims)
    else:
        raise FormatError(f"{sidecar_path}: unknown model_type {meta['model_type']!r}")
    if set(tensors) != set(model.params):
        missing = sorted(set(model.params) ^ set(tensors))
        raise FormatError(f"{weights_path}: parameter names differ from the architecture: {missing[:5]}")
    for name, value in tensors.items():
        if value.shape != model.params[name].shape:
            raise FormatError(f"{weights_path}: {name} has shape {value.shape}, expected {model.params[name].shape}")
    model.params = {k: Tensor(np.asarray(tensors[k].data)) for k in model.params}
    return model
