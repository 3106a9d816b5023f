"""Activation extraction to an on-disk store, and reading it back.

Store layout (one directory)::

    index.json      {"status", "dims", "entries": {key: [{sentence_id, offset, rows, positions}]}}
    <layer>_<name>.f64   raw little-endian float64 rows, appended in sentence order
    finalized       empty marker written last; its absence means the store is incomplete

``offset`` is a byte offset into the key's data file. Sentences whose selection
keeps no position get an entry with ``rows == 0`` so that every sentence id is
addressable for every key.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus.container import Corpus
from .errors import ActivationKeyError, EntryLookupError, MissingArtifactError
from .model.base import ActivationKey, LanguageModel
from .model.lstm import LstmLm, init_states_from_phrase
from .tensor import Tensor

log = logging.getLogger(__name__)

INDEX = "index.json"
MARKER = "finalized"
DTYPE = np.dtype("<f8")

SelectionFn = Callable[[Mapping[str, Any], int], bool]


def _keep_all(meta, position):
    return True


def _keep_subject(meta, position):
    return position == meta["subject_index"]


def _keep_verb(meta, position):
    return position == meta["verb_index"]


SELECTIONS: dict[str, SelectionFn] = {"all": _keep_all, "subject": _keep_subject, "verb": _keep_verb}


def resolve_selection(selection: str | SelectionFn) -> SelectionFn:
    if callable(selection):
        return selection
    try:
        return SELECTIONS[selection]
    except KeyError:
        raise ValueError(f"unknown selection {selection!r}; expected one of {sorted(SELECTIONS)}") from None


def _file_name(key: ActivationKey) -> str:
    return f"{key.layer}_{key.name}.f64"


def resolve_keys(model: LanguageModel, keys: Iterable | None) -> list[ActivationKey]:
    advertised = list(model.activation_names)
    if keys is None:
        return advertised
    out = []
    for k in keys:
        key = ActivationKey.parse(k)
        if key not in advertised:
            names = ", ".join(str(a) for a in advertised)
            raise ActivationKeyError(f"{model.model_type} model does not emit activation {key}; available: {names}")
        out.append(key)
    return out


@dataclass
class ExtractStats:
    sentences: int = 0
    flushes: int = 0
    peak_buffered_batches: int = 0
    peak_buffered_bytes: int = 0


class ActivationStore:
    """Read access to a finalized extraction directory.

    Reads open the data file per call, so one store may be shared by any
    number of reader threads.
    """

    def __init__(self, path: str | Path, require_final: bool = True):
        self.path = Path(path)
        index_path = self.path / INDEX
        if not index_path.exists():
            raise MissingArtifactError(f"no activation store at {self.path}")
        if require_final and not self.finalized:
            raise MissingArtifactError(f"activation store at {self.path} is incomplete (no '{MARKER}' marker)")
        index = json.loads(index_path.read_text(encoding="utf-8"))
        self.status: str = index["status"]
        self.dims = {ActivationKey.parse(k): int(v) for k, v in index["dims"].items()}
        self._entries: dict[ActivationKey, dict[int, dict]] = {
            ActivationKey.parse(k): {e["sentence_id"]: e for e in v} for k, v in index["entries"].items()
        }
        self.stats: ExtractStats | None = None  # set by extract() on the store it returns

    @property
    def finalized(self) -> bool:
        return (self.path / MARKER).exists()

    @property
    def keys(self) -> list[ActivationKey]:
        return list(self.dims)

    def sentence_ids(self, key) -> list[int]:
        return sorted(self._entry_map(key))

    def _entry_map(self, key) -> dict[int, dict]:
        key = ActivationKey.parse(key)
        try:
            return self._entries[key]
        except KeyError:
            names = ", ".join(str(k) for k in self.keys)
            raise ActivationKeyError(f"store has no activation {key}; stored: {names}") from None

    def entry(self, sentence_id: int, key) -> dict:
        entries = self._entry_map(key)
        try:
            return entries[int(sentence_id)]
        except KeyError:
            raise EntryLookupError(f"no entry for (sentence_id={sentence_id}, key={ActivationKey.parse(key)})") from None

    def positions(self, sentence_id: int, key) -> list[int]:
        return list(self.entry(sentence_id, key)["positions"])

    def read(self, sentence_ids: Sequence[int], key) -> list[Tensor]:
        key = ActivationKey.parse(key)
        path = self.path / _file_name(key)
        self._entry_map(key)  # raises for unknown keys
        dim = self.dims[key]
        out = []
        for sid in sentence_ids:
            e = self.entry(sid, key)
            arr = np.fromfile(path, dtype=DTYPE, count=e["rows"] * dim, offset=e["offset"])
            out.append(Tensor(arr.reshape(e["rows"], dim)))
        return out

    def matrix(self, key, sentence_ids: Sequence[int] | None = None) -> tuple[np.ndarray, list[int]]:
        """All rows of ``key`` stacked, plus the sentence id of each row."""
        ids = self.sentence_ids(key) if sentence_ids is None else list(sentence_ids)
        blocks = self.read(ids, key)
        owners = [sid for sid, b in zip(ids, blocks) for _ in range(b.shape[0])]
        dim = self.dims[ActivationKey.parse(key)]
        rows = np.concatenate([b.data for b in blocks]) if blocks else np.zeros((0, dim))
        return rows.reshape(-1, dim), owners


def read(store: ActivationStore | str | Path, sentence_ids: Sequence[int], key) -> list[Tensor]:
    """Stored rows of ``key`` for ``sentence_ids``, in the order given."""
    if not isinstance(store, ActivationStore):
        store = ActivationStore(store)
    return store.read(sentence_ids, key)


class _Writer:
    def __init__(self, out_dir: Path, keys: list[ActivationKey]):
        self.dir = out_dir
        self.keys = keys
        self.offsets = {k: 0 for k in keys}
        self.entries: dict[ActivationKey, list[dict]] = {k: [] for k in keys}
        self.dims: dict[ActivationKey, int] = {}

    def reset(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        for stale in [MARKER, INDEX, *(p.name for p in self.dir.glob("*.f64"))]:
            (self.dir / stale).unlink(missing_ok=True)
        for k in self.keys:
            (self.dir / _file_name(k)).write_bytes(b"")

    def write_rows(self, key: ActivationKey, blocks: list[tuple[int, list[int], np.ndarray]]) -> None:
        with open(self.dir / _file_name(key), "ab") as fh:
            for sid, positions, rows in blocks:
                payload = np.ascontiguousarray(rows, dtype=DTYPE).tobytes()
                fh.write(payload)
                self.entries[key].append(
                    {"sentence_id": sid, "offset": self.offsets[key], "rows": len(positions), "positions": positions}
                )
                self.offsets[key] += len(payload)

    def write_index(self, status: str) -> None:
        index = {
            "status": status,
            "dims": {str(k): self.dims.get(k, 0) for k in self.keys},
            "entries": {str(k): self.entries[k] for k in self.keys},
        }
        (self.dir / INDEX).write_text(json.dumps(index, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def extract(
    model: LanguageModel,
    corpus: Corpus,
    keys: Iterable | None = None,
    selection: str | SelectionFn = "all",
    flush_every: int = 4,
    out_dir: str | Path = "activations",
    batch_size: int = 32,
    state=None,
) -> ActivationStore:
    """Run ``model`` over ``corpus`` and persist the selected activation rows.

    Sentences are processed ``batch_size`` at a time and buffered rows are
    written after every ``flush_every`` batches. Each sentence is forwarded
    on its own so stored bytes never depend on ``batch_size``. Recurrent
    models start from the state produced by their context phrase unless
    ``state`` is given.
    """
    if flush_every < 1 or batch_size < 1:
        raise ValueError("flush_every and batch_size must be >= 1")
    vocab = corpus.vocab or model.vocab
    keys = resolve_keys(model, keys)
    keep = resolve_selection(selection)
    if state is None and isinstance(model, LstmLm):
        state = init_states_from_phrase(model, model.init_phrase)
    out = Path(out_dir)
    writer = _Writer(out, keys)
    stats = ExtractStats()
    try:
        writer.reset()
        buffer: dict[ActivationKey, list] = {k: [] for k in keys}
        buffered_batches = buffered_bytes = 0

        def flush():
            nonlocal buffered_batches, buffered_bytes
            for k in keys:
                writer.write_rows(k, buffer[k])
                buffer[k] = []
            stats.flushes += 1
            buffered_batches = buffered_bytes = 0

        for start in range(0, len(corpus), batch_size):
            for sid in range(start, min(start + batch_size, len(corpus))):
                sentence = corpus[sid]
                ids = vocab.encode(sentence.words)
                _, acts = model.forward(ids, state=state)
                positions = [t for t in range(len(ids)) if keep(sentence.meta, t)]
                for k in keys:
                    rows = acts[k].data[positions]
                    writer.dims[k] = acts[k].shape[-1]
                    buffer[k].append((sid, positions, rows))
                    buffered_bytes += rows.nbytes
                stats.sentences += 1
            buffered_batches += 1
            stats.peak_buffered_batches = max(stats.peak_buffered_batches, buffered_batches)
            stats.peak_buffered_bytes = max(stats.peak_buffered_bytes, buffered_bytes)
            if buffered_batches >= flush_every:
                flush()
        if buffered_batches:
            flush()
        writer.write_index("complete")
        (out / MARKER).write_text("", encoding="utf-8")
    except OSError as exc:
        try:
            writer.write_index("invalid")
        except OSError:
            pass
        raise OSError(f"activation extraction into {out} failed: {exc}") from exc
    log.info("extracted %d sentences x %d keys into %s (%d flushes)", stats.sentences, len(keys), out, stats.flushes)
    store = ActivationStore(out)
    store.stats = stats
    return store
