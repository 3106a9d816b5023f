"""Diagnostic classifiers on stored activations, with control tasks.

A probe is multinomial logistic regression trained by full-batch gradient
descent. The L2 penalty is applied as a proximal (shrinkage) step after each
gradient step, which stays stable for any penalty strength.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import tensor as T
from .corpus.container import Corpus
from .errors import ContractError, FormatError
from .tensor import Graph, Tensor, backward, load_tensors, save_tensors

log = logging.getLogger(__name__)

NUMBER_LABELS = ("singular", "plural")


@dataclass(frozen=True)
class ProbeHyper:
    lr: float = 0.5
    l2: float = 1e-4
    epochs: int = 200
    seed: int = 0
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class ProbeModel:
    weights: np.ndarray  # d x C
    bias: np.ndarray  # C
    labels: list[str]

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[1] < 2 or self.bias.shape != (self.weights.shape[1],):
            raise ContractError(f"probe needs d x C weights with C >= 2, got {self.weights.shape}/{self.bias.shape}")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ContractError(f"probe trained on width {self.dim}, got activations of width {x.shape[-1]}")
        return x @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)


@dataclass
class SplitScores:
    train: float
    dev: float
    test: float


@dataclass
class ProbeReport:
    task: SplitScores
    control: SplitScores | None
    selectivity: float | None  # task.test - control.test
    confusion: list[list[int]]  # test split, rows = gold, columns = predicted
    control_confusion: list[list[int]] | None = None
    sizes: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ControlTaskMap:
    mapping: dict[str, int]
    num_classes: int
    seed: int

    def label(self, word: str) -> int:
        return self.mapping[word]


def _type_label(word: str, num_classes: int, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}\x00{word}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % num_classes


def _positions(corpus: Corpus, positions) -> list[list[int]]:
    if positions is None or positions == "subject":
        return [[s.meta["subject_index"]] for s in corpus]
    if positions == "verb":
        return [[s.meta["verb_index"]] for s in corpus]
    if positions == "all":
        return [list(range(len(s.words))) for s in corpus]
    return [list(p) for p in positions]


def make_control_map(words, num_classes: int, seed: int) -> ControlTaskMap:
    if num_classes < 2:
        raise ContractError(f"a control task needs at least 2 classes, got {num_classes}")
    return ControlTaskMap({w: _type_label(w, num_classes, seed) for w in sorted(set(words))}, num_classes, seed)


def make_control_labels(corpus: Corpus, positions=None, num_classes: int = 2, seed: int = 0) -> np.ndarray:
    """Type-consistent random labels for the probed positions.

    Each word type draws its label independently from a seeded hash, so a
    type keeps its label wherever it recurs. ``positions`` is a selection
    name (``subject``, ``verb``, ``all``) or one position list per sentence.
    """
    pos = _positions(corpus, positions)
    words = [s.words[p] for s, ps in zip(corpus, pos) for p in ps]
    cmap = make_control_map(words, num_classes, seed)
    return np.array([cmap.label(w) for w in words], dtype=np.int64)


def number_labels(corpus: Corpus, positions=None) -> np.ndarray:
    """Subject number (0 singular, 1 plural) for every probed position."""
    pos = _positions(corpus, positions) if positions is not None else [[0]] * len(corpus)
    out = []
    for i, (s, ps) in enumerate(zip(corpus, pos)):
        cond = s.meta.get("condition")
        if not cond or cond[0] not in "SP":
            raise ContractError(f"sentence {i} has no subject-number condition in its meta")
        out.extend([0 if cond[0] == "S" else 1] * len(ps))
    return np.array(out, dtype=np.int64)


def split_by_group(groups: Sequence[int], splits=(0.8, 0.1, 0.1), seed: int = 0):
    """Row indices of train/dev/test such that no group straddles two splits."""
    if abs(sum(splits) - 1.0) > 1e-9 or min(splits) < 0:
        raise ContractError(f"splits must be non-negative and sum to 1, got {splits}")
    groups = np.asarray(groups)
    unique = np.unique(groups)
    order = np.random.default_rng(seed).permutation(unique)
    n_train = int(round(splits[0] * len(order)))
    n_dev = int(round(splits[1] * len(order)))
    parts = (order[:n_train], order[n_train:n_train + n_dev], order[n_train + n_dev:])
    return tuple(np.flatnonzero(np.isin(groups, p)) for p in parts)


def fit_logistic(x: np.ndarray, y: np.ndarray, num_classes: int, hyper: ProbeHyper) -> tuple[np.ndarray, np.ndarray]:
    d = x.shape[1]
    rng = np.random.default_rng(hyper.seed)
    w = rng.normal(0.0, 0.01, size=(d, num_classes))
    b = np.zeros(num_classes)
    xt = Tensor(x)
    rows = (np.arange(len(y)), y)
    shrink = 1.0 / (1.0 + 2.0 * hyper.lr * hyper.l2)
    for _ in range(hyper.epochs):
        with Graph() as graph:
            wt, bt = graph.leaf(w), graph.leaf(b)
            logp = T.log_softmax(T.add(T.matmul(xt, wt), bt), axis=-1)
            loss = T.neg(T.mean(T.getitem(logp, rows)))
            grads = backward(loss)
        w = (w - hyper.lr * grads[wt.node_id].data) * shrink
        b = b - hyper.lr * grads[bt.node_id].data
    return w, b


def _accuracy(pred: np.ndarray, gold: np.ndarray) -> float:
    return float(np.mean(pred == gold)) if len(gold) else float("nan")


def _confusion(pred, gold, num_classes) -> list[list[int]]:
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (gold, pred), 1)
    return m.tolist()


def _fit_and_score(x, y, num_classes, parts, hyper):
    train, dev, test = parts
    w, b = fit_logistic(x[train], y[train], num_classes, hyper)
    pred = np.argmax(x @ w + b, axis=-1)
    scores = SplitScores(*(_accuracy(pred[p], y[p]) for p in parts))
    return w, b, scores, _confusion(pred[test], y[test], num_classes)


def train_probe(
    activations,
    labels: Sequence[int],
    hyper: ProbeHyper = ProbeHyper(),
    groups: Sequence[int] | None = None,
    control_labels: Sequence[int] | None = None,
    label_names: Sequence[str] | None = None,
) -> tuple[ProbeModel, ProbeReport]:
    """Fit a linear probe and report accuracy per split.

    ``groups`` (usually the sentence id of each row) decides the split so
    that rows of one sentence never land in two splits; without it every
    row is its own group. When ``control_labels`` are given the same probe
    is trained on them and selectivity is reported.
    """
    x = np.asarray(activations.data if isinstance(activations, Tensor) else activations, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ContractError(f"need rows x d activations with one label per row, got {x.shape} and {len(y)} labels")
    classes = int(y.max()) + 1 if len(y) else 0
    if len(np.unique(y)) < 2:
        raise ContractError("probe labels contain a single class")
    names = list(label_names) if label_names is not None else [str(c) for c in range(classes)]
    groups = np.arange(len(y)) if groups is None else np.asarray(groups)
    parts = split_by_group(groups, hyper.splits, hyper.seed)
    w, b, task, confusion = _fit_and_score(x, y, len(names), parts, hyper)

    control = control_conf = selectivity = None
    if control_labels is not None:
        yc = np.asarray(control_labels, dtype=np.int64)
        if len(yc) != len(y):
            raise ContractError("control labels must align with task labels")
        _, _, control, control_conf = _fit_and_score(x, yc, max(int(yc.max()) + 1, 2), parts, hyper)
        selectivity = task.test - control.test
    report = ProbeReport(task, control, selectivity, confusion, control_conf,
                         {"train": len(parts[0]), "dev": len(parts[1]), "test": len(parts[2])})
    log.info("probe: task test acc %.4f, control %s", task.test, None if control is None else f"{control.test:.4f}")
    return ProbeModel(w, b, names), report


def save_probe(probe: ProbeModel, path: str | Path, hyper: ProbeHyper | None = None, key: str | None = None) -> Path:
    base = Path(path).with_suffix("")
    weights = base.with_suffix(".nnlt")
    save_tensors(weights, {"weights": Tensor(probe.weights), "bias": Tensor(probe.bias)})
    meta = {"labels": probe.labels, "hyper": asdict(hyper) if hyper else None, "activation_key": key}
    base.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return weights


def load_probe(path: str | Path) -> tuple[ProbeModel, Mapping[str, Any]]:
    base = Path(path).with_suffix("")
    tensors = load_tensors(base.with_suffix(".nnlt"))
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    if set(tensors) != {"weights", "bias"}:
        raise FormatError(f"{base}.nnlt is not a probe checkpoint")
    return ProbeModel(np.array(tensors["weights"].data), np.array(tensors["bias"].data), meta["labels"]), meta
