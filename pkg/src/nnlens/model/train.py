"""Language-model training: next-token (LSTM, causal transformer) or masked-token objective."""
from __future__ import annotations

import logging
from dataclasses import dataclass
import numpy as np

from .. import tensor as T
from ..corpus.container import Corpus
from ..errors import ContractError
from ..tensor import Graph, backward
from .base import LanguageModel
from .lstm import LstmLm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.01
    batch: int = 16
    epochs: int = 10
    seed: int = 0
    clip: float = 5.0
    mask_rate: float = 0.15


def _sequences(model: LanguageModel, corpus) -> list[list[int]]:
    if isinstance(corpus, Corpus):
        seqs = [model.vocab.encode(s.words) for s in corpus]
    else:
        seqs = [list(map(int, s)) for s in corpus]
    for s in seqs:
        model.check_ids(s)
    return seqs


def _prefix(model: LanguageModel) -> list[int]:
    if isinstance(model, LstmLm):
        return [model.vocab.index(w) for w in model.init_phrase]
    return []


def _causal_batch(model, seqs, prefix):
    """Inputs, and (batch, time, target) triples of scored predictions."""
    rows = [prefix + s for s in seqs]
    width = max(len(r) for r in rows) - 1
    inputs = np.full((len(rows), width), model.vocab.pad_id, dtype=np.int64)
    bi, ti, tg = [], [], []
    skip = max(len(prefix) - 1, 0)  # targets inside the context phrase are not scored
    for b, r in enumerate(rows):
        inputs[b, : len(r) - 1] = r[:-1]
        for t in range(skip, len(r) - 1):
            bi.append(b)
            ti.append(t)
            tg.append(r[t + 1])
    return inputs, None, (np.array(bi), np.array(ti), np.array(tg))


def _masked_batch(model, seqs, rng, rate):
    width = max(len(s) for s in seqs)
    inputs = np.full((len(seqs), width), model.vocab.pad_id, dtype=np.int64)
    valid = np.zeros((len(seqs), width), dtype=bool)
    bi, ti, tg = [], [], []
    for b, s in enumerate(seqs):
        inputs[b, : len(s)] = s
        valid[b, : len(s)] = True
        chosen = np.flatnonzero(rng.random(len(s)) < rate)
        if chosen.size == 0:
            chosen = np.array([rng.integers(len(s))])
        for t in chosen:
            bi.append(b)
            ti.append(int(t))
            tg.append(s[t])
            inputs[b, t] = model.vocab.mask_id
    return inputs, valid, (np.array(bi), np.array(ti), np.array(tg))


def _batch_loss(model, params, inputs, valid, picks):
    x = model.embed(inputs, params)
    if isinstance(model, LstmLm):
        logits, _ = model.run(x, state=model.zero_states(), params=params, collect=False)
    else:
        logits, _ = model.run(x, params=params, collect=False, key_mask=valid if model.masked else None)
    logp = T.log_softmax(logits, axis=-1)
    return T.neg(T.mean(T.getitem(logp, picks)))


def _make_batch(model, seqs, rng, hyper):
    if model.masked:
        return _masked_batch(model, seqs, rng, hyper.mask_rate)
    return _causal_batch(model, seqs, _prefix(model))


def corpus_loss(model: LanguageModel, corpus, hyper: TrainHyper = TrainHyper()) -> float:
    """Mean token cross-entropy of ``model`` on ``corpus`` (masks drawn from ``hyper.seed``)."""
    seqs = [s for s in _sequences(model, corpus) if len(s) + len(_prefix(model)) >= 2]
    if not seqs:
        raise ContractError("corpus is empty")
    rng = np.random.default_rng(hyper.seed)
    total, count = 0.0, 0
    for start in range(0, len(seqs), hyper.batch):
        chunk = seqs[start:start + hyper.batch]
        inputs, valid, picks = _make_batch(model, chunk, rng, hyper)
        n = len(picks[0])
        total += _batch_loss(model, model.params, inputs, valid, picks).item() * n
        count += n
    return total / count


def train_lm(model: LanguageModel, corpus, hyper: TrainHyper = TrainHyper()):
    """Train with Adam and global-norm clipping.

    Returns ``(trained_model, losses)`` where ``losses[e]`` is the mean batch
    loss of epoch ``e``. The input model is left untouched; identical seeds
    give bit-identical weights.
    """
    seqs = [s for s in _sequences(model, corpus) if len(s) + len(_prefix(model)) >= 2]
    if not seqs:
        raise ContractError("cannot train on an empty corpus")
    rng = np.random.default_rng(hyper.seed)
    values = {k: np.array(v.data) for k, v in model.params.items()}
    m = {k: np.zeros_like(v) for k, v in values.items()}
    s = {k: np.zeros_like(v) for k, v in values.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(seqs))
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(order), hyper.batch):
            chunk = [seqs[i] for i in order[start:start + hyper.batch]]
            inputs, valid, picks = _make_batch(model, chunk, rng, hyper)
            with Graph() as graph:
                leaves = {k: graph.leaf(v) for k, v in values.items()}
                loss = _batch_loss(model, leaves, inputs, valid, picks)
                grads = backward(loss)
            g = {k: grads[t.node_id].data if t.node_id in grads else np.zeros_like(values[k]) for k, t in leaves.items()}
            norm = float(np.sqrt(sum(float(np.sum(v * v)) for v in g.values())))
            scale = hyper.clip / norm if hyper.clip and norm > hyper.clip else 1.0
            step += 1
            for k in values:
                gk = g[k] * scale
                m[k] = beta1 * m[k] + (1 - beta1) * gk
                s[k] = beta2 * s[k] + (1 - beta2) * gk * gk
                mhat = m[k] / (1 - beta1 ** step)
                shat = s[k] / (1 - beta2 ** step)
                values[k] = values[k] - hyper.lr * mhat / (np.sqrt(shat) + eps)
            epoch_loss += loss.item()
            batches += 1
        losses.append(epoch_loss / batches)
        log.info("epoch %d loss %.4f", epoch + 1, losses[-1])
    return model.replace_params(values), losses

