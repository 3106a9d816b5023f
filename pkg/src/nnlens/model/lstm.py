"""Multi-layer LSTM language model exposing its gate activations.

Stacked gate weights use the fixed order ``[i, f, g, o]``: rows
``0:h`` input gate, ``h:2h`` forget gate, ``2h:3h`` candidate, ``3h:4h``
output gate.
"""
from __future__ import annotations

from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .. import tensor as T
from ..corpus.vocab import EOS, Vocab
from ..tensor import Tensor
from .base import ActivationKey, LanguageModel

GATE_ORDER = ("i", "f", "g", "o")
LSTM_ACTIVATIONS = ("hx", "cx", "ix", "fx", "gx", "ox")
DEFAULT_INIT_PHRASE = (".", EOS)


class LayerWeights(NamedTuple):
    W_x: Any  # 4h x in
    W_h: Any  # 4h x h
    bias: Any  # 4h


def lstm_step(x, state, weights: LayerWeights):
    """One LSTM step. ``x`` is ``(..., in)``; returns ``h', c', {gate: value}``."""
    h, c = state
    hid = weights.W_h.shape[-1]
    pre = T.add(T.add(T.matmul(x, T.transpose(weights.W_x)), T.matmul(h, T.transpose(weights.W_h))), weights.bias)
    gates = {}
    for k, name in enumerate(GATE_ORDER):
        part = T.getitem(pre, (Ellipsis, slice(k * hid, (k + 1) * hid)))
        gates[name] = T.tanh(part) if name == "g" else T.sigmoid(part)
    c_new = T.add(T.mul(gates["f"], c), T.mul(gates["i"], gates["g"]))
    h_new = T.mul(gates["o"], T.tanh(c_new))
    return h_new, c_new, gates


class LstmLm(LanguageModel):
    model_type = "lstm"

    def __init__(
        self,
        vocab: Vocab,
        d: int = 64,
        hidden: int = 64,
        layers: int = 2,
        seed: int = 0,
        init_phrase: Sequence[str] = DEFAULT_INIT_PHRASE,
    ):
        self.vocab = vocab
        self.d, self.hidden, self.layers = d, hidden, layers
        self.seed = seed
        self.init_phrase = tuple(init_phrase)
        rng = np.random.default_rng(seed)
        k = 1.0 / np.sqrt(hidden)
        params = {"embedding": rng.uniform(-k, k, size=(len(vocab), d))}
        for layer in range(layers):
            inp = d if layer == 0 else hidden
            params[f"layer{layer}.W_x"] = rng.uniform(-k, k, size=(4 * hidden, inp))
            params[f"layer{layer}.W_h"] = rng.uniform(-k, k, size=(4 * hidden, hidden))
            params[f"layer{layer}.bias"] = rng.uniform(-k, k, size=(4 * hidden,))
        params["decoder.weight"] = rng.uniform(-k, k, size=(len(vocab), hidden))
        params["decoder.bias"] = np.zeros(len(vocab))
        self.params = {name: Tensor(v) for name, v in params.items()}
        self.initial_states = [(Tensor(np.zeros(hidden)), Tensor(np.zeros(hidden))) for _ in range(layers)]

    @property
    def num_layers(self) -> int:
        return self.layers

    @property
    def recurrent(self) -> bool:
        return True

    @property
    def activation_names(self) -> list[ActivationKey]:
        return [ActivationKey(layer, n) for layer in range(self.layers) for n in LSTM_ACTIVATIONS]

    def config(self) -> dict[str, Any]:
        return {"d": self.d, "hidden": self.hidden, "layers": self.layers, "seed": self.seed,
                "init_phrase": list(self.init_phrase)}

    def zero_states(self):
        z = Tensor(np.zeros(self.hidden))
        return [(z, z) for _ in range(self.layers)]

    def layer_weights(self, layer: int, params: Mapping[str, Tensor] | None = None) -> LayerWeights:
        p = params or self.params
        return LayerWeights(p[f"layer{layer}.W_x"], p[f"layer{layer}.W_h"], p[f"layer{layer}.bias"])

    def recur(self, x, state=None, params=None, collect: bool = True):
        """Run the recurrence; returns (top-layer hidden states, activations, final states)."""
        p = params or self.params
        states = list(state if state is not None else self.initial_states)
        weights = [self.layer_weights(layer, p) for layer in range(self.layers)]
        steps = x.shape[-2]
        acts: dict[ActivationKey, list] = {k: [] for k in self.activation_names} if collect else {}
        top = []
        for t in range(steps):
            inp = T.getitem(x, (Ellipsis, t, slice(None)))
            for layer in range(self.layers):
                h, c, gates = lstm_step(inp, states[layer], weights[layer])
                states[layer] = (h, c)
                if collect:
                    acts[ActivationKey(layer, "hx")].append(h)
                    acts[ActivationKey(layer, "cx")].append(c)
                    for g in GATE_ORDER:
                        acts[ActivationKey(layer, g + "x")].append(gates[g])
                inp = h
            top.append(inp)
        stacked = {k: T.stack(v, axis=-2) for k, v in acts.items()} if steps else {}
        hs = T.stack(top, axis=-2) if steps else None
        return hs, stacked, states

    def run(self, x, state=None, params=None, collect: bool = True):
        p = params or self.params
        hs, acts, _ = self.recur(x, state, p, collect)
        logits = T.add(T.matmul(hs, T.transpose(p["decoder.weight"])), p["decoder.bias"])
        return logits, acts


def init_states_from_phrase(model: LstmLm, phrase: Sequence[int | str] = DEFAULT_INIT_PHRASE):
    """Final ``(h, c)`` per layer after reading ``phrase`` from zero states.

    Words are looked up in the model vocabulary; an empty phrase gives zeros.
    """
    if not len(phrase):
        return model.zero_states()
    ids = [model.vocab.index(w) if isinstance(w, str) else int(w) for w in phrase]
    _, _, states = model.recur(model.embed(ids), state=model.zero_states(), collect=False)
    return states
