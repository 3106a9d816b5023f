"""Small pre-norm transformer language model (causal or masked)."""
from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from .. import tensor as T
from ..corpus.vocab import Vocab
from ..errors import ContractError
from ..tensor import Tensor
from .base import ActivationKey, LanguageModel

MODES = ("causal", "masked")


class TransformerLm(LanguageModel):
    model_type = "transformer"

    def __init__(
        self,
        vocab: Vocab,
        d: int = 64,
        layers: int = 2,
        heads: int = 2,
        ffn: int = 128,
        max_len: int = 32,
        mode: str = "causal",
        seed: int = 0,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if d % heads:
            raise ValueError(f"d={d} is not divisible by heads={heads}")
        self.vocab = vocab
        self.d, self.layers, self.heads, self.ffn, self.max_len = d, layers, heads, ffn, max_len
        self.mode, self.seed = mode, seed
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out):
            return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

        params = {
            "embedding": rng.normal(0.0, 0.5, size=(len(vocab), d)),
            "position": rng.normal(0.0, 0.1, size=(max_len, d)),
        }
        for layer in range(layers):
            pre = f"block{layer}."
            params[pre + "ln1.gain"] = np.ones(d)
            params[pre + "ln1.bias"] = np.zeros(d)
            for name in ("q", "k", "v", "o"):
                params[pre + f"attn.W_{name}"] = dense(d, d)
                params[pre + f"attn.b_{name}"] = np.zeros(d)
            params[pre + "ln2.gain"] = np.ones(d)
            params[pre + "ln2.bias"] = np.zeros(d)
            params[pre + "ffn.W_1"] = dense(d, ffn)
            params[pre + "ffn.b_1"] = np.zeros(ffn)
            params[pre + "ffn.W_2"] = dense(ffn, d)
            params[pre + "ffn.b_2"] = np.zeros(d)
        params["final_ln.gain"] = np.ones(d)
        params["final_ln.bias"] = np.zeros(d)
        params["decoder.weight"] = dense(d, len(vocab)).T.copy()
        params["decoder.bias"] = np.zeros(len(vocab))
        self.params = {k: Tensor(v) for k, v in params.items()}

    @property
    def num_layers(self) -> int:
        return self.layers

    @property
    def masked(self) -> bool:
        return self.mode == "masked"

    @property
    def activation_names(self) -> list[ActivationKey]:
        return [ActivationKey(layer, "hidden") for layer in range(self.layers)]

    def config(self) -> dict[str, Any]:
        return {"d": self.d, "layers": self.layers, "heads": self.heads, "ffn": self.ffn,
                "max_len": self.max_len, "mode": self.mode, "seed": self.seed}

    def attention_mask(self, steps: int, key_mask: np.ndarray | None = None) -> np.ndarray | None:
        mask = np.tril(np.ones((steps, steps), dtype=bool)) if self.mode == "causal" else None
        if key_mask is not None:
            # key_mask: (B, T) valid positions -> (B, 1, 1, T)
            km = np.asarray(key_mask, dtype=bool)[:, None, None, :]
            mask = km if mask is None else (km & mask)
        return mask

    def _attention(self, h, p, pre: str, mask):
        lead = tuple(h.shape[:-2])
        steps = h.shape[-2]
        dk = self.d // self.heads
        n = len(lead)
        split_axes = tuple(range(n)) + (n + 1, n, n + 2)

        def project(name):
            y = T.add(T.matmul(h, p[pre + f"attn.W_{name}"]), p[pre + f"attn.b_{name}"])
            return T.transpose(T.reshape(y, lead + (steps, self.heads, dk)), split_axes)

        q, k, v = project("q"), project("k"), project("v")
        k_t = T.transpose(k, tuple(range(n + 1)) + (n + 2, n + 1))
        scores = T.mul(T.matmul(q, k_t), 1.0 / np.sqrt(dk))
        attn = T.softmax(scores, axis=-1, mask=mask)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(ctx, split_axes), lead + (steps, self.d))
        return T.add(T.matmul(ctx, p[pre + "attn.W_o"]), p[pre + "attn.b_o"])

    @staticmethod
    def _layer_norm(x, gain, bias):
        return T.add(T.mul(T.normalize(x), gain), bias)

    def run(self, x, state=None, params=None, collect: bool = True, key_mask=None):
        p = params or self.params
        steps = x.shape[-2]
        if steps > self.max_len:
            raise ContractError(f"sequence length {steps} exceeds max_len={self.max_len}")
        h = T.add(x, T.getitem(p["position"], slice(0, steps)))
        mask = self.attention_mask(steps, key_mask)
        acts = {}
        for layer in range(self.layers):
            pre = f"block{layer}."
            a = self._attention(self._layer_norm(h, p[pre + "ln1.gain"], p[pre + "ln1.bias"]), p, pre, mask)
            h = T.add(h, a)
            f = self._layer_norm(h, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
            f = T.relu(T.add(T.matmul(f, p[pre + "ffn.W_1"]), p[pre + "ffn.b_1"]))
            h = T.add(h, T.add(T.matmul(f, p[pre + "ffn.W_2"]), p[pre + "ffn.b_2"]))
            if collect:
                acts[ActivationKey(layer, "hidden")] = h
        out = self._layer_norm(h, p["final_ln.gain"], p["final_ln.bias"])
        logits = T.add(T.matmul(out, T.transpose(p["decoder.weight"])), p["decoder.bias"])
        return logits, acts
