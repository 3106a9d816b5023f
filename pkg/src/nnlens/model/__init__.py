from .base import ActivationKey, LanguageModel
from .checkpoint import load_checkpoint, save_checkpoint
from .lstm import DEFAULT_INIT_PHRASE, GATE_ORDER, LayerWeights, LstmLm, init_states_from_phrase, lstm_step
from .train import TrainHyper, corpus_loss, train_lm
from .transformer import TransformerLm


def build_model(model_type: str, vocab, **kwargs) -> LanguageModel:
    if model_type == "lstm":
        return LstmLm(vocab, **kwargs)
    if model_type == "transformer":
        return TransformerLm(vocab, **kwargs)
    raise ValueError(f"unknown model type {model_type!r}; expected 'lstm' or 'transformer'")


__all__ = [
    "ActivationKey", "LanguageModel", "load_checkpoint", "save_checkpoint",
    "DEFAULT_INIT_PHRASE", "GATE_ORDER", "LayerWeights", "LstmLm", "init_states_from_phrase", "lstm_step",
    "TrainHyper", "corpus_loss", "train_lm", "TransformerLm", "build_model",
]
