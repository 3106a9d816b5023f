"""nnlens: activation extraction, probing, targeted syntactic evaluation and
Shapley-based feature attribution for small language models."""

__version__ = "0.1.0"
