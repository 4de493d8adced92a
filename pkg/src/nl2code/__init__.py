"""Transformer NL-to-code translation in numpy: tokenizers, models, training, decoding, metrics."""
from . import (augment, corpus, decode, errors, evaluation, model, objectives, pipeline, synthetic,
               tensor, tokenizers, train)

__version__ = "0.1.0"

__all__ = ["augment", "corpus", "decode", "errors", "evaluation", "model", "objectives",
           "pipeline", "synthetic", "tensor", "tokenizers", "train"]
