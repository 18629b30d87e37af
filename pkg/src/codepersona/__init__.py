"""Personalizing a small encoder-decoder code model to a single project.

Four customization strategies (full fine-tuning, embedding+output tuning,
last-decoder-block tuning, prefix tuning) over a numpy transformer, with
parameter and FLOP accounting, corpus diversity statistics and the
evaluation metrics used to compare them.
"""

__version__ = "0.1.0"
