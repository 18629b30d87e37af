"""Architectural block labels shared by the model, freeze plans and FLOP model."""

import re

TOKEN_EMBEDDING = "token-embedding"
POSITIONAL_EMBEDDING = "positional-embedding"
OUTPUT_LAYER = "output-layer"
PREFIX = "prefix"

_INDEXED = re.compile(r"^(encoder|decoder)-block\[(\d+)\]$")


def encoder_block(i):
    return f"encoder-block[{i}]"


def decoder_block(i):
    return f"decoder-block[{i}]"


def parse_label(label):
    """Return ``(kind, index)``; index is None for unindexed labels."""
    if label in (TOKEN_EMBEDDING, POSITIONAL_EMBEDDING, OUTPUT_LAYER, PREFIX):
        return label, None
    m = _INDEXED.match(label)
    if not m:
        raise ValueError(f"unknown block label {label!r}")
    return f"{m.group(1)}-block", int(m.group(2))


def base_labels(encoder_layers, decoder_layers):
    """Every label of the base model in forward (plotting) order."""
    return (
        [TOKEN_EMBEDDING, POSITIONAL_EMBEDDING]
        + [encoder_block(i) for i in range(encoder_layers)]
        + [decoder_block(i) for i in range(decoder_layers)]
        + [OUTPUT_LAYER]
    )


def label_order_key(label):
    kind, idx = parse_label(label)
    rank = {
        TOKEN_EMBEDDING: 0,
        POSITIONAL_EMBEDDING: 1,
        "encoder-block": 2,
        "decoder-block": 3,
        OUTPUT_LAYER: 4,
        PREFIX: 5,
    }[kind]
    return rank, idx or 0
