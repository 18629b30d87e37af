"""Customization strategies: freeze plans, prefix banks and parameter drift."""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import blocks
from .autograd import Parameter

DEFAULT_PREFIX_LENGTH = 200


class StrategyKind(str, enum.Enum):
    CUSTOM = "Custom"
    L_EO = "L-EO"
    L_LDB = "L-LDB"
    PREFIX = "Prefix"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown strategy {name!r}; expected one of {[k.value for k in cls]}")

    def __str__(self):
        return self.value


ALL_STRATEGIES = tuple(StrategyKind)


def trainable_labels(strategy, encoder_layers, decoder_layers):
    strategy = StrategyKind.parse(strategy)
    if strategy is StrategyKind.CUSTOM:
        return set(blocks.base_labels(encoder_layers, decoder_layers))
    if strategy is StrategyKind.L_EO:
        return {blocks.TOKEN_EMBEDDING, blocks.POSITIONAL_EMBEDDING, blocks.OUTPUT_LAYER}
    if strategy is StrategyKind.L_LDB:
        return {blocks.decoder_block(decoder_layers - 1)}
    return {blocks.PREFIX}


@dataclass(frozen=True)
class FreezePlan:
    strategy: StrategyKind
    frozen: dict  # block_label -> bool

    @property
    def trainable(self):
        return {label for label, f in self.frozen.items() if not f}

    def is_frozen(self, label):
        return self.frozen[label]


def make_freeze_plan(strategy, registry):
    """Build the freeze plan of ``strategy`` over the labels in ``registry``.

    ``registry`` is a ParameterRegistry or any iterable of block labels.
    """
    strategy = StrategyKind.parse(strategy)
    labels = registry.labels() if hasattr(registry, "labels") else list(registry)
    enc = dec = 0
    for label in labels:
        kind, idx = blocks.parse_label(label)  # raises on unknown labels
        if kind == "encoder-block":
            enc = max(enc, idx + 1)
        elif kind == "decoder-block":
            dec = max(dec, idx + 1)
    if dec == 0 and strategy is StrategyKind.L_LDB:
        raise ValueError("L-LDB needs at least one decoder block")
    keep = trainable_labels(strategy, enc, dec)
    frozen = {label: label not in keep for label in labels}
    if strategy is StrategyKind.PREFIX:
        frozen[blocks.PREFIX] = False
    return FreezePlan(strategy, frozen)


def apply_freeze_plan(model, plan):
    for p in model.parameters():
        p.frozen = plan.frozen.get(p.block_label, True)


class PrefixBank:
    """Trainable key/value virtual-token states for every attention block.

    Each encoder and decoder block owns two ``prefix_length x d_model``
    matrices: one attended as extra keys, one as the matching values.
    """

    STREAMS = ("key", "value")

    def __init__(self, d_model, prefix_length, encoder_layers, decoder_layers, rows=None):
        self.d_model = d_model
        self.prefix_length = prefix_length
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.params = {}
        for side, n in (("encoder", encoder_layers), ("decoder", decoder_layers)):
            for i in range(n):
                for stream in self.STREAMS:
                    pid = f"prefix.{side}.{i}.{stream}"
                    init = np.zeros((prefix_length, d_model)) if rows is None else np.array(rows)
                    if init.shape != (prefix_length, d_model):
                        raise ValueError(f"prefix rows must be {(prefix_length, d_model)}, got {init.shape}")
                    self.params[pid] = Parameter(pid, blocks.PREFIX, init)

    def get(self, side, index, stream):
        return self.params[f"prefix.{side}.{index}.{stream}"]

    def parameters(self):
        return list(self.params.values())

    def count(self):
        return sum(p.size for p in self.params.values())


def word_embedding(model, vocab, word):
    ids = vocab.encode(word)
    if not ids:
        raise ValueError(f"word {word!r} encodes to no tokens")
    return model.token_embedding.values[ids].mean(axis=0)


def most_frequent_words(corpus, n):
    """The ``n`` most frequent analysis tokens; ties broken lexicographically."""
    counts = Counter(corpus.token_counts())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [w for w, _ in ranked[:n]]


def init_prefix(corpus, model, prefix_length, vocab):
    """Initialize a bank from the project's most frequent words.

    Every block (and both streams) receives the same rows: the embedding of
    the i-th most frequent word, averaged over its subword pieces.  Missing
    rows, when the corpus has fewer distinct words, get the mean embedding.
    """
    cfg = model.config
    if prefix_length > cfg.max_positions:
        raise ValueError(f"prefix_length {prefix_length} exceeds max_positions {cfg.max_positions}")
    if prefix_length <= 0:
        raise ValueError("prefix_length must be positive")
    words = most_frequent_words(corpus, prefix_length)
    if not words:
        raise ValueError(f"corpus {corpus.project_id!r} has no tokens")
    rows = [word_embedding(model, vocab, w) for w in words]
    fill = model.token_embedding.values.mean(axis=0)
    rows.extend(fill for _ in range(prefix_length - len(rows)))
    return PrefixBank(cfg.d_model, prefix_length, cfg.encoder_layers, cfg.decoder_layers, rows=np.stack(rows))


def attach_prefix(model, bank):
    cfg = model.config
    if (bank.d_model, bank.encoder_layers, bank.decoder_layers) != (
        cfg.d_model, cfg.encoder_layers, cfg.decoder_layers
    ):
        raise ValueError("prefix bank dimensions do not match the model")
    model.prefix = bank
    model.prefix_active = True
    return model


def detach_prefix(model):
    model.prefix = None
    model.prefix_active = False
    return model


@dataclass(frozen=True)
class DriftReport:
    rows: tuple  # ((block_label, mean_abs_change), ...) in plotting order

    def as_dict(self):
        return dict(self.rows)

    def nonzero_labels(self):
        return {label for label, v in self.rows if v > 0.0}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block_label", "mean_abs_change"])
            for label, v in self.rows:
                w.writerow([label, repr(v)])


def drift_report(before, after):
    """Mean absolute parameter change per block between two checkpoints."""
    if set(before.ids()) != set(after.ids()):
        raise ValueError("checkpoints come from different registries")
    total = {}
    count = {}
    for e in before:
        other = after[e.id]
        if other.block_label != e.block_label or other.values.shape != e.values.shape:
            raise ValueError(f"registry mismatch at {e.id!r}")
        total[e.block_label] = total.get(e.block_label, 0.0) + float(np.abs(other.values - e.values).sum())
        count[e.block_label] = count.get(e.block_label, 0) + e.values.size
    labels = sorted(total, key=blocks.label_order_key)
    return DriftReport(tuple((label, total[label] / count[label]) for label in labels))
