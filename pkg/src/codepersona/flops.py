"""Analytic training-compute accounting.

Forward cost per token is ``2 x (parameters applied as matmuls)`` plus an
embedding term of ``4 * d_model`` and a context term of ``2 * n_ctx *
d_model`` per layer.  Backward cost is split in two equal halves:

* activation gradients (1x forward) for every block that the loss gradient
  has to traverse, i.e. any block that holds a trainable parameter or sits
  downstream of one;
* weight gradients (1x forward) only for matmuls whose weights are trainable.

With everything trainable that is exactly 3x forward.  Blocks upstream of
all trainable weights cost forward only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from . import blocks
from .model import decoder_block_params, encoder_block_params
from .strategies import DEFAULT_PREFIX_LENGTH

BACKWARD_MULTIPLIER = 2
PETA = 1e15


def default_context(config):
    return max(1, config.max_positions // 2)


def embedding_correction(config):
    return 4 * config.d_model


def non_embedding_parameters(config):
    """Parameters applied as per-token matmuls (includes the output projection)."""
    d, v = config.d_model, config.vocab_size
    return (
        config.encoder_layers * encoder_block_params(config)
        + config.decoder_layers * decoder_block_params(config)
        + d * v
        + v
    )


@dataclass
class FlopModel:
    """Per-block forward FLOPs per token for one configuration."""

    config: object
    n_ctx: int = None
    prefix_length: int = 0
    forward: dict = field(init=False)
    prefix_forward: dict = field(init=False)

    def __post_init__(self):
        cfg = self.config
        if self.n_ctx is None:
            self.n_ctx = default_context(cfg)
        d, v = cfg.d_model, cfg.vocab_size
        ctx_term = 2 * self.n_ctx * d
        pre_term = 2 * self.prefix_length * d
        self.forward = {blocks.TOKEN_EMBEDDING: embedding_correction(cfg), blocks.POSITIONAL_EMBEDDING: 0}
        self.prefix_forward = {}
        for i in range(cfg.encoder_layers):
            label = blocks.encoder_block(i)
            self.forward[label] = 2 * encoder_block_params(cfg) + ctx_term + pre_term
            self.prefix_forward[label] = pre_term
        for i in range(cfg.decoder_layers):
            label = blocks.decoder_block(i)
            self.forward[label] = 2 * decoder_block_params(cfg) + ctx_term + pre_term
            self.prefix_forward[label] = pre_term
        # de-embedding matmul and bias, tied or not
        self.forward[blocks.OUTPUT_LAYER] = 2 * (d * v + v)

    @property
    def backward_multiplier(self):
        return BACKWARD_MULTIPLIER

    def total_forward(self):
        return float(sum(self.forward.values()))

    def upstream(self, label):
        """Blocks whose outputs feed ``label`` (transitively) in the forward pass."""
        cfg = self.config
        kind, idx = blocks.parse_label(label)
        emb = {blocks.TOKEN_EMBEDDING, blocks.POSITIONAL_EMBEDDING}
        enc = {blocks.encoder_block(i) for i in range(cfg.encoder_layers)}
        if kind in (blocks.TOKEN_EMBEDDING, blocks.POSITIONAL_EMBEDDING):
            return set()
        if kind == "encoder-block":
            return emb | {blocks.encoder_block(i) for i in range(idx)}
        if kind == "decoder-block":
            return emb | enc | {blocks.decoder_block(i) for i in range(idx)}
        if kind == blocks.OUTPUT_LAYER:
            return set(self.forward) - {blocks.OUTPUT_LAYER}
        raise ValueError(f"no forward position for {label!r}")

    def _weight_trainable(self, label, trainable):
        if label in trainable:
            return True
        # the tied output projection is the token-embedding matrix
        return (
            label == blocks.OUTPUT_LAYER
            and self.config.tie_output_to_embedding
            and blocks.TOKEN_EMBEDDING in trainable
        )

    def step_breakdown(self, trainable):
        """Per-block ``(forward, activation_grad, weight_grad)`` FLOPs per token."""
        prefix_on = blocks.PREFIX in trainable
        holds = {label for label in self.forward if self._weight_trainable(label, trainable)}
        if prefix_on:
            holds |= {label for label, f in self.prefix_forward.items() if f > 0}
        out = {}
        for label, fwd in self.forward.items():
            on_path = label in holds or bool(self.upstream(label) & holds)
            act = fwd if on_path else 0
            if self._weight_trainable(label, trainable):
                wgt = fwd
            elif prefix_on:
                wgt = self.prefix_forward.get(label, 0)
            else:
                wgt = 0
            out[label] = (fwd, act, wgt)
        return out


def flops_forward_per_token(config, n_ctx=None, prefix_length=0):
    return FlopModel(config, n_ctx, prefix_length).total_forward()


def _plan_trainable(plan, config):
    trainable = plan.trainable
    known = set(blocks.base_labels(config.encoder_layers, config.decoder_layers)) | {blocks.PREFIX}
    unknown = trainable - known
    if unknown:
        raise ValueError(f"plan labels not in config: {sorted(unknown)}")
    return trainable


def flops_train_step(config, plan, tokens, source_tokens=None, n_ctx=None, prefix_length=None):
    """Training FLOPs for one optimizer step over ``tokens`` target tokens.

    Encoder blocks are charged per ``source_tokens`` when given (defaults
    to ``tokens``).
    """
    trainable = _plan_trainable(plan, config)
    if prefix_length is None:
        prefix_length = DEFAULT_PREFIX_LENGTH if blocks.PREFIX in plan.frozen else 0
    fm = FlopModel(config, n_ctx, prefix_length)
    src = tokens if source_tokens is None else source_tokens
    total = 0.0
    for label, (fwd, act, wgt) in fm.step_breakdown(trainable).items():
        n = src if label.startswith("encoder-block") else tokens
        total += (fwd + act + wgt) * n
    return total


@dataclass
class FlopLedger:
    cumulative_flops: float = 0.0
    tokens: int = 0
    curve: list = field(default_factory=list)  # [(cumulative_flops, val_loss)]

    def record(self, step_flops, val_loss=None, tokens=0):
        if step_flops < 0:
            raise ValueError("step_flops must be non-negative")
        self.cumulative_flops += step_flops
        self.tokens += tokens
        if val_loss is not None:
            self.curve.append((self.cumulative_flops, float(val_loss)))

    @property
    def pf_seconds(self):
        return self.cumulative_flops / PETA


def record(ledger, step_flops, val_loss=None):
    ledger.record(step_flops, val_loss)


CURVE_COLUMNS = ["strategy", "project", "fold", "cumulative_flops", "pf_seconds", "val_loss"]


def write_curve_csv(path, runs):
    """``runs``: iterable of (strategy, project, fold, FlopLedger)."""
    rows = []
    for strategy, project, fold, ledger in runs:
        for compute, loss in sorted(ledger.curve):
            rows.append([str(strategy), project, fold, repr(compute), repr(compute / PETA), repr(loss)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        w.writerows(rows)
    return len(rows)
