"""A scaled-down BART-style encoder-decoder transformer.

Post-layernorm blocks, learned positional embeddings, GELU feed-forward and
(by default) an output projection tied to the token embedding plus a
separate final logits bias.  Everything runs on :mod:`codepersona.autograd`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import blocks
from .autograd import Graph, Parameter, Tensor
from .strategies import DEFAULT_PREFIX_LENGTH, StrategyKind, trainable_labels

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2

MASK_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    d_model: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 2
    max_positions: int = 128
    tie_output_to_embedding: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "tie_output_to_embedding" and f.name not in ("encoder_layers", "decoder_layers"):
                if not isinstance(v, int) or v <= 0:
                    raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
        if self.encoder_layers < 0 or self.decoder_layers < 0:
            raise ValueError("layer counts must be non-negative")
        if self.encoder_layers + self.decoder_layers < 2:
            raise ValueError("encoder_layers + decoder_layers must be at least 2")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self):
        return self.d_model // self.num_heads

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            if key == "tie_output_to_embedding":
                if value.lower() not in ("true", "false"):
                    raise ValueError(f"expected true/false for {key}, got {value!r}")
                kwargs[key] = value.lower() == "true"
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_text())


# BART-large as described for the 406M-parameter test generator.
REFERENCE_CONFIG = ModelConfig(
    vocab_size=50265,
    d_model=1024,
    num_heads=16,
    ffn_dim=4096,
    encoder_layers=12,
    decoder_layers=12,
    max_positions=1024,
    tie_output_to_embedding=True,
)

TOY_CONFIG = ModelConfig()


# --- closed-form census -------------------------------------------------


def _attention_params(d):
    return 4 * (d * d + d)


def _ffn_params(d, f):
    return d * f + f + f * d + d


def encoder_block_params(cfg):
    d = cfg.d_model
    return _attention_params(d) + 2 * d + _ffn_params(d, cfg.ffn_dim) + 2 * d


def decoder_block_params(cfg):
    d = cfg.d_model
    return 2 * _attention_params(d) + 3 * 2 * d + _ffn_params(d, cfg.ffn_dim)


def block_parameter_counts(cfg):
    """Parameter count of every base-model block label (no allocation)."""
    d, v = cfg.d_model, cfg.vocab_size
    counts = {
        blocks.TOKEN_EMBEDDING: v * d,
        # encoder and decoder learned positions plus their embedding layernorms
        blocks.POSITIONAL_EMBEDDING: 2 * cfg.max_positions * d + 2 * 2 * d,
    }
    for i in range(cfg.encoder_layers):
        counts[blocks.encoder_block(i)] = encoder_block_params(cfg)
    for i in range(cfg.decoder_layers):
        counts[blocks.decoder_block(i)] = decoder_block_params(cfg)
    counts[blocks.OUTPUT_LAYER] = v + (0 if cfg.tie_output_to_embedding else v * d)
    return counts


def prefix_parameter_count(cfg, prefix_length):
    return cfg.d_model * prefix_length * (cfg.encoder_layers + cfg.decoder_layers) * 2


def count_parameters(config, strategy, prefix_length=DEFAULT_PREFIX_LENGTH):
    """Closed-form ``(total, trainable)`` for ``strategy`` on ``config``."""
    strategy = StrategyKind.parse(strategy)
    counts = block_parameter_counts(config)
    base = sum(counts.values())
    if strategy is StrategyKind.PREFIX:
        if prefix_length <= 0:
            raise ValueError("prefix_length must be positive for Prefix")
        extra = prefix_parameter_count(config, prefix_length)
        return base + extra, extra
    keep = trainable_labels(strategy, config.encoder_layers, config.decoder_layers)
    return base, sum(n for label, n in counts.items() if label in keep)


@dataclass(frozen=True)
class RegistryEntry:
    id: str
    block_label: str
    count: int


class ParameterRegistry:
    def __init__(self, entries):
        self.entries = tuple(entries)
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ValueError(f"duplicate parameter id {e.id!r}")
            seen.add(e.id)

    @classmethod
    def from_parameters(cls, params):
        return cls(RegistryEntry(p.id, p.block_label, p.size) for p in params)

    def total(self):
        return sum(e.count for e in self.entries)

    def labels(self):
        out = []
        for e in self.entries:
            if e.block_label not in out:
                out.append(e.block_label)
        return out

    def by_label(self):
        out = {}
        for e in self.entries:
            out[e.block_label] = out.get(e.block_label, 0) + e.count
        return out

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


# --- model --------------------------------------------------------------


class Seq2SeqModel:
    def __init__(self, config, params):
        self.config = config
        self.params = params  # id -> Parameter, in creation order
        self.prefix = None
        self.prefix_active = False

    def __getitem__(self, pid):
        return self.params[pid]

    @property
    def token_embedding(self):
        return self.params["embed.tokens"]

    def base_parameters(self):
        return list(self.params.values())

    def parameters(self):
        out = list(self.params.values())
        if self.prefix is not None:
            out.extend(self.prefix.parameters())
        return out

    @property
    def registry(self):
        return ParameterRegistry.from_parameters(self.parameters())

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    # -- building blocks --

    def _linear(self, g, x, prefix):
        return g.add(g.matmul(x, self.params[prefix + ".weight"]), self.params[prefix + ".bias"])

    def _layernorm(self, g, x, prefix):
        return g.layernorm(x, self.params[prefix + ".gamma"], self.params[prefix + ".beta"])

    def _split_heads(self, g, x):
        b, t, _ = x.shape
        h = self.config.num_heads
        return g.transpose(g.reshape(x, (b, t, h, self.config.head_dim)), (0, 2, 1, 3))

    def _prefix_heads(self, g, p):
        h, dh = self.config.num_heads, self.config.head_dim
        return g.reshape(g.transpose(g.reshape(p, (p.shape[0], h, dh)), (1, 0, 2)), (1, h, p.shape[0], dh))

    def _attention(self, g, prefix, x_q, x_kv, mask, prefix_kv=None):
        cfg = self.config
        q = self._split_heads(g, g.scale(self._linear(g, x_q, prefix + ".q"), cfg.head_dim ** -0.5))
        k = self._split_heads(g, self._linear(g, x_kv, prefix + ".k"))
        v = self._split_heads(g, self._linear(g, x_kv, prefix + ".v"))
        scores = g.add(g.matmul(q, g.transpose(k, (0, 1, 3, 2))), mask)
        if prefix_kv is None:
            ctx = g.matmul(g.softmax(scores), v)
        else:
            kp = self._prefix_heads(g, prefix_kv[0])
            vp = self._prefix_heads(g, prefix_kv[1])
            n_pre = prefix_kv[0].shape[0]
            pre_scores = g.matmul(q, g.transpose(kp, (0, 1, 3, 2)))
            probs = g.softmax(g.concat([pre_scores, scores], axis=-1))
            ctx = g.add(
                g.matmul(g.slice(probs, (Ellipsis, slice(0, n_pre))), vp),
                g.matmul(g.slice(probs, (Ellipsis, slice(n_pre, None))), v),
            )
        b, _, t, _ = ctx.shape
        ctx = g.reshape(g.transpose(ctx, (0, 2, 1, 3)), (b, t, cfg.d_model))
        return self._linear(g, ctx, prefix + ".o")

    def _ffn(self, g, x, prefix):
        return self._linear(g, g.gelu(self._linear(g, x, prefix + ".fc1")), prefix + ".fc2")

    def _prefix_kv(self, side, i):
        if self.prefix is None or not self.prefix_active:
            return None
        return self.prefix.get(side, i, "key"), self.prefix.get(side, i, "value")

    def _embed(self, g, ids, side):
        t = ids.shape[1]
        if t > self.config.max_positions:
            raise ValueError(f"sequence length {t} exceeds max_positions {self.config.max_positions}")
        x = g.embedding(self.token_embedding, ids)
        pos = g.embedding(self.params[f"{side}.embed_positions"], np.arange(t))
        return self._layernorm(g, g.add(x, pos), f"{side}.layernorm_embedding")

    def _check_ids(self, ids):
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")

    def encode(self, g, src):
        """``src``: (B, S) int array padded with PAD_ID."""
        src = np.asarray(src)
        self._check_ids(src)
        key_mask = np.where(src == PAD_ID, MASK_NEG, 0.0)[:, None, None, :]
        x = self._embed(g, src, "encoder")
        for i in range(self.config.encoder_layers):
            p = f"encoder.layers.{i}"
            a = self._attention(g, p + ".self_attn", x, x, key_mask, self._prefix_kv("encoder", i))
            x = self._layernorm(g, g.add(x, a), p + ".self_attn_layer_norm")
            x = self._layernorm(g, g.add(x, self._ffn(g, x, p)), p + ".final_layer_norm")
        return x, key_mask

    def decode(self, g, dec_in, memory, memory_mask, last_only=False):
        """Logits (B, T, V) for decoder inputs ``dec_in`` (B, T).

        ``last_only`` projects just the final position, giving (B, 1, V).
        """
        dec_in = np.asarray(dec_in)
        self._check_ids(dec_in)
        t = dec_in.shape[1]
        causal = np.triu(np.full((t, t), MASK_NEG), k=1)
        self_mask = causal[None, None] + np.where(dec_in == PAD_ID, MASK_NEG, 0.0)[:, None, None, :]
        x = self._embed(g, dec_in, "decoder")
        for i in range(self.config.decoder_layers):
            p = f"decoder.layers.{i}"
            a = self._attention(g, p + ".self_attn", x, x, self_mask, self._prefix_kv("decoder", i))
            x = self._layernorm(g, g.add(x, a), p + ".self_attn_layer_norm")
            if memory is not None:
                c = self._attention(g, p + ".encoder_attn", x, memory, memory_mask)
                x = self._layernorm(g, g.add(x, c), p + ".encoder_attn_layer_norm")
            x = self._layernorm(g, g.add(x, self._ffn(g, x, p)), p + ".final_layer_norm")
        if last_only:
            x = g.slice(x, (slice(None), slice(t - 1, t)))
        return self.logits(g, x)

    def logits(self, g, x):
        if self.config.tie_output_to_embedding:
            w = g.transpose(self.token_embedding, (1, 0))
        else:
            w = g.transpose(self.params["lm_head.weight"], (1, 0))
        return g.add(g.matmul(x, w), self.params["final_logits_bias"])

    def run(self, g, src, dec_in):
        if self.config.encoder_layers:
            memory, mem_mask = self.encode(g, src)
        else:
            memory, mem_mask = None, None
        return self.decode(g, dec_in, memory, mem_mask)

    def batch_loss(self, g, src, tgt):
        """Teacher-forced mean token NLL over a padded batch.

        Returns ``(loss_tensor, nll)`` where ``nll`` is (B, T) with zeros at
        padded target positions.
        """
        tgt = np.asarray(tgt)
        dec_in = np.concatenate([np.full((tgt.shape[0], 1), BOS_ID), tgt[:, :-1]], axis=1)
        dec_in = np.where(dec_in == PAD_ID, PAD_ID, dec_in)
        targets = np.where(tgt == PAD_ID, -100, tgt)
        n_tokens = int((targets != -100).sum())
        if n_tokens == 0:
            raise ValueError("empty target batch")
        nll = g.cross_entropy(self.run(g, src, dec_in), targets)
        loss = g.scale(g.sum(nll), 1.0 / n_tokens)
        return loss, nll.values


def _normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


def build_model(config, seed=0, init_std=0.02):
    """Allocate and initialize every parameter deterministically from ``seed``."""
    config.validate()
    rng = np.random.default_rng(seed)
    d, f, v = config.d_model, config.ffn_dim, config.vocab_size
    params = {}

    def add(pid, label, values):
        params[pid] = Parameter(pid, label, values)

    def linear(pid, label, n_in, n_out):
        add(pid + ".weight", label, _normal(rng, (n_in, n_out), init_std))
        add(pid + ".bias", label, np.zeros(n_out))

    def norm(pid, label):
        add(pid + ".gamma", label, np.ones(d))
        add(pid + ".beta", label, np.zeros(d))

    def attention(pid, label):
        for name in ("q", "k", "v", "o"):
            linear(f"{pid}.{name}", label, d, d)

    add("embed.tokens", blocks.TOKEN_EMBEDDING, _normal(rng, (v, d), init_std))
    for side in ("encoder", "decoder"):
        add(f"{side}.embed_positions", blocks.POSITIONAL_EMBEDDING,
            _normal(rng, (config.max_positions, d), init_std))
        norm(f"{side}.layernorm_embedding", blocks.POSITIONAL_EMBEDDING)
    for i in range(config.encoder_layers):
        label, p = blocks.encoder_block(i), f"encoder.layers.{i}"
        attention(p + ".self_attn", label)
        norm(p + ".self_attn_layer_norm", label)
        linear(p + ".fc1", label, d, f)
        linear(p + ".fc2", label, f, d)
        norm(p + ".final_layer_norm", label)
    for i in range(config.decoder_layers):
        label, p = blocks.decoder_block(i), f"decoder.layers.{i}"
        attention(p + ".self_attn", label)
        norm(p + ".self_attn_layer_norm", label)
        attention(p + ".encoder_attn", label)
        norm(p + ".encoder_attn_layer_norm", label)
        linear(p + ".fc1", label, d, f)
        linear(p + ".fc2", label, f, d)
        norm(p + ".final_layer_norm", label)
    if not config.tie_output_to_embedding:
        add("lm_head.weight", blocks.OUTPUT_LAYER, _normal(rng, (v, d), init_std))
    add("final_logits_bias", blocks.OUTPUT_LAYER, np.zeros(v))
    return Seq2SeqModel(config, params)


def _pad(seqs, width=None):
    width = width or max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def pad_batch(seqs):
    return _pad([list(s) for s in seqs])


def forward_loss(model, source_tokens, target_tokens):
    """Mean token cross-entropy and per-token NLL of one (source, target) pair."""
    source_tokens, target_tokens = list(source_tokens), list(target_tokens)
    if not target_tokens:
        raise ValueError("target must be non-empty")
    if not source_tokens and model.config.encoder_layers:
        raise ValueError("source must be non-empty")
    g = Graph(record=False)
    loss, nll = model.batch_loss(g, _pad([source_tokens]), _pad([target_tokens]))
    return float(loss.values), nll[0, : len(target_tokens)].copy()


# --- decoding -----------------------------------------------------------


@dataclass
class BeamHypothesis:
    tokens: tuple
    logprob: float
    finished: bool = False

    @property
    def score(self):
        # average log-probability per generated token
        return self.logprob / max(len(self.tokens), 1)


def _rank_key(h):
    return (-h.score, h.tokens)


class _BeamState:
    """Alive and finished hypotheses of one beam search."""

    def __init__(self, beam_width, eos_id):
        if beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        self.beam_width = beam_width
        self.eos_id = eos_id
        self.alive = [BeamHypothesis((), 0.0)]
        self.finished = []

    def advance(self, lp):
        """Extend every alive hypothesis with its row of next-token log-probs."""
        k = self.beam_width
        candidates = []
        for h, row in zip(self.alive, lp):
            # a parent contributes at most k survivors, all from its own top
            # values (ties kept so the tie-break stays exact)
            if row.size > k:
                cut = np.partition(row, row.size - k)[row.size - k]
                toks_idx = np.flatnonzero(row >= cut)
            else:
                toks_idx = range(row.size)
            for tok in toks_idx:
                val = row[tok]
                if val == -np.inf:
                    continue
                tok = int(tok)
                candidates.append(BeamHypothesis(h.tokens + (tok,), h.logprob + float(val), tok == self.eos_id))
        candidates.sort(key=_rank_key)
        kept = candidates[:k]
        self.finished.extend(h for h in kept if h.finished)
        self.alive = [h for h in kept if not h.finished]

    def result(self):
        for h in self.alive:
            h.finished = True
        return sorted(self.finished + self.alive, key=_rank_key)[: self.beam_width]


def beam_search(step_logprobs, beam_width, max_len, eos_id=EOS_ID):
    """Length-normalized beam search over a generic next-token scorer.

    ``step_logprobs(prefixes)`` receives a list of token tuples (all the
    same length) and returns an array (len(prefixes), V) of log-probs.
    Candidates are ranked by mean log-probability, ties by token ids.
    """
    state = _BeamState(beam_width, eos_id)
    for _ in range(max_len):
        if not state.alive:
            break
        state.advance(np.asarray(step_logprobs([h.tokens for h in state.alive]), dtype=np.float64))
    return state.result()


def beam_search_many(step_logprobs, n, beam_width, max_len, eos_id=EOS_ID):
    """``n`` independent beam searches advanced in lockstep.

    ``step_logprobs(owners, prefixes)`` scores every alive hypothesis of
    every search at once; ``owners[i]`` is the search that prefix ``i``
    belongs to.  Each search gets exactly what :func:`beam_search` returns.
    """
    states = [_BeamState(beam_width, eos_id) for _ in range(n)]
    for _ in range(max_len):
        owners = [i for i, s in enumerate(states) for _ in s.alive]
        if not owners:
            break
        prefixes = [h.tokens for s in states for h in s.alive]
        lp = np.asarray(step_logprobs(owners, prefixes), dtype=np.float64)
        start = 0
        for s in states:
            m = len(s.alive)
            if m:
                s.advance(lp[start:start + m])
            start += m
    return [s.result() for s in states]


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class FullDecoderScorer:
    """Reference scorer that reruns the whole decoder for every prefix."""

    def __init__(self, model, source_tokens):
        self.model = model
        g = Graph(record=False)
        src = _pad([list(source_tokens)])
        if model.config.encoder_layers:
            self.memory, self.mask = model.encode(g, src)
        else:
            self.memory, self.mask = None, None

    def __call__(self, prefixes):
        n = len(prefixes)
        dec_in = np.array([(BOS_ID,) + tuple(p) for p in prefixes], dtype=np.int64)
        g = Graph(record=False)
        memory, mask = self.memory, self.mask
        if memory is not None and n > 1:
            memory = Tensor(np.repeat(memory.values, n, axis=0))
            mask = np.repeat(mask, n, axis=0)
        lp = _log_softmax(self.model.decode(g, dec_in, memory, mask, last_only=True).values[:, -1, :])
        lp[:, [PAD_ID, BOS_ID]] = -np.inf
        return lp


class _IncrementalScorer:
    """Next-token log-probs with cached decoder keys and values.

    The cache is keyed by ``(owner, prefix)``; a child prefix extends its
    parent's cached keys/values by one position, so each step runs the
    decoder on the newest token only.  PAD and BOS are never proposed.
    """

    def __init__(self, model, sources):
        self.model = model
        cfg = model.config
        self.g = g = Graph(record=False)
        self.cross = []
        self.mask = None
        if cfg.encoder_layers:
            memory, self.mask = model.encode(g, _pad([list(s) for s in sources]))
            for i in range(cfg.decoder_layers):
                p = f"decoder.layers.{i}.encoder_attn"
                k = model._split_heads(g, model._linear(g, memory, p + ".k")).values
                v = model._split_heads(g, model._linear(g, memory, p + ".v")).values
                self.cross.append((k, v))
        self.rows = {}  # (owner, prefix) -> row in self.cache
        self.cache = None  # per layer (K, V), each (rows, heads, t, head_dim)

    def _attend(self, prefix, x, k_all, v_all, mask, prefix_kv):
        m, g = self.model, self.g
        q = m._split_heads(g, g.scale(m._linear(g, x, prefix + ".q"), m.config.head_dim ** -0.5)).values
        scores = q @ np.swapaxes(k_all, -1, -2)
        if mask is not None:
            scores = scores + mask
        if prefix_kv is not None:
            kp = m._prefix_heads(g, prefix_kv[0]).values
            vp = m._prefix_heads(g, prefix_kv[1]).values
            n_pre = kp.shape[2]
            probs = g.softmax(Tensor(np.concatenate([q @ np.swapaxes(kp, -1, -2), scores], axis=-1))).values
            ctx = probs[..., :n_pre] @ vp + probs[..., n_pre:] @ v_all
        else:
            ctx = g.softmax(Tensor(scores)).values @ v_all
        b = ctx.shape[0]
        ctx = Tensor(np.swapaxes(ctx, 1, 2).reshape(b, 1, m.config.d_model))
        return m._linear(g, ctx, prefix + ".o")

    def __call__(self, owners, prefixes):
        m, g, cfg = self.model, self.g, self.model.config
        t = len(prefixes[0])
        if t >= cfg.max_positions:
            raise ValueError(f"sequence length {t + 1} exceeds max_positions {cfg.max_positions}")
        last = np.array([p[-1] if p else BOS_ID for p in prefixes], dtype=np.int64)
        parents = [self.rows[(o, p[:-1])] for o, p in zip(owners, prefixes)] if t else None
        tok = g.embedding(m.token_embedding, last[:, None])
        pos = g.embedding(m.params["decoder.embed_positions"], np.array([t]))
        x = m._layernorm(g, g.add(tok, pos), "decoder.layernorm_embedding")
        idx = np.asarray(owners)
        new_cache = []
        for i in range(cfg.decoder_layers):
            p = f"decoder.layers.{i}"
            k = m._split_heads(g, m._linear(g, x, p + ".self_attn.k")).values
            v = m._split_heads(g, m._linear(g, x, p + ".self_attn.v")).values
            if parents is not None:
                pk, pv = self.cache[i]
                k = np.concatenate([pk[parents], k], axis=2)
                v = np.concatenate([pv[parents], v], axis=2)
            new_cache.append((k, v))
            a = self._attend(p + ".self_attn", x, k, v, None, m._prefix_kv("decoder", i))
            x = m._layernorm(g, g.add(x, a), p + ".self_attn_layer_norm")
            if self.cross:
                ck, cv = self.cross[i]
                c = self._attend(p + ".encoder_attn", x, ck[idx], cv[idx], self.mask[idx], None)
                x = m._layernorm(g, g.add(x, c), p + ".encoder_attn_layer_norm")
            x = m._layernorm(g, g.add(x, m._ffn(g, x, p)), p + ".final_layer_norm")
        self.cache = new_cache
        self.rows = {(o, pr): r for r, (o, pr) in enumerate(zip(owners, prefixes))}
        lp = _log_softmax(m.logits(g, x).values[:, -1, :])
        lp[:, [PAD_ID, BOS_ID]] = -np.inf
        return lp


def beam_decode(model, source_tokens, beam_width=5, max_len=64):
    """Top-``beam_width`` hypotheses for ``source_tokens``, best first."""
    source_tokens = list(source_tokens)
    if not source_tokens:
        raise ValueError("empty source")
    return beam_decode_many(model, [source_tokens], beam_width, max_len)[0]


def beam_decode_many(model, sources, beam_width=5, max_len=64):
    """:func:`beam_decode` for several sources, sharing each decoder step."""
    sources = [list(s) for s in sources]
    if any(not s for s in sources):
        raise ValueError("empty source")
    if not sources:
        return []
    max_len = min(max_len, model.config.max_positions)
    return beam_search_many(_IncrementalScorer(model, sources), len(sources), beam_width, max_len)


def greedy_decode(model, source_tokens, max_len=64):
    source_tokens = list(source_tokens)
    if not source_tokens:
        raise ValueError("empty source")
    inc = _IncrementalScorer(model, [source_tokens])
    scorer = lambda prefixes: inc([0] * len(prefixes), prefixes)  # noqa: E731
    out = ()
    logprob = 0.0
    for _ in range(min(max_len, model.config.max_positions)):
        lp = scorer([out])[0]
        tok = int(np.argmax(lp))
        out += (tok,)
        logprob += float(lp[tok])
        if tok == EOS_ID:
            break
    return BeamHypothesis(out, logprob, True)


def strip_special(tokens):
    out = []
    for t in tokens:
        if t == EOS_ID:
            break
        if t not in (PAD_ID, BOS_ID):
            out.append(t)
    return out
