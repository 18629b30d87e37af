"""Byte-level BPE vocabulary for the model.

Ids 0-2 are the special tokens, 3-258 the raw bytes, then one id per learned
merge.  Text is pre-split into word / punctuation / whitespace runs, with a
single leading space kept on the following run, so merges never cross those
boundaries.  Every byte sequence is encodable, so ``decode(encode(s)) == s``
for any string.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from pathlib import Path

SPECIALS = ("<pad>", "<bos>", "<eos>")
BYTE_OFFSET = len(SPECIALS)
VERSION = "bpe-v1"

_PRETOKEN = re.compile(r" ?\w+| ?[^\w\s]+|\s+(?!\S)|\s+", re.UNICODE)


def _pretokens(text):
    return _PRETOKEN.findall(text)


def _to_bytes(s):
    return s.encode("utf-8", errors="surrogatepass")


class SubwordVocabulary:
    def __init__(self, merges=()):
        self.merges = [tuple(m) for m in merges]
        self.token_bytes = [s.encode() for s in SPECIALS] + [bytes([b]) for b in range(256)]
        self.ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            self.ranks[(a, b)] = rank
            self.token_bytes.append(self.token_bytes[a] + self.token_bytes[b])
        self.token_to_id = {t: i for i, t in enumerate(self.token_bytes) if i >= BYTE_OFFSET}
        self._cache = {}

    def __len__(self):
        return len(self.token_bytes)

    @property
    def size(self):
        return len(self.token_bytes)

    def _encode_chunk(self, chunk):
        ids = self._cache.get(chunk)
        if ids is not None:
            return ids
        ids = [b + BYTE_OFFSET for b in _to_bytes(chunk)]
        while len(ids) > 1:
            best = min(
                ((self.ranks[p], i) for i, p in enumerate(zip(ids, ids[1:])) if p in self.ranks),
                default=None,
            )
            if best is None:
                break
            pair = (ids[best[1]], ids[best[1] + 1])
            ids = _merge(ids, pair, BYTE_OFFSET + 256 + best[0])
        if len(self._cache) < 100_000:
            self._cache[chunk] = ids
        return ids

    def encode(self, text):
        out = []
        for chunk in _pretokens(text):
            out.extend(self._encode_chunk(chunk))
        return out

    def decode(self, ids):
        raw = b"".join(self.token_bytes[i] for i in ids if i >= BYTE_OFFSET)
        try:
            return raw.decode("utf-8", errors="surrogatepass")
        except UnicodeDecodeError:
            # model output can split a multi-byte character
            return raw.decode("utf-8", errors="replace")

    def to_json(self):
        return json.dumps({"version": VERSION, "merges": self.merges})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(data["merges"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _merge(ids, pair, new_id):
    out = []
    i = 0
    n = len(ids)
    while i < n:
        if i + 1 < n and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def train_vocab(texts, vocab_size):
    """Learn merges until the vocabulary holds ``vocab_size`` tokens.

    The most frequent adjacent pair is merged first; equal counts go to the
    lexicographically smallest byte pair.
    """
    if vocab_size < BYTE_OFFSET + 256:
        raise ValueError(f"vocab_size must be at least {BYTE_OFFSET + 256}")
    freq = Counter()
    for t in texts:
        freq.update(_pretokens(t))
    words = [[b + BYTE_OFFSET for b in _to_bytes(w)] for w in freq]
    counts = list(freq.values())
    token_bytes = [s.encode() for s in SPECIALS] + [bytes([b]) for b in range(256)]
    merges = []
    while len(token_bytes) < vocab_size:
        pairs = Counter()
        for ids, c in zip(words, counts):
            for p in zip(ids, ids[1:]):
                pairs[p] += c
        if not pairs:
            break
        top = max(pairs.values())
        best = min(
            (p for p, c in pairs.items() if c == top),
            key=lambda p: (token_bytes[p[0]], token_bytes[p[1]]),
        )
        new_id = len(token_bytes)
        merges.append(best)
        token_bytes.append(token_bytes[best[0]] + token_bytes[best[1]])
        words = [_merge(ids, best, new_id) if len(ids) > 1 else ids for ids in words]
    return SubwordVocabulary(merges)
