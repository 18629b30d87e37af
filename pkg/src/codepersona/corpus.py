"""Project corpora and the shared-token diversity statistic.

The analysis tokenizer mirrors gensim's ``tokenize(lowercase=True)``:
maximal runs of non-digit word characters, lowercased.  camelCase is kept
as one token.  Java reserved words are dropped like stopwords.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

TOKENIZER_VERSION = "analysis-v1"

# Java SE 8 keywords (JLS 3.9) plus the reserved literals true/false/null.
JAVA_KEYWORDS = frozenset(
    """
    abstract assert boolean break byte case catch char class const continue
    default do double else enum extends final finally float for goto if
    implements import instanceof int interface long native new package
    private protected public return short static strictfp super switch
    synchronized this throw throws transient try void volatile while
    true false null
    """.split()
)

_WORD = re.compile(r"(?:(?!\d)\w)+", re.UNICODE)
_LICENSE = re.compile(r"licen[cs]e|copyright|apache|\bmit\b", re.IGNORECASE)


def _scan(text):
    """Yield ``(kind, start, end)`` spans: code, string, comment."""
    i, n = 0, len(text)
    start = 0
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] in "/*":
            if start < i:
                yield "code", start, i
            if text[i + 1] == "/":
                j = text.find("\n", i)
                j = n if j < 0 else j
            else:
                j = text.find("*/", i + 2)
                j = n if j < 0 else j + 2
            yield "comment", i, j
            i = start = j
        elif c in "\"'":
            if start < i:
                yield "code", start, i
            j = i + 1
            while j < n and text[j] != c and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            j = min(j + 1, n)
            yield "string", i, j
            i = start = j
        else:
            i += 1
    if start < n:
        yield "code", start, n


def strip_noise(text, drop_comments=True):
    """Remove comments (and with them license headers), keeping literals intact.

    With ``drop_comments=False`` only a leading license block comment is
    removed.
    """
    out = []
    leading = True
    for kind, a, b in _scan(text):
        piece = text[a:b]
        if kind == "comment":
            if drop_comments or (leading and piece.startswith("/*") and _LICENSE.search(piece)):
                leading = False
                continue
        if piece.strip():
            leading = False
        out.append(piece)
    return "".join(out)


def analysis_token_list(text):
    return [t for t in (m.group(0).lower() for m in _WORD.finditer(text)) if t not in JAVA_KEYWORDS]


def analysis_tokens(text):
    """Unique lowercase word tokens of ``text`` minus Java reserved words."""
    return set(analysis_token_list(text))


@dataclass(frozen=True)
class ProjectCorpus:
    project_id: str
    texts: tuple = field(default_factory=tuple)
    tokenizer_version: str = TOKENIZER_VERSION

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))

    @cached_property
    def _counts(self):
        c = Counter()
        for t in self.texts:
            c.update(analysis_token_list(strip_noise(t)))
        return c

    def token_counts(self):
        return dict(self._counts)

    def token_set(self):
        return set(self._counts)


@dataclass(frozen=True)
class SharedTokenMatrix:
    project_ids: tuple
    ratios: np.ndarray  # ratios[i, j] = |T_i & T_j| / |T_i|
    sizes: tuple
    tokenizer_version: str = TOKENIZER_VERSION

    def off_diagonal(self):
        n = len(self.project_ids)
        return self.ratios[~np.eye(n, dtype=bool)]

    def median_off_diagonal(self):
        return float(np.median(self.off_diagonal()))

    def quantile_off_diagonal(self, q):
        return float(np.quantile(self.off_diagonal(), q))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["project"] + list(self.project_ids))
            for pid, row in zip(self.project_ids, self.ratios):
                w.writerow([pid] + [f"{v:.6f}" for v in row])


def shared_matrix(projects):
    projects = list(projects)
    if len(projects) < 2:
        raise ValueError("need at least two projects")
    sets = {}
    for p in projects:
        s = p.token_set()
        if not s:
            raise ValueError(f"project {p.project_id!r} has no tokens; ratio undefined")
        sets[p.project_id] = s
    order = sorted(sets, key=lambda pid: (len(sets[pid]), pid))
    n = len(order)
    r = np.empty((n, n))
    for i, a in enumerate(order):
        for j, b in enumerate(order):
            r[i, j] = 1.0 if i == j else len(sets[a] & sets[b]) / len(sets[a])
    return SharedTokenMatrix(tuple(order), r, tuple(len(sets[p]) for p in order))


def corpus_stats(project):
    counts = project.token_counts()
    return {
        "project_id": project.project_id,
        "files": len(project.texts),
        "tokens": sum(counts.values()),
        "unique_tokens": len(counts),
        "tokenizer_version": project.tokenizer_version,
    }


def load_corpora(path, suffix=".java"):
    """Read project corpora from a directory of per-project folders or JSONL.

    JSONL rows carry ``project_id``, ``path`` and ``text``.
    """
    path = Path(path)
    files = {}
    if path.is_dir():
        for proj in sorted(p for p in path.iterdir() if p.is_dir()):
            files[proj.name] = [f.read_text(errors="replace") for f in sorted(proj.rglob(f"*{suffix}"))]
    else:
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    files.setdefault(str(row["project_id"]), []).append(row["text"])
    return [ProjectCorpus(pid, tuple(texts)) for pid, texts in files.items()]


def write_corpora_jsonl(path, corpora):
    with open(path, "w") as fh:
        for c in corpora:
            for i, text in enumerate(c.texts):
                fh.write(json.dumps({"project_id": c.project_id, "path": f"file{i}.java", "text": text}) + "\n")
