"""Synthetic Java-like projects for desk-scale personalization experiments.

Each project owns a set of domain nouns.  A noun expands into a fixed
family of identifiers (``Order``, ``OrderService``, ``getOrder`` ...), so
sharing a noun shares exactly that family of analysis tokens.  The first
``k`` nouns of every project come from one global pool, with ``k`` chosen
so that the shared fraction of each project's unique tokens is close to the
requested overlap.  Every project also gets a private testing style
(fixture name, assertion idiom, literals) that only its own data reveals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import JAVA_KEYWORDS, ProjectCorpus
from .dataset import FocalExample

VERBS = ("get", "find", "create", "update", "delete", "count")
TEST_PREFIXES = ("test", "should", "verify", "check", "when", "it")
ASSERT_STYLES = ("junit", "fluent", "qualified")
SETUP_STYLES = ("inline", "factory")

_ONSETS = "b c d f g h j k l m n p r s t v z br cr dr fl gr pl tr st".split()
_VOWELS = "a e i o u".split()
_CODAS = ["", "", "", "n", "r", "l", "x", "m"]


@dataclass
class ProjectStyle:
    store_field: str
    fixture: str
    result_var: str
    test_prefix: str
    assert_style: str
    setup_style: str
    factory: str
    literal: str
    id_value: int
    package: str


@dataclass
class SyntheticProject:
    project_id: str
    nouns: list
    shared_nouns: int
    style: ProjectStyle
    corpus: ProjectCorpus
    examples: list = field(default_factory=list)


class _WordSource:
    def __init__(self, rng, reserved=()):
        self.rng = rng
        self.used = set(JAVA_KEYWORDS) | set(reserved)

    def word(self, syllables=(2, 3)):
        while True:
            n = int(self.rng.integers(syllables[0], syllables[1] + 1))
            parts = []
            for _ in range(n):
                parts.append(_ONSETS[self.rng.integers(len(_ONSETS))])
                parts.append(_VOWELS[self.rng.integers(len(_VOWELS))])
            parts.append(_CODAS[self.rng.integers(len(_CODAS))])
            w = "".join(parts)
            if w not in self.used:
                self.used.add(w)
                return w


def _cap(w):
    return w[0].upper() + w[1:]


def noun_tokens(noun):
    """Analysis tokens contributed by one noun's identifier family."""
    n = noun.lower()
    return {n, n + "service"} | {v + n for v in VERBS}


TOKENS_PER_NOUN = 2 + len(VERBS)


def _source_files(nouns, style):
    files = []
    for noun in nouns:
        n = noun[0].lower() + noun[1:]
        files.append(
            f"package {style.package};\n\n"
            f"public class {noun} {{\n"
            f"    private String name;\n\n"
            f"    public {noun}(String name) {{\n        this.name = name;\n    }}\n\n"
            f"    public String getName() {{\n        return name;\n    }}\n}}\n"
        )
        methods = "\n\n".join("    " + _focal_body(noun, n, v, style) for v in VERBS)
        files.append(
            f"package {style.package};\n\nimport java.util.List;\n\n"
            f"public class {noun}Service {{\n"
            f"    private final Store<{noun}> {style.store_field} = new Store<>();\n\n"
            f"{methods}\n}}\n"
        )
    files.append(
        "/*\n * Licensed under the Apache License, Version 2.0\n */\n"
        f"package {style.package};\n\n"
        f"public final class {style.factory} {{\n"
        f"    // test fixtures\n"
        f"    private {style.factory}() {{\n    }}\n}}\n"
    )
    return files


def _focal_body(noun, n, verb, style):
    s = style.store_field
    if verb == "get":
        return f"public {noun} get{noun}(long id) {{ return {s}.get(id); }}"
    if verb == "find":
        return f"public List<{noun}> find{noun}(String name) {{ return {s}.query(name); }}"
    if verb == "create":
        return (f"public {noun} create{noun}(String name) {{ {noun} {n} = new {noun}(name); "
                f"{s}.add({n}); return {n}; }}")
    if verb == "update":
        return f"public void update{noun}({noun} {n}) {{ {s}.put({n}); }}"
    if verb == "delete":
        return f"public boolean delete{noun}(long id) {{ return {s}.remove(id); }}"
    return f"public int count{noun}() {{ return {s}.size(); }}"


def _assert(style, kind, *args):
    if style.assert_style == "fluent":
        if kind == "equals":
            return f"assertThat({args[1]}).isEqualTo({args[0]});"
        if kind == "notnull":
            return f"assertThat({args[0]}).isNotNull();"
        return f"assertThat({args[0]}).isTrue();"
    prefix = "Assert." if style.assert_style == "qualified" else ""
    if kind == "equals":
        return f"{prefix}assertEquals({args[0]}, {args[1]});"
    if kind == "notnull":
        return f"{prefix}assertNotNull({args[0]});"
    return f"{prefix}assertTrue({args[0]});"


def _test_body(noun, n, verb, style):
    svc = f"{noun}Service"
    fx, r = style.fixture, style.result_var
    if style.setup_style == "factory":
        setup = f"{svc} {fx} = {style.factory}.new{svc}();"
    else:
        setup = f"{svc} {fx} = new {svc}();"
    lit = f'"{style.literal}"'
    if verb == "get":
        body = f"{noun} {r} = {fx}.get{noun}({style.id_value}L); " + _assert(style, "notnull", r)
    elif verb == "find":
        body = f"List<{noun}> {r} = {fx}.find{noun}({lit}); " + _assert(style, "notnull", r)
    elif verb == "create":
        body = f"{noun} {r} = {fx}.create{noun}({lit}); " + _assert(style, "equals", lit, f"{r}.getName()")
    elif verb == "update":
        body = (f"{noun} {n} = new {noun}({lit}); {fx}.update{noun}({n}); "
                + _assert(style, "equals", "1", f"{fx}.count{noun}()"))
    elif verb == "delete":
        body = _assert(style, "true", f"{fx}.delete{noun}({style.id_value}L)")
    else:
        body = _assert(style, "equals", "0", f"{fx}.count{noun}()")
    name = f"{style.test_prefix}{_cap(verb)}{noun}"
    return f"@Test public void {name}() {{ {setup} {body} }}"


def _make_style(words, rng):
    return ProjectStyle(
        store_field=words.word((2, 2)),
        fixture=words.word((1, 2)),
        result_var=words.word((2, 2)),
        test_prefix=TEST_PREFIXES[rng.integers(len(TEST_PREFIXES))],
        assert_style=ASSERT_STYLES[rng.integers(len(ASSERT_STYLES))],
        setup_style=SETUP_STYLES[rng.integers(len(SETUP_STYLES))],
        factory=_cap(words.word((2, 2))) + "Fixtures",
        literal=words.word((2, 2)),
        id_value=int(rng.integers(10, 100)),
        package=words.word((2, 2)),
    )


def _floor_tokens(style):
    """Analysis tokens of one project that do not come from its nouns."""
    probe = "Qqzzyx"
    corpus = ProjectCorpus("_", tuple(_source_files([probe], style)))
    return set(corpus.token_set()) - noun_tokens(probe)


def shared_noun_count(overlap, n_nouns, other_tokens, common_tokens):
    """Nouns to draw from the global pool so the shared token fraction ~ ``overlap``."""
    total = n_nouns * TOKENS_PER_NOUN + other_tokens
    k = round((overlap * total - common_tokens) / TOKENS_PER_NOUN)
    return int(min(max(k, 0), n_nouns))


def generate_synthetic_projects(n_projects, vocab_overlap, size_range=(12, 20), seed=0,
                                id_prefix="proj", examples_per_noun=None):
    """Generate ``n_projects`` projects with their corpora and focal/test pairs."""
    if n_projects < 1:
        raise ValueError("n_projects must be >= 1")
    if not 0.0 <= vocab_overlap <= 1.0:
        raise ValueError("vocab_overlap must be in [0, 1]")
    lo, hi = size_range
    if lo < 1 or hi < lo:
        raise ValueError("size_range must satisfy 1 <= lo <= hi")
    rng = np.random.default_rng(seed)
    words = _WordSource(rng, reserved={"name", "store", "list", "string", "id"})
    pool = [_cap(words.word()) for _ in range(hi)]
    projects = []
    for p in range(n_projects):
        style = _make_style(words, rng)
        floor = _floor_tokens(style)
        common = {t for t in floor if t not in {
            style.package, style.store_field, style.factory.lower()}}
        n_nouns = int(rng.integers(lo, hi + 1))
        k = shared_noun_count(vocab_overlap, n_nouns, len(floor), len(common))
        nouns = pool[:k] + [_cap(words.word()) for _ in range(n_nouns - k)]
        pid = f"{id_prefix}{p:02d}"
        corpus = ProjectCorpus(pid, tuple(_source_files(nouns, style)))
        examples = []
        for noun in nouns:
            n = noun[0].lower() + noun[1:]
            verbs = VERBS
            if examples_per_noun is not None:
                verbs = [VERBS[i] for i in sorted(rng.choice(len(VERBS), examples_per_noun, replace=False))]
            for verb in verbs:
                focal = f"class {noun}Service {{ {_focal_body(noun, n, verb, style)} }}"
                examples.append(FocalExample(pid, focal, _test_body(noun, n, verb, style),
                                             f"{pid}:{verb}{noun}"))
        projects.append(SyntheticProject(pid, nouns, k, style, corpus, examples))
    return projects
