"""A small Java lexer and the identifier/literal abstraction built on it."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .corpus import JAVA_KEYWORDS


class LexError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # ident keyword string char int float bool null op
    text: str


_OPERATORS = sorted(
    """>>>= <<= >>= >>> ... -> :: ++ -- && || == != <= >= += -= *= /= &= |= ^= %= << >>
    { } ( ) [ ] ; , . @ = < > ! ~ ? : + - * / & | ^ %""".split(),
    key=len,
    reverse=True,
)

_SPEC = [
    ("ws", r"\s+"),
    ("comment", r"//[^\n]*|/\*.*?\*/"),
    ("string", r'"(?:[^"\\\n]|\\.)*"'),
    ("char", r"'(?:[^'\\\n]|\\.)+'"),
    ("float", r"(?:\d[\d_]*\.\d*(?:[eE][+-]?\d+)?[fFdD]?"
              r"|\.\d+(?:[eE][+-]?\d+)?[fFdD]?"
              r"|\d[\d_]*[eE][+-]?\d+[fFdD]?"
              r"|\d[\d_]*[fFdD])"),
    ("int", r"(?:0[xX][0-9a-fA-F_]+|0[bB][01_]+|\d[\d_]*)[lL]?"),
    ("ident", r"[^\W\d][\w$]*|\$[\w$]*"),
    ("op", "|".join(re.escape(o) for o in _OPERATORS)),
]
_MASTER = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _SPEC), re.DOTALL)


def lex(code, strict=True):
    """Tokenize ``code``; whitespace and comments are dropped.

    In strict mode any character no rule accepts raises :class:`LexError`;
    otherwise it is skipped.
    """
    out = []
    pos, n = 0, len(code)
    while pos < n:
        m = _MASTER.match(code, pos)
        if m is None or m.end() == pos:
            if strict:
                raise LexError(f"cannot lex {code[pos:pos + 10]!r} at offset {pos}")
            pos += 1
            continue
        kind = m.lastgroup
        text = m.group(0)
        pos = m.end()
        if kind in ("ws", "comment"):
            continue
        if kind == "ident":
            if text in ("true", "false"):
                kind = "bool"
            elif text == "null":
                kind = "null"
            elif text in JAVA_KEYWORDS:
                kind = "keyword"
        out.append(Token(kind, text))
    return out


def code_tokens(code):
    """Token texts for n-gram metrics (lenient: never fails)."""
    return [t.text for t in lex(code, strict=False)]


_LITERALS = {"string": "STRING_LIT", "char": "CHAR_LIT", "int": "INT_LIT", "float": "FLOAT_LIT", "bool": "BOOL_LIT"}
_TYPE_CONTEXT = {"new", "extends", "implements", "instanceof", "throws", "@", "class", "interface", "enum"}


def _camel_type(name):
    return name[0].isupper() and any(c.islower() for c in name)


def classify(tokens):
    """Category of every token: TYPE / METHOD / VAR for identifiers, else None."""
    cats = []
    for i, tok in enumerate(tokens):
        if tok.kind != "ident":
            cats.append(None)
            continue
        prev = tokens[i - 1].text if i > 0 else ""
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        nxt_text = nxt.text if nxt else ""
        if prev in _TYPE_CONTEXT:
            cat = "TYPE"
        elif nxt_text == "(":
            cat = "METHOD"
        elif nxt is not None and nxt.kind == "ident":
            cat = "TYPE"
        elif nxt_text == "[" and i + 2 < len(tokens) and tokens[i + 2].text == "]":
            cat = "TYPE"
        elif nxt_text == "..." or (nxt_text == "<" and _camel_type(tok.text)):
            cat = "TYPE"
        elif _camel_type(tok.text):
            cat = "TYPE"
        else:
            cat = "VAR"
        cats.append(cat)
    return cats


class AbstractedForm(tuple):
    def __str__(self):
        return " ".join(self)


def abstract_code(code):
    """Replace identifiers and literals with category placeholders."""
    tokens = lex(code, strict=True)
    out = []
    for tok, cat in zip(tokens, classify(tokens)):
        if cat is not None:
            out.append(cat)
        elif tok.kind in _LITERALS:
            out.append(_LITERALS[tok.kind])
        else:
            out.append(tok.text)
    return AbstractedForm(out)


def identifiers(code, categories=("VAR", "METHOD")):
    """Variable and method names, in order, from leniently lexed ``code``."""
    tokens = lex(code, strict=False)
    return [t.text for t, c in zip(tokens, classify(tokens)) if c in categories]
