"""Tiny s-expression layer used by the dump formats and golden tests.

An s-expression is either a string atom or a list of s-expressions.
"""

from minats.errors import SyntaxError_


def dumps(sx) -> str:
    if isinstance(sx, str):
        return sx
    return "(" + " ".join(dumps(x) for x in sx) + ")"


def loads(text: str):
    toks = _tokenize(text)
    sx, rest = _parse(toks, 0)
    if rest != len(toks):
        raise SyntaxError_("trailing tokens in s-expression")
    return sx


def loads_many(text: str):
    toks = _tokenize(text)
    out = []
    i = 0
    while i < len(toks):
        sx, i = _parse(toks, i)
        out.append(sx)
    return out


def _tokenize(text):
    toks = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            toks.append(c)
            i += 1
        elif c == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "();":
                j += 1
            toks.append(text[i:j])
            i = j
    return toks


def _parse(toks, i):
    if i >= len(toks):
        raise SyntaxError_("unexpected end of s-expression")
    if toks[i] == "(":
        items = []
        i += 1
        while i < len(toks) and toks[i] != ")":
            item, i = _parse(toks, i)
            items.append(item)
        if i >= len(toks):
            raise SyntaxError_("unclosed parenthesis")
        return items, i + 1
    if toks[i] == ")":
        raise SyntaxError_("unexpected ')'")
    return toks[i], i + 1
