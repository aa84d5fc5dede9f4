"""Minimal Praat TextGrid reader (long and short text formats, interval tiers)."""
import re

from .errors import ParseError

_TOKEN = re.compile(r'"((?:[^"]|"")*)"|(<exists>|<absent>)|(\[[^\]]*\])|([-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|[-+]?\.\d+(?:[eE][-+]?\d+)?)')


def _tokens(text):
    # Bracketed item indices ("item [2]:") and "name =" keys are dropped;
    # what remains is the same value stream in both file layouts.
    out = []
    for m in _TOKEN.finditer(text):
        s, flag, _bracket, num = m.groups()
        if s is not None:
            out.append(s.replace('""', '"'))
        elif flag is not None:
            out.append(flag)
        elif num is not None:
            out.append(float(num))
    return out


def parse_textgrid(text):
    """Return ``(xmin, xmax, {tier name: [(start, end, mark), ...]})``.

    Point tiers are skipped.
    """
    tok = _tokens(text)
    pos = 0

    def take(kind):
        nonlocal pos
        if pos >= len(tok):
            raise ParseError("unexpected end of TextGrid")
        v = tok[pos]
        pos += 1
        if kind is float and not isinstance(v, float):
            raise ParseError(f"expected a number in TextGrid, got {v!r}")
        if kind is str and not isinstance(v, str):
            raise ParseError(f"expected a string in TextGrid, got {v!r}")
        return v

    if take(str) != "ooTextFile" or take(str) != "TextGrid":
        raise ParseError("not a Praat TextGrid text file")
    xmin, xmax = take(float), take(float)
    if take(str) != "<exists>":
        return xmin, xmax, {}
    n_tiers = int(take(float))
    tiers = {}
    for _ in range(n_tiers):
        cls, name = take(str), take(str)
        take(float)
        take(float)
        n = int(take(float))
        if cls == "IntervalTier":
            tiers[name] = [(take(float), take(float), take(str)) for _ in range(n)]
        elif cls == "TextTier":
            for _ in range(n):
                take(float)
                take(str)
        else:
            raise ParseError(f"unknown tier class {cls!r}")
    return xmin, xmax, tiers
