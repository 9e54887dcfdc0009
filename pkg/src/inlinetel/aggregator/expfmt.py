"""Parser for the text exposition format (0.0.4)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from ..exposition import LABEL_NAME_RE, METRIC_NAME_RE


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str) -> None:
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class ParsedSample(NamedTuple):
    name: str
    labels: tuple  # sorted (name, value) pairs
    value: float
    timestamp_ms: int | None = None


@dataclass
class Exposition:
    samples: list[ParsedSample] = field(default_factory=list)
    types: dict[str, str] = field(default_factory=dict)
    help: dict[str, str] = field(default_factory=dict)


_VALUE_WORDS = {"nan": math.nan, "+inf": math.inf, "inf": math.inf, "-inf": -math.inf}


def _parse_float(tok: str, lineno: int) -> float:
    low = tok.lower()
    if low in _VALUE_WORDS:
        return _VALUE_WORDS[low]
    try:
        return float(tok)
    except ValueError:
        raise ParseError(lineno, f"bad value {tok!r}") from None


def _unescape_help(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            n = s[i + 1]
            out.append("\n" if n == "n" else n if n == "\\" else c + n)
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _parse_labels(line: str, i: int, lineno: int) -> tuple[tuple, int]:
    """Parse ``{...}`` starting at ``line[i] == '{'``; returns labels and the index after '}'."""
    labels = []
    i += 1
    n = len(line)
    while True:
        while i < n and line[i] in " \t":
            i += 1
        if i >= n:
            raise ParseError(lineno, "unterminated label set")
        if line[i] == "}":
            return tuple(sorted(labels)), i + 1
        j = i
        while j < n and (line[j].isalnum() or line[j] == "_"):
            j += 1
        lname = line[i:j]
        if not lname or not LABEL_NAME_RE.match(lname):
            raise ParseError(lineno, f"bad label name at column {i + 1}")
        i = j
        while i < n and line[i] in " \t":
            i += 1
        if i >= n or line[i] != "=":
            raise ParseError(lineno, f"expected '=' after label {lname!r}")
        i += 1
        while i < n and line[i] in " \t":
            i += 1
        if i >= n or line[i] != '"':
            raise ParseError(lineno, f"expected quoted value for label {lname!r}")
        i += 1
        buf = []
        while True:
            if i >= n:
                raise ParseError(lineno, "unterminated label value")
            c = line[i]
            if c == "\\":
                if i + 1 >= n:
                    raise ParseError(lineno, "dangling escape")
                e = line[i + 1]
                if e == "n":
                    buf.append("\n")
                elif e in ('"', "\\"):
                    buf.append(e)
                else:
                    raise ParseError(lineno, f"bad escape \\{e}")
                i += 2
            elif c == '"':
                i += 1
                break
            else:
                buf.append(c)
                i += 1
        if any(k == lname for k, _ in labels):
            raise ParseError(lineno, f"duplicate label {lname!r}")
        labels.append((lname, "".join(buf)))
        while i < n and line[i] in " \t":
            i += 1
        if i < n and line[i] == ",":
            i += 1
        elif i < n and line[i] == "}":
            continue
        else:
            raise ParseError(lineno, "expected ',' or '}' in label set")


def parse_exposition_full(text: str) -> Exposition:
    out = Exposition()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line.split(None, 3)
            if len(parts) >= 3 and parts[1] in ("HELP", "TYPE"):
                name = parts[2]
                if not METRIC_NAME_RE.match(name):
                    raise ParseError(lineno, f"bad metric name {name!r}")
                rest = parts[3] if len(parts) > 3 else ""
                if parts[1] == "TYPE":
                    kind = rest.strip()
                    if kind not in ("counter", "gauge", "histogram", "summary", "untyped"):
                        raise ParseError(lineno, f"bad type {kind!r}")
                    if name in out.types:
                        raise ParseError(lineno, f"second TYPE line for {name}")
                    out.types[name] = kind
                else:
                    out.help[name] = _unescape_help(rest)
            continue
        i = 0
        n = len(line)
        while i < n and (line[i].isalnum() or line[i] in "_:"):
            i += 1
        name = line[:i]
        if not name or not METRIC_NAME_RE.match(name):
            raise ParseError(lineno, "bad metric name")
        labels: tuple = ()
        if i < n and line[i] == "{":
            labels, i = _parse_labels(line, i, lineno)
        rest = line[i:].split()
        if not rest or len(rest) > 2 or (i < n and line[i] not in " \t"):
            raise ParseError(lineno, "expected value [timestamp] after metric")
        value = _parse_float(rest[0], lineno)
        ts = None
        if len(rest) == 2:
            try:
                ts = int(rest[1])
            except ValueError:
                raise ParseError(lineno, f"bad timestamp {rest[1]!r}") from None
        out.samples.append(ParsedSample(name, labels, value, ts))
    return out


def parse_exposition(text: str) -> list[ParsedSample]:
    return parse_exposition_full(text).samples
