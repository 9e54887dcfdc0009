"""A small PromQL subset evaluated against :class:`TimeSeriesStore`.

Supported: instant selectors with label matchers (``=``, ``!=``, ``=~``,
``!~``); ``rate``, ``increase`` and ``avg_over_time`` over a range selector;
``+ - * /`` where at least one side is a scalar. The grammar is written out
in docs/query.md.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

from .store import Series, TimeSeriesStore, counter_increase

NS = 1_000_000_000
FUNCTIONS = ("rate", "increase", "avg_over_time")
_UNITS = {"ms": 1_000_000, "s": NS, "m": 60 * NS, "h": 3600 * NS, "d": 86400 * NS}
_DURATION_RE = re.compile(r"(\d+(?:\.\d+)?)(ms|s|m|h|d)")


class QueryError(ValueError):
    """Raised for anything the engine cannot evaluate."""


class GrammarError(QueryError):
    def __init__(self, pos: int, msg: str) -> None:
        super().__init__(f"at {pos}: {msg}")
        self.pos = pos


def parse_duration(text: str) -> int:
    """``"90s"``, ``"1m30s"``, ``"500ms"`` → nanoseconds."""
    text = text.strip()
    pos = 0
    total = 0
    while pos < len(text):
        m = _DURATION_RE.match(text, pos)
        if not m:
            raise GrammarError(pos, f"bad duration {text!r}")
        total += int(round(float(m.group(1)) * _UNITS[m.group(2)]))
        pos = m.end()
    if total <= 0:
        raise GrammarError(0, f"duration must be positive: {text!r}")
    return total


# AST


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Matcher:
    name: str
    op: str
    value: str

    def __call__(self, labels: dict) -> bool:
        v = labels.get(self.name, "")
        if self.op == "=":
            return v == self.value
        if self.op == "!=":
            return v != self.value
        hit = re.fullmatch(self.value, v) is not None
        return hit if self.op == "=~" else not hit


@dataclass(frozen=True)
class Selector:
    name: str
    matchers: tuple = ()
    range_ns: int | None = None


@dataclass(frozen=True)
class Call:
    func: str
    arg: Selector


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: object
    rhs: object


Node = Union[Number, Selector, Call, BinOp]


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-zA-Z_:][a-zA-Z0-9_:]*)
  | (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<op>=~|!~|!=|[-+*/(){}\[\],=])
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos] == "[":
            end = text.find("]", pos)
            if end < 0:
                raise GrammarError(pos, "unterminated range")
            toks.append(("range", text[pos + 1:end], pos))
            pos = end + 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise GrammarError(pos, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), pos))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


def _unquote(s: str) -> str:
    body = s[1:-1]
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), body)


class _Parser:
    def __init__(self, text: str) -> None:
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind: str | None = None, value: str | None = None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value or kind
            raise GrammarError(tok[2], f"expected {want!r}, found {tok[1] or 'end of input'!r}")
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.additive()
        tok = self.peek()
        if tok[0] != "eof":
            raise GrammarError(tok[2], f"unexpected {tok[1]!r}")
        return node

    def additive(self) -> Node:
        node = self.multiplicative()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.multiplicative())
        return node

    def multiplicative(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("-", "+"):
            self.take()
            inner = self.unary()
            return BinOp("*", Number(-1.0), inner) if tok[1] == "-" else inner
        return self.primary()

    def primary(self) -> Node:
        kind, text, pos = self.peek()
        if kind == "num":
            self.take()
            return Number(float(text))
        if kind == "op" and text == "(":
            self.take()
            node = self.additive()
            self.take("op", ")")
            return node
        if kind == "ident":
            if text in FUNCTIONS and self.toks[self.i + 1][1] == "(":
                self.take()
                self.take("op", "(")
                sel = self.selector()
                if sel.range_ns is None:
                    raise GrammarError(pos, f"{text}() needs a range selector like m[5m]")
                self.take("op", ")")
                return Call(text, sel)
            if text in ("inf", "Inf", "nan", "NaN"):
                self.take()
                return Number(float(text))
            sel = self.selector()
            if sel.range_ns is not None:
                raise GrammarError(pos, "range selector is only allowed inside a function")
            return sel
        raise GrammarError(pos, f"unexpected {text or 'end of input'!r}")

    def selector(self) -> Selector:
        _, name, _ = self.take("ident")
        matchers = []
        if self.peek()[1] == "{":
            self.take()
            while self.peek()[1] != "}":
                _, lname, _ = self.take("ident")
                op_tok = self.take("op")
                if op_tok[1] not in ("=", "!=", "=~", "!~"):
                    raise GrammarError(op_tok[2], f"bad matcher operator {op_tok[1]!r}")
                _, sval, spos = self.take("str")
                val = _unquote(sval)
                if op_tok[1] in ("=~", "!~"):
                    try:
                        re.compile(val)
                    except re.error as exc:
                        raise GrammarError(spos, f"bad regex: {exc}") from None
                matchers.append(Matcher(lname, op_tok[1], val))
                if self.peek()[1] == ",":
                    self.take()
                elif self.peek()[1] != "}":
                    tok = self.peek()
                    raise GrammarError(tok[2], "expected ',' or '}'")
            self.take("op", "}")
        rng = None
        if self.peek()[0] == "range":
            _, body, rpos = self.take()
            try:
                rng = parse_duration(body)
            except GrammarError as exc:
                raise GrammarError(rpos, str(exc)) from None
        return Selector(name, tuple(matchers), rng)


def parse_query(text: str) -> Node:
    if not text or not text.strip():
        raise GrammarError(0, "empty expression")
    return _Parser(text).parse()


def parse_selector(text: str) -> Selector:
    node = parse_query(text)
    if not isinstance(node, Selector):
        raise GrammarError(0, "expected a plain metric selector")
    return node


# Evaluation

Vector = list  # of (labels tuple, value)


def _drop_name(labels: tuple) -> tuple:
    return tuple(kv for kv in labels if kv[0] != "__name__")


def match_series(store: TimeSeriesStore, sel: Selector) -> list[Series]:
    out = []
    for s in store.series_for(sel.name):
        d = dict(s.labels)
        if all(m(d) for m in sel.matchers):
            out.append(s)
    return out


def _apply(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        if a == 0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * (math.copysign(1.0, b))
    return a / b


class QueryEngine:
    """Evaluates parsed expressions; read-only with respect to the store."""

    def __init__(self, store: TimeSeriesStore, staleness_ns: int = 5 * 15 * NS) -> None:
        self.store = store
        self.staleness_ns = staleness_ns

    def eval(self, node: Node, t_ns: int) -> float | Vector:
        if isinstance(node, Number):
            return node.value
        if isinstance(node, Selector):
            out = []
            for s in match_series(self.store, node):
                last = self.store.last_before(s, t_ns)
                if last is None or last[0] < t_ns - self.staleness_ns:
                    continue
                out.append((tuple(sorted(s.labels + (("__name__", s.name),))), last[1]))
            return sorted(out)
        if isinstance(node, Call):
            return sorted(self._call(node, t_ns))
        if isinstance(node, BinOp):
            lhs = self.eval(node.lhs, t_ns)
            rhs = self.eval(node.rhs, t_ns)
            lscalar = isinstance(lhs, float)
            rscalar = isinstance(rhs, float)
            if lscalar and rscalar:
                return _apply(node.op, lhs, rhs)
            if not lscalar and not rscalar:
                raise QueryError("binary operations between two vectors are not supported")
            if lscalar:
                return [(_drop_name(l), _apply(node.op, lhs, v)) for l, v in rhs]
            return [(_drop_name(l), _apply(node.op, v, rhs)) for l, v in lhs]
        raise QueryError(f"cannot evaluate {node!r}")

    def _call(self, node: Call, t_ns: int) -> Vector:
        sel = node.arg
        w = sel.range_ns
        out = []
        for s in match_series(self.store, sel):
            _, vals = self.store.window(s, t_ns - w, t_ns)
            if node.func == "avg_over_time":
                if vals:
                    out.append((s.labels, sum(vals) / len(vals)))
                continue
            if len(vals) < 2:
                continue
            inc = counter_increase(vals)
            out.append((s.labels, inc if node.func == "increase" else inc / (w / NS)))
        return out


def _to_ns(t) -> int:
    return int(t)


def query_instant(store: TimeSeriesStore, expr: str | Node, t_ns: int,
                  staleness_ns: int = 5 * 15 * NS) -> Vector:
    """Instant query; a scalar result comes back as ``[((), value)]``."""
    node = parse_query(expr) if isinstance(expr, str) else expr
    res = QueryEngine(store, staleness_ns).eval(node, _to_ns(t_ns))
    if isinstance(res, float):
        return [((), res)]
    return res


def query_range(store: TimeSeriesStore, expr: str | Node, start_ns: int, end_ns: int, step_ns: int,
                staleness_ns: int = 5 * 15 * NS) -> dict[tuple, list[tuple[int, float]]]:
    """Instant evaluation at every step; returns labels → [(t_ns, value)]."""
    if step_ns <= 0:
        raise QueryError("step must be positive")
    if end_ns < start_ns:
        raise QueryError("end before start")
    if (end_ns - start_ns) // step_ns > 11_000:
        raise QueryError("too many points; increase step")
    node = parse_query(expr) if isinstance(expr, str) else expr
    eng = QueryEngine(store, staleness_ns)
    matrix: dict[tuple, list[tuple[int, float]]] = {}
    t = start_ns
    while t <= end_ns:
        res = eng.eval(node, t)
        if isinstance(res, float):
            res = [((), res)]
        for labels, v in res:
            matrix.setdefault(labels, []).append((t, v))
        t += step_ns
    return matrix
