"""Service-level indicators and objectives over flow slowdowns.

An SLI reduces a class's post-warmup slowdown records to one number
(percentile, mean or max, optionally restricted to a size band).  An SLO
is a small boolean expression over named SLIs, e.g.::

    small_p99 < 3.0 && large_p99 < 6.0

Evaluation is three-valued: an SLI computed over zero qualifying flows is
absent, and comparisons against absent values are indeterminate rather
than silently true or false.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, SloSyntaxError

if TYPE_CHECKING:
    from .engine import FlowRecord


# --------------------------------------------------------------------------
# SLI definitions


@dataclass(frozen=True)
class Percentile:
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ConfigError("percentile must lie strictly between 0 and 1")


@dataclass(frozen=True)
class Mean:
    pass


@dataclass(frozen=True)
class Max:
    pass


Metric = Union[Percentile, Mean, Max]


@dataclass(frozen=True)
class SliDef:
    """Named statistic over a class's slowdowns.

    ``size_range`` restricts the statistic to flows with
    lo <= size < hi (bytes); hi may be None for no upper bound.
    """

    name: str
    metric: Metric
    size_range: Optional[tuple[float, Optional[float]]] = None

    def __post_init__(self):
        if not self.name or not self.name[0].isalpha() and self.name[0] != "_":
            raise ConfigError(f"invalid SLI name {self.name!r}")
        if self.size_range is not None:
            lo, hi = self.size_range
            if lo < 0:
                raise ConfigError(f"SLI {self.name!r}: size range lower bound must be >= 0")
            if hi is not None and hi <= lo:
                raise ConfigError(f"SLI {self.name!r}: size range upper bound must exceed lower")


def nearest_rank_percentile(values: Sequence[float] | np.ndarray, p: float) -> Optional[float]:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value (1-based).

    Returns None for an empty sample.
    """
    arr = np.asarray(values, dtype=float)
    n = arr.size
    if n == 0:
        return None
    rank = max(1, math.ceil(p * n))
    return float(np.partition(arr, rank - 1)[rank - 1])


def compute_sli(sli: SliDef, records: Iterable["FlowRecord"]) -> Optional[float]:
    """Evaluate one SLI over flow records; None when no flow qualifies."""
    if sli.size_range is None:
        slowdowns = [r.slowdown for r in records]
    else:
        lo, hi = sli.size_range
        slowdowns = [
            r.slowdown for r in records if r.size >= lo and (hi is None or r.size < hi)
        ]
    if not slowdowns:
        return None
    if isinstance(sli.metric, Percentile):
        return nearest_rank_percentile(slowdowns, sli.metric.p)
    if isinstance(sli.metric, Mean):
        return float(np.mean(slowdowns))
    if isinstance(sli.metric, Max):
        return float(np.max(slowdowns))
    raise TypeError(f"unsupported metric {sli.metric!r}")


# --------------------------------------------------------------------------
# SLO expressions
#
#   expr     := and_expr ("||" and_expr)*
#   and_expr := atom ("&&" atom)*
#   atom     := IDENT CMP NUMBER | "(" expr ")"
#   CMP      := "<" | "<=" | ">" | ">="


@dataclass(frozen=True)
class Comparison:
    ident: str
    op: str  # one of < <= > >=
    threshold: float

    def identifiers(self) -> set[str]:
        return {self.ident}

    def unparse(self) -> str:
        return f"{self.ident} {self.op} {self.threshold!r}"

    def is_upper_bound(self) -> bool:
        return self.op in ("<", "<=")


@dataclass(frozen=True)
class BoolOp:
    kind: str  # "and" | "or"
    terms: tuple["SloExpr", ...]

    def __post_init__(self):
        if self.kind not in ("and", "or"):
            raise ConfigError(f"bad boolean operator {self.kind!r}")
        if len(self.terms) < 2:
            raise ConfigError("boolean expression needs at least two terms")

    def identifiers(self) -> set[str]:
        out: set[str] = set()
        for t in self.terms:
            out |= t.identifiers()
        return out

    def unparse(self) -> str:
        sep = " && " if self.kind == "and" else " || "
        parts = []
        for t in self.terms:
            # an OR chain nested under AND needs parentheses to round-trip
            if self.kind == "and" and isinstance(t, BoolOp) and t.kind == "or":
                parts.append(f"({t.unparse()})")
            else:
                parts.append(t.unparse())
        return sep.join(parts)


SloExpr = Union[Comparison, BoolOp]


class Verdict(Enum):
    MET = "met"
    VIOLATED = "violated"
    INDETERMINATE = "indeterminate"


_CMP_OPS = ("<=", ">=", "<", ">")


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> tuple[str, str, int]:
        """Return (kind, value, offset) of the next token without consuming."""
        self._skip_ws()
        start = self.pos
        if start >= len(self.text):
            return ("eof", "", start)
        ch = self.text[start]
        if ch == "(":
            return ("lparen", "(", start)
        if ch == ")":
            return ("rparen", ")", start)
        if self.text.startswith("&&", start):
            return ("and", "&&", start)
        if self.text.startswith("||", start):
            return ("or", "||", start)
        for op in _CMP_OPS:
            if self.text.startswith(op, start):
                return ("cmp", op, start)
        if ch.isalpha() or ch == "_":
            end = start
            while end < len(self.text) and (self.text[end].isalnum() or self.text[end] == "_"):
                end += 1
            return ("ident", self.text[start:end], start)
        if ch.isdigit() or ch == ".":
            end = start
            seen_dot = False
            while end < len(self.text):
                c = self.text[end]
                if c == "." and not seen_dot:
                    seen_dot = True
                elif not c.isdigit():
                    break
                end += 1
            return ("number", self.text[start:end], start)
        raise SloSyntaxError(f"unexpected character {ch!r}", start)

    def take(self) -> tuple[str, str, int]:
        kind, value, off = self.peek()
        self.pos = off + len(value)
        return (kind, value, off)


def parse_slo(text: str) -> SloExpr:
    """Parse an SLO expression; SloSyntaxError carries the byte offset.

    Identifier existence is not checked here; that happens when the
    expression is bound to a class's SLI declarations.
    """
    tok = _Tokenizer(text)
    expr = _parse_or(tok)
    kind, value, off = tok.peek()
    if kind != "eof":
        raise SloSyntaxError(f"unexpected trailing input {value!r}", off)
    return expr


def _parse_or(tok: _Tokenizer) -> SloExpr:
    terms = [_parse_and(tok)]
    while tok.peek()[0] == "or":
        tok.take()
        terms.append(_parse_and(tok))
    return terms[0] if len(terms) == 1 else BoolOp("or", tuple(terms))


def _parse_and(tok: _Tokenizer) -> SloExpr:
    terms = [_parse_atom(tok)]
    while tok.peek()[0] == "and":
        tok.take()
        terms.append(_parse_atom(tok))
    return terms[0] if len(terms) == 1 else BoolOp("and", tuple(terms))


def _parse_atom(tok: _Tokenizer) -> SloExpr:
    kind, value, off = tok.take()
    if kind == "lparen":
        inner = _parse_or(tok)
        kind, value, off = tok.take()
        if kind != "rparen":
            raise SloSyntaxError("expected ')'", off)
        return inner
    if kind == "ident":
        op_kind, op, op_off = tok.take()
        if op_kind != "cmp":
            raise SloSyntaxError(f"expected comparison operator after {value!r}", op_off)
        num_kind, num, num_off = tok.take()
        if num_kind != "number":
            raise SloSyntaxError("expected numeric threshold", num_off)
        return Comparison(ident=value, op=op, threshold=float(num))
    if kind == "eof":
        raise SloSyntaxError("unexpected end of expression", off)
    raise SloSyntaxError(f"unexpected token {value!r}", off)


def eval_slo(expr: SloExpr, slis: Mapping[str, Optional[float]]) -> Verdict:
    """Three-valued SLO evaluation over possibly-absent SLI values.

    Raises ConfigError for identifiers that are not declared at all
    (missing key), while a declared-but-absent value (None) yields an
    indeterminate comparison.
    """
    state = _eval(expr, slis)
    if state is True:
        return Verdict.MET
    if state is False:
        return Verdict.VIOLATED
    return Verdict.INDETERMINATE


def _eval(expr: SloExpr, slis: Mapping[str, Optional[float]]) -> Optional[bool]:
    if isinstance(expr, Comparison):
        if expr.ident not in slis:
            raise ConfigError(f"SLO references undeclared SLI {expr.ident!r}")
        value = slis[expr.ident]
        if value is None:
            return None
        if expr.op == "<":
            return value < expr.threshold
        if expr.op == "<=":
            return value <= expr.threshold
        if expr.op == ">":
            return value > expr.threshold
        return value >= expr.threshold
    results = [_eval(t, slis) for t in expr.terms]
    if expr.kind == "and":
        if any(r is False for r in results):
            return False
        if any(r is None for r in results):
            return None
        return True
    if any(r is True for r in results):
        return True
    if any(r is None for r in results):
        return None
    return False


# --------------------------------------------------------------------------
# loss


LOSS_FLOOR = -2.0


def loss(sli_value: float, slo_threshold: float) -> float:
    """Signed relative margin: negative iff the upper bound is met.

    Defined as -(threshold - value) / threshold, clamped below at -2 so a
    pathological input cannot zero out a weight in one optimizer transfer.
    """
    if slo_threshold <= 0:
        raise ConfigError("loss threshold must be positive")
    return max(LOSS_FLOOR, (sli_value - slo_threshold) / slo_threshold)


def upper_bound_comparisons(expr: SloExpr) -> list[Comparison]:
    """All upper-bound comparisons (the ones loss is defined for)."""
    if isinstance(expr, Comparison):
        return [expr] if expr.is_upper_bound() else []
    out: list[Comparison] = []
    for t in expr.terms:
        out.extend(upper_bound_comparisons(t))
    return out


def class_loss(expr: SloExpr, slis: Mapping[str, Optional[float]],
               absent_value_loss: float = 1.0) -> float:
    """Scalar loss for one class: the worst upper-bound comparison.

    Absent SLI values are charged ``absent_value_loss`` (positive, i.e.
    treated as a violation) so an indeterminate class can never be
    declared satisfied by the optimizer.
    """
    comps = upper_bound_comparisons(expr)
    if not comps:
        raise ConfigError("SLO has no upper-bound comparison; loss is undefined")
    worst = LOSS_FLOOR
    for c in comps:
        if c.ident not in slis:
            raise ConfigError(f"SLO references undeclared SLI {c.ident!r}")
        value = slis[c.ident]
        term = absent_value_loss if value is None else loss(value, c.threshold)
        worst = max(worst, term)
    return worst


@dataclass
class SliReport:
    """Per-class evaluation: SLI values (None = absent) and the verdict."""

    class_name: str
    values: dict[str, Optional[float]]
    verdict: Optional[Verdict]  # None when the class declares no SLO


def evaluate_class(
    name: str,
    slis: Sequence[SliDef],
    slo: Optional[SloExpr],
    records: Sequence["FlowRecord"],
) -> SliReport:
    values = {s.name: compute_sli(s, records) for s in slis}
    verdict = eval_slo(slo, values) if slo is not None else None
    return SliReport(class_name=name, values=values, verdict=verdict)
