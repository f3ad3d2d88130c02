"""SLO expression parsing, three-valued evaluation, loss mapping."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slosim.errors import ConfigError, SloSyntaxError
from slosim.slo import (
    LOSS_FLOOR,
    BoolOp,
    Comparison,
    Max,
    Mean,
    Percentile,
    SliDef,
    Verdict,
    class_loss,
    compute_sli,
    eval_slo,
    loss,
    nearest_rank_percentile,
    parse_slo,
    upper_bound_comparisons,
)


class Rec:
    """Stand-in for FlowRecord: only size and slowdown matter to SLIs."""

    def __init__(self, size, slowdown):
        self.size = size
        self.slowdown = slowdown


# -- parsing ----------------------------------------------------------------


def test_parse_single_comparison():
    assert parse_slo("tail_slowdown < 3.0") == Comparison("tail_slowdown", "<", 3.0)
    assert parse_slo("x>=10") == Comparison("x", ">=", 10.0)
    assert parse_slo("_v <= .5") == Comparison("_v", "<=", 0.5)


def test_parse_and_binds_tighter_than_or():
    expr = parse_slo("a < 1 || b < 2 && c < 3")
    assert expr == BoolOp("or", (
        Comparison("a", "<", 1.0),
        BoolOp("and", (Comparison("b", "<", 2.0), Comparison("c", "<", 3.0))),
    ))


def test_parse_parentheses_override_precedence():
    expr = parse_slo("(a < 1 || b < 2) && c < 3")
    assert expr == BoolOp("and", (
        BoolOp("or", (Comparison("a", "<", 1.0), Comparison("b", "<", 2.0))),
        Comparison("c", "<", 3.0),
    ))


def test_parse_chains_flatten():
    expr = parse_slo("a < 1 && b < 2 && c < 3")
    assert isinstance(expr, BoolOp) and expr.kind == "and"
    assert len(expr.terms) == 3


@pytest.mark.parametrize(
    "text, offset",
    [
        ("a <", 3),        # threshold missing, error points past the operator
        ("a ! 3", 2),      # bad character
        ("a < 3 extra", 6),
        ("(a < 3", 6),     # unclosed paren
        ("&& a < 3", 0),
        ("a 3", 2),        # operator missing
    ],
)
def test_parse_errors_carry_offsets(text, offset):
    with pytest.raises(SloSyntaxError) as ei:
        parse_slo(text)
    assert ei.value.offset == offset


def test_empty_expression_rejected():
    with pytest.raises(SloSyntaxError):
        parse_slo("   ")


IDENTS = st.sampled_from(["p99", "small_p99", "large_p99", "mean_sd", "_x"])
THRESH = st.floats(min_value=0.001, max_value=9999.0, allow_nan=False)
OPS = st.sampled_from(["<", "<=", ">", ">="])


def exprs(depth=2):
    leaf = st.builds(Comparison, IDENTS, OPS, THRESH)
    if depth == 0:
        return leaf
    sub = exprs(depth - 1)
    node = st.builds(
        lambda kind, terms: BoolOp(kind, tuple(terms)),
        st.sampled_from(["and", "or"]),
        st.lists(sub, min_size=2, max_size=3),
    )
    return leaf | node


@settings(max_examples=100, deadline=None)
@given(expr=exprs())
def test_unparse_parse_is_a_fixed_point(expr):
    # same-kind nesting flattens on reparse, so trees are compared through
    # their canonical text rather than structurally
    text = expr.unparse()
    reparsed = parse_slo(text)
    assert reparsed.unparse() == text
    assert parse_slo(reparsed.unparse()) == reparsed
    assert reparsed.identifiers() == expr.identifiers()


# -- evaluation -------------------------------------------------------------


def test_comparison_verdicts():
    expr = parse_slo("v < 3.0")
    assert eval_slo(expr, {"v": 2.9}) is Verdict.MET
    assert eval_slo(expr, {"v": 3.0}) is Verdict.VIOLATED
    assert eval_slo(expr, {"v": None}) is Verdict.INDETERMINATE


def test_three_valued_and_or():
    a_and_b = parse_slo("a < 1 && b < 1")
    a_or_b = parse_slo("a < 1 || b < 1")
    # false dominates AND even with an absent term
    assert eval_slo(a_and_b, {"a": 5.0, "b": None}) is Verdict.VIOLATED
    assert eval_slo(a_and_b, {"a": 0.5, "b": None}) is Verdict.INDETERMINATE
    assert eval_slo(a_and_b, {"a": 0.5, "b": 0.5}) is Verdict.MET
    # true dominates OR even with an absent term
    assert eval_slo(a_or_b, {"a": 0.5, "b": None}) is Verdict.MET
    assert eval_slo(a_or_b, {"a": 5.0, "b": None}) is Verdict.INDETERMINATE
    assert eval_slo(a_or_b, {"a": 5.0, "b": 5.0}) is Verdict.VIOLATED


def test_undeclared_identifier_raises():
    with pytest.raises(ConfigError, match="undeclared"):
        eval_slo(parse_slo("ghost < 1"), {"v": 1.0})


# -- SLIs -------------------------------------------------------------------


def test_nearest_rank_percentile_small_samples():
    vals = list(range(1, 11))  # 1..10
    assert nearest_rank_percentile(vals, 0.50) == 5
    assert nearest_rank_percentile(vals, 0.99) == 10
    assert nearest_rank_percentile(vals, 0.05) == 1
    assert nearest_rank_percentile([7.0], 0.99) == 7.0
    assert nearest_rank_percentile([], 0.99) is None


def test_nearest_rank_is_order_independent():
    rngvals = [5.0, 1.0, 9.0, 3.0, 7.0]
    assert nearest_rank_percentile(rngvals, 0.6) == nearest_rank_percentile(sorted(rngvals), 0.6)


def test_compute_sli_metrics_and_size_band():
    recs = [Rec(1000, 1.0), Rec(2000, 2.0), Rec(125000, 10.0), Rec(200000, 4.0)]
    band = SliDef(name="small", metric=Mean(), size_range=(0.0, 125000.0))
    assert compute_sli(band, recs) == pytest.approx(1.5)  # hi bound excluded
    assert compute_sli(SliDef(name="top", metric=Max()), recs) == 10.0
    assert compute_sli(SliDef(name="p75", metric=Percentile(0.75)), recs) == 4.0
    empty = SliDef(name="huge", metric=Mean(), size_range=(1e9, None))
    assert compute_sli(empty, recs) is None


def test_sli_def_validation():
    with pytest.raises(ConfigError):
        SliDef(name="bad", metric=Percentile(1.5))
    with pytest.raises(ConfigError):
        SliDef(name="bad", metric=Mean(), size_range=(100.0, 50.0))
    with pytest.raises(ConfigError):
        SliDef(name="bad", metric=Mean(), size_range=(-1.0, None))
    with pytest.raises(ConfigError):
        SliDef(name="9lives", metric=Mean())


# -- loss -------------------------------------------------------------------


def test_loss_is_signed_relative_margin():
    assert loss(2.0, 4.0) == -0.5
    assert loss(4.0, 4.0) == 0.0
    assert loss(6.0, 4.0) == 0.5
    assert loss(0.0, 4.0) == -1.0


def test_loss_clamps_at_floor():
    assert loss(-100.0, 1.0) == LOSS_FLOOR == -2.0
    with pytest.raises(ConfigError):
        loss(1.0, 0.0)


def test_class_loss_takes_worst_upper_bound():
    expr = parse_slo("small < 4.0 && large < 8.0")
    assert class_loss(expr, {"small": 2.0, "large": 10.0}) == pytest.approx(0.25)
    assert class_loss(expr, {"small": 2.0, "large": 4.0}) == pytest.approx(-0.5)


def test_class_loss_charges_absent_values():
    expr = parse_slo("small < 4.0")
    assert class_loss(expr, {"small": None}) == 1.0
    assert class_loss(expr, {"small": None}, absent_value_loss=0.3) == 0.3


def test_class_loss_ignores_lower_bounds_but_needs_one_upper():
    mixed = parse_slo("v < 4.0 && goodput > 1.0")
    assert upper_bound_comparisons(mixed) == [Comparison("v", "<", 4.0)]
    assert class_loss(mixed, {"v": 2.0, "goodput": 0.0}) == pytest.approx(-0.5)
    with pytest.raises(ConfigError, match="upper-bound"):
        class_loss(parse_slo("goodput > 1.0"), {"goodput": 5.0})
