import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blowup4d.errors import DomainError, NonFinite, ParseError, UnknownIdentifier
from blowup4d.kexpr import FUNCTIONS, KExpr, check_positive_on, evaluate, parse, to_text

from conftest import unit_mask

P = np.array([0.3, -1.2, 2.5, 0.7])


@pytest.mark.parametrize("src, want", [
    ("1", 1.0),
    ("2^3^2", 512.0),
    ("1 - 2 - 3", -4.0),
    ("8 / 4 / 2", 1.0),
    ("-2^2", -4.0),
    ("2^-1", 0.5),
    ("--3", 3.0),
    ("2 * 3 + 4 * 5", 26.0),
    ("2 * (3 + 4) * 5", 70.0),
    ("  1.5e1\t+ .5 ", 15.5),
    ("x1 + 2*x2 - x3 / x4", 0.3 - 2.4 - 2.5 / 0.7),
    ("sqrt(x3 ^ 2)", 2.5),
    ("exp(log(x3))", 2.5),
    ("sin(x1)^2 + cos(x1)^2", 1.0),
])
def test_evaluate_table(src, want):
    assert evaluate(src, P) == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_gaussian_bump_and_centre():
    e = parse("exp(-r^2)")
    assert evaluate(e, np.zeros(4)) == 1.0
    assert evaluate(e.with_centre([1, 1, 1, 1]), np.ones(4)) == 1.0
    assert evaluate(e, [1.0, 0, 0, 0]) == pytest.approx(math.exp(-1))
    assert e.uses_r() and not parse("x1 + 1").uses_r()


def test_vectorised_evaluation():
    pts = np.random.default_rng(0).uniform(0.1, 1, size=(7, 3, 4))
    vals = evaluate("x1 * x2 + x4", pts)
    assert vals.shape == (7, 3)
    assert np.allclose(vals, pts[..., 0] * pts[..., 1] + pts[..., 3])
    assert evaluate("3", pts).shape == (7, 3)
    with pytest.raises(ValueError):
        evaluate("1", [1.0, 2.0])


def test_syntax_error_offset_and_expected():
    with pytest.raises(ParseError) as info:
        parse("2*x1 + (")
    assert info.value.offset == 8
    assert "'('" in info.value.expected and "number" in info.value.expected
    with pytest.raises(ParseError) as info:
        parse("1 2")
    assert info.value.offset == 2
    with pytest.raises(ParseError) as info:
        parse("1 $ 2")
    assert info.value.offset == 2
    with pytest.raises(ParseError):
        parse("")
    with pytest.raises(ParseError):
        parse("(" * 500 + "1" + ")" * 500)
    with pytest.raises(TypeError):
        parse(3)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier) as info:
        parse("1 + tan(x1)")
    assert info.value.offset == 4
    assert "x1" in info.value.expected


def test_domain_and_nonfinite_errors_report_point():
    with pytest.raises(DomainError) as info:
        evaluate("log(x1)", [0.0, 1.0, 2.0, 3.0])
    assert info.value.func == "log" and info.value.point == [0.0, 1.0, 2.0, 3.0]
    with pytest.raises(DomainError) as info:
        evaluate("sqrt(x2)", np.array([[1.0, 1, 1, 1], [1.0, -1, 1, 1]]))
    assert info.value.point == [1.0, -1.0, 1.0, 1.0]
    with pytest.raises(NonFinite):
        evaluate("1 / x1", np.zeros(4))
    with pytest.raises(NonFinite):
        evaluate("exp(x1)", [1000.0, 0, 0, 0])


def test_check_positive_on():
    m = unit_mask(17)
    ok = check_positive_on(parse("1"), m)
    assert ok["ok"] and ok["min"] == 1.0
    x1 = check_positive_on(parse("x1"), m)
    assert x1["ok"] and x1["min"] == pytest.approx(m.h)
    assert not check_positive_on(parse("x1"), m, margin=m.h)["ok"]
    bad = check_positive_on(parse("x1 - 2"), m)
    assert not bad["ok"] and bad["min"] < 0
    assert bad["argmin"][0] == pytest.approx(m.h)


def test_weight_adapter():
    w = parse("1 + x1 * x2").to_weight()
    assert w(np.array([[2.0, 3.0, 0, 0]]))[0] == 7.0


# --- round trip -------------------------------------------------------------------------

def trees():
    leaves = st.one_of(
        st.floats(0, 1e6, allow_nan=False).map(lambda v: ("num", v)),
        st.sampled_from(["x1", "x2", "x3", "x4", "r"]).map(lambda v: ("var", v)),
    )
    return st.recursive(leaves, lambda kids: st.one_of(
        st.tuples(st.just("bin"), st.sampled_from("+-*/^"), kids, kids),
        st.tuples(st.just("neg"), kids),
        st.tuples(st.just("call"), st.sampled_from(sorted(FUNCTIONS)), kids),
    ), max_leaves=12)


@given(trees())
def test_print_parse_round_trip(tree):
    text = to_text(tree)
    again = parse(text)
    assert again.tree == tree
    assert to_text(again.tree) == text
    assert parse(str(again)) == again


@given(st.text(alphabet="x1234r+-*/^().e exp log sqrt", max_size=30))
def test_fuzz_never_crashes(src):
    try:
        e = parse(src)
    except ParseError:
        return
    assert isinstance(e, KExpr)
    try:
        v = evaluate(e, P)
    except (DomainError, NonFinite):
        return
    assert math.isfinite(v)
