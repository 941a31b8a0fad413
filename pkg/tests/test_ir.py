import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oran_verifier import ir, parser, scenario
from oran_verifier.ir import Binary, Ident, Literal, Unary


def e(text):
    return parser.parse_expr(text)


class TestEval:
    def test_arithmetic(self):
        assert ir.eval_expr(e("1 + 2"), {}) == 3

    def test_capacity_boundary(self):
        env = {"rc1_serving": 5, "rc1_capacity": 5}
        assert ir.eval_expr(e("rc1_serving < rc1_capacity"), env) is False

    def test_connect_guard(self):
        env = {"rc1_serving": 0, "rc1_capacity": 5, "rc1_on": True}
        assert ir.eval_expr(e("(rc1_serving < rc1_capacity) & rc1_on"), env) is True

    def test_division_is_real(self):
        assert ir.eval_expr(e("1/4"), {}) == 0.25

    def test_precedence(self):
        assert ir.eval_expr(e("1 + 2*3 = 7 & !false | false"), {}) is True
        assert ir.eval_expr(e("-2*3"), {}) == -6

    def test_errors_are_distinct(self):
        with pytest.raises(ir.UnboundIdentifierError):
            ir.eval_expr(e("x + 1"), {})
        with pytest.raises(ir.TypeMismatchError):
            ir.eval_expr(e("true + 1"), {})
        with pytest.raises(ir.TypeMismatchError):
            ir.eval_expr(e("1 & true"), {})
        with pytest.raises(ir.DivisionByZeroError):
            ir.eval_expr(e("3 / (2 - 2)"), {})
        for a, b in [(ir.UnboundIdentifierError, ir.TypeMismatchError), (ir.TypeMismatchError, ir.DivisionByZeroError)]:
            assert not issubclass(a, b) and not issubclass(b, a)

    def test_bool_equality(self):
        assert ir.eval_expr(e("rc1_on = false"), {"rc1_on": False}) is True
        with pytest.raises(ir.TypeMismatchError):
            ir.eval_expr(e("rc1_on = 0"), {"rc1_on": False})


class TestTypes:
    def test_comparison_needs_same_kind(self):
        tenv = {"x": ir.INT, "r": ir.DOUBLE}
        with pytest.raises(ir.TypeMismatchError):
            ir.type_of(e("x < r"), tenv)
        assert ir.type_of(e("x < r"), tenv, promote=True) == ir.BOOL

    def test_arith_kinds(self):
        tenv = {"x": ir.INT, "r": ir.DOUBLE}
        assert ir.type_of(e("x + 1"), tenv) == ir.INT
        assert ir.type_of(e("x * r"), tenv) == ir.DOUBLE
        assert ir.type_of(e("x / 2"), tenv) == ir.DOUBLE


FIG4_CONSTANTS = """ctmc
const double default_rate = 1; const int N_RCs = 3;
const int rc1_id = 1; const int rc2_id = 2; const int rc3_id = 3;
const int rc1_capacity = 5;
module m
  x : [0..rc1_capacity] init 0;
  [] x < rc1_capacity -> default_rate : (x'=x+1);
endmodule
"""


class TestFold:
    def test_default_rate(self):
        m = ir.fold_constants(parser.parse_model(FIG4_CONSTANTS))
        cmd = m.modules[0].commands[0]
        assert cmd.rate == Literal(1.0)
        assert m.modules[0].variables[0].high == Literal(5)

    def test_cnf2_capacity(self):
        m = scenario.generate_model(scenario.preset("cnf2"))
        assert ir.constant_values(m)["rc1_capacity"] == 6
        folded = ir.fold_constants(m)
        assert folded.modules[0].variables[1].high == Literal(6)

    def test_dependent_constants(self):
        m = parser.parse_model("ctmc const int a = 2; const int b = a*a; module m x : [0..b] init 0; endmodule")
        assert ir.constant_values(m)["b"] == 4
        assert ir.fold_constants(m).modules[0].variables[0].high == Literal(4)

    def test_cycle(self):
        m = parser.parse_model("ctmc const int a = b; const int b = a; module m x : bool init false; endmodule", check=False)
        with pytest.raises(ir.FoldError, match="cycl"):
            ir.fold_constants(m)

    def test_nonpositive_rate(self):
        m = parser.parse_model("ctmc const double r = 1 - 1; module m x : bool init false; [] !x -> r : (x'=true); endmodule", check=False)
        with pytest.raises(ir.FoldError):
            ir.fold_constants(m)

    def test_unresolvable(self):
        m = parser.parse_model("ctmc module m x : bool init false; [] !x -> k : (x'=true); endmodule", check=False)
        with pytest.raises(ir.FoldError):
            ir.fold_constants(m)

    def test_idempotent_on_generated(self):
        m = scenario.generate_model(scenario.preset("cnf1"))
        once = ir.fold_constants(m)
        assert ir.is_folded(once)
        assert ir.fold_constants(once) == once


def _categories(text):
    return sorted(d.category for d in ir.wellformed(parser.parse_model(text, check=False)))


class TestWellformed:
    def test_generated_model_is_clean(self):
        assert ir.wellformed(scenario.generate_model(scenario.preset("cnf1"))) == []

    def test_foreign_write(self):
        text = """ctmc
module a  x : bool init false; [] true -> 1 : (y'=true); endmodule
module b  y : bool init false; endmodule"""
        assert _categories(text) == ["foreign write"]

    def test_name_collision(self):
        text = """ctmc
module a  x : bool init false; endmodule
module b  x : bool init false; endmodule"""
        assert _categories(text) == ["name collision"]

    def test_duplicate_update(self):
        text = "ctmc module a x : [0..2] init 0; [] x=0 -> 1 : (x'=1)&(x'=2); endmodule"
        assert _categories(text) == ["duplicate update"]

    def test_bad_init(self):
        assert _categories("ctmc module a x : [0..2] init 3; endmodule") == ["bounds"]

    def test_division_in_guard(self):
        text = "ctmc module a x : [0..2] init 0; [] x/2 < 1 -> 1 : (x'=1); endmodule"
        assert "division in guard" in _categories(text)

    def test_negative_reward(self):
        text = 'ctmc module a x : bool init false; endmodule rewards "r" x : -1; endrewards'
        assert _categories(text) == ["reward"]

    def test_folding_does_not_add_diagnostics(self):
        text = """ctmc const int c = 2;
module a  x : [0..c] init 0; [] x < c -> 1 : (y'=1); endmodule
module b  y : [0..c] init 0; endmodule"""
        m = parser.parse_model(text, check=False)
        before = {d.category for d in ir.wellformed(m)}
        after = {d.category for d in ir.wellformed(ir.fold_constants(m))}
        assert after <= before


# ---------------------------------------------------------------------------
# printing round trip

names = st.sampled_from(["x", "y", "rc1_on", "ue2_rc"])
ints = st.integers(min_value=0, max_value=99).map(Literal)
doubles = st.sampled_from([0.5, 0.01, 2.25, 1e-3]).map(Literal)
bools = st.booleans().map(Literal)


def exprs():
    leaves = st.one_of(names.map(Ident), ints, doubles, bools)

    def extend(children):
        return st.one_of(
            st.builds(Unary, st.sampled_from(["!", "-"]), children),
            st.builds(Binary, st.sampled_from(ir.ARITH_OPS + ir.LOGIC_OPS + ir.COMPARE_OPS), children, children),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(exprs())
@settings(max_examples=300)
def test_format_parse_roundtrip(expr):
    text = ir.format_expr(expr)
    back = parser.parse_expr(text)
    assert ir.format_expr(back) == text
    assert back == expr


@given(exprs())
@settings(max_examples=200)
def test_simplify_idempotent(expr):
    try:
        once = ir.simplify(expr, {"x": 3})
    except ir.EvalError:
        assume(False)
    assert ir.simplify(once, {"x": 3}) == once


def test_format_model_roundtrip_generated():
    m = scenario.generate_model(scenario.preset("cnf6"))
    assert parser.parse_model(ir.format_model(m)) == m
