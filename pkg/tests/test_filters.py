import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filtann import _kernels as K
from filtann.bench.datasets import synthesize_attributes
from filtann.core import AttributeRecord, AttributeTable, VectorDataset
from filtann.filters import (TRUE, And, BoolEq, FilterSyntaxError, FloatRange, IntEq, IntIn, Not,
                             Or, SchemaError, compile_filter, evaluate, exact_selectivity, mask,
                             parse_filter, render)

ARITY = (2, 2, 2)

conditions = st.deferred(lambda: st.one_of(
    st.just(TRUE),
    st.builds(BoolEq, st.integers(0, 1), st.booleans()),
    st.builds(IntEq, st.integers(0, 1), st.integers(-2, 11)),
    st.builds(IntIn, st.integers(0, 1), st.frozensets(st.integers(-2, 11), min_size=1, max_size=4)),
    st.tuples(st.integers(0, 1), st.floats(-10, 110), st.floats(-10, 110)).map(
        lambda t: FloatRange(t[0], min(t[1], t[2]), max(t[1], t[2]))),
    st.lists(conditions, min_size=2, max_size=3).map(And),
    st.lists(conditions, min_size=2, max_size=3).map(Or),
    st.builds(Not, conditions),
))

records = st.builds(
    AttributeRecord,
    st.tuples(st.booleans(), st.booleans()),
    st.tuples(st.integers(0, 9), st.integers(0, 9)),
    st.tuples(st.floats(0, 100, width=32), st.floats(0, 100, width=32)),
)


@pytest.fixture(scope="module")
def synthetic():
    attrs = synthesize_attributes(100_000, 1, 2, 1, seed=3)
    return VectorDataset(np.zeros((100_000, 1), np.float32), attrs)


class TestEvaluate:
    rec = AttributeRecord((True,), (3, 7), (42.0,))

    def test_int_eq(self):
        assert evaluate(IntEq(0, 3), self.rec)

    def test_not_true(self):
        assert not evaluate(Not(TRUE), self.rec)

    def test_closed_range_ends(self):
        assert evaluate(FloatRange(0, 42.0, 50.0), self.rec)
        assert evaluate(FloatRange(0, 0.0, 42.0), self.rec)
        assert not evaluate(FloatRange(0, 42.5, 50.0), self.rec)

    def test_schema_error(self):
        with pytest.raises(SchemaError):
            evaluate(IntEq(5, 1), self.rec)

    def test_logic_match_rate(self, synthetic):
        # int uniform on 0..9 and float uniform on [0, 100] -> 0.1 * 0.5
        rate = exact_selectivity(And(IntEq(0, 5), FloatRange(0, 0, 50)), synthetic)
        assert abs(rate - 0.05) <= 0.005

    @settings(max_examples=300)
    @given(conditions, records)
    def test_not_negates(self, f, r):
        assert evaluate(Not(f), r) == (not evaluate(f, r))


class TestSelectivity:
    def test_true_and_not_true(self, synthetic):
        assert exact_selectivity(TRUE, synthetic) == 1.0
        assert exact_selectivity(Not(TRUE), synthetic) == 0.0

    def test_bool_half(self, synthetic):
        assert abs(exact_selectivity(BoolEq(0, True), synthetic) - 0.5) <= 0.01

    def test_empty_dataset(self):
        assert exact_selectivity(TRUE, VectorDataset(np.zeros((0, 2)))) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(conditions)
    def test_excluded_middle(self, f):
        attrs = synthesize_attributes(500, 2, 2, 2, seed=1)
        ds = VectorDataset(np.zeros((500, 1)), attrs)
        assert exact_selectivity(And(f, Not(f)), ds) == 0.0
        assert exact_selectivity(Or(f, Not(f)), ds) == 1.0


@settings(max_examples=100, deadline=None)
@given(conditions, st.integers(0, 2**31))
def test_mask_and_program_agree_with_evaluate(f, seed):
    attrs = synthesize_attributes(64, 2, 2, 2, seed=seed)
    expected = np.array([evaluate(f, attrs.record(i)) for i in range(64)])
    np.testing.assert_array_equal(mask(f, attrs), expected)
    prog = compile_filter(f)
    got = K.filter_mask_at(np.arange(64), *prog, attrs.bools, attrs.ints, attrs.floats)
    np.testing.assert_array_equal(got, expected)


class TestParse:
    def test_int_eq(self):
        assert parse_filter("int0 = 3") == IntEq(0, 3)

    def test_inclusion_and_range(self):
        got = parse_filter("int0 in {1,2,3} and float0 in [10,60]")
        assert got == And(IntIn(0, frozenset({1, 2, 3})), FloatRange(0, 10, 60))

    def test_not_binds_tighter(self):
        assert parse_filter("not bool0 = true") == Not(BoolEq(0, True))
        assert parse_filter("NOT bool0 = true AND int1 = 2") == And(Not(BoolEq(0, True)), IntEq(1, 2))

    def test_precedence_and_parens(self):
        a, b, c = IntEq(0, 1), IntEq(0, 2), IntEq(0, 3)
        assert parse_filter("int0 = 1 or int0 = 2 and int0 = 3") == Or(a, And(b, c))
        assert parse_filter("(int0 = 1 or int0 = 2) and int0 = 3") == And(Or(a, b), c)

    def test_negative_and_scientific_numbers(self):
        assert parse_filter("int1 = -4") == IntEq(1, -4)
        assert parse_filter("float1 in [-1.5e1, 2.]") == FloatRange(1, -15.0, 2.0)

    @pytest.mark.parametrize("text, pos", [
        ("int0 =", 6),
        ("int0 = 3 and", 12),
        ("int0 in {}", 9),
        ("(int0 = 3", 9),
        ("int0 = 3 )", 9),
        ("bool0 = 1", 8),
        ("int0 = 3.5", 7),
        ("int0 $ 3", 5),
        ("", 0),
    ])
    def test_syntax_errors_carry_position(self, text, pos):
        with pytest.raises(FilterSyntaxError) as exc:
            parse_filter(text)
        assert exc.value.position == pos

    def test_unknown_attribute(self):
        with pytest.raises(FilterSyntaxError, match="unknown attribute"):
            parse_filter("color0 = 3")

    def test_malformed_range(self):
        with pytest.raises(FilterSyntaxError, match="malformed range"):
            parse_filter("float0 in [60, 10]")

    def test_schema_check(self):
        with pytest.raises(SchemaError):
            parse_filter("int2 = 1", arity=ARITY)

    @settings(max_examples=300)
    @given(conditions)
    def test_render_roundtrip(self, f):
        assert parse_filter(render(f)) == f
