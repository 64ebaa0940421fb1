"""Expression trees, float tokenization, Polish serialization, corruption."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odefusion.symbolic import (
    BINARY_OPS, UNARY_OPS, CorruptionConfig, DimensionMismatch, DomainError,
    InvalidExpression, MalformedTriplet, NotInAdditiveForm, PlaceholderPresent,
    SystemExpr, UnknownWord, Vocabulary, add, add_terms, const, corrupt, cos,
    decode_float, div, encode_float, evaluate, evaluate_many,
    expression_error, flatten_terms, from_polish, mul, neg, placeholder, pow_,
    sin, sub, to_polish, var)
from odefusion.symbolic.floats import EXP_LIMIT, ExponentOutOfRange
from odefusion.symbolic.tree import Node, compile_system, to_infix


# --- float words ------------------------------------------------------------

class TestEncodeFloat:
    def test_worked_example(self):
        assert encode_float(2.6) == ("+", "260", "E-2")

    def test_zero(self):
        assert encode_float(0.0) == ("+", "0", "E0")

    def test_negative(self):
        assert encode_float(-2.6) == ("-", "260", "E-2")

    @pytest.mark.parametrize("x,words", [
        (1.0, ("+", "100", "E-2")),
        (0.17, ("+", "170", "E-3")),
        (28.0, ("+", "280", "E-1")),
        (8.0 / 3.0, ("+", "267", "E-2")),
        (999.6, ("+", "100", "E1")),   # rounds across the decade boundary
        (0.09996, ("+", "100", "E-3")),
    ])
    def test_values(self, x, words):
        assert encode_float(x) == words

    def test_mantissa_width(self):
        rng = np.random.default_rng(0)
        for x in rng.uniform(-50, 50, size=500):
            if x == 0:
                continue
            _, m, _ = encode_float(x)
            assert len(m) == 3 and not m.startswith("0")

    def test_exponent_out_of_range(self):
        with pytest.raises(ExponentOutOfRange):
            encode_float(1e120)
        with pytest.raises(ExponentOutOfRange):
            encode_float(1e-120)

    def test_non_finite_rejected(self):
        for x in (math.inf, -math.inf, math.nan):
            with pytest.raises(ValueError):
                encode_float(x)

    @given(st.floats(min_value=-1e90, max_value=1e90,
                     allow_nan=False, allow_infinity=False).filter(
        lambda x: x == 0.0 or abs(x) >= 1e-90))
    @settings(max_examples=300)
    def test_roundtrip_relative_error(self, x):
        back = decode_float(encode_float(x))
        if x == 0.0:
            assert back == 0.0
        else:
            assert abs(back - x) <= 5e-3 * abs(x)

    def test_mantissa_len_one(self):
        assert encode_float(2.6, mantissa_len=1) == ("+", "3", "E0")

    def test_exp_limit_edges(self):
        assert encode_float(9.99e99) == ("+", "999", "E97")


class TestDecodeFloat:
    def test_inverse(self):
        assert decode_float(("+", "260", "E-2")) == 2.6

    @pytest.mark.parametrize("triplet", [
        ("+", "260"), ("x", "260", "E-2"), ("+", "26x", "E-2"),
        ("+", "260", "-2"), ("+", "260", "Ex"), "nope",
    ])
    def test_malformed(self, triplet):
        with pytest.raises(MalformedTriplet):
            decode_float(triplet)


# --- vocabulary -------------------------------------------------------------

class TestVocabulary:
    def test_size(self):
        v = Vocabulary(d_max=5)
        # 5 specials + 8 ops + 2 signs + 1000 mantissas + 201 exponents + 5 vars
        assert len(v) == 5 + 8 + 2 + 1000 + 201 + 5

    def test_bijection(self):
        v = Vocabulary()
        assert len(set(v.id_to_word)) == len(v)
        for i, w in enumerate(v.id_to_word):
            assert v.word_to_id[w] == i

    def test_encode_decode_roundtrip(self):
        v = Vocabulary(d_max=3)
        words = ["add", "mul", "+", "260", "E-2", "u_1", "sin", "u_2"]
        ids = v.encode(words)
        assert v.decode(ids) == words

    def test_framing(self):
        v = Vocabulary(d_max=3)
        ids = v.encode(["u_1"], sos=True, eos=True)
        assert ids[0] == v.sos_id and ids[-1] == v.eos_id
        assert v.decode(ids) == ["u_1"]
        assert v.decode(ids, strip_special=False) == ["<sos>", "u_1", "<eos>"]

    def test_unknown_word(self):
        v = Vocabulary(d_max=3)
        with pytest.raises(UnknownWord):
            v.encode(["u_4"])
        with pytest.raises(UnknownWord):
            v.decode([len(v)])

    def test_hash_stability(self):
        assert Vocabulary(d_max=3).hash() == Vocabulary(d_max=3).hash()
        assert Vocabulary(d_max=3).hash() != Vocabulary(d_max=4).hash()


# --- trees and evaluation ---------------------------------------------------

def lorenz_like():
    c0 = add_terms([mul(const(10.0), var(1)), mul(const(-10.0), var(0))])
    c1 = add_terms([mul(const(28.0), var(0)), neg(mul(var(0), var(2))),
                    neg(var(1))])
    c2 = add_terms([mul(var(0), var(1)), mul(const(-8 / 3), var(2))])
    return SystemExpr(3, (c0, c1, c2))


class TestTree:
    def test_arity_validation(self):
        with pytest.raises(ValueError):
            Node("add", children=(const(1.0),))
        with pytest.raises(ValueError):
            Node("sin", children=(const(1.0), const(2.0)))
        with pytest.raises(ValueError):
            Node("what")

    def test_constants_finite(self):
        with pytest.raises(ValueError):
            const(math.inf)

    def test_var_index_validation(self):
        with pytest.raises(ValueError):
            SystemExpr(2, (var(0), var(2)))
        with pytest.raises(ValueError):
            SystemExpr(0, ())
        with pytest.raises(ValueError):
            SystemExpr(6, tuple(var(0) for _ in range(6)))

    def test_evaluate(self):
        out = evaluate(lorenz_like(), [0.0, 26.0, 1.0])
        assert np.allclose(out, [260.0, -26.0, -8 / 3])

    def test_evaluate_shape_check(self):
        with pytest.raises(DimensionMismatch):
            evaluate(lorenz_like(), [1.0, 2.0])

    def test_division_by_zero(self):
        expr = SystemExpr(1, (div(const(1.0), var(0)),))
        with pytest.raises(DomainError):
            evaluate(expr, [0.0])

    def test_overflow(self):
        expr = SystemExpr(1, (pow_(var(0), const(1000.0)),))
        with pytest.raises(DomainError):
            evaluate(expr, [50.0])

    def test_placeholder_blocks_evaluation(self):
        expr = SystemExpr(1, (mul(placeholder(), var(0)),))
        with pytest.raises(PlaceholderPresent):
            evaluate(expr, [1.0])
        assert expr.has_placeholder()

    def test_evaluate_many_matches_scalar(self):
        sys = lorenz_like()
        rng = np.random.default_rng(1)
        U = rng.uniform(-3, 3, size=(50, 3))
        batch = evaluate_many(sys, U)
        for i in range(50):
            assert np.allclose(batch[i], evaluate(sys, U[i]), rtol=1e-12)

    def test_evaluate_many_nan_rows(self):
        expr = SystemExpr(1, (div(const(1.0), var(0)),))
        out = evaluate_many(expr, np.array([[0.0], [2.0]]))
        assert np.isnan(out[0, 0]) and out[1, 0] == 0.5

    def test_evaluate_many_negative_base_pow(self):
        expr = SystemExpr(1, (pow_(var(0), const(3.0)),))
        out = evaluate_many(expr, np.array([[-2.0]]))
        assert out[0, 0] == -8.0
        expr = SystemExpr(1, (pow_(var(0), const(0.5)),))
        out = evaluate_many(expr, np.array([[-2.0]]))
        assert np.isnan(out[0, 0])

    def test_compile_matches_evaluate(self):
        sys = lorenz_like()
        f = compile_system(sys)
        rng = np.random.default_rng(2)
        for u in rng.uniform(-3, 3, size=(20, 3)):
            assert np.allclose(f(u), evaluate(sys, u), rtol=1e-14)

    def test_infix_smoke(self):
        s = to_infix(add(mul(const(2.0), var(0)), sin(var(1))))
        assert "u_1" in s and "sin" in s


# --- polish serialization ---------------------------------------------------

def random_tree(rng, dim, depth):
    if depth == 0 or rng.random() < 0.35:
        r = rng.random()
        if r < 0.45:
            return const(float(rng.uniform(-30, 30)))
        return var(int(rng.integers(dim)))
    op = ["add", "sub", "mul", "div", "pow", "sin", "cos", "neg"][
        int(rng.integers(8))]
    if op in UNARY_OPS:
        return Node(op, children=(random_tree(rng, dim, depth - 1),))
    if op == "pow":
        return Node(op, children=(random_tree(rng, dim, depth - 1),
                                  const(float(rng.integers(2, 4)))))
    return Node(op, children=(random_tree(rng, dim, depth - 1),
                              random_tree(rng, dim, depth - 1)))


def random_system(rng):
    dim = int(rng.integers(1, 6))
    return SystemExpr(dim, tuple(random_tree(rng, dim, 3)
                                 for _ in range(dim)))


def trees_equal(a, b, rtol):
    if a.kind != b.kind or a.index != b.index:
        return False
    if a.kind == "const":
        return abs(a.value - b.value) <= rtol * max(abs(a.value), 1e-30)
    return all(trees_equal(x, y, rtol)
               for x, y in zip(a.children, b.children))


class TestPolish:
    def test_docstring_example(self):
        expr = add(cos(mul(const(1.5), var(0))),
                   sub(pow_(var(1), const(2.0)), const(2.6)))
        words = to_polish(SystemExpr(2, (expr, var(0))))
        assert words == ["add", "cos", "mul", "+", "150", "E-2", "u_1",
                         "sub", "pow", "u_2", "+", "200", "E-2",
                         "+", "260", "E-2", "|", "u_1"]

    def test_roundtrip_random_systems(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            sys = random_system(rng)
            back = from_polish(to_polish(sys))
            assert back.dim == sys.dim
            assert all(trees_equal(a, b, 5e-3)
                       for a, b in zip(sys.components, back.components))

    def test_placeholder_roundtrip(self):
        sys = SystemExpr(1, (mul(placeholder(), var(0)),))
        assert to_polish(sys) == ["mul", "<c>", "u_1"]
        assert from_polish(["mul", "<c>", "u_1"]).has_placeholder()

    @pytest.mark.parametrize("words", [
        [], ["add", "u_1"], ["u_1", "u_2"], ["+", "260"], ["u_9"],
        ["frobnicate"], ["|", "u_1"], ["u_1", "|"], ["u_1", "|", "|", "u_1"],
        ["u_2"], ["add", "u_1", "u_1", "u_1"],
        ["u_1", "|", "u_1", "|", "u_1", "|", "u_1", "|", "u_1", "|", "u_1"],
    ])
    def test_invalid_sequences(self, words):
        with pytest.raises(InvalidExpression):
            from_polish(words)

    def test_error_carries_position(self):
        try:
            from_polish(["add", "u_1"])
        except InvalidExpression as exc:
            assert exc.position is not None
        else:
            pytest.fail("expected InvalidExpression")

    @given(st.lists(st.sampled_from(
        list(BINARY_OPS) + list(UNARY_OPS)
        + ["u_1", "u_2", "+", "-", "260", "E-2", "|", "<c>"]),
        min_size=1, max_size=20))
    @settings(max_examples=1000, deadline=None)
    def test_parse_agrees_with_arity_oracle(self, words):
        """Per component: running arity count must first hit zero exactly at
        the end for the sequence to parse (floats consume 3 words)."""
        def component_ok(seg):
            need, i = 1, 0
            while i < len(seg) and need > 0:
                w = seg[i]
                if w in BINARY_OPS:
                    need += 1
                    i += 1
                elif w in UNARY_OPS:
                    i += 1
                elif w in ("+", "-"):
                    if i + 2 >= len(seg) or not seg[i + 1].isdigit() \
                            or not seg[i + 2].startswith("E"):
                        return False
                    need -= 1
                    i += 3
                elif w.isdigit() or w.startswith("E"):
                    return False  # bare mantissa/exponent outside a triplet
                else:
                    need -= 1
                    i += 1
            return need == 0 and i == len(seg)

        segs, cur = [], []
        for w in words:
            if w == "|":
                segs.append(cur)
                cur = []
            else:
                cur.append(w)
        segs.append(cur)
        max_var = max((int(w[2:]) for w in words if w.startswith("u_")),
                      default=0)
        oracle = (all(component_ok(s) for s in segs) and len(segs) <= 5
                  and max_var <= len(segs))
        try:
            from_polish(words)
            parsed = True
        except InvalidExpression:
            parsed = False
        assert parsed == oracle


# --- corruption -------------------------------------------------------------

class TestCorruption:
    def setup_method(self):
        self.sys = lorenz_like()

    def test_inactive_is_identity(self):
        cfg = CorruptionConfig()
        assert not cfg.active
        out = corrupt(self.sys, cfg, np.random.default_rng(0))
        assert to_polish(out) == to_polish(self.sys)

    def test_skeleton_strips_every_constant(self):
        cfg = CorruptionConfig(unknown_coefficients=True)
        out = corrupt(self.sys, cfg, np.random.default_rng(0))
        words = to_polish(out)
        assert "<c>" in words
        kinds = {n.kind for c in out.components for n in c.walk()}
        assert "const" not in kinds

    def test_deletion_removes_one_term(self):
        cfg = CorruptionConfig(term_deletion=1.0)
        out = corrupt(self.sys, cfg, np.random.default_rng(0))
        for before, after in zip(self.sys.components, out.components):
            assert len(flatten_terms(after)) == \
                len(flatten_terms(before)) - 1

    def test_deletion_never_empties(self):
        sys = SystemExpr(1, (var(0),))
        cfg = CorruptionConfig(term_deletion=1.0)
        out = corrupt(sys, cfg, np.random.default_rng(0))
        assert to_polish(out) == ["u_1"]

    def test_addition_appends_one_term(self):
        cfg = CorruptionConfig(term_addition=1.0)
        out = corrupt(self.sys, cfg, np.random.default_rng(0))
        for before, after in zip(self.sys.components, out.components):
            assert len(flatten_terms(after)) == \
                len(flatten_terms(before)) + 1

    def test_added_terms_lose_constants_in_skeleton_mode(self):
        cfg = CorruptionConfig(unknown_coefficients=True, term_addition=1.0)
        out = corrupt(self.sys, cfg, np.random.default_rng(0))
        kinds = {n.kind for c in out.components for n in c.walk()}
        assert "const" not in kinds

    def test_determinism(self):
        cfg = CorruptionConfig(term_deletion=0.5, term_addition=0.5,
                               unknown_coefficients=True)
        a = corrupt(self.sys, cfg, np.random.default_rng(5))
        b = corrupt(self.sys, cfg, np.random.default_rng(5))
        assert to_polish(a) == to_polish(b)

    def test_non_additive_form_rejected(self):
        nested = SystemExpr(1, (mul(add(var(0), const(1.0)), var(0)),))
        with pytest.raises(NotInAdditiveForm):
            corrupt(nested, CorruptionConfig(term_deletion=1.0),
                    np.random.default_rng(0))

    def test_probability_validation(self):
        with pytest.raises(ValueError):
            CorruptionConfig(term_deletion=1.5)


# --- expression error -------------------------------------------------------

class TestExpressionError:
    def test_identical_is_zero(self):
        sys = lorenz_like()
        assert expression_error(sys, sys,
                                rng=np.random.default_rng(0)) == 0.0

    def test_known_scaling(self):
        f = SystemExpr(1, (var(0),))
        f_hat = SystemExpr(1, (mul(const(1.1), var(0)),))
        err = expression_error(f, f_hat, n_points=200,
                               rng=np.random.default_rng(0))
        assert abs(err - 0.1) < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            expression_error(lorenz_like(), SystemExpr(1, (var(0),)))

    def test_placeholder_rejected(self):
        bad = SystemExpr(3, (placeholder(), var(0), var(1)))
        with pytest.raises(PlaceholderPresent):
            expression_error(lorenz_like(), bad)

    def test_seeded_determinism(self):
        f = lorenz_like()
        f_hat = SystemExpr(3, (f.components[0], f.components[1],
                               mul(const(1.05), f.components[2])))
        a = expression_error(f, f_hat, rng=np.random.default_rng(9))
        b = expression_error(f, f_hat, rng=np.random.default_rng(9))
        assert a == b

    def test_degenerate_points_resampled(self):
        f = SystemExpr(1, (div(const(1.0), var(0)),))
        err = expression_error(f, f, rng=np.random.default_rng(0))
        assert err == 0.0
