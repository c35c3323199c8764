"""Model configuration language: parsing, evaluation, zoo equivalence."""

import numpy as np
import pytest

from zmred import zoo, parse_model, eval_expr, pretty_print
from zmred.dsl import (
    DslError,
    EvalError,
    parse_expr,
    config_to_spec,
    Bin,
    Num,
    Var,
    Neg,
    Call,
)

BISTABLE_TEXT = """
# cross-repression pair
species: x1 x2
subnetwork: x1

params:
  a = 4
  n = 2

equations:
  x1 = a/(1 + x2^n) - x1
  x2 = a/(1 + x1^n) - x2
"""


def test_parse_sections():
    cfg = parse_model(BISTABLE_TEXT)
    assert cfg.species == ["x1", "x2"]
    assert cfg.subnetwork == ["x1"]
    assert cfg.params == {"a": 4.0, "n": 2.0}
    assert set(cfg.equations) == {"x1", "x2"}


def test_config_reproduces_zoo_bistable():
    cfg = parse_model(BISTABLE_TEXT)
    spec = config_to_spec(cfg)
    ref = zoo("bistable")
    rng = np.random.default_rng(23)
    for x in rng.uniform(0.05, 4.0, size=(20, 2)):
        assert np.max(np.abs(spec.drift(x) - ref.drift(x))) < 1e-12


def test_fd_jacobian_on_dsl_model():
    spec = config_to_spec(parse_model(BISTABLE_TEXT))
    ref = zoo("bistable")
    x = np.array([0.7, 1.9])
    assert np.max(np.abs(spec.jacobian(x) - ref.jacobian(x))) < 1e-6


def test_precedence_power_binds_tightest():
    e = parse_expr("a/(1+x2^n) - x1")
    assert isinstance(e, Bin) and e.op == "-"
    val = eval_expr(parse_expr("4/(1+2^2)"), {})
    assert val == 0.8


def test_power_right_associative():
    assert eval_expr(parse_expr("2^3^2"), {}) == 512.0


def test_unary_minus_below_power():
    assert eval_expr(parse_expr("-2^2"), {}) == -4.0
    assert eval_expr(parse_expr("(-2)^2"), {}) == 4.0


def test_function_calls():
    assert eval_expr(parse_expr("exp(0)"), {}) == 1.0
    assert abs(eval_expr(parse_expr("log(exp(2))"), {}) - 2.0) < 1e-14
    assert eval_expr(parse_expr("pow(2, 10)"), {}) == 1024.0
    assert eval_expr(parse_expr("x^y"), {"x": 2.0, "y": 10.0}) == 1024.0


def test_domain_errors():
    with pytest.raises(EvalError):
        eval_expr(parse_expr("1/0"), {})
    with pytest.raises(EvalError):
        eval_expr(parse_expr("log(0 - 1)"), {})
    with pytest.raises(EvalError):
        eval_expr(parse_expr("x"), {})


def test_syntax_error_carries_location():
    with pytest.raises(DslError) as err:
        parse_expr("1 + * 2")
    assert err.value.col > 0


def test_undeclared_identifier_is_named():
    text = BISTABLE_TEXT.replace("- x1\n", "- x9\n")
    with pytest.raises(DslError) as err:
        parse_model(text)
    assert "x9" in str(err.value)


def test_duplicate_equation_rejected():
    text = BISTABLE_TEXT + "\n  x2 = 0 - x2\n"
    with pytest.raises(DslError):
        parse_model(text)


def test_missing_equation_rejected():
    text = BISTABLE_TEXT.replace("  x2 = a/(1 + x1^n) - x2\n", "")
    with pytest.raises(DslError):
        parse_model(text)


def test_subnetwork_must_be_declared_species():
    text = BISTABLE_TEXT.replace("subnetwork: x1", "subnetwork: y1")
    with pytest.raises(DslError):
        parse_model(text)


def test_derived_inputs():
    text = """
species: u w
subnetwork: u
params:
  p = 0.3
derived:
  drive = exp(-p/0.15)
equations:
  u = drive - u
  w = u - w
"""
    cfg = parse_model(text)
    spec = config_to_spec(cfg)
    x = np.array([0.0, 0.0])
    assert abs(spec.drift(x)[0] - np.exp(-2.0)) < 1e-14


def test_pretty_print_round_trip():
    for src in [
        "a/(1 + x2^n) - x1",
        "-x1^2 + 3*x2",
        "exp(-p/0.15)*k - x1/(x2 + 1)",
        "pow(x1, 2) - log(x2)",
        "2^3^2 - (1 - 2) - 3",
    ]:
        e = parse_expr(src)
        assert parse_expr(pretty_print(e)) == e


def test_fuzz_never_crashes():
    rng = np.random.default_rng(99)
    alphabet = list("abx129+-*/^()=.,# \n\t:eoplg")
    for _ in range(400):
        length = rng.integers(0, 60)
        text = "".join(rng.choice(alphabet) for _ in range(length))
        try:
            parse_model(text)
        except DslError:
            pass
    # raw bytes as well
    for _ in range(100):
        blob = bytes(rng.integers(0, 256, size=rng.integers(0, 40)))
        try:
            parse_model(blob.decode("utf-8", errors="replace"))
        except DslError:
            pass


try:
    from hypothesis import given, settings, strategies as st

    @given(st.text(max_size=80))
    @settings(max_examples=200, deadline=None)
    def test_hypothesis_fuzz_structured_errors(text):
        try:
            parse_model(text)
        except DslError:
            pass

except ImportError:  # pragma: no cover
    pass
