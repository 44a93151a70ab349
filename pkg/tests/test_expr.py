from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlbvp.expr import ExprError, evaluate, parse, to_field

PT1 = np.array([[0.3]])
PT2 = np.array([[0.3, 0.7]])


@pytest.mark.parametrize(
    "text, expected",
    [
        ("1 + 2 * 3", 7.0),
        ("-2^2", -4.0),
        ("2^3^2", 512.0),
        ("(1 + 2) * 3", 9.0),
        ("2^-1", 0.5),
        ("10 / 4 / 5", 0.5),
        ("1e-3 * 2", 0.002),
        ("cos(pi)", -1.0),
        ("abs(-3) + exp(0)", 4.0),
        (".5 + -x", 0.2),
    ],
)
def test_evaluate_examples(text, expected):
    assert evaluate(parse(text), PT1)[0] == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("text", ["1 +", "sin 1", "(1", "1 2", "log(2)", "3 $ 4", "foo", ""])
def test_parse_errors(text):
    with pytest.raises(ExprError):
        parse(text)


def test_y_rejected_in_one_dimension():
    with pytest.raises(ExprError):
        to_field("x + y", 1).value(PT1)


@pytest.mark.parametrize(
    "text",
    ["x^2 * y", "sin(pi * x) * cos(y)", "exp(-x * y) / (1 + x^2)", "x^y", "abs(x - 2) * y^3", "(1 + x)^(1 + y)"],
)
def test_gradient_and_hessian_match_differences(text):
    f = to_field(text, 2)
    h = 1e-5
    g = f.grad(PT2)[0]
    H = f.hess(PT2)[0]
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (f.value(PT2 + e)[0] - f.value(PT2 - e)[0]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-7, abs=1e-8)
        fdg = (f.grad(PT2 + e)[0] - f.grad(PT2 - e)[0]) / (2 * h)
        assert np.allclose(H[:, k], fdg, rtol=1e-6, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3))
def test_polynomial_compilation(a, b, c):
    f = to_field(f"({a}) * x^2 + ({b}) * x + {c}", 1)
    x = np.array([[0.1], [0.9]])
    assert np.allclose(f.value(x), a * x[:, 0] ** 2 + b * x[:, 0] + c)
    assert np.allclose(f.grad(x)[:, 0], 2 * a * x[:, 0] + b)
    assert np.allclose(f.hess(x)[:, 0, 0], 2 * a)
