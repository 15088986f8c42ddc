import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glulab import activations as A

mpmath.mp.dps = 30


def test_sigmoid_examples():
    assert A.sigmoid(0.0) == 0.5
    assert A.sigmoid(-1000.0) == 0.0
    assert abs(A.sigmoid(1.0) - float(1 / (1 + mpmath.e ** -1))) < 1e-15


def test_relu_examples():
    assert A.relu(-1.0) == 0.0
    assert A.relu(2.0) == 2.0
    assert A.relu(0.0) == 0.0
    assert A.relu_derivative(0.0) == 0.0


def test_gelu_examples():
    assert A.gelu(0.0) == 0.0
    assert abs(A.gelu(1.0) - float(mpmath.ncdf(1))) < 1e-15
    assert abs(A.gelu(-1.0) + float(mpmath.ncdf(-1))) < 1e-15
    assert abs(A.gelu(1.0) - 0.8413447) < 1e-7
    assert abs(A.gelu(-1.0) + 0.1586552) < 1e-7


def test_gelu_is_exact_erf_form_not_tanh():
    x = 1.5
    tanh_form = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    exact = float(x * mpmath.ncdf(x))
    assert abs(A.gelu(x) - exact) < 1e-15
    assert abs(A.gelu(x) - tanh_form) > 1e-5


def test_swish_examples():
    for beta in (0.5, 1.0, 10.0):
        assert A.swish(0.0, beta) == 0.0
    assert abs(A.swish(1.0, 1.0) - A.sigmoid(1.0)) < 1e-15
    assert abs(A.swish(5.0, 100.0) - 5.0) < 1e-6


def test_erf_scalar_against_mpmath():
    for x in (-3.3, -0.2, 0.0, 0.46875, 1.0, 2.5, 6.0):
        assert abs(A.erf(x) - float(mpmath.erf(x))) <= 1e-12


@given(st.floats(-50, 50))
def test_sigmoid_symmetry(x):
    assert abs(A.sigmoid(x) + A.sigmoid(-x) - 1.0) <= 1e-12


@given(st.floats(-30, 30), st.floats(0.1, 5))
def test_swish_reflection_identity(x, beta):
    # swish(x) - swish(-x) = x, because sigma(bx) + sigma(-bx) = 1
    assert abs(A.swish(x, beta) - A.swish(-x, beta) - x) <= 1e-12 * max(1.0, abs(x))


@given(st.floats(-40, 40))
def test_gelu_bounded_between_zero_and_x(x):
    y = A.gelu(x)
    assert min(0.0, x) - 1e-300 <= y <= max(0.0, x) + 1e-300


POINTS = (-3.0, -1.0, -0.1, 0.1, 1.0, 3.0)
ALL = [A.IDENTITY, A.SIGMOID, A.RELU, A.GELU, A.SWISH1, A.Activation(A.ActivationKind.SWISH, 2.5)]


@pytest.mark.parametrize("act", ALL, ids=lambda a: f"{a.kind.value}-{a.beta}")
@pytest.mark.parametrize("x", POINTS)
def test_derivative_matches_central_difference(act, x):
    h = 1e-5
    numeric = (act.value(x + h) - act.value(x - h)) / (2 * h)
    assert abs(act.derivative(x) - numeric) < 1e-7


def test_swish_beta_must_be_finite():
    with pytest.raises(ValueError):
        A.Activation(A.ActivationKind.SWISH, float("inf"))


def test_tensor_activation_matches_scalar():
    x = np.linspace(-4, 4, 17)
    for act in ALL:
        np.testing.assert_allclose(A.as_array(act, x), [act.value(v) for v in x], rtol=0, atol=1e-15)
