"""Scalar nonlinearities and their exact derivatives.

GELU is the exact ``x * Phi(x)`` form (Phi via erf), never the tanh
approximation. The scalar helpers here route through the same kernels as
the tensor ops so there is one numerical definition of each function.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels, ops
from .tensor import Tensor


class ActivationKind(enum.Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    RELU = "relu"
    GELU = "gelu"
    SWISH = "swish"


@dataclass(frozen=True)
class Activation:
    kind: ActivationKind
    beta: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.beta):
            raise ValueError(f"swish beta must be finite, got {self.beta}")

    def __call__(self, x: Tensor) -> Tensor:
        return apply(self, x)

    def value(self, x: float) -> float:
        return _VALUE[self.kind](x, self.beta)

    def derivative(self, x: float) -> float:
        return _DERIV[self.kind](x, self.beta)


IDENTITY = Activation(ActivationKind.IDENTITY)
SIGMOID = Activation(ActivationKind.SIGMOID)
RELU = Activation(ActivationKind.RELU)
GELU = Activation(ActivationKind.GELU)
SWISH1 = Activation(ActivationKind.SWISH, 1.0)


def sigmoid(x: float) -> float:
    return float(kernels.sigmoid(float(x)))


def relu(x: float) -> float:
    return x if x > 0 else 0.0


def gelu(x: float) -> float:
    return float(kernels.gelu(float(x)))


def swish(x: float, beta: float = 1.0) -> float:
    return float(kernels.swish(float(x), beta))


def erf(x: float) -> float:
    return float(kernels.erf(float(x)))


def normal_cdf(x: float) -> float:
    return float(kernels.normal_cdf(float(x)))


def sigmoid_derivative(x: float) -> float:
    s = sigmoid(x)
    return s * (1.0 - s)


def relu_derivative(x: float) -> float:
    return 1.0 if x > 0 else 0.0


def gelu_derivative(x: float) -> float:
    return float(kernels.gelu_grad(float(x)))


def swish_derivative(x: float, beta: float = 1.0) -> float:
    return float(kernels.swish_grad(float(x), beta))


_VALUE = {
    ActivationKind.IDENTITY: lambda x, b: float(x),
    ActivationKind.SIGMOID: lambda x, b: sigmoid(x),
    ActivationKind.RELU: lambda x, b: relu(x),
    ActivationKind.GELU: lambda x, b: gelu(x),
    ActivationKind.SWISH: swish,
}

_DERIV = {
    ActivationKind.IDENTITY: lambda x, b: 1.0,
    ActivationKind.SIGMOID: lambda x, b: sigmoid_derivative(x),
    ActivationKind.RELU: lambda x, b: relu_derivative(x),
    ActivationKind.GELU: lambda x, b: gelu_derivative(x),
    ActivationKind.SWISH: swish_derivative,
}


def apply(act: Activation, x: Tensor) -> Tensor:
    kind = act.kind
    if kind is ActivationKind.IDENTITY:
        return ops.identity(x)
    if kind is ActivationKind.SIGMOID:
        return ops.sigmoid(x)
    if kind is ActivationKind.RELU:
        return ops.relu(x)
    if kind is ActivationKind.GELU:
        return ops.gelu(x)
    return ops.swish(x, act.beta)


def as_array(act: Activation, x) -> np.ndarray:
    """Forward value on a plain array, no graph."""
    return apply(act, Tensor(x)).data
