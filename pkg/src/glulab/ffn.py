"""Position-wise feed-forward layers: the two-matrix baselines and the GLU family.

Two-matrix variants compute ``act(x W1) W2``; gated variants compute
``(act(x W) * (x V)) W2``. Gated layers carry a third matrix, so their hidden
width is cut to two thirds of the baseline to hold parameters and matmul
FLOPs fixed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import activations as A
from . import ops
from .tensor import DimensionError, Tensor, get_precision


class FfnVariant(enum.Enum):
    RELU = "relu"
    GELU = "gelu"
    SWISH = "swish"
    GLU = "glu"
    BILINEAR = "bilinear"
    REGLU = "reglu"
    GEGLU = "geglu"
    SWIGLU = "swiglu"

    @property
    def gated(self) -> bool:
        return self in _GATED

    @property
    def num_matrices(self) -> int:
        return 3 if self.gated else 2

    @classmethod
    def parse(cls, name: "str | FfnVariant") -> "FfnVariant":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown FFN variant {name!r}; valid names: {', '.join(VARIANT_NAMES)}") from None


_GATED = frozenset({FfnVariant.GLU, FfnVariant.BILINEAR, FfnVariant.REGLU, FfnVariant.GEGLU, FfnVariant.SWIGLU})

VARIANT_NAMES = tuple(v.value for v in FfnVariant)

_ACTIVATION = {
    FfnVariant.RELU: A.RELU,
    FfnVariant.GELU: A.GELU,
    FfnVariant.SWISH: A.SWISH1,
    FfnVariant.GLU: A.SIGMOID,
    FfnVariant.BILINEAR: A.IDENTITY,
    FfnVariant.REGLU: A.RELU,
    FfnVariant.GEGLU: A.GELU,
    FfnVariant.SWIGLU: A.SWISH1,
}


def default_activation(variant: FfnVariant, beta: float = 1.0) -> A.Activation:
    act = _ACTIVATION[FfnVariant.parse(variant)]
    if act.kind is A.ActivationKind.SWISH and beta != 1.0:
        return A.Activation(A.ActivationKind.SWISH, beta)
    return act


def matched_hidden_width(d_ff_base: int, multiple_of: int = 1) -> int:
    """Largest multiple of ``multiple_of`` not exceeding ``2 * d_ff_base / 3``.

    >>> matched_hidden_width(3072)
    2048
    >>> matched_hidden_width(100, 8)
    64
    """
    if d_ff_base <= 0 or multiple_of <= 0:
        raise ValueError("d_ff_base and multiple_of must be positive")
    if d_ff_base < multiple_of:
        raise ValueError(f"d_ff_base={d_ff_base} is smaller than multiple_of={multiple_of}")
    width = (2 * d_ff_base // 3) // multiple_of * multiple_of
    if width == 0:
        raise ValueError(f"matched width for d_ff_base={d_ff_base}, multiple_of={multiple_of} rounds to 0")
    return width


def hidden_width(variant: FfnVariant, d_ff_base: int, multiple_of: int = 1) -> int:
    variant = FfnVariant.parse(variant)
    return matched_hidden_width(d_ff_base, multiple_of) if variant.gated else d_ff_base


def parameter_count(variant: FfnVariant, d_model: int, d_ff: int, use_bias: bool = False) -> int:
    variant = FfnVariant.parse(variant)
    n = variant.num_matrices * d_model * d_ff
    if use_bias:
        # b1 (or b and c) on the hidden side, b2 on the output
        n += (2 * d_ff if variant.gated else d_ff) + d_model
    return n


def flop_count(variant: FfnVariant, d_model: int, d_ff: int, tokens: int) -> int:
    """Matmul FLOPs (2 per multiply-add) for ``tokens`` positions."""
    variant = FfnVariant.parse(variant)
    return 2 * tokens * variant.num_matrices * d_model * d_ff


def elementwise_count(variant: FfnVariant, d_ff: int, tokens: int) -> dict[str, int]:
    """Non-matmul per-element work, kept apart from :func:`flop_count`."""
    variant = FfnVariant.parse(variant)
    act = 0 if default_activation(variant).kind is A.ActivationKind.IDENTITY else tokens * d_ff
    return {"activation": act, "gate_product": tokens * d_ff if variant.gated else 0}


@dataclass
class FfnLayer:
    variant: FfnVariant
    w1: Tensor
    w2: Tensor
    v: Tensor | None = None
    b1: Tensor | None = None
    c: Tensor | None = None
    b2: Tensor | None = None
    activation: A.Activation | None = None

    def __post_init__(self):
        self.variant = FfnVariant.parse(self.variant)
        if self.activation is None:
            self.activation = default_activation(self.variant)
        if (self.v is not None) != self.variant.gated:
            raise ValueError(f"{self.variant.value}: V must be present iff the variant is gated")
        d_model, d_ff = self.w1.shape
        if self.w2.shape != (d_ff, d_model):
            raise DimensionError(f"W2 shape {self.w2.shape} does not match W1 shape {self.w1.shape}")
        if self.v is not None and self.v.shape != self.w1.shape:
            raise DimensionError(f"V shape {self.v.shape} must equal W shape {self.w1.shape}")
        for name, vec, n in (("b1", self.b1, d_ff), ("c", self.c, d_ff), ("b2", self.b2, d_model)):
            if vec is not None and vec.shape != (n,):
                raise DimensionError(f"bias {name} has shape {vec.shape}, expected ({n},)")
        if self.c is not None and not self.variant.gated:
            raise ValueError("bias c only exists for gated variants")

    @property
    def d_model(self) -> int:
        return self.w1.shape[0]

    @property
    def d_ff(self) -> int:
        return self.w1.shape[1]

    @property
    def use_bias(self) -> bool:
        return self.b1 is not None or self.c is not None or self.b2 is not None

    def parameters(self) -> dict[str, Tensor]:
        named = {"w1": self.w1, "v": self.v, "w2": self.w2, "b1": self.b1, "c": self.c, "b2": self.b2}
        return {k: t for k, t in named.items() if t is not None}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def hidden(self, x: Tensor) -> Tensor:
        """Activations entering W2 (the gated product for GLU-family variants)."""
        x = ops.as_tensor(x)
        if x.shape[-1] != self.d_model:
            raise DimensionError(f"input feature size {x.shape[-1]} != d_model {self.d_model}")
        h = ops.matmul(x, self.w1)
        if self.b1 is not None:
            h = ops.add(h, self.b1)
        h = self.activation(h)
        if self.variant.gated:
            g = ops.matmul(x, self.v)
            if self.c is not None:
                g = ops.add(g, self.c)
            h = ops.mul(h, g)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(self.hidden(x), self.w2)
        if self.b2 is not None:
            out = ops.add(out, self.b2)
        return out


def ffn_forward(layer: FfnLayer, x: Tensor) -> Tensor:
    return layer(x)


def init_ffn(
    variant: FfnVariant | str,
    d_model: int,
    d_ff: int,
    rng: np.random.Generator,
    use_bias: bool = False,
    beta: float = 1.0,
) -> FfnLayer:
    """Fresh layer with N(0, 1/fan_in) weights and zero biases."""
    variant = FfnVariant.parse(variant)
    dt = get_precision()

    def normal(fan_in, shape):
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dt), requires_grad=True)

    def zero(n):
        return Tensor(np.zeros(n, dtype=dt), requires_grad=True) if use_bias else None

    w1 = normal(d_model, (d_model, d_ff))
    v = normal(d_model, (d_model, d_ff)) if variant.gated else None
    w2 = normal(d_ff, (d_ff, d_model))
    return FfnLayer(
        variant,
        w1=w1,
        w2=w2,
        v=v,
        b1=zero(d_ff),
        c=zero(d_ff) if variant.gated else None,
        b2=zero(d_model),
        activation=default_activation(variant, beta),
    )
