"""Central finite-difference checks against the autograd tape."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import GraphError, Tensor


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise GraphError(f"finite_difference_check needs a scalar-valued f, got shape {value.shape}")
    return value.item()


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    coords: Iterable[int] | None = None,
) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    ``f`` is called with ``x`` itself; the numeric side perturbs ``x.data`` in
    place and restores it. ``coords`` restricts the check to a subset of flat
    indices (all of them by default).
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    _scalar(out)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    worst = 0.0
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = _scalar(f(x))
        flat[i] = orig - eps
        f_minus = _scalar(f(x))
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Run :func:`finite_difference_check` for each named parameter of a closed-over loss.

    With ``max_coords`` set, a seeded random subset of that many coordinates
    is checked per tensor.
    """
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params.items():
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = sorted(rng.choice(p.size, size=max_coords, replace=False).tolist())
        report[name] = finite_difference_check(lambda _: loss_fn(), p, eps, coords)
    for p in params.values():
        p.grad = None
    return report


# --- canned suites shared by the tests and the CLI ------------------------------

TINY_MODEL = dict(num_layers=2, d_model=8, num_heads=2, d_kv=4, d_ff_base=6, vocab_size=11)
TINY_SEQ = 5


def layer_gradcheck(variant, eps: float = 1e-5, linear: bool = False, seed: int = 5) -> dict[str, float]:
    """Check every parameter and the input of one FFN layer under ``sum(FFN(x))``.

    With ``linear`` the activation is replaced by the identity, making the
    loss linear in each tensor separately, so central differences are exact
    up to rounding.
    """
    from . import activations as A
    from . import ops
    from .ffn import init_ffn
    from .tensor import tensor

    rng = np.random.default_rng(seed)
    layer = init_ffn(variant, 4, 6, rng, use_bias=True)
    if linear:
        layer.activation = A.IDENTITY
    for t in layer.parameters().values():
        t.data[...] = rng.uniform(-0.5, 0.5, t.shape)
    x = tensor(rng.uniform(-0.5, 0.5, (2, 3, 4)))
    params = {**layer.parameters(), "x": x}
    return check_parameters(lambda: ops.reduce_sum(layer(x)), params, eps)


def model_gradcheck(variant, eps: float = 1e-5, linear: bool = False, max_coords: int | None = 6, seed: int = 3) -> dict[str, float]:
    """Check the tiny encoder-decoder's loss against every parameter tensor.

    Inputs and targets include a pad position so masking is exercised, and the
    relative-bias tables get random values so that path carries gradient.
    """
    from . import activations as A
    from .model import ModelConfig, TransformerModel

    model = TransformerModel(ModelConfig(**TINY_MODEL, ffn_variant=str(getattr(variant, "value", variant)), seed=seed))
    if linear:
        for layer in model.ffn_layers():
            layer.activation = A.IDENTITY
    r = np.random.default_rng(7)
    vocab = TINY_MODEL["vocab_size"]
    inputs = r.integers(2, vocab, size=(2, TINY_SEQ))
    inputs[1, -1] = 0
    targets = r.integers(2, vocab, size=(2, TINY_SEQ))
    targets[0, -1] = 0
    model.encoder_rel_bias.data[...] = r.normal(0, 0.5, model.encoder_rel_bias.shape)
    model.decoder_rel_bias.data[...] = r.normal(0, 0.5, model.decoder_rel_bias.shape)
    return check_parameters(lambda: model.loss(inputs, targets), model.parameters(), eps, max_coords)
