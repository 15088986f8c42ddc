"""Encoder-decoder Transformer with pluggable feed-forward sublayers.

Layout follows the T5 conventions: pre-norm residual blocks with RMS
normalization, a final norm after each stack, one embedding matrix shared by
encoder input, decoder input and the output projection, and a bucketed
relative-position bias on self-attention logits (one table per stack, shared
across that stack's layers, one column per head).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import ops
from .ffn import FfnLayer, FfnVariant, hidden_width, init_ffn
from .tensor import DimensionError, Tensor, get_precision

NEG_INF = -np.inf


@dataclass
class ModelConfig:
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 4
    d_kv: int = 16
    d_ff_base: int = 192
    ffn_variant: str = "relu"
    vocab_size: int = 64
    seed: int = 0
    ffn_multiple_of: int = 1
    num_buckets: int = 32
    max_distance: int = 128
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.ffn_variant = FfnVariant.parse(self.ffn_variant).value
        for name in ("d_model", "num_heads", "d_kv", "d_ff_base", "vocab_size", "ffn_multiple_of", "num_buckets", "max_distance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def variant(self) -> FfnVariant:
        return FfnVariant(self.ffn_variant)

    @property
    def d_ff(self) -> int:
        """Hidden width actually used: the base width, or 2/3 of it for gated variants."""
        return hidden_width(self.variant, self.d_ff_base, self.ffn_multiple_of)

    @property
    def inner_dim(self) -> int:
        return self.num_heads * self.d_kv

    @classmethod
    def reference_base(cls, variant: str = "relu", vocab_size: int = 32128) -> "ModelConfig":
        """The 12-layer, d_model=768 base model dimensions."""
        return cls(num_layers=12, d_model=768, num_heads=12, d_kv=64, d_ff_base=3072, ffn_variant=variant, vocab_size=vocab_size)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


CONFIG_FIELDS = tuple(f.name for f in fields(ModelConfig))


def relative_position_bucket(relative_position: np.ndarray, bidirectional: bool, num_buckets: int = 32, max_distance: int = 128) -> np.ndarray:
    """Map ``key_pos - query_pos`` to bucket ids: exact for short offsets, log-spaced beyond."""
    ret = np.zeros_like(relative_position)
    n = -relative_position
    if bidirectional:
        num_buckets //= 2
        ret += (n < 0).astype(ret.dtype) * num_buckets
        n = np.abs(n)
    else:
        n = np.maximum(n, 0)
    max_exact = num_buckets // 2
    is_small = n < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (
            np.log(np.maximum(n, 1) / max_exact) / math.log(max_distance / max_exact) * (num_buckets - max_exact)
        ).astype(ret.dtype)
    large = np.minimum(large, num_buckets - 1)
    return ret + np.where(is_small, n, large)


@dataclass
class AttentionParams:
    q: Tensor
    k: Tensor
    v: Tensor
    o: Tensor

    def items(self):
        return (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o))


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor,
    params: AttentionParams,
    num_heads: int,
    mask: np.ndarray | None = None,
    position_bias: Tensor | None = None,
    return_weights: bool = False,
):
    """``softmax(Q K^T / sqrt(d_kv) + bias + mask) V`` per head, concatenated and projected.

    ``mask`` is an additive array broadcastable to (batch, heads, q_len, k_len)
    holding 0 or -inf. ``position_bias`` has shape (1, heads, q_len, k_len).
    """
    b, lq, _ = x_q.shape
    lk = x_kv.shape[1]
    inner = params.q.shape[1]
    if inner % num_heads:
        raise DimensionError(f"projection width {inner} not divisible by {num_heads} heads")
    d_kv = inner // num_heads

    def split(t, length):
        return ops.transpose(ops.reshape(t, (b, length, num_heads, d_kv)), (0, 2, 1, 3))

    q = split(ops.matmul(x_q, params.q), lq)
    k = split(ops.matmul(x_kv, params.k), lk)
    v = split(ops.matmul(x_kv, params.v), lk)
    scores = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(d_kv))
    if position_bias is not None:
        scores = ops.add(scores, position_bias)
    if mask is not None:
        try:
            full = np.broadcast_shapes(np.shape(mask), scores.shape)
        except ValueError:
            raise DimensionError(f"mask shape {np.shape(mask)} does not broadcast to scores {scores.shape}") from None
        if full != scores.shape:
            raise DimensionError(f"mask shape {np.shape(mask)} does not broadcast to scores {scores.shape}")
        if np.any(np.all(np.broadcast_to(mask, full) == NEG_INF, axis=-1)):
            raise DimensionError("mask leaves an attention row with no visible key")
        scores = ops.add(scores, Tensor(mask))
    weights = ops.softmax(scores)
    ctx = ops.matmul(weights, v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, lq, inner))
    out = ops.matmul(ctx, params.o)
    return (out, weights) if return_weights else out


def causal_mask(length: int) -> np.ndarray:
    m = np.zeros((length, length), dtype=get_precision())
    m[np.triu_indices(length, 1)] = NEG_INF
    return m[None, None]


def padding_mask(tokens: np.ndarray, pad_id: int = 0) -> np.ndarray:
    m = np.where(np.asarray(tokens) == pad_id, NEG_INF, 0.0).astype(get_precision())
    return m[:, None, None, :]


def shift_right(targets: np.ndarray, start_id: int = 0) -> np.ndarray:
    targets = np.asarray(targets)
    out = np.full_like(targets, start_id)
    out[:, 1:] = targets[:, :-1]
    return out


@dataclass
class EncoderLayer:
    attn_norm: Tensor
    attn: AttentionParams
    ffn_norm: Tensor
    ffn: FfnLayer


@dataclass
class DecoderLayer:
    self_norm: Tensor
    self_attn: AttentionParams
    cross_norm: Tensor
    cross_attn: AttentionParams
    ffn_norm: Tensor
    ffn: FfnLayer


class TransformerModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.training = False
        self._dropout_rng = np.random.default_rng(config.seed + 1)
        rng = np.random.default_rng(config.seed)
        dt = get_precision()
        d, inner = config.d_model, config.inner_dim

        def normal(fan_in, shape):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape).astype(dt), requires_grad=True)

        def ones():
            return Tensor(np.ones(d, dtype=dt), requires_grad=True)

        def attention():
            return AttentionParams(
                q=normal(d, (d, inner)), k=normal(d, (d, inner)), v=normal(d, (d, inner)), o=normal(inner, (inner, d))
            )

        def ffn():
            return init_ffn(config.variant, d, config.d_ff, rng)

        self.embedding = normal(d, (config.vocab_size, d))
        bias_shape = (config.num_buckets, config.num_heads)
        self.encoder_rel_bias = Tensor(np.zeros(bias_shape, dtype=dt), requires_grad=True)
        self.decoder_rel_bias = Tensor(np.zeros(bias_shape, dtype=dt), requires_grad=True)
        self.encoder_layers = [EncoderLayer(ones(), attention(), ones(), ffn()) for _ in range(config.num_layers)]
        self.decoder_layers = [
            DecoderLayer(ones(), attention(), ones(), attention(), ones(), ffn()) for _ in range(config.num_layers)
        ]
        self.encoder_final_norm = ones()
        self.decoder_final_norm = ones()

    # --- parameters ----------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        """All trainable tensors by stable dotted name, in checkpoint order."""
        out: dict[str, Tensor] = {
            "shared_embedding": self.embedding,
            "encoder.rel_bias": self.encoder_rel_bias,
            "decoder.rel_bias": self.decoder_rel_bias,
        }
        for i, layer in enumerate(self.encoder_layers):
            p = f"encoder.{i}."
            out[p + "attn_norm"] = layer.attn_norm
            out.update({p + "attn." + k: t for k, t in layer.attn.items()})
            out[p + "ffn_norm"] = layer.ffn_norm
            out.update({p + "ffn." + k: t for k, t in layer.ffn.parameters().items()})
        out["encoder.final_norm"] = self.encoder_final_norm
        for i, layer in enumerate(self.decoder_layers):
            p = f"decoder.{i}."
            out[p + "self_norm"] = layer.self_norm
            out.update({p + "self_attn." + k: t for k, t in layer.self_attn.items()})
            out[p + "cross_norm"] = layer.cross_norm
            out.update({p + "cross_attn." + k: t for k, t in layer.cross_attn.items()})
            out[p + "ffn_norm"] = layer.ffn_norm
            out.update({p + "ffn." + k: t for k, t in layer.ffn.parameters().items()})
        out["decoder.final_norm"] = self.decoder_final_norm
        return out

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def ffn_layers(self) -> list[FfnLayer]:
        return [layer.ffn for layer in self.encoder_layers] + [layer.ffn for layer in self.decoder_layers]

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    # --- forward -------------------------------------------------------------

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise DimensionError(f"token batch must be (batch, length), got shape {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise IndexError(f"token id out of range [0, {self.config.vocab_size})")
        return tokens

    def _position_bias(self, table: Tensor, q_len: int, k_len: int, bidirectional: bool) -> Tensor:
        rel = np.arange(k_len)[None, :] - np.arange(q_len)[:, None]
        buckets = relative_position_bucket(rel, bidirectional, self.config.num_buckets, self.config.max_distance)
        bias = ops.embedding_lookup(table, buckets)  # (q, k, heads)
        return ops.reshape(ops.transpose(bias, (2, 0, 1)), (1, self.config.num_heads, q_len, k_len))

    def _dropout(self, x: Tensor) -> Tensor:
        if not self.training or self.config.dropout_rate == 0.0:
            return x
        return ops.dropout(x, self.config.dropout_rate, self._dropout_rng)

    def encode(self, input_tokens) -> Tensor:
        tokens = self._check_tokens(input_tokens)
        h = self.config.num_heads
        x = ops.embedding_lookup(self.embedding, tokens)
        mask = padding_mask(tokens)
        bias = self._position_bias(self.encoder_rel_bias, tokens.shape[1], tokens.shape[1], True) if self.encoder_layers else None
        for layer in self.encoder_layers:
            y = ops.rms_normalize(x, layer.attn_norm)
            x = ops.add(x, self._dropout(multi_head_attention(y, y, layer.attn, h, mask, bias)))
            y = ops.rms_normalize(x, layer.ffn_norm)
            x = ops.add(x, self._dropout(layer.ffn(y)))
        return ops.rms_normalize(x, self.encoder_final_norm)

    def decode_logits(self, encoder_output: Tensor, target_tokens, input_tokens=None) -> Tensor:
        """Teacher-forced logits: position j sees targets before j only.

        ``input_tokens`` supplies the encoder padding mask for cross-attention;
        without it every encoder position is visible.
        """
        targets = self._check_tokens(target_tokens)
        h = self.config.num_heads
        dec_in = shift_right(targets)
        t = targets.shape[1]
        x = ops.embedding_lookup(self.embedding, dec_in)
        self_mask = causal_mask(t)
        cross_mask = padding_mask(self._check_tokens(input_tokens)) if input_tokens is not None else None
        bias = self._position_bias(self.decoder_rel_bias, t, t, False) if self.decoder_layers else None
        for layer in self.decoder_layers:
            y = ops.rms_normalize(x, layer.self_norm)
            x = ops.add(x, self._dropout(multi_head_attention(y, y, layer.self_attn, h, self_mask, bias)))
            y = ops.rms_normalize(x, layer.cross_norm)
            x = ops.add(x, self._dropout(multi_head_attention(y, encoder_output, layer.cross_attn, h, cross_mask)))
            y = ops.rms_normalize(x, layer.ffn_norm)
            x = ops.add(x, self._dropout(layer.ffn(y)))
        x = ops.rms_normalize(x, self.decoder_final_norm)
        return ops.matmul(x, ops.transpose(self.embedding))

    def logits(self, input_tokens, target_tokens) -> Tensor:
        return self.decode_logits(self.encode(input_tokens), target_tokens, input_tokens)

    def loss(self, input_tokens, target_tokens) -> Tensor:
        return ops.cross_entropy(self.logits(input_tokens, target_tokens), target_tokens)


def encode(model: TransformerModel, input_tokens) -> Tensor:
    return model.encode(input_tokens)


def decode_logits(model: TransformerModel, encoder_output: Tensor, target_tokens, input_tokens=None) -> Tensor:
    return model.decode_logits(encoder_output, target_tokens, input_tokens)


def model_parameter_count(config: ModelConfig) -> int:
    """Closed-form total, identical to ``TransformerModel(config).num_parameters()``."""
    from .ffn import parameter_count

    d, inner, n = config.d_model, config.inner_dim, config.num_layers
    attn = 4 * d * inner
    ffn = parameter_count(config.variant, d, config.d_ff)
    enc = n * (2 * d + attn + ffn) + d
    dec = n * (3 * d + 2 * attn + ffn) + d
    return config.vocab_size * d + 2 * config.num_buckets * config.num_heads + enc + dec
