"""Synthetic corpus, span corruption, and fixed-shape batching.

Token ids: ``0`` is padding, ``1`` is end-of-sequence, ordinary symbols
follow, and the sentinels occupy the top of the id range. Sentinel ``i`` has
id ``vocab_size - num_sentinels + i``, so sentinels used in order also have
increasing ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

PAD_ID = 0
EOS_ID = 1
NUM_RESERVED = 2
REFERENCE_TARGET_RATIO = 114 / 512


class CorruptionError(ValueError):
    """Raised for malformed corruption inputs or examples."""


@dataclass(frozen=True)
class Vocab:
    vocab_size: int = 64
    num_sentinels: int = 16

    def __post_init__(self):
        if self.num_sentinels < 1:
            raise ValueError("need at least one sentinel")
        if self.num_symbols < 2:
            raise ValueError(
                f"vocab_size={self.vocab_size} leaves {self.num_symbols} ordinary symbols; need >= 2"
            )

    @property
    def num_symbols(self) -> int:
        return self.vocab_size - NUM_RESERVED - self.num_sentinels

    @property
    def first_symbol(self) -> int:
        return NUM_RESERVED

    @property
    def first_sentinel(self) -> int:
        return self.vocab_size - self.num_sentinels

    def sentinel(self, i: int) -> int:
        if not 0 <= i < self.num_sentinels:
            raise CorruptionError(f"sentinel index {i} exceeds the {self.num_sentinels} available")
        return self.first_sentinel + i

    def is_sentinel(self, token) -> np.ndarray:
        return np.asarray(token) >= self.first_sentinel

    def sentinel_index(self, token: int) -> int:
        return int(token) - self.first_sentinel


@dataclass(frozen=True)
class CorruptionConfig:
    corruption_rate: float = 0.15
    mean_span_length: float = 3.0
    input_length: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.corruption_rate < 1.0:
            raise ValueError(f"corruption_rate must lie in (0, 1), got {self.corruption_rate}")
        if self.mean_span_length < 1.0:
            raise ValueError(f"mean_span_length must be >= 1, got {self.mean_span_length}")
        if self.input_length < 1:
            raise ValueError("input_length must be positive")

    def num_spans(self, length: int | None = None) -> int:
        length = self.input_length if length is None else length
        return int(round(self.corruption_rate * length / self.mean_span_length))

    def num_noise_tokens(self, length: int | None = None) -> int:
        length = self.input_length if length is None else length
        n = self.num_spans(length)
        return 0 if n == 0 else max(n, int(round(self.corruption_rate * length)))


@dataclass
class SpanCorruptionExample:
    input_ids: np.ndarray
    target_ids: np.ndarray


# --- corpus ------------------------------------------------------------------


def generate_corpus(seed: int, num_tokens: int, vocab: Vocab, concentration: float = 0.1) -> np.ndarray:
    """Token stream from a seeded order-2 Markov chain over the ordinary symbols.

    Each (previous, current) context draws its next-symbol distribution from a
    symmetric Dirichlet; small ``concentration`` makes the chain peaky and
    therefore learnable.
    """
    if vocab.num_symbols < 2:
        raise ValueError("vocab too small: need at least 2 ordinary symbols")
    if num_tokens < 0:
        raise ValueError("num_tokens must be >= 0")
    rng = np.random.default_rng(seed)
    k = vocab.num_symbols
    probs = rng.dirichlet(np.full(k, concentration), size=(k, k))
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random(num_tokens)
    out = np.empty(num_tokens, dtype=np.int64)
    a, b = rng.integers(k), rng.integers(k)
    for i in range(num_tokens):
        nxt = int(np.searchsorted(cdf[a, b], u[i], side="right"))
        out[i] = nxt
        a, b = b, nxt
    return out + vocab.first_symbol


def write_corpus(path, tokens: np.ndarray, header: dict | None = None, line_length: int = 64) -> None:
    """Plain-text export: ``#`` header lines, then space-separated ids, one sequence per line."""
    lines = [f"# {k} = {v}" for k, v in (header or {}).items()]
    tokens = np.asarray(tokens)
    for start in range(0, tokens.size, line_length):
        lines.append(" ".join(str(int(t)) for t in tokens[start:start + line_length]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_corpus(path) -> tuple[np.ndarray, dict[str, str]]:
    header: dict[str, str] = {}
    ids: list[int] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
        elif line.strip():
            ids.extend(int(t) for t in line.split())
    return np.asarray(ids, dtype=np.int64), header


def write_sequences(path, sequences) -> None:
    Path(path).write_text("".join(" ".join(str(int(t)) for t in seq) + "\n" for seq in sequences))


def read_sequences(path) -> list[np.ndarray]:
    return [np.asarray([int(t) for t in line.split()], dtype=np.int64) for line in Path(path).read_text().splitlines()]


# --- span corruption ---------------------------------------------------------


def _span_lengths(total: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random composition of ``total`` into ``n`` positive parts."""
    if n == 1:
        return np.array([total])
    cuts = np.sort(rng.choice(np.arange(1, total), size=n - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def _place_spans(lengths: np.ndarray, length: int, rng: np.random.Generator, max_tries: int = 200) -> list[tuple[int, int]]:
    """Non-overlapping, non-adjacent spans.

    Starts are drawn by rejection, one span at a time. If a span cannot be
    placed (dense configs), fall back to an exact draw: split the kept tokens
    into gaps with at least one token between consecutive spans.
    """
    taken = np.zeros(length + 1, dtype=bool)
    spans = []
    for span_len in lengths:
        for _ in range(max_tries):
            start = int(rng.integers(0, length - span_len + 1))
            lo, hi = max(start - 1, 0), start + span_len + 1
            if not taken[lo:hi].any():
                taken[start:start + span_len] = True
                spans.append((start, start + span_len))
                break
        else:
            return _place_spans_exact(lengths, length, rng)
    return sorted(spans)


def _place_spans_exact(lengths: np.ndarray, length: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    n = len(lengths)
    free = length - int(np.sum(lengths)) - (n - 1)
    # n + 1 gaps (ends may be empty); interior gaps get one mandatory token on top
    gaps = rng.multinomial(free, np.full(n + 1, 1.0 / (n + 1)))
    gaps[1:-1] += 1
    spans = []
    pos = 0
    for i, span_len in enumerate(lengths):
        pos += int(gaps[i])
        spans.append((pos, pos + int(span_len)))
        pos += int(span_len)
    return spans


def corrupt(tokens, config: CorruptionConfig, vocab: Vocab, rng: np.random.Generator | None = None) -> SpanCorruptionExample:
    """Delete random spans, replace each with one sentinel, emit the spans as the target.

    The number of spans is ``round(rate * len / mean_span)``; span lengths
    sum to ``round(rate * len)``. ``rng`` defaults to one seeded from
    ``config.seed``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size != config.input_length:
        raise CorruptionError(f"expected {config.input_length} tokens, got shape {tokens.shape}")
    if np.any(vocab.is_sentinel(tokens)):
        raise CorruptionError("input already contains sentinel ids")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n_spans = config.num_spans()
    if n_spans == 0:
        return SpanCorruptionExample(tokens.copy(), np.array([EOS_ID], dtype=np.int64))
    if n_spans > vocab.num_sentinels:
        raise CorruptionError(f"{n_spans} spans need more than the {vocab.num_sentinels} sentinels available")
    n_noise = config.num_noise_tokens()
    # every span needs a kept token between it and the next
    if n_noise + n_spans - 1 > tokens.size:
        raise CorruptionError(f"cannot fit {n_spans} separated spans of {n_noise} tokens into {tokens.size}")
    spans = _place_spans(_span_lengths(n_noise, n_spans, rng), tokens.size, rng)

    inputs: list[int] = []
    targets: list[int] = []
    pos = 0
    for i, (start, stop) in enumerate(spans):
        s = vocab.sentinel(i)
        inputs.extend(tokens[pos:start].tolist())
        inputs.append(s)
        targets.append(s)
        targets.extend(tokens[start:stop].tolist())
        pos = stop
    inputs.extend(tokens[pos:].tolist())
    targets.append(EOS_ID)
    return SpanCorruptionExample(np.asarray(inputs, dtype=np.int64), np.asarray(targets, dtype=np.int64))


def reconstruct(example: SpanCorruptionExample, vocab: Vocab) -> np.ndarray:
    """Splice the target spans back in at their sentinels."""
    inputs = np.asarray(example.input_ids)
    targets = np.asarray(example.target_ids)
    if targets.size == 0 or targets[-1] != EOS_ID:
        raise CorruptionError("target must end with eos")
    body = targets[:-1]
    if np.any(body == EOS_ID):
        raise CorruptionError("eos inside target body")

    spans: dict[int, list[int]] = {}
    current = None
    for t in body.tolist():
        if vocab.is_sentinel(t):
            current = vocab.sentinel_index(t)
            if current in spans:
                raise CorruptionError(f"sentinel {current} repeated in target")
            spans[current] = []
        elif current is None:
            raise CorruptionError("target tokens before the first sentinel")
        else:
            spans[current].append(t)

    out: list[int] = []
    seen: list[int] = []
    for t in inputs.tolist():
        if vocab.is_sentinel(t):
            idx = vocab.sentinel_index(t)
            if idx in seen:
                raise CorruptionError(f"sentinel {idx} repeated in input")
            if seen and idx <= seen[-1]:
                raise CorruptionError("sentinels out of order in input")
            if idx not in spans:
                raise CorruptionError(f"sentinel {idx} in input has no span in target")
            seen.append(idx)
            out.extend(spans[idx])
        else:
            out.append(t)
    if sorted(spans) != seen:
        raise CorruptionError("target spans do not match input sentinels")
    return np.asarray(out, dtype=np.int64)


# --- batching ----------------------------------------------------------------


@dataclass(frozen=True)
class DataConfig:
    input_length: int = 64
    target_length: int | None = None
    batch_size: int = 16
    corruption_rate: float = 0.15
    mean_span_length: float = 3.0
    corpus_tokens: int = 200_000
    corpus_seed: int = 1
    num_sentinels: int = 16
    heldout_fraction: float = 0.1
    eval_batches: int = 8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.target_length is not None and self.target_length < 1:
            raise ValueError("target_length must be positive")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must lie in (0, 1)")
        self.corruption(0)  # validates rate / span / length

    @property
    def resolved_target_length(self) -> int:
        if self.target_length is not None:
            return self.target_length
        return max(1, math.ceil(self.input_length * REFERENCE_TARGET_RATIO))

    def corruption(self, seed: int) -> CorruptionConfig:
        return CorruptionConfig(self.corruption_rate, self.mean_span_length, self.input_length, seed)

    @classmethod
    def reference_scale(cls) -> "DataConfig":
        """128 examples of 512 input and 114 target tokens per batch."""
        return cls(input_length=512, target_length=114, batch_size=128, num_sentinels=100)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray


def split_corpus(corpus: np.ndarray, heldout_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Training prefix and the disjoint heldout tail."""
    n_held = int(len(corpus) * heldout_fraction)
    return corpus[: len(corpus) - n_held], corpus[len(corpus) - n_held:]


def _fit(seq: np.ndarray, length: int) -> np.ndarray:
    out = np.full(length, PAD_ID, dtype=np.int64)
    n = min(length, seq.size)
    out[:n] = seq[:n]
    return out


def _example_rng(seed: int, step: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, index]))


def make_batch(chunks: np.ndarray, config: DataConfig, vocab: Vocab, seed: int, step: int) -> Batch:
    ccfg = config.corruption(seed)
    t_len = config.resolved_target_length
    inputs, targets = [], []
    for i, chunk in enumerate(chunks):
        ex = corrupt(chunk, ccfg, vocab, _example_rng(seed, step, i))
        inputs.append(_fit(ex.input_ids, config.input_length))
        targets.append(_fit(ex.target_ids, t_len))
    return Batch(np.stack(inputs), np.stack(targets))


def train_chunk_starts(n_train: int, config: DataConfig, step: int) -> np.ndarray:
    first = step * config.batch_size
    return (np.arange(first, first + config.batch_size) * config.input_length) % n_train


def batch_iterator(
    corpus: np.ndarray,
    config: DataConfig,
    vocab: Vocab,
    seed: int,
    split: str = "train",
    start_step: int = 0,
) -> Iterator[Batch]:
    """Fixed-shape batches of (inputs, targets).

    ``train`` cycles through the training prefix forever, wrapping around;
    ``heldout`` walks the tail once, in order, without wrapping, and drops a
    trailing partial batch. Batches depend only on (corpus, seed, step).
    """
    train, held = split_corpus(corpus, config.heldout_fraction)
    L, B = config.input_length, config.batch_size
    if split == "train":
        if train.size < L:
            raise ValueError(f"training corpus of {train.size} tokens is shorter than input_length={L}")
        step = start_step
        idx = np.arange(L)
        while True:
            starts = train_chunk_starts(train.size, config, step)
            chunks = np.take(train, starts[:, None] + idx[None, :], mode="wrap")
            yield make_batch(chunks, config, vocab, seed, step)
            step += 1
    elif split == "heldout":
        n_chunks = held.size // L
        for b in range(n_chunks // B):
            chunks = held[b * B * L:(b + 1) * B * L].reshape(B, L)
            yield make_batch(chunks, config, vocab, seed, b)
    else:
        raise ValueError(f"unknown split {split!r}")


def heldout_batches(corpus: np.ndarray, config: DataConfig, vocab: Vocab, seed: int, limit: int | None = None) -> list[Batch]:
    out = []
    for i, batch in enumerate(batch_iterator(corpus, config, vocab, seed, "heldout")):
        if limit is not None and i >= limit:
            break
        out.append(batch)
    return out


def train_index_set(n_corpus: int, config: DataConfig, steps: int) -> set[int]:
    """Corpus positions read by the first ``steps`` training batches."""
    n_train = n_corpus - int(n_corpus * config.heldout_fraction)
    used: set[int] = set()
    for step in range(steps):
        for s in train_chunk_starts(n_train, config, step):
            used.update(((s + np.arange(config.input_length)) % n_train).tolist())
    return used


def heldout_index_set(n_corpus: int, config: DataConfig) -> set[int]:
    n_held = int(n_corpus * config.heldout_fraction)
    start = n_corpus - n_held
    n_chunks = n_held // config.input_length
    n_used = (n_chunks // config.batch_size) * config.batch_size * config.input_length
    return set(range(start, start + n_used))
