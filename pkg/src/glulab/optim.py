"""Learning-rate schedule and optimizers (Adafactor, plain SGD)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericalError, Tensor


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int
    warmup_steps: int = 1000
    decay_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(f"need 0 < warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")
        if not 0.0 < self.decay_fraction < 1.0:
            raise ValueError(f"decay_fraction must lie in (0, 1), got {self.decay_fraction}")

    @property
    def decay_start(self) -> float:
        return (1.0 - self.decay_fraction) * self.total_steps

    @classmethod
    def for_run(cls, total_steps: int, warmup_steps: int | None = None, decay_fraction: float = 0.1) -> "ScheduleConfig":
        """Default warmup is 1000 steps, cut to a quarter of short runs so it ends well before the midpoint."""
        if warmup_steps is None:
            warmup_steps = min(1000, max(1, total_steps // 4))
        return cls(total_steps, warmup_steps, decay_fraction)


def learning_rate(step: float, schedule: ScheduleConfig) -> float:
    """``1/sqrt(max(step, warmup))``, times a linear ramp to 0 over the final decay fraction."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    lr = 1.0 / math.sqrt(max(step, schedule.warmup_steps))
    if step > schedule.decay_start:
        lr *= (schedule.total_steps - step) / (schedule.decay_fraction * schedule.total_steps)
    return lr


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


@dataclass
class ParamState:
    step: int = 0
    row: np.ndarray | None = None
    col: np.ndarray | None = None
    full: np.ndarray | None = None


@dataclass
class Adafactor:
    """Factored second-moment Adafactor without momentum.

    Matrices keep row and column means of the squared-gradient EMA; vectors
    keep a full EMA. Updates are RMS-clipped at ``clip_threshold`` and, with
    ``scale_parameter``, sized relative to the parameter's own RMS.
    Accumulators are float64 regardless of the parameter precision.
    """

    params: dict[str, Tensor]
    decay_rate: float = 0.8
    eps1: float = 1e-30
    eps2: float = 1e-3
    clip_threshold: float = 1.0
    scale_parameter: bool = True
    state: dict[str, ParamState] = field(default_factory=dict)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> dict[str, float]:
        """Apply one update to every parameter with a gradient; return per-parameter update RMS."""
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        grads = {}
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
            grads[name] = p.grad
        applied = {}
        for name, g in grads.items():
            p = self.params[name]
            update, scale = self._direction(name, p.data, g)
            delta = lr * scale * update
            p.data -= delta.astype(p.data.dtype, copy=False)
            applied[name] = _rms(update)
        return applied

    def _direction(self, name: str, x: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, float]:
        st = self.state.setdefault(name, ParamState())
        st.step += 1
        beta2 = 1.0 - st.step ** (-self.decay_rate)
        g = g.astype(np.float64)
        g2 = g * g + self.eps1
        if g.ndim >= 2:
            row_mean = g2.mean(axis=-1)
            col_mean = g2.mean(axis=-2)
            if st.row is None:
                st.row, st.col = np.zeros_like(row_mean), np.zeros_like(col_mean)
            st.row = beta2 * st.row + (1.0 - beta2) * row_mean
            st.col = beta2 * st.col + (1.0 - beta2) * col_mean
            r = st.row / st.row.mean(axis=-1, keepdims=True)
            v = r[..., :, None] * st.col[..., None, :]
        else:
            if st.full is None:
                st.full = np.zeros_like(g2)
            st.full = beta2 * st.full + (1.0 - beta2) * g2
            v = st.full
        u = g / np.sqrt(v)
        u /= max(1.0, _rms(u) / self.clip_threshold)
        scale = max(self.eps2, _rms(x)) if self.scale_parameter else 1.0
        return u, scale


def adafactor_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: Adafactor, lr: float) -> dict[str, float]:
    """Functional form: load ``grads`` onto ``params`` and step ``state``."""
    for name, g in grads.items():
        params[name].grad = g
    return state.step(lr)


@dataclass
class SGD:
    params: dict[str, Tensor]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> dict[str, float]:
        applied = {}
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
            p.data -= (lr * p.grad).astype(p.data.dtype, copy=False)
            applied[name] = _rms(p.grad)
        return applied


def make_optimizer(name: str, params: dict[str, Tensor]):
    if name == "adafactor":
        return Adafactor(params)
    if name == "sgd":
        return SGD(params)
    raise ValueError(f"unknown optimizer {name!r}; choose adafactor or sgd")
