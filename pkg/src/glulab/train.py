"""Training loop, heldout log-perplexity, and the multi-seed comparison protocol."""

from __future__ import annotations

import functools
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ops
from .data import Batch, DataConfig, Vocab, batch_iterator, generate_corpus, heldout_batches
from .ffn import FfnVariant, VARIANT_NAMES
from .model import ModelConfig, TransformerModel, model_parameter_count
from .optim import ScheduleConfig, learning_rate, make_optimizer
from .tensor import NumericalError, no_grad, precision

log = logging.getLogger(__name__)

METRICS_HEADER = "step,loss,lr,heldout_log_ppl"
COMPARISON_HEADER = "variant,d_ff,params,mean_log_ppl,stddev_log_ppl,n_seeds"


class ParameterMismatchError(ValueError):
    """Variants in a comparison do not have identical parameter counts."""


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float


@dataclass
class TrainReport:
    seed: int
    variant: str
    trace: list[StepRecord] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    wall_clock: float = 0.0
    diverged: bool = False
    error: str | None = None
    model: object = field(default=None, repr=False, compare=False)

    @property
    def initial_log_ppl(self) -> float:
        return self.evals[0][1] if self.evals else math.nan

    @property
    def final_log_ppl(self) -> float:
        return self.evals[-1][1] if self.evals else math.nan

    def metrics_rows(self) -> list[str]:
        evals = dict(self.evals)
        rows = [METRICS_HEADER]
        if 0 in evals:
            rows.append(f"0,,,{evals[0]!r}")
        for rec in self.trace:
            h = evals.get(rec.step)
            rows.append(f"{rec.step},{rec.loss!r},{rec.lr!r},{'' if h is None else repr(h)}")
        return rows

    def write_metrics(self, path) -> None:
        Path(path).write_text("\n".join(self.metrics_rows()) + "\n")


def default_eval_interval(steps: int) -> int:
    return max(steps // 20, 50)


@functools.lru_cache(maxsize=8)
def _cached_corpus(seed: int, num_tokens: int, vocab_size: int, num_sentinels: int) -> np.ndarray:
    corpus = generate_corpus(seed, num_tokens, Vocab(vocab_size, num_sentinels))
    corpus.setflags(write=False)
    return corpus


def corpus_for(model_config: ModelConfig, data_config: DataConfig) -> tuple[np.ndarray, Vocab]:
    vocab = Vocab(model_config.vocab_size, data_config.num_sentinels)
    corpus = _cached_corpus(data_config.corpus_seed, data_config.corpus_tokens, vocab.vocab_size, vocab.num_sentinels)
    return corpus, vocab


def eval_batches_for(model_config: ModelConfig, data_config: DataConfig) -> list[Batch]:
    """The fixed heldout set: corruption seeded by the corpus seed, identical across run seeds."""
    corpus, vocab = corpus_for(model_config, data_config)
    batches = heldout_batches(corpus, data_config, vocab, data_config.corpus_seed, data_config.eval_batches)
    if not batches:
        raise ValueError("corpus too small: heldout shard does not fill a single batch")
    return batches


def nll_sum(model, batch: Batch) -> tuple[float, int]:
    with no_grad():
        total, count = ops.token_nll(model.logits(batch.inputs, batch.targets), batch.targets)
    return total.item(), count


def heldout_log_perplexity(model, batches: Sequence[Batch]) -> float:
    """Mean natural-log NLL per non-pad target token over all batches."""
    if not batches:
        raise ValueError("heldout_log_perplexity needs at least one batch")
    total, count = 0.0, 0
    for batch in batches:
        t, c = nll_sum(model, batch)
        total += t
        count += c
    if count == 0:
        raise ValueError("heldout batches contain no target tokens")
    return total / count


def train(
    model_config: ModelConfig,
    data_config: DataConfig,
    schedule: ScheduleConfig | None,
    steps: int,
    seed: int,
    *,
    optimizer: str = "adafactor",
    eval_interval: int | None = None,
    dtype: str = "float32",
    model: TransformerModel | None = None,
) -> TrainReport:
    """Train one model from scratch and evaluate it on the heldout shard.

    ``seed`` controls both the initialization and the corruption sampling of
    training batches. Heldout is evaluated at step 0, every ``eval_interval``
    steps and at the end. A NaN loss or gradient stops the run and returns
    the partial report with ``diverged`` set.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps > 0 and (schedule is None or schedule.total_steps < steps):
        raise ValueError("schedule must cover every training step")
    interval = eval_interval or default_eval_interval(steps)
    model_config = model_config.replace(seed=seed)
    report = TrainReport(seed=seed, variant=model_config.ffn_variant)
    start = time.perf_counter()
    with precision(dtype):
        corpus, vocab = corpus_for(model_config, data_config)
        heldout = eval_batches_for(model_config, data_config)
        if model is None:
            model = TransformerModel(model_config)
        opt = make_optimizer(optimizer, model.parameters())
        batches = batch_iterator(corpus, data_config, vocab, seed)
        try:
            report.evals.append((0, heldout_log_perplexity(model, heldout)))
            model.training = True
            for step in range(steps):
                lr = learning_rate(step, schedule)
                batch = next(batches)
                loss = model.loss(batch.inputs, batch.targets)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"loss is {value} at step {step + 1}")
                opt.zero_grad()
                loss.backward()
                opt.step(lr)
                report.trace.append(StepRecord(step + 1, value, lr))
                done = step + 1
                if done % interval == 0 or done == steps:
                    model.training = False
                    h = heldout_log_perplexity(model, heldout)
                    model.training = True
                    if not math.isfinite(h):
                        raise NumericalError(f"heldout log-perplexity is {h} at step {done}")
                    report.evals.append((done, h))
                    log.info("seed=%d variant=%s step=%d loss=%.4f heldout=%.4f", seed, model_config.ffn_variant, done, value, h)
        except NumericalError as exc:
            report.diverged = True
            report.error = str(exc)
            log.warning("run diverged: %s", exc)
        finally:
            model.training = False
    report.wall_clock = time.perf_counter() - start
    report.model = model
    return report


# --- multi-seed protocol ---------------------------------------------------------


@dataclass
class VarianceResult:
    variant: str
    per_seed: list[tuple[int, float]]
    failed: list[tuple[int, str]]

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.per_seed]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.values) if self.values else math.nan

    @property
    def stddev(self) -> float:
        """Sample standard deviation (n - 1 denominator)."""
        return statistics.stdev(self.values) if len(self.values) >= 2 else math.nan

    @property
    def n_seeds(self) -> int:
        return len(self.per_seed)

    def formatted(self, digits: int = 3) -> str:
        if not self.values:
            return "failed"
        sd = "n/a" if math.isnan(self.stddev) else f"{self.stddev:.{digits}f}"
        return f"{self.mean:.{digits}f} ({sd})"


@dataclass(frozen=True)
class _Job:
    model_config: ModelConfig
    data_config: DataConfig
    steps: int
    seed: int
    warmup_steps: int | None
    optimizer: str
    out_dir: str | None


def schedule_for(steps: int, warmup_steps: int | None = None) -> ScheduleConfig | None:
    """Default schedule for a run of ``steps``; a one-step run gets total 2 so warmup fits."""
    if steps == 0:
        return None
    return ScheduleConfig.for_run(max(steps, 2), warmup_steps)


def _run_job(job: _Job) -> tuple[int, float | None, str | None]:
    schedule = schedule_for(job.steps, job.warmup_steps)
    report = train(job.model_config, job.data_config, schedule, job.steps, job.seed, optimizer=job.optimizer)
    if job.out_dir is not None:
        run_dir = Path(job.out_dir) / f"{job.model_config.ffn_variant}-seed{job.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        report.write_metrics(run_dir / "metrics.csv")
    if report.diverged:
        return job.seed, None, report.error
    return job.seed, report.final_log_ppl, None


def _run_jobs(jobs: list[_Job], workers: int) -> list[tuple[int, float | None, str | None]]:
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _collect(variant: str, results: Iterable[tuple[int, float | None, str | None]]) -> VarianceResult:
    ordered = sorted(results, key=lambda r: (r[0], r[1] if r[1] is not None else math.inf))
    ok = [(s, v) for s, v, _ in ordered if v is not None]
    bad = [(s, e or "diverged") for s, v, e in ordered if v is None]
    return VarianceResult(variant, ok, bad)


def variance_study(
    model_config: ModelConfig,
    n_seeds: int = 4,
    short_steps: int = 200,
    *,
    data_config: DataConfig | None = None,
    seeds: Sequence[int] | None = None,
    warmup_steps: int | None = None,
    optimizer: str = "adafactor",
    workers: int = 1,
    out_dir=None,
) -> VarianceResult:
    """Independent runs differing only in seed; mean and sample stddev of final heldout log-perplexity.

    Diverged runs are excluded from the statistics and listed in ``failed``.
    """
    seeds = list(range(n_seeds)) if seeds is None else list(seeds)
    if len(seeds) < 2:
        raise ValueError("variance_study needs at least 2 seeds")
    data_config = data_config or DataConfig()
    jobs = [
        _Job(model_config, data_config, short_steps, s, warmup_steps, optimizer, None if out_dir is None else str(out_dir))
        for s in seeds
    ]
    return _collect(model_config.ffn_variant, _run_jobs(jobs, workers))


@dataclass
class ComparisonRow:
    variant: str
    d_ff: int
    params: int
    result: VarianceResult | None = None


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    steps: int

    def to_text(self) -> str:
        head = f"{'variant':<10} {'d_ff':>6} {'params':>12}  heldout log-ppl @ {self.steps} steps (mean (stddev), natural log per token)"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            cell = r.result.formatted() if r.result is not None else "not run"
            note = ""
            if r.result is not None and r.result.failed:
                note = "  [failed seeds: " + ", ".join(f"{s}: {e}" for s, e in r.result.failed) + "]"
            lines.append(f"{r.variant:<10} {r.d_ff:>6} {r.params:>12}  {cell}{note}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = [COMPARISON_HEADER]
        for r in self.rows:
            res = r.result
            mean = "" if res is None or not res.values else repr(res.mean)
            sd = "" if res is None or math.isnan(res.stddev) else repr(res.stddev)
            n = 0 if res is None else res.n_seeds
            lines.append(f"{r.variant},{r.d_ff},{r.params},{mean},{sd},{n}")
        return "\n".join(lines) + "\n"


def parity_rows(base_config: ModelConfig, variants: Sequence[str]) -> list[ComparisonRow]:
    """Per-variant width and exact parameter count; raises unless every count is equal."""
    if not variants:
        raise ValueError("compare_variants needs at least one variant")
    rows = []
    for v in variants:
        cfg = base_config.replace(ffn_variant=FfnVariant.parse(v).value)
        rows.append(ComparisonRow(cfg.ffn_variant, cfg.d_ff, model_parameter_count(cfg)))
    counts = {r.params for r in rows}
    if len(counts) > 1:
        detail = ", ".join(f"{r.variant}={r.params} (d_ff={r.d_ff})" for r in rows)
        raise ParameterMismatchError(f"variants are not parameter-matched: {detail}")
    return rows


def compare_variants(
    base_config: ModelConfig,
    variants: Sequence[str] = VARIANT_NAMES,
    data_config: DataConfig | None = None,
    *,
    n_seeds: int = 4,
    steps: int = 200,
    seeds: Sequence[int] | None = None,
    warmup_steps: int | None = None,
    optimizer: str = "adafactor",
    workers: int = 1,
    out_dir=None,
) -> ComparisonTable:
    """Parameter-parity check, then a variance study per variant."""
    rows = parity_rows(base_config, variants)
    data_config = data_config or DataConfig()
    seeds = list(range(n_seeds)) if seeds is None else list(seeds)
    jobs = []
    for r in rows:
        cfg = base_config.replace(ffn_variant=r.variant)
        jobs += [_Job(cfg, data_config, steps, s, warmup_steps, optimizer, None if out_dir is None else str(out_dir)) for s in seeds]
    results = _run_jobs(jobs, workers)
    for i, r in enumerate(rows):
        r.result = _collect(r.variant, results[i * len(seeds):(i + 1) * len(seeds)])
    return ComparisonTable(rows, steps)
