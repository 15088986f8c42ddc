import math
import re
import statistics
from fractions import Fraction

import numpy as np
import pytest

from glulab import ops, train as T
from glulab.data import Batch, DataConfig
from glulab.model import ModelConfig, TransformerModel
from glulab.optim import ScheduleConfig, learning_rate
from glulab.tensor import tensor

MC = ModelConfig(num_layers=1, d_model=16, num_heads=2, d_kv=8, d_ff_base=24, vocab_size=32)
DC = DataConfig(input_length=16, target_length=6, batch_size=4, corpus_tokens=4000, num_sentinels=8, eval_batches=2)


def run(steps=20, seed=0, **kw):
    return T.train(MC, DC, T.schedule_for(steps), steps, seed, **kw)


class FixedLogits:
    """Stand-in model whose logits ignore the inputs."""

    def __init__(self, fn):
        self.fn = fn

    def logits(self, inputs, targets):
        return tensor(self.fn(np.asarray(targets)))


def brute_force_nll(logits, targets):
    total, count = 0.0, 0
    for b in range(targets.shape[0]):
        for t in range(targets.shape[1]):
            y = int(targets[b, t])
            if y == 0:
                continue
            row = [float(v) for v in logits[b, t]]
            m = max(row)
            total += m + math.log(math.fsum(math.exp(v - m) for v in row)) - row[y]
            count += 1
    return total / count


# --- heldout log-perplexity ------------------------------------------------------


def test_uniform_logits_give_log_vocab():
    V = 64
    model = FixedLogits(lambda t: np.zeros(t.shape + (V,)))
    batches = [Batch(np.ones((2, 3), int), np.array([[5, 6, 0], [7, 0, 0]]))] * 2
    assert abs(T.heldout_log_perplexity(model, batches) - math.log(V)) < 1e-12


def test_certain_model_gives_zero():
    def logits(t):
        out = np.full(t.shape + (5,), -np.inf)
        np.put_along_axis(out, t[..., None], 0.0, axis=-1)
        return out

    batches = [Batch(np.ones((1, 3), int), np.array([[2, 3, 4]]))]
    assert T.heldout_log_perplexity(FixedLogits(logits), batches) == 0.0


def test_hand_built_two_token_case():
    # logits [ln 3, 0, 0], target 0 is not allowed (pad), so target index 1 carries ln 3
    def logits(t):
        out = np.zeros(t.shape + (3,))
        out[..., 1] = math.log(3)
        return out

    batches = [Batch(np.ones((1, 2), int), np.array([[1, 2]]))]
    expected = (math.log(5 / 3) + math.log(5)) / 2
    assert abs(T.heldout_log_perplexity(FixedLogits(logits), batches) - expected) < 1e-10


def test_matches_brute_force_on_real_model():
    model = TransformerModel(MC.replace(seed=4))
    batches = T.eval_batches_for(MC, DC)[:2]
    got = T.heldout_log_perplexity(model, batches)
    total, count = 0.0, 0
    for b in batches:
        n = int(np.count_nonzero(b.targets))
        total += brute_force_nll(model.logits(b.inputs, b.targets).data, b.targets) * n
        count += n
    assert abs(got - total / count) < 1e-8


def test_empty_heldout_rejected():
    with pytest.raises(ValueError):
        T.heldout_log_perplexity(FixedLogits(np.zeros), [])
    with pytest.raises(ValueError, match="no target tokens"):
        T.heldout_log_perplexity(FixedLogits(lambda t: np.zeros(t.shape + (4,))), [Batch(np.ones((1, 2), int), np.zeros((1, 2), int))])


def test_heldout_eval_builds_no_graph():
    model = TransformerModel(MC)
    T.heldout_log_perplexity(model, T.eval_batches_for(MC, DC)[:1])
    assert all(p.grad is None for p in model.parameters().values())


def test_appending_pads_to_targets_leaves_loss_unchanged():
    model = TransformerModel(MC.replace(seed=2))
    r = np.random.default_rng(0)
    inputs = r.integers(2, 24, size=(3, 10))
    targets = r.integers(2, 24, size=(3, 5))
    padded = np.concatenate([targets, np.zeros((3, 4), int)], axis=1)
    assert model.loss(inputs, targets).item() == pytest.approx(model.loss(inputs, padded).item(), rel=1e-13)


# --- train -------------------------------------------------------------------------


def test_zero_steps_reports_only_initial_eval():
    report = T.train(MC, DC, None, 0, 0)
    assert report.trace == [] and len(report.evals) == 1 and report.evals[0][0] == 0
    assert report.final_log_ppl == report.initial_log_ppl > 0


def test_same_seed_bitwise_identical():
    a, b = run(seed=3), run(seed=3)
    assert [(r.step, r.loss, r.lr) for r in a.trace] == [(r.step, r.loss, r.lr) for r in b.trace]
    assert a.evals == b.evals
    assert a.metrics_rows() == b.metrics_rows()


def test_different_seed_differs():
    assert run(seed=0).trace[0].loss != run(seed=1).trace[0].loss


def test_lr_trace_matches_schedule_exactly():
    report = run(steps=40)
    schedule = T.schedule_for(40)
    assert [r.lr for r in report.trace] == [learning_rate(s - 1, schedule) for s in range(1, 41)]


def test_eval_interval_and_final_step():
    report = run(steps=25, eval_interval=10)
    assert [s for s, _ in report.evals] == [0, 10, 20, 25]
    assert T.default_eval_interval(2000) == 100 and T.default_eval_interval(300) == 50


def test_training_improves_heldout():
    report = run(steps=60)
    assert not report.diverged
    assert report.final_log_ppl < report.initial_log_ppl
    assert all(h >= 0 for _, h in report.evals)


def test_divergence_returns_partial_report():
    model = TransformerModel(MC)
    loss, calls = model.loss, []

    def flaky(inputs, targets):
        calls.append(1)
        out = loss(inputs, targets)
        return ops.scale(out, np.nan) if len(calls) == 4 else out

    model.loss = flaky
    report = T.train(MC, DC, T.schedule_for(10), 10, 0, model=model)
    assert report.diverged and "step 4" in report.error
    assert [r.step for r in report.trace] == [1, 2, 3]
    assert report.evals[0][0] == 0


def test_nan_initialization_is_divergence():
    model = TransformerModel(MC)
    model.embedding.data[0, 0] = np.nan
    report = T.train(MC, DC, T.schedule_for(10), 10, 0, model=model)
    assert report.diverged and report.trace == [] and math.isnan(report.final_log_ppl)


def test_schedule_must_cover_steps():
    with pytest.raises(ValueError):
        T.train(MC, DC, ScheduleConfig(10, 2), 20, 0)


def test_metrics_csv(tmp_path):
    report = run(steps=12, eval_interval=5)
    report.write_metrics(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr,heldout_log_ppl"
    assert len(lines) == 14
    assert lines[1].startswith("0,,,")
    assert lines[2].endswith(",") and not lines[6].endswith(",")  # step 1 blank, step 5 evaluated
    assert float(lines[-1].split(",")[3]) == report.final_log_ppl


# --- variance protocol and comparison --------------------------------------------------


def _exact_stdev(values):
    xs = [Fraction(v) for v in values]
    mean = sum(xs) / len(xs)
    return math.sqrt(float(sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)))


def test_variance_study_statistics():
    res = T.variance_study(MC, 3, 10, data_config=DC)
    assert [s for s, _ in res.per_seed] == [0, 1, 2] and not res.failed
    assert res.stddev == _exact_stdev(res.values)
    assert res.stddev == pytest.approx(np.std(res.values, ddof=1), rel=1e-12)
    assert res.mean == pytest.approx(np.mean(res.values), rel=1e-15)
    assert re.fullmatch(r"\d+\.\d{3} \(\d+\.\d{3}\)", res.formatted())


def test_forced_identical_seeds_give_zero_stddev():
    res = T.variance_study(MC, short_steps=8, seeds=[5, 5], data_config=DC)
    assert res.stddev == 0.0


def test_variance_study_needs_two_seeds():
    with pytest.raises(ValueError):
        T.variance_study(MC, 1, 5, data_config=DC)


def test_failed_seeds_excluded_and_reported():
    res = T._collect("relu", [(2, 1.5, None), (0, None, "loss is nan"), (1, 1.0, None)])
    assert res.per_seed == [(1, 1.0), (2, 1.5)]
    assert res.failed == [(0, "loss is nan")]
    assert res.stddev == statistics.stdev([1.0, 1.5])


def test_parallel_matches_sequential():
    a = T.variance_study(MC, 2, 6, data_config=DC, workers=1)
    b = T.variance_study(MC, 2, 6, data_config=DC, workers=2)
    assert a.per_seed == b.per_seed


def test_compare_single_variant_one_row(tmp_path):
    table = T.compare_variants(MC, ["swiglu"], DC, n_seeds=2, steps=6, out_dir=tmp_path)
    assert len(table.rows) == 1 and table.rows[0].d_ff == 16
    csv = table.to_csv().splitlines()
    assert csv[0] == "variant,d_ff,params,mean_log_ppl,stddev_log_ppl,n_seeds"
    assert csv[1].startswith("swiglu,16,") and csv[1].endswith(",2")
    assert re.search(r"swiglu\s+16\s+\d+\s+\d\.\d{3} \(\d\.\d{3}\)", table.to_text())
    assert (tmp_path / "swiglu-seed0" / "metrics.csv").exists()


def test_compare_parity_failure_aborts_before_training(monkeypatch):
    monkeypatch.setattr(T, "train", lambda *a, **k: pytest.fail("trained despite parity failure"))
    with pytest.raises(T.ParameterMismatchError, match="relu="):
        T.compare_variants(MC.replace(d_ff_base=25), ["relu", "swiglu"], DC)


def test_compare_needs_a_variant():
    with pytest.raises(ValueError):
        T.compare_variants(MC, [], DC)


def test_reference_dims_all_variants_parameter_matched():
    rows = T.parity_rows(ModelConfig.reference_base(), T.VARIANT_NAMES)
    assert len({r.params for r in rows}) == 1
    assert {r.d_ff for r in rows} == {3072, 2048}
