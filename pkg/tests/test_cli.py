import os
import subprocess
import sys

import pytest

from glulab import config as cfg
from glulab.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, build_parser, main
from glulab.data import read_corpus
from glulab.ffn import VARIANT_NAMES

SMALL = [
    "--set", "num_layers=1", "--set", "d_model=16", "--set", "num_heads=2", "--set", "d_kv=8",
    "--set", "d_ff_base=24", "--set", "vocab_size=32", "--set", "num_sentinels=8",
    "--set", "input_length=16", "--set", "target_length=6", "--set", "batch_size=4",
    "--set", "corpus_tokens=4000", "--set", "eval_batches=2",
]  # fmt: skip


def single_threaded_env():
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = "1"
    return env


# --- config -----------------------------------------------------------------------


def test_defaults_roundtrip_through_text():
    text = cfg.RunConfig().to_text()
    assert cfg.load(overrides=cfg.parse_text(text)) == cfg.RunConfig()


def test_unknown_key_rejected(tmp_path):
    (tmp_path / "c.txt").write_text("d_model = 32\nlearning_rate = 3\n")
    with pytest.raises(cfg.ConfigError, match="learning_rate"):
        cfg.load(tmp_path / "c.txt")
    with pytest.raises(cfg.ConfigError, match="bogus"):
        cfg.load(overrides={"bogus": 1})


def test_flags_win_over_file(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\nd_model = 32\nsteps = 10  # trailing\nvariant = geglu\n")
    run = cfg.load(tmp_path / "c.txt", {"steps": "20", "seed": None})
    assert (run.d_model, run.steps, run.variant, run.seed) == (32, 20, "geglu", 0)


def test_bad_values_are_config_errors(tmp_path):
    for text in ("d_model = abc\n", "variant = bogus\n", "d_model\n", "d_model = 1\nd_model = 2\n", "num_heads = 0\n"):
        (tmp_path / "c.txt").write_text(text)
        with pytest.raises(cfg.ConfigError):
            cfg.load(tmp_path / "c.txt")


def test_run_config_builds_component_configs():
    run = cfg.RunConfig(variant="swiglu", steps=2000)
    assert run.model_config().d_ff == 128
    assert run.data_config().resolved_target_length == 16
    assert run.schedule().warmup_steps == 500
    assert cfg.RunConfig(steps=0).schedule() is None


# --- commands ---------------------------------------------------------------------


def test_defaults_command_lists_every_key(capsys):
    assert main(["defaults"]) == EXIT_OK
    out = capsys.readouterr().out
    assert [line.split(" = ")[0] for line in out.splitlines()] == list(cfg.KEYS)


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--help"])
    out = capsys.readouterr().out
    for flag in ("--config", "--set", "--variant", "--seed", "--steps", "--out"):
        assert flag in out


def test_gen_data_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["gen-data", "--seed", "3", "--tokens", "500", "--out", str(a)]) == EXIT_OK
    assert main(["gen-data", "--seed", "3", "--tokens", "500", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    tokens, header = read_corpus(a)
    assert len(tokens) == 500 and header["vocab_size"] == "64"


def test_gen_data_empty_corpus(tmp_path):
    out = tmp_path / "empty.txt"
    assert main(["gen-data", "--tokens", "0", "--out", str(out)]) == EXIT_OK
    tokens, header = read_corpus(out)
    assert len(tokens) == 0 and header["tokens"] == "0"


def test_gen_data_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--tokens", "10", "--out", str(blocker / "sub" / "c.txt")]) == EXIT_CONFIG


def test_train_bogus_variant_lists_names(capsys):
    assert main(["train", "--variant", "bogus"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert all(name in err for name in VARIANT_NAMES)


def test_train_writes_outputs_and_eval_agrees(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *SMALL, "--variant", "swiglu", "--steps", "15", "--out", str(out)]) == EXIT_OK
    assert (out / "metrics.csv").read_text().startswith("step,loss,lr,heldout_log_ppl\n")
    assert (out / "checkpoint" / "model.manifest").exists()
    echoed = cfg.load(out / "config.txt")
    assert (echoed.variant, echoed.steps, echoed.d_model) == ("swiglu", 15, 16)
    final = float((out / "metrics.csv").read_text().splitlines()[-1].split(",")[3])
    capsys.readouterr()
    assert main(["eval", "--config", str(out / "config.txt"), "--checkpoint", str(out / "checkpoint")]) == EXIT_OK
    assert float(capsys.readouterr().out.split("=")[1]) == pytest.approx(final, rel=1e-6)


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope")]) == EXIT_CONFIG


def test_compare_two_variants(tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", *SMALL, "--variants", "relu,geglu", "--seeds", "2", "--steps", "6", "--out", str(out)])
    assert code == EXIT_OK
    csv = (out / "comparison.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in csv[1:]] == ["relu", "geglu"]
    assert (out / "comparison.txt").read_text() == capsys.readouterr().out
    assert (out / "geglu-seed1" / "metrics.csv").exists()


def test_compare_default_seeds_is_four():
    args = build_parser().parse_args(["compare"])
    assert args.seeds == 4 and args.variants == "all"


def test_compare_parity_failure_exit_code(tmp_path, capsys):
    code = main(["compare", *SMALL, "--set", "d_ff_base=25", "--variants", "relu,swiglu", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "not parameter-matched" in capsys.readouterr().err
    assert not (tmp_path / "comparison.csv").exists()


def test_gradcheck_eps_zero_rejected():
    assert main(["gradcheck", "--eps", "0"]) == EXIT_CONFIG


def test_gradcheck_linear_layer_below_1e10(capsys):
    assert main(["gradcheck", "--dims", "layer", "--linear"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8
    assert all(float(line.split("max_rel_error=")[1].split()[0]) < 1e-10 for line in lines)


def test_gradcheck_small_model_one_variant(capsys):
    assert main(["gradcheck", "--variant", "swiglu", "--dims", "small"]) == EXIT_OK
    assert "swiglu" in capsys.readouterr().out


def test_gradcheck_threshold_failure_exit_code():
    assert main(["gradcheck", "--variant", "relu", "--dims", "layer", "--threshold", "1e-20"]) == EXIT_NUMERICAL


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "glulab", "defaults"], capture_output=True, text=True, env=single_threaded_env())
    assert proc.returncode == 0 and proc.stdout.startswith("variant = relu")
