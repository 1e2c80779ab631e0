import json
from functools import cached_property

import numpy as np
import pytest

from difflab import cli
from difflab.io import read_json, read_samples_csv
from difflab.schedule import Schedule

FAST = ["--set", "schedule.T=100", "--set", "schedule.beta_end=0.05", "--set", "n_chains=300"]


def run(tmp_path, *argv):
    return cli.main([*argv, "--out", str(tmp_path)])


def test_show_config_and_defaults(capsys):
    assert cli.main(["show-config"]) == cli.EXIT_OK
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["schedule"]["T"] == 1000 and cfg["predictor"]["kind"] == "oracle"
    assert cfg["threads"] >= 1  # resolved from the CPU count


@pytest.mark.parametrize(
    "override, where",
    [
        ("sampler.kind=\"bogus\"", "sampler"),
        ("nonexistent.field=1", "nonexistent"),
        ("schedule.beta_end=2.0", "schedule"),
        ("n_chains=-1", "n_chains"),
        ("data.fixture=\"z\"", "data.fixture"),
        ("verify.suites=\"nosuchsuite\"", "verify.suites"),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, override, where):
    cmd = "verify" if where == "verify.suites" else "sample"
    assert run(tmp_path, cmd, "--set", override) == cli.EXIT_CONFIG
    assert where in capsys.readouterr().err


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("DIFFLAB_SEED", "17")
    assert cli.resolve_config(None, [], env={"DIFFLAB_SEED": "17"})["seed"] == 17
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(None, [], env={"DIFFLAB_SEED": "x"})


def test_sample_artifacts_and_replay(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "sample", *FAST, "--set", "sampler.kind=\"ddim\"", "--set", "sampler.n_steps=10", "--set", "sampler.record=\"all\"") == 0
    for name in ("samples.csv", "metrics.json", "config.json", "run_summary.json"):
        assert (a / name).exists()
    summary = read_json(a / "run_summary.json")
    assert summary["command"] == "sample" and "moments" in summary
    assert len(read_samples_csv(a / "samples.csv")) == 11
    assert cli.main(["sample", "--config", str(a / "config.json"), "--out", str(b), "--threads", "1"]) == 0
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()


def test_verify_passes_and_reports(tmp_path, capsys):
    assert run(tmp_path, "verify", "--set", "verify.suites=\"schedule,gaussian\"") == cli.EXIT_OK
    report = read_json(tmp_path / "verify_report.json")
    assert report["n_fail"] == 0 and report["n_pass"] == len(report["checks"])
    assert "PASS" in capsys.readouterr().out


def test_verify_detects_injected_fault(tmp_path, monkeypatch):
    good = Schedule.tilde_betas.func

    def corrupted(self):
        out = good(self).copy()
        out[1:] *= 1.001
        return out

    monkeypatch.setattr(Schedule, "tilde_betas", cached_property(corrupted))
    Schedule.tilde_betas.__set_name__(Schedule, "tilde_betas")
    assert run(tmp_path, "verify", "--set", "verify.suites=\"schedule\"") == cli.EXIT_CHECK
    assert read_json(tmp_path / "verify_report.json")["n_fail"] >= 1


def test_likelihood_single_gaussian(tmp_path):
    data = tmp_path / "g.json"
    data.write_text(json.dumps({"components": [{"w": 1.0, "mean": [0.5], "var": 1.5}]}))
    argv = ["likelihood", "--set", f"data.path={json.dumps(str(data))}", "--set", "schedule.T=10", "--set", "schedule.beta_end=0.5", "--set", "likelihood.x0=[0.8, -1.0]"]
    assert run(tmp_path, *argv) == 0
    rows = read_json(tmp_path / "metrics.json")["likelihood"]
    assert len(rows) == 2
    for r in rows:
        assert abs(r["z"]) < 3


def test_train_then_sample_with_checkpoint(tmp_path):
    t, s = tmp_path / "t", tmp_path / "s"
    assert run(t, "train", *FAST, "--set", "train.steps=60", "--set", "train.batch_size=256", "--set", "train.hidden=32", "--set", "train.log_every=20") == 0
    metrics = read_json(t / "metrics.json")
    assert np.isfinite(metrics["final_loss"]) and "probe_eps_error" in metrics
    assert (t / "loss.csv").read_text().startswith("step,loss")
    ck = str(t / "checkpoint.json")
    assert run(s, "sample", *FAST, "--set", "predictor.kind=\"checkpoint\"", "--set", f"predictor.checkpoint={json.dumps(ck)}", "--set", "sampler.kind=\"ddim\"", "--set", "sampler.n_steps=10") == 0
    assert read_samples_csv(s / "samples.csv")["0"].shape == (300, 2)


def test_metrics_command(tmp_path):
    a = tmp_path / "a"
    assert run(a, "sample", *FAST, "--set", "sampler.kind=\"ddim\"", "--set", "sampler.n_steps=20") == 0
    m = tmp_path / "m"
    assert run(m, "metrics", "--set", f"metrics.samples={json.dumps(str(a / 'samples.csv'))}", "--set", "metrics.n_energy=200") == 0
    assert "moment_error" in read_json(m / "metrics.json")
    assert run(m, "metrics") == cli.EXIT_CONFIG


def test_distill_requires_guidance(tmp_path):
    assert run(tmp_path, "distill", *FAST) == cli.EXIT_CONFIG


def test_missing_checkpoint_is_runtime_or_config_error(tmp_path):
    code = run(tmp_path, "sample", *FAST, "--set", "predictor.kind=\"checkpoint\"", "--set", "predictor.checkpoint=\"/nonexistent.json\"")
    assert code in (cli.EXIT_CONFIG, cli.EXIT_RUNTIME)
