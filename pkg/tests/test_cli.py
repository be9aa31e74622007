"""Command-line orchestration: stages, summaries, determinism, exit codes."""

import json
import subprocess
import sys

import pytest

from cheatlab import cli
from cheatlab.config import KEYS, load_config

TINY = {
    "data.vae_episodes": "1",
    "data.vae_max_steps": "80",
    "data.expert_episodes": "1",
    "data.expert_max_steps": "100",
    "data.real_episodes": "2",
    "data.real_max_steps": "80",
    "vae.k": "3",
    "vae.hidden": "16,8",
    "vae.epochs": "3",
    "policy.h_dim": "4",
    "policy.mlp_hidden": "8,6",
    "evolve.population": "6",
    "evolve.elites": "1",
    "evolve.generations": "3",
    "cheat.n_poses": "12",
    "cheat.epochs": "3",
    "cheat.hidden": "16,8",
    "baseline.hidden": "16,8",
    "baseline.epochs": "3",
    "eval.episodes": "3",
    "eval.max_steps": "100",
    "viz.max_steps": "40",
    "viz.stride": "8",
}


def tiny_args(out_dir, **extra):
    settings = dict(TINY, **{k: str(v) for k, v in extra.items()})
    settings["out_dir"] = str(out_dir)
    args = []
    for key, value in settings.items():
        args += ["--set", f"{key}={value}"]
    return args


ARTIFACTS = (
    "fake_data.bin", "vae.ckpt", "expert_data.bin", "controller.ckpt",
    "evolution_history.csv", "pairs.bin", "cheat.ckpt", "real_data.bin",
    "baseline.ckpt", "eval_report.csv", "eval_report.txt",
    "belief_strip.pgm",
)


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["pipeline", *tiny_args(out)])
    assert code == 0
    return out


def test_pipeline_writes_every_artifact_and_summary(pipeline_run):
    for name in ARTIFACTS:
        assert (pipeline_run / name).exists(), name
    for stage in cli.STAGES:
        summary_path = pipeline_run / f"{stage.replace('-', '_')}_summary.json"
        summary = json.loads(summary_path.read_text())
        assert summary["stage"] == stage
        assert set(summary["outputs"]) == set(cli.STAGE_IO[stage][1])
        for digest in {**summary["inputs"], **summary["outputs"]}.values():
            assert len(digest) == 64
    pipe = json.loads((pipeline_run / "pipeline_summary.json").read_text())
    assert pipe["stages"] == list(cli.STAGES)
    assert set(pipe["metrics"]["mean_distance"]) == {
        "cheat", "baseline", "random", "zero"
    }


def test_summary_digest_chain(pipeline_run):
    # Whoever produced a file recorded its digest; every later consumer
    # must have seen exactly those bytes.
    produced: dict[str, str] = {}
    for stage in cli.STAGES:
        summary = json.loads(
            (pipeline_run / f"{stage.replace('-', '_')}_summary.json").read_text()
        )
        for name, digest in summary["inputs"].items():
            assert name in produced, f"{stage} consumed unproduced {name}"
            assert digest == produced[name], f"digest chain broken at {name}"
        produced.update(summary["outputs"])


def test_pipeline_reruns_byte_identical(pipeline_run, tmp_path):
    twin = tmp_path / "twin"
    assert cli.main(["pipeline", *tiny_args(twin)]) == 0
    for name in ARTIFACTS:
        a = (pipeline_run / name).read_bytes()
        b = (twin / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"


def test_stagewise_equals_pipeline(pipeline_run, tmp_path):
    stepwise = tmp_path / "stepwise"
    for stage in cli.STAGES:
        assert cli.main([stage, *tiny_args(stepwise)]) == 0
    for name in ARTIFACTS:
        assert (stepwise / name).read_bytes() == (pipeline_run / name).read_bytes()


def test_eval_report_lists_all_methods(pipeline_run):
    csv_text = (pipeline_run / "eval_report.csv").read_text()
    lines = csv_text.strip().splitlines()
    assert lines[0] == "method,mean_distance_m,crash_rate,episodes"
    assert [ln.split(",")[0] for ln in lines[1:]] == [
        "baseline", "cheat", "random", "zero"
    ]


def test_print_config_covers_every_key(capsys):
    assert cli.main(["print-config"]) == 0
    text = capsys.readouterr().out
    keys = {line.split(" = ")[0] for line in text.strip().splitlines()}
    assert keys == set(KEYS)


def test_print_config_respects_overrides(capsys, tmp_path):
    assert cli.main(["print-config", "--set", "seed=42"]) == 0
    assert "seed = 42" in capsys.readouterr().out
    # The dump can be fed straight back in as a config file.
    assert cli.main(["print-config"]) == 0
    dump = capsys.readouterr().out
    path = tmp_path / "roundtrip.cfg"
    path.write_text(dump)
    assert load_config(path).dump() == dump


def test_usage_and_config_errors_exit_one(capsys):
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["eval", "--set", "popsize=3"]) == 1
    assert "popsize" in capsys.readouterr().err
    assert cli.main(["eval", "--set", "world.dt=7"]) == 1


def test_missing_prerequisite_exits_two(tmp_path, capsys):
    code = cli.main(["eval", "--set", f"out_dir={tmp_path / 'empty'}"])
    assert code == 2
    err = capsys.readouterr().err
    assert "controller.ckpt" in err
    assert cli.main(["viz", "--set", f"out_dir={tmp_path / 'empty'}"]) == 2


def test_stage_failure_exits_three_with_stage_prefix(tmp_path, capsys):
    out = tmp_path / "broken"
    assert cli.main(["gen-fake-data", *tiny_args(out)]) == 0
    (out / "fake_data.bin").write_bytes(b"LCLBgarbage")
    code = cli.main(["train-vae", *tiny_args(out)])
    assert code == 3
    assert "train-vae:" in capsys.readouterr().err


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "cheatlab.cli", "print-config"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "world.scan_width = 64" in proc.stdout
