import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from crossent.benchmark import (
    BenchmarkSettings,
    derive_seed,
    run_trials,
    splitmix64,
    summarize_trials,
)
from crossent.cli import main
from crossent.experiments import ExperimentSpec, SpecError, load_spec, parse_assignments, run_experiment
from crossent.problems import example2, random_problem


def write_spec(path: Path, **fields) -> Path:
    path.write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- seeds


def test_splitmix64_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
    assert derive_seed(0, 0) == 0xE220A8397B1DCDAF


def test_trial_seeds_are_distinct_and_64_bit():
    seeds = {derive_seed(12345, t) for t in range(10_000)}
    assert len(seeds) == 10_000
    assert all(0 <= s < 2**64 for s in seeds)


def test_method_subset_does_not_change_other_methods():
    full = BenchmarkSettings(n_states=6, n_trials=3, workers=1, max_iters=100)
    part = BenchmarkSettings(n_states=6, n_trials=3, workers=1, max_iters=100, methods=("smooth",))
    a = run_trials(full)
    b = run_trials(part)
    for ra, rb in zip(a, b):
        assert ra.records["smooth"] == rb.records["smooth"]


def test_worker_pool_matches_sequential():
    seq = BenchmarkSettings(n_states=5, n_trials=6, workers=1, max_iters=80)
    par = BenchmarkSettings(n_states=5, n_trials=6, workers=2, max_iters=80)
    a = summarize_trials(seq, run_trials(seq))
    b = summarize_trials(par, run_trials(par))
    assert a.to_json() == b.to_json()


# ---------------------------------------------------------------- spec parsing


def test_spec_parsing_and_overrides(tmp_path):
    path = write_spec(tmp_path / "s.txt", experiment="benchmark", n_states=20, methods="basic, smooth")
    spec = load_spec(path, ["n_trials=200", "alpha = 0.5"])
    assert spec.n_states == 20 and spec.n_trials == 200 and spec.alpha == 0.5
    assert spec.methods == ("basic", "smooth")


def test_default_benchmark_settings():
    spec = ExperimentSpec().resolved()
    assert (spec.experiment, spec.n_states, spec.n_trials) == ("benchmark", 100, 1000)
    assert (spec.n_samples, spec.k_system_samples, spec.rho, spec.alpha) == (100, 100, 0.1, 0.9)
    assert spec.importance == "identity"


@pytest.mark.parametrize("line, field", [
    ("rho = 1.5", "rho"),
    ("experiment = nope", "experiment"),
    ("n_trials = 0", "n_trials"),
    ("methods = basic, other", "methods"),
    ("alpha = 1", "alpha"),
])
def test_invalid_specs_name_the_field(line, field):
    with pytest.raises(SpecError, match=field):
        parse_assignments([line]).validate()


def test_unknown_and_malformed_fields():
    with pytest.raises(SpecError, match="bogus"):
        parse_assignments(["bogus = 1"])
    with pytest.raises(SpecError, match="n_samples"):
        parse_assignments(["n_samples = ten"])
    with pytest.raises(SpecError, match="line 1"):
        parse_assignments(["n_samples 10"])


# ---------------------------------------------------------------- run


def test_example2_experiment(tmp_path):
    spec = ExperimentSpec(experiment="example2", n_trials=3)
    assert run_experiment(spec, tmp_path) == 0
    row = read_csv(tmp_path / "summary.csv")[0]
    assert row["method"] == "Basic CE"
    assert float(row["mean_gain"]) == 0.0
    last = json.loads((tmp_path / "traces" / "trial0000.jsonl").read_text().splitlines()[-1])
    assert last["params"][0] >= 0.99


def test_benchmark_experiment_table_shape(tmp_path):
    spec = ExperimentSpec(experiment="benchmark", n_states=6, n_trials=1, max_iters=200)
    assert run_experiment(spec, tmp_path) == 0
    rows = read_csv(tmp_path / "summary.csv")
    assert [r["method"] for r in rows] == ["Basic CE", "Expectation", "Smooth scheme"]
    assert all(float(r["variance"]) == 0.0 for r in rows)


@pytest.mark.parametrize("experiment", ["example1", "sequence-reject", "sequence-classical"])
def test_other_experiments_run(tmp_path, experiment):
    spec = ExperimentSpec(experiment=experiment, n_trials=2, horizon=3)
    assert run_experiment(spec, tmp_path) == 0
    assert (tmp_path / "summary.csv").exists()


def test_custom_experiment_from_problem_file(tmp_path):
    problem_path = tmp_path / "p.txt"
    problem_path.write_text(random_problem(4, np.random.default_rng(0)).to_text())
    spec = ExperimentSpec(experiment="custom", problem_file=str(problem_path), method="expectation",
                          n_trials=2, alpha=0.9)
    assert run_experiment(spec, tmp_path / "out") == 0
    assert float(read_csv(tmp_path / "out" / "summary.csv")[0]["mean"]) > 0.9


def test_runtime_failure_flags_manifest(tmp_path):
    spec = ExperimentSpec(experiment="custom", problem_file=str(tmp_path / "missing.txt"))
    assert run_experiment(spec, tmp_path / "out") == 1
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["partial"]


def test_manifest_completeness(tmp_path):
    spec = ExperimentSpec(experiment="benchmark", n_states=5, n_trials=4, trace_limit=2, max_iters=100, seed=77)
    run_experiment(spec, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for name in manifest["artifacts"]:
        assert (tmp_path / name).exists()
    assert len([a for a in manifest["artifacts"] if a.startswith("traces/")]) == 2 * 3
    for entry in manifest["trials"]:
        assert entry["seed"] == derive_seed(manifest["master_seed"], entry["trial"])
    records = json.loads((tmp_path / "trials.json").read_text())["Basic CE"]["records"]
    assert [r["seed"] for r in records] == [e["seed"] for e in manifest["trials"]]


def test_outputs_are_byte_identical(tmp_path):
    spec = ExperimentSpec(experiment="benchmark", n_states=5, n_trials=3, max_iters=100)
    run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b")
    for name in ("summary.csv", "trials.json", "manifest.json", "traces/basic_trial0000.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CROSSENT_OUTPUT_ROOT", str(tmp_path))
    spec_path = write_spec(tmp_path / "s.txt", experiment="example2")
    assert main(["run", str(spec_path)]) == 0
    assert (tmp_path / "example2" / "summary.csv").exists()


# ---------------------------------------------------------------- verbs


def test_cli_invalid_spec_exit_code(tmp_path, capsys):
    spec_path = write_spec(tmp_path / "s.txt", experiment="benchmark", rho=3)
    assert main(["run", str(spec_path)]) == 2
    assert "rho" in capsys.readouterr().err


def test_cli_oracle(tmp_path, capsys):
    path = tmp_path / "p.txt"
    path.write_text(example2().to_text())
    assert main(["oracle", str(path)]) == 0
    assert capsys.readouterr().out.split() == ["decision", "1", "gain", "1"]


def test_cli_formula(capsys):
    assert main(["formula", "expected-length", "--lambda", "0.5", "--horizon", "2"]) == 0
    assert capsys.readouterr().out.strip() == "1.33333"
    assert main(["formula", "expected-length", "--lambda", "2", "--horizon", "2"]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "crossent", "formula", "expected-length",
                          "--lambda", "1", "--horizon", "2"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "1.5"
