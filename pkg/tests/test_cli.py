import json

import pytest

from bdsdep.cli import main

FAST_SOLVE = [
    "--set", "problem=zero",
    "--set", "solver.innerPaths=300",
    "--set", "grid.steps=10",
]


def _run(args):
    return main([str(a) for a in args])


def test_solve_writes_run_artifacts(tmp_path):
    out = tmp_path / "run"
    assert _run(["solve", "--out", out, "--seed", "3", *FAST_SOLVE]) == 0
    results = json.loads((out / "results.json").read_text())
    assert results["p0"]["mean"][0] == pytest.approx(1.0, abs=1e-10)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolvedConfig"]["seed"] == 3
    assert "timestamp" in manifest
    assert (out / "steps.csv").exists()
    assert (out / "p_profile.png").exists()
    assert "timestamp" not in results


def test_plot_flag_disables_figures(tmp_path):
    out = tmp_path / "run"
    assert _run(["solve", "--out", out, "--set", "plot=false", *FAST_SOLVE]) == 0
    assert not (out / "p_profile.png").exists()
    assert (out / "results.json").exists()


def test_config_file_and_set_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem": "zero", "solver": {"innerPaths": 300}}))
    out = tmp_path / "run"
    code = _run(
        ["solve", "--config", cfg, "--out", out, "--set", "grid.steps=12", "--seed", "7"]
    )
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    resolved = manifest["resolvedConfig"]
    assert resolved["problem"] == "zero"
    assert resolved["solver"]["innerPaths"] == 300
    assert resolved["grid"]["steps"] == 12
    assert resolved["seed"] == 7


def test_unknown_key_in_file_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"solver": {"innerPath": 10}}))
    assert _run(["solve", "--config", cfg, "--out", tmp_path / "x"]) == 2
    assert "solver.innerPath" in capsys.readouterr().err


def test_unknown_set_key_exits_2(tmp_path, capsys):
    assert _run(["solve", "--out", tmp_path / "x", "--set", "grid.step=10"]) == 2
    assert "grid.step" in capsys.readouterr().err


def test_wrong_type_exits_2(tmp_path):
    assert _run(["solve", "--out", tmp_path / "x", "--set", "solver.innerPaths=many"]) == 2


def test_numeric_failure_exits_3(tmp_path, capsys):
    code = _run(
        [
            "solve",
            "--out", tmp_path / "x",
            "--set", "problem=linear-scalar",
            "--set", "solver.innerPaths=300",
            "--set", "solver.picardMaxIter=1",
        ]
    )
    assert code == 3
    assert "step" in capsys.readouterr().err


def test_simulate_forward(tmp_path):
    out = tmp_path / "fwd"
    code = _run(
        [
            "simulate-forward",
            "--out", out,
            "--seed", "5",
            "--set", "problem=jump-coupled",
            "--set", "forward.paths=7",
            "--set", "grid.steps=8",
        ]
    )
    assert code == 0
    lines = (out / "paths.csv").read_text().strip().splitlines()
    assert lines[0] == "path,step,t,x0,in_domain"
    assert len(lines) == 1 + 7 * 9
    assert (out / "paths.png").exists()


def test_verify_small(tmp_path):
    out = tmp_path / "verify"
    code = _run(
        [
            "verify",
            "--out", out,
            "--seed", "1",
            "--set", 'verify.problems=["zero","linear-scalar"]',
            "--set", "verify.runs=2",
            "--set", "verify.checkerSamples=5000",
        ]
    )
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["allOk"] is True
    assert set(results["problems"]) == {"zero", "linear-scalar"}


def test_continuous_dependence_subcommand(tmp_path):
    out = tmp_path / "cd"
    code = _run(
        [
            "continuous-dependence",
            "--out", out,
            "--seed", "2",
            "--set", "solver.innerPaths=400",
            "--set", "grid.steps=10",
        ]
    )
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["supGapMonotone"] and results["qkGapMonotone"] and results["envelopeOk"]
    assert (out / "gaps.csv").exists()
    assert (out / "gaps.png").exists()


def test_feynman_kac_subcommand(tmp_path):
    out = tmp_path / "fk"
    code = _run(
        [
            "feynman-kac",
            "--out", out,
            "--seed", "4",
            "--set", "feynmanKac.problem=jump-linear",
            "--set", "feynmanKac.outerRuns=2",
            "--set", "solver.innerPaths=500",
            "--set", "grid.steps=12",
            "--set", "feynmanKac.tPoints=[0.0,1.0]",
            "--set", "feynmanKac.xPoints=[0.0,0.5]",
        ]
    )
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert len(results["rows"]) == 4
    # terminal row reproduces the data exactly
    terminal_rows = [r for r in results["rows"] if r["t"] == 1.0]
    for r in terminal_rows:
        assert r["mean"][0] == pytest.approx(r["x"][0])
    assert (out / "surface.csv").exists()
    assert (out / "surface.png").exists()


def test_converge_study_subcommand(tmp_path):
    out = tmp_path / "cs"
    code = _run(
        [
            "converge-study",
            "--out", out,
            "--seed", "0",
            "--set", "convergeStudy.stepsList=[10,20]",
            "--set", "convergeStudy.seeds=[0]",
            "--set", "convergeStudy.innerPaths=2000",
        ]
    )
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert len(results["rows"]) == 2
    assert (out / "convergence.csv").exists()
    assert (out / "convergence.png").exists()


def test_solve_reproducibility_bytes(tmp_path):
    args = ["solve", "--seed", "11", *FAST_SOLVE]
    assert _run([*args, "--out", tmp_path / "a"]) == 0
    assert _run([*args, "--out", tmp_path / "b"]) == 0
    assert (tmp_path / "a/results.json").read_bytes() == (
        tmp_path / "b/results.json"
    ).read_bytes()
