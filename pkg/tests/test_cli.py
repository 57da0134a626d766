import json

import pytest

from gatenoise import cli

WHITE = '{"type": "white_cutoff", "omega_c": 3.0, "rms": 0.05}'


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_preset_list(capsys):
    code, out, _ = run(capsys, "preset-list")
    assert code == 0
    rows = {r["name"]: r for r in json.loads(out)}
    assert rows["corrected_x"]["first_order_corrected"]
    assert not rows["primitive_x"]["first_order_corrected"]


def test_filter1_csv(capsys, tmp_path):
    out = tmp_path / "f1.csv"
    code, _, _ = run(capsys, "filter1", "--preset", "free", "--tau", "1", "--freq-points", "5",
                     "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# gatenoise filter1 schema v1")
    assert lines[1] == "omega,F1,F1_x,F1_y,F1_z"
    assert len(lines) == 7


def test_fidelity_json(capsys):
    code, out, _ = run(capsys, "fidelity", "--preset", "primitive_x", "--spectrum", WHITE)
    assert code == 0
    rep = json.loads(out)
    assert rep["error_4th"] is None
    assert 0 < rep["error_2nd"] < 1e-2


def test_sweep_rows(capsys):
    code, out, _ = run(capsys, "sweep", "--spectrum", WHITE, "--tau-points", "3",
                       "--format", "json")
    assert code == 0
    rows = json.loads(out)
    assert [r["gate"] for r in rows] == ["primitive_x"] * 3 + ["corrected_x"] * 3


def test_mc_reproducible(capsys, tmp_path):
    paths = []
    for workers in ("1", "2"):
        p = tmp_path / f"mc{workers}.json"
        code, _, _ = run(capsys, "mc", "--preset", "primitive_x", "--spectrum", WHITE,
                         "--trajectories", "300", "--seed", "7", "--workers", workers,
                         "--out", str(p))
        assert code == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_mc_csv_requires_retained_trajectories(capsys, tmp_path):
    p = tmp_path / "mc.csv"
    code, _, err = run(capsys, "mc", "--preset", "primitive_x", "--spectrum", WHITE,
                       "--trajectories", "4", "--format", "csv", "--out", str(p))
    assert code == 2 and "retain" in err
    assert not p.exists()
    code, _, _ = run(capsys, "mc", "--preset", "primitive_x", "--spectrum", WHITE,
                     "--trajectories", "4", "--format", "csv", "--retain-trajectories",
                     "--out", str(p))
    assert code == 0
    assert len(p.read_text().splitlines()) == 6
    assert json.loads(p.with_suffix(".summary.json").read_text())["n_traj"] == 4


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "trajectories": 50}))
    code, out, _ = run(capsys, "mc", "--config", str(cfg), "--seed", "9", "--show-config")
    assert code == 0
    merged = json.loads(out)
    assert merged["seed"] == 9 and merged["trajectories"] == 50 and merged["workers"] == 1


@pytest.mark.parametrize("argv", [
    ["fidelity", "--preset", "nope", "--spectrum", WHITE],
    ["fidelity", "--preset", "primitive_x"],
    ["fidelity", "--preset", "primitive_x", "--spectrum", '{"type": "power_law", "exponent": 2}',
     "--rtol", "-1"],
    ["mc", "--preset", "free", "--spectrum", WHITE, "--trajectories", "1"],
])
def test_config_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert "error" in err


def test_failed_comparison_still_writes_report(capsys, tmp_path):
    p = tmp_path / "cmp.csv"
    code, _, _ = run(capsys, "compare", "--spectrum", WHITE, "--tau-points", "2",
                     "--trajectories", "20", "--max-deviation", "1e-9", "--out", str(p))
    assert code == 1
    assert len(p.read_text().splitlines()) == 4


def test_validate_subset(capsys):
    code, out, err = run(capsys, "validate", "--checks", "echo_limit,dcg_rolloff")
    assert code == 0
    report = json.loads(out)
    assert report["passed"] == 2 and report["failed"] == 0
    assert "PASS  echo_limit" in err
