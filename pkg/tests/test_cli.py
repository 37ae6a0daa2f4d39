import csv
import json

import pytest

from quatmpc import cli, verify


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_stand_run_writes_complete_log(tmp_path, capsys):
    code, out, _ = run(["run", "stand", "--out", str(tmp_path)], capsys)
    assert code == 0
    with open(tmp_path / "run.csv") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert len(body) == round(2.0 / 0.001) + 1
    assert header[0] == "time" and header[-2:] == ["solve_ms", "status"]
    assert len(header) == 1 + 13 + 13 + 12 + 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["success"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "run"
    assert set(manifest["files"]) == {p.name for p in tmp_path.iterdir()}
    assert "stand" in out


def test_malformed_field_exits_1_naming_field(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("format: quatmpc-scenario/1\nname: bad\nrobot: go1\nduration: -2\n")
    code, _, err = run(["run", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 1
    assert "duration" in err


def test_unknown_scenario_and_bad_flags_exit_1(tmp_path, capsys):
    assert run(["run", "no_such_scenario", "--out", str(tmp_path)], capsys)[0] == 1
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "stand", "--controller", "pid"])
    assert info.value.code == 1


def test_euler_wall_stand_exits_2(tmp_path, capsys):
    code, out, _ = run(["run", "wall_stand", "--controller", "euler", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert "euler" in out


def test_montecarlo_single_trial(tmp_path, capsys):
    code, out, _ = run(["montecarlo", "--trials", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    records = json.loads((tmp_path / "trials.json").read_text())
    assert list(records) == ["0"]
    assert json.loads((tmp_path / "summary.json").read_text())["trials"] == 1
    assert "success rate" in out


def test_montecarlo_same_seed_identical_summary(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(["montecarlo", "--trials", "2", "--seed", "9", "--out", str(tmp_path / d)], capsys)[0] == 0
    for name in ("summary.json", "trials.json", "table.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_montecarlo_rejects_zero_trials(tmp_path, capsys):
    assert run(["montecarlo", "--trials", "0", "--out", str(tmp_path)], capsys)[0] == 1


def test_out_defaults_to_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    monkeypatch.chdir(tmp_path)
    assert run(["montecarlo", "--trials", "1"], capsys)[0] == 0
    assert (tmp_path / "env" / "summary.json").exists()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["env"]


@pytest.fixture(scope="module")
def verify_results():
    return verify.run_all()


def test_verify_passes_and_lists_checks(capsys, verify_results):
    code, out, _ = run(["verify"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    names = [r.name for r in verify_results]
    for name in names:
        assert any(name in line for line in lines)
    assert lines[-1].startswith(f"{len(names)}/{len(names)} checks passed")
    assert all("max_err=" in line for line in lines[:-1])


def test_verify_detects_injected_fault(capsys):
    code, out, _ = run(["verify", "--inject-fault", "1e-3"], capsys)
    assert code != 0
    assert "FAIL" in out
