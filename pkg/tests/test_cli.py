import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lieflow import cli, selftest
from lieflow.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, check_manifest, main
from lieflow.containers import read_field

TORUS = """\
mode = gill_torus
domain.kind = flat_torus
domain.lengths = 2pi, 2pi
domain.grid = 32, 32
N = 8
epsilon = 0.05
dt = 1e-3
T = 0.05
output.stride = 10
"""

BOX = """\
domain.grid = 16, 16
N = 12
epsilon = 0.05
dt = 2e-3
T = 0.1
initial = polar_waves
output.stride = 5
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def files_under(directory: Path):
    return sorted(p.relative_to(directory).as_posix() for p in directory.rglob("*") if p.is_file())


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def torus_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("torus")
    cfg = write_cfg(base, TORUS)
    assert main(["simulate", "--config", cfg, "--out", str(base / "out")]) == EXIT_OK
    return base, cfg


# ---------------------------------------------------------------- simulate

def test_simulate_writes_ledger(torus_run):
    base, _ = torus_run
    rows = read_rows(base / "out" / "ledger.csv")
    assert rows[0][:3] == ["t", "l2_norm_sq", "grad_energy"]
    assert len(rows) == 1 + 6
    assert float(rows[-1][0]) == pytest.approx(0.05)


def test_snapshots_hold_grid_fields(torus_run):
    base, _ = torus_run
    snap = base / "out" / "snapshots"
    assert len(list(snap.glob("u_*.fld"))) == len(list(snap.glob("ut_*.fld"))) == 6
    c = read_field(snap / "u_00000.fld")
    assert c.grid == (32, 32) and c.m == 3 and c.time == 0.0


def test_manifest_complete(torus_run):
    base, _ = torus_run
    out = base / "out"
    manifest = check_manifest(out)
    assert sorted(manifest["files"]) == [f for f in files_under(out) if f != "manifest.json"]
    assert manifest["summary"]["status"] == "ok"
    for key in ("config_hash", "code_version", "started", "finished"):
        assert manifest[key]


def test_rerun_byte_identical(torus_run, tmp_path):
    base, cfg = torus_run
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "again")]) == EXIT_OK
    first, second = base / "out", tmp_path / "again"
    assert files_under(first) == files_under(second)
    for rel in files_under(first):
        if rel != "manifest.json" and not rel.startswith("config.resolved"):
            assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    assert m1["config_hash"] == m2["config_hash"]


def test_config_hash_ignores_key_order(tmp_path):
    lines = TORUS.strip().splitlines()
    a = write_cfg(tmp_path, "\n".join(lines), "a.cfg")
    b = write_cfg(tmp_path, "\n".join(reversed(lines)), "b.cfg")
    hashes = []
    for cfg, out in ((a, "oa"), (b, "ob")):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / out)]) == EXIT_OK
        hashes.append(json.loads((tmp_path / out / "manifest.json").read_text())["config_hash"])
    assert hashes[0] == hashes[1]


def test_seed_flag_changes_random_initial(tmp_path):
    cfg = write_cfg(tmp_path, BOX.replace("polar_waves", "random_smooth"))
    for seed in ("1", "2"):
        assert main(["simulate", "--config", cfg, "--seed", seed, "--out", str(tmp_path / seed)]) == EXIT_OK
    u1 = read_field(tmp_path / "1" / "snapshots" / "u_00000.fld").data
    u2 = read_field(tmp_path / "2" / "snapshots" / "u_00000.fld").data
    assert not np.allclose(u1, u2)


@pytest.mark.parametrize("extra, key", [
    ("alpha = -0.5", "alpha"),
    ("epsilon = -1", "epsilon"),
    ("bogus = 3", "bogus"),
    ("N = 1000", "N"),
])
def test_config_errors_exit_2(tmp_path, capsys, extra, key):
    body = "".join(line for line in TORUS.splitlines(True) if not line.startswith(f"{key} ="))
    cfg = write_cfg(tmp_path, body + extra + "\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert f"[{key}]" in err


def test_missing_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.cfg")]) == EXIT_USAGE


def test_non_empty_output_refused(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TORUS)
    (tmp_path / "busy").mkdir()
    (tmp_path / "busy" / "keep.txt").write_text("x")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "busy")]) == EXIT_USAGE
    assert "not empty" in capsys.readouterr().err


def test_ledger_breach_exit_1(tmp_path, monkeypatch, capsys):
    cfg = write_cfg(tmp_path, TORUS)
    monkeypatch.setattr(cli, "run", _breaching_run)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_FAIL
    err = capsys.readouterr().err
    assert "ledger dump" in err and str(tmp_path / "o" / "ledger.csv") in err
    check_manifest(tmp_path / "o")


def _breaching_run(system, beta0, **kw):
    from lieflow.galerkin_flow import LedgerBreach, run

    traj = run(system, beta0, **kw)
    raise LedgerBreach("forced breach for testing", traj)


def test_no_subcommand():
    assert main([]) == EXIT_USAGE


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lieflow", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()


# ---------------------------------------------------------------- sweep

def test_single_element_sweep_matches_simulate(tmp_path):
    cfg = write_cfg(tmp_path, BOX)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim")]) == EXIT_OK
    assert main(["sweep", "--config", cfg, "--epsilon", "0.05", "--out", str(tmp_path / "sw")]) == EXIT_OK
    (run_dir,) = [p for p in (tmp_path / "sw").iterdir() if p.is_dir()]
    sim = tmp_path / "sim"
    assert (run_dir / "ledger.csv").read_bytes() == (sim / "ledger.csv").read_bytes()
    for snap in (sim / "snapshots").iterdir():
        assert (run_dir / "snapshots" / snap.name).read_bytes() == snap.read_bytes()


def test_epsilon_sweep_inventory(tmp_path):
    cfg = write_cfg(tmp_path, BOX)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--epsilon", "0.1,0.05,0.025", "--out", str(out), "--jobs", "2"]) == EXIT_OK
    ledgers = sorted(out.glob("*/ledger.csv"))
    assert len(ledgers) == 3
    rows = read_rows(out / "comparison.csv")
    assert len(rows) == 4 and rows[0][0] == "parameter"
    assert [float(r[1]) for r in rows[1:]] == [0.1, 0.05, 0.025]
    manifest = check_manifest(out)
    assert set(manifest["summary"]["runs"].values()) == {"ok"}


def test_alpha_sweep_damping_column(tmp_path):
    cfg = write_cfg(tmp_path, BOX)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--alpha", "0.1,0.05,0.01", "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "comparison.csv")
    header = rows[0]
    col = header.index("damping_energy_integral")
    values = [float(r[col]) for r in rows[1:]]
    assert len(values) == 4 and values[-1] == 0.0
    assert max(values) < 1.0
    pair = [abs(float(r[header.index("damping_pairing")])) for r in rows[1:]]
    assert pair[0] > pair[1] > pair[2] > pair[3]


@pytest.mark.parametrize("args", [
    ["--epsilon", "0.05,0.1"],
    ["--epsilon", "0.1,-0.05"],
    ["--epsilon", "a,b"],
    ["--epsilon", "0.1", "--alpha", "0.1"],
    [],
])
def test_sweep_rejects_bad_lists(tmp_path, args):
    cfg = write_cfg(tmp_path, BOX)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")] + args) == EXIT_USAGE


def test_sweep_failure_tagged(tmp_path, monkeypatch, capsys):
    from lieflow import continuation

    real = continuation._run_one

    def flaky(job):
        if job[2].epsilon == 0.05:
            raise FloatingPointError("forced")
        return real(job)

    monkeypatch.setattr(continuation, "_run_one", flaky)
    cfg = write_cfg(tmp_path, BOX)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--epsilon", "0.1,0.05", "--out", str(out)]) == EXIT_FAIL
    assert "epsilon = 0.05" in capsys.readouterr().err
    runs = check_manifest(out)["summary"]["runs"]
    assert sum(v == "ok" for v in runs.values()) == 1
    assert any(v.startswith("failed") for v in runs.values())


# ---------------------------------------------------------------- verify

@pytest.fixture
def box_run(tmp_path):
    cfg = write_cfg(tmp_path, BOX)
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    return out


def test_verify_default_tolerance(box_run, capsys):
    assert main(["verify", str(box_run)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    rows = read_rows(box_run / "weak_residuals.csv")
    assert len(rows) > 32
    manifest = check_manifest(box_run)
    assert manifest["verify"]["passed"] and "weak_residuals.csv" in manifest["files"]


def test_verify_zero_tolerance_fails(box_run):
    assert main(["verify", str(box_run), "--tolerance", "0"]) == EXIT_FAIL


def test_verify_separate_output(box_run, tmp_path):
    target = tmp_path / "report"
    assert main(["verify", str(box_run), "--out", str(target), "--form", "derivative"]) == EXIT_OK
    assert (target / "weak_residuals.csv").is_file()
    check_manifest(box_run)


def test_verify_corrupted_snapshot(box_run, capsys):
    snap = box_run / "snapshots" / "u_00003.fld"
    raw = bytearray(snap.read_bytes())
    raw[-3] ^= 0xFF
    snap.write_bytes(bytes(raw))
    assert main(["verify", str(box_run)]) == EXIT_USAGE
    assert "u_00003.fld" in capsys.readouterr().err


def test_verify_missing_snapshot(box_run, capsys):
    (box_run / "snapshots" / "ut_00002.fld").unlink()
    assert main(["verify", str(box_run)]) == EXIT_USAGE
    assert "ut_00002.fld" in capsys.readouterr().err


def test_verify_unlisted_file(box_run):
    (box_run / "stray.txt").write_text("x")
    assert main(["verify", str(box_run)]) == EXIT_USAGE


def test_verify_missing_directory(tmp_path):
    assert main(["verify", str(tmp_path / "nothing")]) == EXIT_USAGE


# ---------------------------------------------------------------- eigen

def test_eigen_dump(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BOX)
    out = tmp_path / "eig"
    assert main(["eigen", "--config", cfg, "--out", str(out), "--show", "3"]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 3 and float(printed[0].split()[1]) == 0.0
    c = read_field(out / "modes.fld")
    assert c.grid == (16, 16) and c.m == 12
    assert len(read_rows(out / "modes.csv")) == 13
    check_manifest(out)


def test_eigen_with_demag_kernel(tmp_path):
    cfg = write_cfg(tmp_path, "domain.grid = 6, 6, 6\ndomain.lengths = 1, 1, 1\nN = 5\ndemag = true\n")
    out = tmp_path / "eig"
    assert main(["eigen", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "demag_kernel.fld").is_file()
    check_manifest(out)


# ---------------------------------------------------------------- selftest

@pytest.fixture
def quick_groups(monkeypatch):
    monkeypatch.setattr(selftest, "GROUPS", selftest.GROUPS[:3] + selftest.GROUPS[-1:])


def test_selftest_exit_codes(quick_groups, capsys):
    assert main(["selftest"]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("selftest passed")


def test_selftest_sign_flip_hits_ad_invariance(quick_groups, capsys):
    assert main(["selftest", "--inject-sign-flip"]) == EXIT_FAIL
    failed = [line for line in capsys.readouterr().out.splitlines() if line.endswith("FAIL")]
    assert len(failed) == 1 and failed[0].startswith("so3 ad-invariance")
