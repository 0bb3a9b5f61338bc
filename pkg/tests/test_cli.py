"""CLI contract: exit codes, artifacts, manifest headers, worker determinism."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from transportlab.cli import main

BASE = """
[field]
kind = br

[dynamics]
amplitude = 1.0
kappa = 0.0
dt = 1e-2
t_final = {t_final}

[ensemble]
realizations = {realizations}

[diagnostics]
{diagnostics}

[initial]
terms = 1.0 cos 1 0

[run]
seed = 1234
"""


def write_cfg(tmp_path, t_final=1.0, realizations=8, diagnostics="", extra=""):
    cfg = BASE.format(t_final=t_final, realizations=realizations,
                      diagnostics=diagnostics) + extra
    path = tmp_path / "exp.ini"
    path.write_text(cfg)
    return str(path)


def run_cli(args):
    return main(args)


class TestValidation:
    def test_missing_seed_names_field(self, tmp_path, capsys):
        path = tmp_path / "bad.ini"
        path.write_text("[field]\nkind = br\n[run]\noutdir = .\n")
        code = run_cli(["fields-check", "--config", str(path), "--out", str(tmp_path)])
        assert code == 2
        assert "seed" in capsys.readouterr().err

    def test_missing_field_kind(self, tmp_path, capsys):
        path = tmp_path / "bad.ini"
        path.write_text("[field]\nd = 2\n[run]\nseed = 1\n")
        code = run_cli(["fields-check", "--config", str(path), "--out", str(tmp_path)])
        assert code == 2
        assert "kind" in capsys.readouterr().err

    def test_bad_alpha(self, tmp_path, capsys):
        path = tmp_path / "bad.ini"
        path.write_text("[field]\nkind = kraichnan\nd = 2\nalpha = 1.5\nzmax = 2\n"
                        "[run]\nseed = 1\n")
        code = run_cli(["fields-check", "--config", str(path), "--out", str(tmp_path)])
        assert code == 2
        assert "alpha" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        code = run_cli(["fields-check", "--config", str(tmp_path / "nope.ini"),
                        "--out", str(tmp_path)])
        assert code == 2


class TestGuards:
    def test_cfl_exit_3(self, tmp_path, capsys):
        path = tmp_path / "cfl.ini"
        path.write_text("""
[field]
kind = kraichnan
d = 2
alpha = 4.0
zmax = 4

[dynamics]
amplitude = 500.0
dt = 1e-2
t_final = 0.1

[initial]
terms = 1.0 cos 1 0

[run]
seed = 7
""")
        code = run_cli(["spde", "--config", str(path), "--out", str(tmp_path)])
        assert code == 3
        assert "guard" in capsys.readouterr().err


class TestArtifacts:
    def test_fields_check_br_passes(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"
        code = run_cli(["fields-check", "--config", cfg, "--out", str(out)])
        assert code == 0
        assert "PASS" in capsys.readouterr().out
        summary = json.loads((out / "fields_check_summary.json").read_text())
        assert summary["passed"] is True
        assert "manifest_hash" in summary

    def test_manifest_hash_heads_csv(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"
        run_cli(["fields-check", "--config", cfg, "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        first = (out / "fields_check.csv").read_text().splitlines()[0]
        assert first == f"# manifest_hash={manifest['manifest_hash']}"

    def test_conditions_br(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, diagnostics="nsamples = 25")
        out = tmp_path / "out"
        code = run_cli(["conditions", "--config", cfg, "--out", str(out)])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert any(ln.startswith("PASS span_A") for ln in lines)
        assert any("br_two_point_span" in ln for ln in lines)

    def test_spde_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, t_final=0.05)
        out = tmp_path / "out"
        code = run_cli(["spde", "--config", cfg, "--out", str(out)])
        assert code == 0
        head = (out / "spde.csv").read_text().splitlines()[1]
        assert head == "t,L2,H1,Hminus1,residual"

    def test_float_format_roundtrip(self, tmp_path):
        cfg = write_cfg(tmp_path, t_final=0.05)
        out = tmp_path / "out"
        run_cli(["spde", "--config", cfg, "--out", str(out)])
        lines = (out / "spde.csv").read_text().splitlines()[2:]
        val = lines[0].split(",")[1]
        assert float(val) == float(format(float(val), ".17g"))


QUICK_RUNS = [
    ("fields-check", dict(diagnostics="nsamples = 50")),
    ("conditions", dict(diagnostics="nsamples = 10")),
    ("lyapunov", dict(t_final=50.0, realizations=8, diagnostics="qr_every = 10")),
    ("moment-lyapunov", dict(t_final=5.0, realizations=1024,
                             diagnostics="p_grid = -0.25 0 0.25")),
    ("two-point", dict(t_final=0.5, realizations=64,
                       diagnostics="p_grid = 0.5\nx0 = 1.0 1.0\ny0 = 1.1 1.0\nt_grid_step = 0.25")),
    ("correlation", dict(t_final=0.5, realizations=64,
                         diagnostics="x0 = 0 0\ny0 = 2 1\nt_grid_step = 0.25")),
    ("mixing", dict(t_final=0.5, realizations=8,
                    diagnostics="z_cut = 2\nquadrature = 16\nt_grid_step = 0.25")),
    ("spde", dict(t_final=0.05)),
    ("sweep", dict(t_final=0.5, realizations=2,
                   diagnostics="a_list = 0.5 1.0\nrecord_every = 5")),
]


@pytest.mark.parametrize("sub,kw", QUICK_RUNS, ids=[r[0] for r in QUICK_RUNS])
def test_worker_count_leaves_bytes_identical(tmp_path, sub, kw):
    cfg = write_cfg(tmp_path, **kw)
    outs = {}
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        code = subprocess.run(
            [sys.executable, "-m", "transportlab.cli", sub, "--config", cfg,
             "--out", str(out), "--workers", str(workers)],
            capture_output=True, text=True,
        ).returncode
        assert code == 0, f"{sub} with workers={workers} failed"
        outs[workers] = {
            p.name: p.read_bytes() for p in sorted(Path(out).glob("*.csv"))
        }
    assert outs[1].keys() == outs[8].keys()
    for name in outs[1]:
        assert outs[1][name] == outs[8][name], f"{sub}: {name} differs across workers"


def test_rerun_identical_bytes(tmp_path):
    cfg = write_cfg(tmp_path, t_final=0.2, realizations=16,
                    diagnostics="p_grid = 0.5\nx0 = 1.0 1.0\ny0 = 1.1 1.0\nt_grid_step = 0.1")
    blobs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert run_cli(["two-point", "--config", cfg, "--out", str(out)]) == 0
        blobs.append((out / "two_point_p0.5.csv").read_bytes())
    assert blobs[0] == blobs[1]
