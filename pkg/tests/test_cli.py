"""CLI behaviour: subcommands, file artifacts, exit codes."""

import csv
import json
import os
import subprocess
import sys

from dissect.cli import main

SRC = os.path.join(os.path.dirname(__file__), "..", "src")


def run_cli(args):
    return main(args)


def read_solution(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["dof_id", "value"]
    return [(int(r[0]), r[1]) for r in rows[1:]]


def test_mesh_roundtrip(tmp_path, capsys):
    mesh_path = tmp_path / "mesh.json"
    assert run_cli(["mesh", "--nx", "2", "--ny", "2", "--nz", "2", "-p", "2",
                    "-o", str(mesh_path)]) == 0
    doc = json.loads(mesh_path.read_text())
    assert doc["n_dofs"] == 27
    assert "n_dofs=27" in capsys.readouterr().out


def test_solve_seq_par_csv_bitwise_equal(tmp_path):
    mesh_path = tmp_path / "mesh.json"
    run_cli(["mesh", "--nx", "3", "--ny", "3", "--nz", "3", "-p", "2",
             "-o", str(mesh_path)])
    seq_csv = tmp_path / "seq.csv"
    par_csv = tmp_path / "par.csv"
    traces = tmp_path / "traces.csv"
    assert run_cli(["solve", "--mesh-file", str(mesh_path), "--mode", "seq",
                    "-o", str(seq_csv)]) == 0
    assert run_cli(["solve", "--mesh-file", str(mesh_path), "--mode", "par",
                    "--workers", "8", "--traders", "4",
                    "-o", str(par_csv), "--traces", str(traces)]) == 0
    assert seq_csv.read_bytes() == par_csv.read_bytes()
    rows = list(csv.reader(traces.open()))
    n_nodes = len(rows) - 1
    assert n_nodes > 27  # one condensation row per tree node


def test_solve_tree_dump(tmp_path):
    dump = tmp_path / "tree.json"
    assert run_cli(["solve", "--nx", "2", "--ny", "2", "--nz", "2", "-p", "1",
                    "--mode", "par", "--workers", "2", "--traders", "2",
                    "--tree-dump", str(dump)]) == 0
    doc = json.loads(dump.read_text())
    assert len(doc["nodes"]) == 9
    node = doc["nodes"][0]
    for key in ("bbox", "n_eliminated", "n_interface", "workload", "trader"):
        assert key in node


def test_solve_generated_mesh_with_metrics(tmp_path):
    m_json = tmp_path / "metrics.json"
    omega = tmp_path / "omega.csv"
    assert run_cli(["solve", "--nx", "2", "--ny", "2", "--nz", "2", "-p", "2",
                    "--mode", "par", "--workers", "2", "--traders", "2",
                    "--metrics-json", str(m_json), "--omega-csv", str(omega)]) == 0
    loaded = json.loads(m_json.read_text())
    assert "frac_above_0.9" in loaded
    assert loaded["n_workers"] == 2


def test_resolve_from_cache(tmp_path, capsys):
    cache = tmp_path / "cache.bin"
    sol0 = tmp_path / "sol0.csv"
    assert run_cli(["solve", "--nx", "2", "--ny", "2", "--nz", "2", "-p", "2",
                    "-o", str(sol0), "--cache", str(cache)]) == 0
    capsys.readouterr()

    out_plain = tmp_path / "resolve_none.csv"
    assert run_cli(["resolve", "--cache", str(cache), "-o", str(out_plain)]) == 0
    assert "recompute_count=0" in capsys.readouterr().out
    assert read_solution(out_plain) == read_solution(sol0)

    out_mod = tmp_path / "resolve_mod.csv"
    assert run_cli(["resolve", "--cache", str(cache), "--modify", "3:2.0",
                    "-o", str(out_mod)]) == 0
    assert "recompute_count=2" in capsys.readouterr().out
    assert read_solution(out_mod) != read_solution(sol0)

    # from-scratch solve of the scaled mesh agrees bit for bit
    from dissect import solver, tree
    from dissect.mesh import generate_mesh, manufactured_problem

    mesh = generate_mesh(2, 2, 2, (1.0, 1.0, 1.0), 2)
    manufactured_problem(mesh, "trig")
    tr = tree.build_tree([(e.id, e.bbox) for e in mesh.elements], 2.0)
    tree.assign_dofs(tr, mesh)
    scratch, _ = solver.solve_sequential(
        tr, solver.apply_modifications(mesh, {3: 2.0})
    )
    got = [float(v) for _, v in read_solution(out_mod)]
    assert got == [float(v) for v in scratch.values]


def test_resolve_cache_chain(tmp_path, capsys):
    cache = tmp_path / "cache.bin"
    cache2 = tmp_path / "cache2.bin"
    run_cli(["solve", "--nx", "2", "--ny", "2", "--nz", "2", "-p", "2",
             "--cache", str(cache)])
    assert run_cli(["resolve", "--cache", str(cache), "--modify", "0:2.0",
                    "--cache-out", str(cache2)]) == 0
    assert run_cli(["resolve", "--cache", str(cache2), "--modify", "0:0.5"]) == 0


def test_zero_dof_problem_solves_cleanly(tmp_path, capsys):
    # a 4x1x1 bar at p=1 eliminates every DOF at the boundary
    out = tmp_path / "empty.csv"
    assert run_cli(["solve", "--nx", "4", "--ny", "1", "--nz", "1",
                    "--extents", "4,1,1", "-p", "1", "--mode", "par",
                    "--workers", "2", "-o", str(out)]) == 0
    assert "n_dofs=0" in capsys.readouterr().out
    assert read_solution(out) == []


def test_verify_pass_and_exit_zero(capsys):
    assert run_cli(["verify", "--nx", "4", "--ny", "4", "--nz", "4", "-p", "1"]) == 0
    out = capsys.readouterr().out
    assert "max rel error" in out and "PASS" in out


def test_verify_anisotropic_bar(capsys):
    assert run_cli(["verify", "--nx", "4", "--ny", "1", "--nz", "1", "-p", "2",
                    "--extents", "4,1,1"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_report_from_trace_csv(tmp_path, capsys):
    traces = tmp_path / "traces.csv"
    run_cli(["solve", "--nx", "2", "--ny", "2", "--nz", "2", "-p", "2",
             "--mode", "par", "--workers", "3", "--traders", "2",
             "--traces", str(traces)])
    capsys.readouterr()
    summary = tmp_path / "summary.json"
    omega = tmp_path / "omega.csv"
    assert run_cli(["report", "--traces", str(traces), "--workers", "3",
                    "--traders", "2", "--summary-json", str(summary),
                    "--omega-csv", str(omega)]) == 0
    assert "mean_omega" in capsys.readouterr().out
    loaded = json.loads(summary.read_text())
    assert loaded["n_workers"] == 3
    assert loaded["n_traders"] == 2


def test_malformed_mesh_file_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_dofs": 1, "elements": [')
    assert run_cli(["solve", "--mesh-file", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "byte" in err


def test_conflicting_mesh_sources_exit_one(tmp_path, capsys):
    mesh_path = tmp_path / "mesh.json"
    run_cli(["mesh", "--nx", "2", "--ny", "2", "--nz", "2", "-o", str(mesh_path)])
    assert run_cli(["solve", "--mesh-file", str(mesh_path), "--nx", "2"]) == 1
    assert "either" in capsys.readouterr().err


def test_missing_cache_file_exit_one(capsys):
    assert run_cli(["resolve", "--cache", "/nonexistent/cache.bin"]) == 1
    assert "error" in capsys.readouterr().err


def test_module_main_subprocess(tmp_path):
    env = dict(os.environ)
    env["PYTHONPATH"] = SRC + os.pathsep + env.get("PYTHONPATH", "")
    env["DISSECT_LOG"] = "info"
    proc = subprocess.run(
        [sys.executable, "-m", "dissect", "verify",
         "--nx", "2", "--ny", "2", "--nz", "2", "-p", "1"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout


def test_trace_logging_smoke(tmp_path, monkeypatch):
    monkeypatch.setenv("DISSECT_LOG", "trace")
    # re-runs logging configuration; protocol messages go to the log handler
    assert run_cli(["solve", "--nx", "2", "--ny", "2", "--nz", "2",
                    "--mode", "par", "--workers", "2"]) == 0
    monkeypatch.setenv("DISSECT_LOG", "off")
    from dissect.service.app import configure_logging

    configure_logging()
