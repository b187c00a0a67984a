import io

import pytest

from homopt.bench import selftest
from homopt.cli import main

DEGENERATE = """
[experiment]
n_seeds = 1

[problem]
kind = cartpole
knots = 41

[theta_goal]
m_pole = 1
"""


def run(argv):
    out = io.StringIO()
    code = main(argv, out)
    return code, out.getvalue()


def kv(text):
    return dict(line.split("\t", 1) for line in text.splitlines() if "\t" in line)


@pytest.mark.parametrize("alg", ["pho", "one_depth"])
def test_solve_degenerate_prints_solved(tmp_path, alg):
    cfg = tmp_path / "d.cfg"
    cfg.write_text(DEGENERATE)
    code, text = run(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--algorithm", alg,
                      "--seed", "4"])
    assert code == 0
    fields = kv(text)
    assert fields["status"] == "Solved" and fields["seed"].isdigit()
    assert (tmp_path / "o" / "query_log.csv").exists() and (tmp_path / "o" / "run.tree").exists()
    assert (tmp_path / "o" / "trajectory" / "swings.csv").exists()

    code, text = run(["inspect-tree", str(tmp_path / "o" / "run.tree")])
    assert code == 0 and kv(text)["nodes"] == fields["tree_nodes"] and "*goal" in text


def test_sweep_and_budget_curve(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("[experiment]\nalgorithms = pho rho\nn_seeds = 2\ncheckpoints = 5 10\n"
                   "[problem]\nkind = double_well\n[budget]\nmax_solver_queries = 10\n")
    code, text = run(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 0 and text.startswith("algorithm,solved,runs,success_rate")
    assert "# rows:" in text
    code, text = run(["budget-curve", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 0 and len([l for l in text.splitlines() if l.startswith("pho,")]) == 2


def test_missing_config_exit_1(tmp_path, capsys):
    code, _ = run(["sweep", "--config", str(tmp_path / "missing.cfg")])
    assert code == 1 and "missing.cfg" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["bogus"], ["solve"], ["sweep", "--config", "x", "--frobnicate"], []])
def test_usage_errors_exit_1(argv, capsys):
    assert run(argv)[0] == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_algorithm_exit_1(tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text(DEGENERATE)
    assert run(["solve", "--config", str(cfg), "--algorithm", "bfs", "--out", str(tmp_path)])[0] == 1


def test_io_errors_exit_2(tmp_path):
    assert run(["inspect-tree", str(tmp_path / "nope.tree")])[0] == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = tmp_path / "d.cfg"
    cfg.write_text(DEGENERATE)
    assert run(["solve", "--config", str(cfg), "--out", str(blocker / "o")])[0] == 2


def test_malformed_tree_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.tree"
    p.write_text("not a tree\n")
    assert run(["inspect-tree", str(p)])[0] == 1
    assert "bad.tree:1" in capsys.readouterr().err


def test_selftest_exit_codes(monkeypatch):
    code, text = run(["selftest", "--check", "liho-step-trace"])
    assert code == 0 and text.startswith("PASS")
    monkeypatch.setattr(selftest, "CHECKS", (("always-fails", lambda: (False, "forced")),))
    code, text = run(["selftest"])
    assert code == 3 and text.startswith("FAIL")
    assert run(["selftest", "--check", "nope"])[0] == 1
