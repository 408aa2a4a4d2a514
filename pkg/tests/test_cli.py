"""Command-line entry point: exit codes and a small end-to-end run."""
import sys

import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

import main
from db.base import Base
from db.registry import list_runs
from functionals.spec import EPSILON_LEVEL, LIMIT_ANOMALOUS, LIMIT_REGULAR, LIMIT_TOTAL, FunctionalSpec, IntegrandBundle
from harness import runner
from harness.config import load_config
from harness.report import load_results
from harness.runner import estimates_only, run_experiment
from model.comparable import BACKWARD, FORWARD
from paths.records import StoppingRule

TINY = """
[model]
name = ou
epsilon = 0.5
T = 0.5
burn_in = 0.1
comparable = shift:0.5

[run]
n_paths = 200
dt = 0.005
seed = 3
checks = ift

[grid]
fast_nodes = 129
x_nodes = 5
x_lo = -4
x_hi = 4
cache = no

[functionals]
names = F_eps
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def _run_cli(monkeypatch, *argv):
    monkeypatch.setattr(sys, "argv", ["main.py", *argv])
    return main.main()


def test_missing_config_exits_2(monkeypatch, tmp_path):
    assert _run_cli(monkeypatch, "verify", "--config", str(tmp_path / "absent.cfg")) == 2


def test_report_without_results_exits_2(monkeypatch, tmp_path):
    assert _run_cli(monkeypatch, "report", "--out", str(tmp_path)) == 2


def test_bad_override_exits_2(monkeypatch, tiny_cfg):
    assert _run_cli(monkeypatch, "simulate", "--config", str(tiny_cfg), "--dt", "1.0") == 2


def test_end_to_end_run(tiny_cfg, tmp_path):
    cfg = load_config(tiny_cfg, {"out_dir": str(tmp_path / "out")})
    stats, written = run_experiment(cfg, workers=1, record_run=False)
    assert [e.functional for e in stats.estimates] == ["F_eps"]
    assert stats.estimates[0].n_paths == 200
    assert [v.check for v in stats.verdicts if v.gated] == ["ift"]
    assert written["report"].exists()
    payload = load_results(tmp_path / "out")
    assert payload["exit_code"] == stats.exit_code
    assert payload["tables"]["fast_domain"][0]["nodes"] == 129


def test_simulate_writes_no_verdicts(monkeypatch, tiny_cfg, tmp_path):
    engine = create_engine("sqlite:///:memory:", poolclass=StaticPool)
    Base.metadata.create_all(engine)
    Session = sessionmaker(bind=engine, expire_on_commit=False)
    monkeypatch.setattr(runner, "get_session", Session)
    out = tmp_path / "sim"
    code = _run_cli(monkeypatch, "simulate", "--config", str(tiny_cfg), "--out", str(out))
    assert code == 0
    payload = load_results(out)
    assert payload["verdicts"] == []
    assert estimates_only(load_config(tiny_cfg)).checks == ()
    runs = list_runs(Session())
    assert [(r.name, r.exit_code) for r in runs] == [("tiny", 0)]


TINY_BACKWARD = """
[model]
name = ou
epsilon = 0.5
T = 0.5
burn_in = 0.5
parity = 1, -1

[run]
n_paths = 200
dt = 0.005
limit_dt = 0.01
seed = 5
rules = fixed_time; first_exit:-1,1
checks = martingale

[grid]
fast_nodes = 129
x_nodes = 9
x_lo = -4
x_hi = 4
cache = no

[functionals]
names = G_eps, G1, G2
"""


def test_backward_martingale_gates_only_anomalous_part(tmp_path):
    path = tmp_path / "tiny_backward.cfg"
    path.write_text(TINY_BACKWARD)
    cfg = load_config(path, {"out_dir": str(tmp_path / "out")})
    stats, _ = run_experiment(cfg, workers=1, record_run=False)
    verdicts = [v for v in stats.verdicts if v.check == "martingale"]
    assert {v.functional for v in verdicts} == {"G_eps", "G1", "G2"}
    assert {v.functional for v in verdicts if v.gated} == {"G2"}
    assert all(v.status == "DIAG" for v in verdicts if v.functional != "G2")


def test_martingale_gating_by_side_and_role():
    fixed = StoppingRule.parse("fixed_time", 1)
    exit_rule = StoppingRule.parse("first_exit:-1,1", 1)
    bundle = IntegrandBundle()

    def spec(name, side, role, gated=True):
        return FunctionalSpec(name=name, side=side, role=role, bundle=bundle, gated=gated)

    g_eps = spec("G_eps", BACKWARD, EPSILON_LEVEL)
    g1 = spec("G1", BACKWARD, LIMIT_REGULAR)
    g2 = spec("G2", BACKWARD, LIMIT_ANOMALOUS)
    f_eps = spec("F_eps", FORWARD, EPSILON_LEVEL)
    g_total = spec("G", BACKWARD, LIMIT_TOTAL, gated=False)
    for rule in (fixed, exit_rule):
        assert not runner._martingale_gated(g_eps, rule)
        assert not runner._martingale_gated(g1, rule)
        assert runner._martingale_gated(g2, rule)
        assert runner._martingale_gated(f_eps, rule)
        assert not runner._martingale_gated(g_total, rule)
    # the fixed-time IFT still gates G_eps and G1
    assert runner._gated_under(g_eps, fixed) and runner._gated_under(g1, fixed)
    assert not runner._gated_under(g1, exit_rule)
