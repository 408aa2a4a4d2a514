"""Experiment config parsing, validation and CLI overrides."""
from pathlib import Path

import pytest

from errors import ConfigurationError
from harness.config import ExperimentConfig, apply_overrides, load_config, validate

BASIC = """
[model]
name = ou
epsilon = 0.2, 0.1
T = 0.5
burn_in = 0.25
comparable = shift:0.5
kappa = 2.0

[run]
n_paths = 200
dt = 1e-4
seed = 7
rules = fixed_time; first_exit:-1,1
checks = ift, martingale

[grid]
fast_nodes = 129
x_nodes = 9
x_lo = -3
x_hi = 3
cache = no

[functionals]
names = F_eps, F, F1, F2

[thresholds]
se_multiplier = 4

[output]
xlsx = yes
"""


def _write(tmp_path, text=BASIC, name="basic.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_basic(tmp_path, monkeypatch):
    monkeypatch.setenv("MSTHERMO_OUTPUT_DIR", str(tmp_path / "out"))
    cfg = load_config(_write(tmp_path))
    assert cfg.name == "basic"
    assert cfg.model == "ou"
    assert cfg.params == {"kappa": 2.0}
    assert cfg.epsilons == (0.2, 0.1)
    assert cfg.epsilon == 0.1
    assert cfg.T == 0.5
    assert cfg.rules == ("fixed_time", "first_exit:-1,1")
    assert cfg.checks == ("ift", "martingale")
    assert cfg.x_lo == (-3.0,)
    assert cfg.cache is False
    assert cfg.xlsx is True
    assert cfg.thresholds.se_multiplier == 4.0
    assert cfg.limit_step == cfg.dt
    assert cfg.out_dir == str(Path(tmp_path / "out" / "basic"))


def test_overrides_take_precedence(tmp_path):
    cfg = load_config(
        _write(tmp_path),
        {"seed": 99, "n_paths": 500, "epsilons": "0.3,0.1", "functionals": ("F_eps",), "out_dir": str(tmp_path), "dt": None},
    )
    assert cfg.seed == 99
    assert cfg.n_paths == 500
    assert cfg.epsilons == (0.3, 0.1)
    assert cfg.functionals == ("F_eps",)
    assert cfg.out_dir == str(tmp_path)
    assert cfg.dt == 1e-4


def test_config_hash_ignores_output_dir(tmp_path):
    cfg = load_config(_write(tmp_path), {"out_dir": "a"})
    assert cfg.config_hash() == apply_overrides(cfg, {"out_dir": "b"}).config_hash()
    assert cfg.config_hash() != apply_overrides(cfg, {"seed": 1}).config_hash()


def test_dt_above_stability_bound(tmp_path):
    with pytest.raises(ConfigurationError, match="dt="):
        load_config(_write(tmp_path), {"dt": 2e-3})


def test_unknown_functional(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown functionals"):
        load_config(_write(tmp_path), {"functionals": ("F_eps", "Q")})


def test_convergence_needs_two_epsilons(tmp_path):
    with pytest.raises(ConfigurationError, match="two epsilon"):
        load_config(_write(tmp_path), {"epsilons": "0.1", "checks": ("convergence",)})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_bad_model_parameter(tmp_path):
    text = BASIC.replace("kappa = 2.0", "kappa = stiff")
    with pytest.raises(ConfigurationError, match="kappa"):
        load_config(_write(tmp_path, text))


def test_unknown_override_key(tmp_path):
    cfg = load_config(_write(tmp_path))
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, {"paths": 10})


@pytest.mark.parametrize(
    "changes",
    [
        {"model": "langevin"},
        {"n_paths": 10},
        {"fast_nodes": 65},
        {"backend": "spectral"},
        {"rules": ("first_hit:1",)},
        {"comparable": "mirror"},
        {"checks": ("ift", "entropy")},
    ],
)
def test_validate_rejects(changes):
    base = ExperimentConfig(name="x", model="ou", dt=1e-4)
    validate(base)
    with pytest.raises(ConfigurationError):
        validate(apply_overrides(base, changes))


def test_shipped_configs_load(monkeypatch, tmp_path):
    monkeypatch.setenv("MSTHERMO_OUTPUT_DIR", str(tmp_path))
    root = Path(__file__).resolve().parent.parent / "configs"
    names = sorted(p.name for p in root.glob("*.cfg"))
    assert names
    for path in root.glob("*.cfg"):
        cfg = load_config(path)
        assert cfg.n_paths >= 100


@pytest.mark.parametrize(
    "old, new",
    [
        ("dt = 1e-4", "dt = 1e-5x"),
        ("T = 0.5", "T = half"),
        ("n_paths = 200", "n_paths = 2e2.5"),
        ("n_paths = 200", "n_paths = 200.5"),
        ("seed = 7", "seed = seven"),
        ("fast_nodes = 129", "fast_nodes = many"),
        ("se_multiplier = 4", "se_multiplier = 4sigma"),
        ("epsilon = 0.2, 0.1", "epsilon = 0.2, small"),
        ("x_lo = -3", "x_lo = -3,,x"),
    ],
)
def test_malformed_numbers_are_rejected(tmp_path, old, new):
    key = new.split("=")[0].strip()
    with pytest.raises(ConfigurationError, match=key):
        load_config(_write(tmp_path, BASIC.replace(old, new)))


def test_blank_numbers_fall_back_to_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, BASIC.replace("seed = 7", "seed =")))
    assert cfg.seed == 0
    assert load_config(_write(tmp_path, BASIC.replace("n_paths = 200", "n_paths = 2e2"))).n_paths == 200
