"""Experiment files: ``.cfg`` sections parsed into a frozen ``ExperimentConfig``.

    [model]       name, epsilon, T, burn_in, comparable, parity, plus builder params
    [run]         n_paths, dt, limit_dt, seed, rules (";"-separated), n_records, checks
    [grid]        backend, fast_nodes, x_nodes, t_nodes, x_lo, x_hi, cache
    [functionals] names
    [thresholds]  se_multiplier, max_se, exit_fraction_max, trim_fraction, anomalous_multiplier
    [output]      out_dir, xlsx, dump_paths
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from cells.solver import BACKENDS
from errors import ConfigurationError
from functionals.backward import NAMES as BACKWARD_EPS_NAMES
from functionals.limits import BACKWARD_NAMES, FORWARD_NAMES
from functionals.physics import ENTROPY, HOUSEKEEPING
from harness.stats import Thresholds
from model.catalog import MODEL_NAMES
from paths.engine import STABILITY_FACTOR
from paths.records import DEFAULT_RECORDS, StoppingRule
from settings import get_output_dir
from utils import float_list, name_list, safe_float

MIN_PATHS = 100
MIN_GRID_NODES = 129

FORWARD_EPS = ("F_eps",)
ENTROPY_NAMES = (ENTROPY, f"{ENTROPY}_limit", f"{ENTROPY}1", f"{ENTROPY}2", f"{ENTROPY}_H")
HOUSEKEEPING_NAMES = (HOUSEKEEPING, f"{HOUSEKEEPING}_limit", f"{HOUSEKEEPING}1", f"{HOUSEKEEPING}2")
FUNCTIONAL_NAMES = frozenset(
    FORWARD_EPS + FORWARD_NAMES + BACKWARD_EPS_NAMES + BACKWARD_NAMES + ENTROPY_NAMES + HOUSEKEEPING_NAMES
)
CHECK_NAMES = frozenset({"ift", "martingale", "covariation", "convergence", "burn_in", "second_law", "anomalous_variance"})
DEFAULT_CHECKS = ("ift", "martingale", "covariation")
MODEL_KEYS = {"name", "epsilon", "t", "burn_in", "comparable", "parity"}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: str
    params: Dict[str, float] = field(default_factory=dict)
    epsilons: Tuple[float, ...] = (0.1,)
    T: float = 1.0
    burn_in: float = 1.0
    comparable: str = "shift:1.0"
    parity: str = ""
    n_paths: int = 1000
    dt: float = 1e-4
    limit_dt: float = 0.0
    seed: int = 0
    rules: Tuple[str, ...] = ("fixed_time",)
    n_records: int = DEFAULT_RECORDS
    checks: Tuple[str, ...] = DEFAULT_CHECKS
    functionals: Tuple[str, ...] = ("F_eps", "F", "F1", "F2")
    backend: str = ""
    fast_nodes: int = 257
    x_nodes: int = 41
    t_nodes: int = 11
    x_lo: Optional[Tuple[float, ...]] = None
    x_hi: Optional[Tuple[float, ...]] = None
    cache: bool = True
    thresholds: Thresholds = Thresholds()
    out_dir: str = ""
    xlsx: bool = False
    dump_paths: bool = False
    source: str = ""

    @property
    def limit_step(self) -> float:
        return self.limit_dt or self.dt

    @property
    def epsilon(self) -> float:
        """The ε of the main run: the smallest listed."""
        return min(self.epsilons)

    def config_hash(self) -> str:
        payload = asdict(self)
        payload.pop("source", None)
        payload.pop("out_dir", None)
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        out = asdict(self)
        out["thresholds"] = self.thresholds.as_dict()
        return out


def _truthy(value, default: bool = False) -> bool:
    if value is None or str(value).strip() == "":
        return default
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _section(parser: configparser.ConfigParser, name: str) -> Mapping[str, str]:
    return parser[name] if parser.has_section(name) else {}


def _number(section: Mapping[str, str], key: str, default, kind=float):
    """Blank or missing falls back to ``default``; anything else must parse."""
    text = section.get(key)
    if text is None or not str(text).strip():
        return default
    value = safe_float(text, None)
    if value is None or (kind is int and not float(value).is_integer()):
        noun = "an integer" if kind is int else "a number"
        raise ConfigurationError(f"{key}={text!r} is not {noun}")
    return kind(value)


def _floats(value, key: str, default=()):
    try:
        return float_list(value, default)
    except ValueError:
        raise ConfigurationError(f"{key}={value!r} is not a comma-separated list of numbers") from None


def _box(value, key: str = "box") -> Optional[Tuple[float, ...]]:
    vals = _floats(value, key)
    return tuple(vals) if vals else None


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Raise ``ConfigurationError`` on the first violated rule."""
    if cfg.model not in MODEL_NAMES:
        raise ConfigurationError(f"unknown model {cfg.model!r}; known: {sorted(MODEL_NAMES)}")
    if not cfg.epsilons or any(e <= 0 for e in cfg.epsilons):
        raise ConfigurationError(f"epsilon list must be non-empty and positive, got {list(cfg.epsilons)}")
    if not cfg.T > 0:
        raise ConfigurationError(f"T must be > 0, got {cfg.T}")
    if cfg.burn_in < 0:
        raise ConfigurationError(f"burn_in must be >= 0, got {cfg.burn_in}")
    limit = STABILITY_FACTOR * min(cfg.epsilons) ** 2
    if not 0 < cfg.dt <= limit * (1 + 1e-12):
        raise ConfigurationError(f"dt={cfg.dt:g} must be in (0, {STABILITY_FACTOR:g}*min(eps)^2={limit:g}]")
    if cfg.limit_dt < 0:
        raise ConfigurationError(f"limit_dt must be >= 0, got {cfg.limit_dt}")
    if cfg.n_paths < MIN_PATHS:
        raise ConfigurationError(f"n_paths must be >= {MIN_PATHS}, got {cfg.n_paths}")
    if cfg.fast_nodes < MIN_GRID_NODES:
        raise ConfigurationError(f"grid fast_nodes must be >= {MIN_GRID_NODES}, got {cfg.fast_nodes}")
    if cfg.backend and cfg.backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {cfg.backend!r}; known: {list(BACKENDS)}")
    unknown = sorted(set(cfg.functionals) - FUNCTIONAL_NAMES)
    if unknown:
        raise ConfigurationError(f"unknown functionals {unknown}; known: {sorted(FUNCTIONAL_NAMES)}")
    if not cfg.functionals:
        raise ConfigurationError("no functionals selected")
    unknown = sorted(set(cfg.checks) - CHECK_NAMES)
    if unknown:
        raise ConfigurationError(f"unknown checks {unknown}; known: {sorted(CHECK_NAMES)}")
    if "convergence" in cfg.checks and len(cfg.epsilons) < 2:
        raise ConfigurationError("convergence check needs at least two epsilon values")
    for text in cfg.rules:
        StoppingRule.parse(text)
    if not cfg.rules:
        raise ConfigurationError("no stopping rules")
    if cfg.comparable.split(":")[0] not in ("shift", "original"):
        raise ConfigurationError(f"unknown comparable {cfg.comparable!r}; use 'original' or 'shift:<value>'")
    return cfg


def load_config(path, overrides: Optional[Mapping[str, object]] = None) -> ExperimentConfig:
    """Parse ``path`` then apply CLI ``overrides`` (keys are field names; None skipped)."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    if not read:
        raise ConfigurationError(f"config file not found: {path}")
    model = _section(parser, "model")
    run = _section(parser, "run")
    grid = _section(parser, "grid")
    funcs = _section(parser, "functionals")
    thr = _section(parser, "thresholds")
    out = _section(parser, "output")

    params = {}
    for key, value in model.items():
        if key in MODEL_KEYS:
            continue
        try:
            params[key] = float(value)
        except ValueError:
            raise ConfigurationError(f"model parameter {key}={value!r} is not a number") from None

    defaults = Thresholds()
    thresholds = Thresholds(
        se_multiplier=_number(thr, "se_multiplier", defaults.se_multiplier),
        max_se=_number(thr, "max_se", defaults.max_se),
        exit_fraction_max=_number(thr, "exit_fraction_max", defaults.exit_fraction_max),
        trim_fraction=_number(thr, "trim_fraction", defaults.trim_fraction),
        anomalous_multiplier=_number(thr, "anomalous_multiplier", defaults.anomalous_multiplier),
    )
    cfg = ExperimentConfig(
        name=path.stem,
        model=(model.get("name") or "").strip(),
        params=params,
        epsilons=tuple(_floats(model.get("epsilon"), "epsilon", (0.1,))),
        T=_number(model, "T", 1.0),
        burn_in=_number(model, "burn_in", 1.0),
        comparable=(model.get("comparable") or "shift:1.0").strip(),
        parity=(model.get("parity") or "").strip(),
        n_paths=_number(run, "n_paths", 1000, int),
        dt=_number(run, "dt", 1e-4),
        limit_dt=_number(run, "limit_dt", 0.0),
        seed=_number(run, "seed", 0, int),
        rules=tuple(r.strip() for r in (run.get("rules") or "fixed_time").split(";") if r.strip()),
        n_records=_number(run, "n_records", DEFAULT_RECORDS, int),
        checks=tuple(name_list(run.get("checks"), DEFAULT_CHECKS)),
        functionals=tuple(name_list(funcs.get("names"), ("F_eps", "F", "F1", "F2"))),
        backend=(grid.get("backend") or "").strip(),
        fast_nodes=_number(grid, "fast_nodes", 257, int),
        x_nodes=_number(grid, "x_nodes", 41, int),
        t_nodes=_number(grid, "t_nodes", 11, int),
        x_lo=_box(grid.get("x_lo"), "x_lo"),
        x_hi=_box(grid.get("x_hi"), "x_hi"),
        cache=_truthy(grid.get("cache"), True),
        thresholds=thresholds,
        out_dir=(out.get("out_dir") or "").strip(),
        xlsx=_truthy(out.get("xlsx")),
        dump_paths=_truthy(out.get("dump_paths")),
        source=str(path),
    )
    cfg = apply_overrides(cfg, overrides or {})
    if not cfg.out_dir:
        cfg = replace(cfg, out_dir=str(Path(get_output_dir()) / cfg.name))
    return validate(cfg)


def apply_overrides(cfg: ExperimentConfig, overrides: Mapping[str, object]) -> ExperimentConfig:
    changes = {k: v for k, v in overrides.items() if v is not None}
    if "epsilons" in changes:
        changes["epsilons"] = tuple(_floats(changes["epsilons"], "epsilons"))
    for key in ("functionals", "rules"):
        if key in changes and isinstance(changes[key], str):
            sep = ";" if key == "rules" else ","
            changes[key] = tuple(p.strip() for p in changes[key].split(sep) if p.strip())
    unknown = set(changes) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown override keys {sorted(unknown)}")
    return replace(cfg, **changes)
