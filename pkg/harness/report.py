"""Result files: CSV tables, ``results.json`` and the plain-text report."""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from harness.stats import EnsembleStats
from utils import fmt17, fmt_row

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ("functional", "rule", "estimate", "se", "n_paths", "exit_count", "dt", "epsilon", "flags")
VERDICT_COLUMNS = ("check", "functional", "rule", "status", "statistic", "se", "n_paths", "note")
RESIDUAL_COLUMNS = ("source", "name", "value", "threshold", "ok")
RESULTS_JSON = "results.json"
REPORT_TXT = "report.txt"


def _clean(value):
    """JSON-safe copy: NaN/inf become None, tuples become lists."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(fmt_row(row))


def estimate_rows(stats: EnsembleStats) -> List[list]:
    return [
        [e.functional, e.rule, e.estimate, e.se, e.n_paths, e.exit_count, e.dt, e.epsilon, ";".join(e.flags)]
        for e in stats.estimates
    ]


def verdict_rows(stats: EnsembleStats) -> List[list]:
    return [[v.check, v.functional, v.rule, v.status, v.statistic, v.se, v.n_paths, v.note] for v in stats.verdicts]


def residual_rows(stats: EnsembleStats) -> List[list]:
    return [[r["source"], r["name"], r["value"], r["threshold"], r["ok"]] for r in stats.residuals]


def results_payload(cfg, stats: EnsembleStats) -> dict:
    return _clean(
        {
            "config": cfg.as_dict(),
            "config_hash": cfg.config_hash(),
            "exit_code": stats.exit_code,
            "estimates": [dict(zip(ESTIMATE_COLUMNS, row)) for row in estimate_rows(stats)],
            "verdicts": [v.as_dict() for v in stats.verdicts],
            "residuals": list(stats.residuals),
            "tables": dict(stats.tables),
        }
    )


def render_text(payload: dict) -> str:
    """Human-readable report from a results payload (fresh or re-read from disk)."""
    cfg = payload.get("config", {})
    lines = [
        f"Experiment {cfg.get('name', '?')} (model {cfg.get('model', '?')}, config {payload.get('config_hash', '')})",
        f"  eps={cfg.get('epsilons')}  dt={cfg.get('dt')}  T={cfg.get('T')}  n_paths={cfg.get('n_paths')}  seed={cfg.get('seed')}",
        "",
        "Functionals",
    ]
    for e in payload.get("estimates", []):
        flags = f"  [{e['flags']}]" if e.get("flags") else ""
        lines.append(f"  {e['functional']:<14} {e['rule']:<24} {fmt17(e['estimate']):>24} ± {fmt17(e['se'])}{flags}")
    lines += ["", "Verdicts"]
    for v in payload.get("verdicts", []):
        note = f"  ({v['note']})" if v.get("note") else ""
        lines.append(f"  {v['status']:<5} {v['check']:<18} {v['functional']:<14} {v['rule']:<24} stat={fmt17(v['statistic'])} se={fmt17(v['se'])}{note}")
    lines += ["", "Residuals"]
    for r in payload.get("residuals", []):
        mark = "ok" if r.get("ok") else "HIGH"
        lines.append(f"  {mark:<4} {r['source']:<20} {r['name']:<28} {fmt17(r['value'])} (threshold {fmt17(r['threshold'])})")
    for name, rows in sorted(payload.get("tables", {}).items()):
        lines += ["", name.replace("_", " ").capitalize()]
        for row in rows:
            lines.append("  " + "  ".join(f"{k}={fmt17(v)}" for k, v in row.items()))
    failed = [v for v in payload.get("verdicts", []) if v.get("status") == "FAIL"]
    lines += ["", f"Exit code {payload.get('exit_code')}: {len(failed)} gated verdict(s) failed"]
    return "\n".join(lines) + "\n"


def write_results(out_dir, cfg, stats: EnsembleStats, xlsx: bool = False, averaged=None) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {
        "estimates": out / "functionals.csv",
        "verdicts": out / "verdicts.csv",
        "residuals": out / "residuals.csv",
        "json": out / RESULTS_JSON,
        "report": out / REPORT_TXT,
    }
    _write_csv(written["estimates"], ESTIMATE_COLUMNS, estimate_rows(stats))
    _write_csv(written["verdicts"], VERDICT_COLUMNS, verdict_rows(stats))
    _write_csv(written["residuals"], RESIDUAL_COLUMNS, residual_rows(stats))
    payload = results_payload(cfg, stats)
    written["json"].write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    written["report"].write_text(render_text(payload))
    if averaged is not None:
        written["averaged"] = out / "averaged.csv"
        averaged.export_csv(written["averaged"])
    if xlsx:
        from harness.workbook import write_workbook

        written["xlsx"] = write_workbook(out / "results.xlsx", stats, averaged)
    logger.info("Results written to %s", out)
    return written


def rebuild_report(results_dir) -> str:
    """Re-render ``report.txt`` from ``results.json``; returns the text."""
    path = Path(results_dir) / RESULTS_JSON
    if not path.exists():
        raise FileNotFoundError(f"no {RESULTS_JSON} in {results_dir}")
    payload = json.loads(path.read_text())
    text = render_text(payload)
    (Path(results_dir) / REPORT_TXT).write_text(text)
    return text


def load_results(results_dir) -> Optional[dict]:
    path = Path(results_dir) / RESULTS_JSON
    return json.loads(path.read_text()) if path.exists() else None
