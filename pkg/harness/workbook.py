"""Optional spreadsheet copy of a run's tables (``--xlsx``)."""
from __future__ import annotations

import logging
from pathlib import Path

from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill

from harness.report import ESTIMATE_COLUMNS, RESIDUAL_COLUMNS, VERDICT_COLUMNS, estimate_rows, residual_rows, verdict_rows
from harness.stats import EnsembleStats

logger = logging.getLogger(__name__)

_FAIL_FILL = PatternFill(patternType="solid", fgColor="FFC7CE")
_PASS_FILL = PatternFill(patternType="solid", fgColor="C6EFCE")


def _cell_value(value):
    if isinstance(value, float) and value != value:
        return None
    if hasattr(value, "item"):
        return value.item()
    return value


def _sheet(wb: Workbook, title: str, header, rows) -> None:
    ws = wb.create_sheet(title=title)
    ws.append(list(header))
    for cell in ws[1]:
        cell.font = Font(bold=True)
    for row in rows:
        ws.append([_cell_value(v) for v in row])
    ws.freeze_panes = "A2"


def write_workbook(path, stats: EnsembleStats, averaged=None) -> Path:
    """Sheets: functionals, verdicts, residuals and (when given) averaged."""
    path = Path(path)
    wb = Workbook()
    wb.remove(wb.active)
    _sheet(wb, "functionals", ESTIMATE_COLUMNS, estimate_rows(stats))
    _sheet(wb, "verdicts", VERDICT_COLUMNS, verdict_rows(stats))
    status_col = VERDICT_COLUMNS.index("status") + 1
    ws = wb["verdicts"]
    for r in range(2, ws.max_row + 1):
        cell = ws.cell(r, status_col)
        if cell.value == "FAIL":
            cell.fill = _FAIL_FILL
        elif cell.value == "PASS":
            cell.fill = _PASS_FILL
    _sheet(wb, "residuals", RESIDUAL_COLUMNS, residual_rows(stats))
    if averaged is not None:
        header, rows = averaged.table()
        _sheet(wb, "averaged", header, rows)
    wb.save(path)
    logger.info("Workbook written to %s", path)
    return path
