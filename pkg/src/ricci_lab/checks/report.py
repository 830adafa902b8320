"""Check reports: margins, budgets and witnesses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


def _plain(value: Any) -> Any:
    """Convert numpy containers and scalars into JSON-ready Python values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


@dataclass
class CheckReport:
    """Outcome of one inequality check.

    Residuals are margins with the convention that ``margin >= -tolerance``
    passes.  ``status`` refines the verdict: "pass" when every margin is
    nonnegative, "inconclusive" when the worst one is negative but inside the
    budget, "fail" otherwise.
    """

    name: str
    parameters: dict
    residuals: list[float]
    tolerance: float
    witnesses: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def min_margin(self) -> float:
        return min(self.residuals) if self.residuals else 0.0

    @property
    def verdict(self) -> str:
        return "pass" if self.min_margin >= -self.tolerance else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def status(self) -> str:
        if self.min_margin >= 0:
            return "pass"
        return "inconclusive" if self.passed else "fail"

    def to_json(self) -> dict:
        return _plain(
            {
                "name": self.name,
                "parameters": self.parameters,
                "residuals": [float(r) for r in self.residuals],
                "min_margin": float(self.min_margin),
                "tolerance": float(self.tolerance),
                "verdict": self.verdict,
                "status": self.status,
                "witnesses": self.witnesses,
                "rows": self.rows,
                "diagnostics": self.diagnostics,
            }
        )

    def margin_rows(self) -> list[dict]:
        """One row per residual for the margins table."""
        out = []
        for idx, r in enumerate(self.residuals):
            row = {"check": self.name, "index": idx}
            if idx < len(self.rows):
                row.update(self.rows[idx])
            row["margin"] = float(r)
            row["tolerance"] = float(self.tolerance)
            out.append(row)
        return out


def make_report(
    name: str,
    parameters: dict,
    residuals: Sequence[float],
    tolerance: float,
    rows: Sequence[dict] | None = None,
    witness_inputs=None,
    diagnostics: dict | None = None,
) -> CheckReport:
    """Assemble a report whose witness is the row with the smallest margin.

    ``witness_inputs(index)`` returns the inputs needed to re-evaluate the
    margin at that index.
    """
    res = [float(r) for r in residuals]
    rows = list(rows or [])
    witnesses = []
    if res:
        worst = int(np.argmin(res))
        w = {"index": worst, "margin": res[worst]}
        if worst < len(rows):
            w.update(rows[worst])
        if witness_inputs is not None:
            w["inputs"] = witness_inputs(worst)
        witnesses.append(w)
    return CheckReport(name, dict(parameters), res, float(tolerance), witnesses, rows, dict(diagnostics or {}))


def merge_reports(name: str, reports: Sequence[CheckReport], parameters: dict | None = None) -> CheckReport:
    """Concatenate reports that share one tolerance into a single report."""
    if not reports:
        raise ValueError("nothing to merge")
    tol = reports[0].tolerance
    if any(not math.isclose(r.tolerance, tol, rel_tol=1e-12, abs_tol=0.0) for r in reports):
        raise ValueError("reports with different tolerances cannot be merged")
    residuals, rows = [], []
    for part, r in enumerate(reports):
        residuals.extend(r.residuals)
        for idx in range(len(r.residuals)):
            row = dict(r.rows[idx]) if idx < len(r.rows) else {}
            row["part"] = part
            rows.append(row)
    worst_part = min(range(len(reports)), key=lambda i: reports[i].min_margin)
    witnesses = [dict(w, part=worst_part) for w in reports[worst_part].witnesses]
    parts = [{"name": r.name, "min_margin": r.min_margin, "verdict": r.verdict} for r in reports]
    return CheckReport(name, dict(parameters or {}), residuals, tol, witnesses, rows, {"parts": parts})
