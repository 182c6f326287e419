# cvqpu/results.py
import os
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger("cvqpu.results")

CSV_COLUMNS = [
    "swept_name", "swept_value", "ratio", "fidelity", "gate_time_s", "trunc_N", "norm_drift", "leakage",
]
FLOAT_FORMAT = "%.12g"
RESULT_FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ResultRow:
    """
    One grid point. The CSV carries the eight base columns; `extras` holds the
    JSON-only diagnostics (gauge fidelity, flags, integrator counts, ...).
    """
    swept_name: str
    swept_value: float
    ratio: float
    fidelity: float
    gate_time_s: float
    trunc_N: int
    norm_drift: float = 0.0
    leakage: float = 0.0
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.extras.get("flagged", False))

    def base(self) -> Dict[str, Any]:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


@dataclass
class SweepResult:
    op_kind: str
    swept_name: str
    rows: List[ResultRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.swept_value)

    @property
    def fidelities(self) -> List[float]:
        return [r.fidelity for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.base() for r in self.rows], columns=CSV_COLUMNS)


# ---- JSON helpers ----------------------------------------------------------------
def _round12(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(FLOAT_FORMAT % v)
    if isinstance(v, complex):
        return {"re": _round12(v.real), "im": _round12(v.imag)}
    if isinstance(v, dict):
        return {k: _round12(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round12(x) for x in v]
    return v


def result_to_dict(result: SweepResult) -> Dict[str, Any]:
    rows = []
    for r in result.rows:
        row = r.base()
        row.update(r.extras)
        rows.append(_round12(row))
    return {
        "op_kind": result.op_kind,
        "swept_name": result.swept_name,
        "rows": rows,
        "metadata": _round12(result.metadata),
    }


# ---- Store -------------------------------------------------------------------------
class ResultStore:
    """
    Flat result directory, e.g.:
      results/rotation_omega_r_20250828_153012.csv
      results/rotation_omega_r_20250828_153012.json
    With `fixed_name` set the timestamp is dropped (results/<fixed_name>.<ext>).
    """
    def __init__(self, root: str = "results", fixed_name: Optional[str] = None):
        self.root = root
        self.fixed_name = fixed_name

    # ---------- Naming ----------
    def path_for(self, result: SweepResult, fmt: str) -> str:
        if fmt not in RESULT_FORMATS:
            raise ValueError(f"Unknown result format '{fmt}'. Use one of: {', '.join(RESULT_FORMATS)}")
        if self.fixed_name:
            stem = self.fixed_name
        else:
            stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            stem = f"{result.op_kind}_{result.swept_name}_{stamp}"
        return os.path.join(self.root, f"{stem}.{fmt}")

    # ---------- Save ----------
    def save(self, result: SweepResult, fmt: str = "csv") -> str:
        path = self.path_for(result, fmt)
        try:
            os.makedirs(self.root, exist_ok=True)
        except OSError as e:
            raise OSError(f"Cannot create result directory {self.root!r}: {e}") from e
        write_results(result, path, fmt)
        return path


def write_results(result: SweepResult, path: str, fmt: str = "csv") -> None:
    """CSV: the eight base columns. JSON: rows with diagnostics plus metadata, indent=2."""
    if fmt not in RESULT_FORMATS:
        raise ValueError(f"Unknown result format '{fmt}'. Use one of: {', '.join(RESULT_FORMATS)}")
    try:
        if fmt == "csv":
            result.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
        else:
            with open(path, "w") as f:
                json.dump(result_to_dict(result), f, indent=2)
    except OSError as e:
        raise OSError(f"Cannot write results to {path!r}: {e}") from e
    logger.info("Wrote %d row(s) to %s", len(result.rows), path)


def read_results(path: str) -> SweepResult:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Result file not found at {path}")
    if path.endswith(".json"):
        with open(path, "r") as f:
            data = json.load(f)
        rows = []
        for raw in data.get("rows", []):
            base = {c: raw[c] for c in CSV_COLUMNS}
            extras = {k: v for k, v in raw.items() if k not in CSV_COLUMNS}
            base["trunc_N"] = int(base["trunc_N"])
            rows.append(ResultRow(**base, extras=extras))
        return SweepResult(data.get("op_kind", ""), data.get("swept_name", ""), rows, data.get("metadata", {}))

    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}")
    rows = [
        ResultRow(
            swept_name=str(rec["swept_name"]), swept_value=float(rec["swept_value"]),
            ratio=float(rec["ratio"]), fidelity=float(rec["fidelity"]),
            gate_time_s=float(rec["gate_time_s"]), trunc_N=int(rec["trunc_N"]),
            norm_drift=float(rec["norm_drift"]), leakage=float(rec["leakage"]),
        )
        for rec in frame.to_dict(orient="records")
    ]
    name = rows[0].swept_name if rows else ""
    return SweepResult("", name, rows)
