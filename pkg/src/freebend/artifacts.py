"""Run artifact files: polyline CSV, layout report JSON, training-log CSV.

Every artifact opens with a provenance comment (seed plus config echo) so a
run can be reproduced from any of its outputs. Floats print with 17
significant digits: parsing an emitted file recovers the values bit-exactly,
and rerunning with the same seed reproduces the files byte-for-byte.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .frenet import Polyline

__all__ = [
    "format_provenance",
    "read_polyline_csv",
    "read_report_json",
    "read_xyz_csv",
    "write_polyline_csv",
    "write_report_json",
    "write_training_log_csv",
]

POLYLINE_HEADER = [
    "s_mm", "x_mm", "y_mm", "z_mm",
    "tx", "ty", "tz", "nx", "ny", "nz", "bx", "by", "bz",
    "kappa_per_mm", "tau_per_mm",
]

LOG_HEADER = [
    "update_idx", "global_step", "mean_return", "best_return",
    "frac_done", "frac_alignment_reached", "policy_loss", "value_loss",
]


def format_provenance(provenance: dict) -> str:
    return "# provenance: " + json.dumps(provenance, sort_keys=True)


def write_polyline_csv(path, polyline: Polyline, provenance: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_provenance(provenance) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POLYLINE_HEADER)
        for i in range(len(polyline)):
            row = [
                polyline.s[i], *polyline.r[i], *polyline.T[i], *polyline.N[i],
                *polyline.B[i], polyline.kappa[i], polyline.tau[i],
            ]
            writer.writerow([f"{v:.17g}" for v in row])


def read_polyline_csv(path) -> Polyline:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            if row == POLYLINE_HEADER:
                continue
            rows.append([float(v) for v in row])
    if not rows:
        raise ValueError(f"no samples in polyline file {path}")
    data = np.array(rows)
    return Polyline(
        data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7:10], data[:, 10:13],
        data[:, 13], data[:, 14],
    )


def read_xyz_csv(path) -> np.ndarray:
    """Positions from a polyline CSV or any CSV with x/y/z leading columns."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        rows = []
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                header = row
    if not rows:
        raise ValueError(f"no data rows in {path}")
    data = np.array(rows)
    if header is not None and "x_mm" in header:
        ix = header.index("x_mm")
        return data[:, ix : ix + 3]
    return data[:, :3]


def write_training_log_csv(path, rows: list[dict], provenance: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_provenance(provenance) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for row in rows:
            writer.writerow([
                row["update_idx"], row["global_step"],
                *(f"{row[k]:.17g}" for k in LOG_HEADER[2:]),
            ])


def write_report_json(path, report_doc: dict, provenance: dict) -> None:
    payload = dict(report_doc)
    payload["provenance"] = provenance
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_report_json(path) -> dict:
    return json.loads(Path(path).read_text())
