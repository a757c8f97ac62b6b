"""Layout quality metrics and trajectory similarity measures.

Layout report: total pipe length, collision-free indicator (1 mm sampling),
manufacturability violation rate over the path samples, and the terminal
alignment loss.

Similarity measures for comparing two 3D point sequences:

  * lcss            longest common subsequence ratio under a distance
                    tolerance (threshold matching)
  * discrete_frechet  min over monotone couplings of the max pairwise distance
  * dtw             min over monotone couplings of the summed pairwise
                    distance (raw cumulative cost, not length-normalized)
  * edit_distance   EDR: minimum insert/delete/substitute count, a pair
                    matching free when within the tolerance

DP kernels use unconstrained bands. Trajectories are typically resampled to
uniform 1 mm arc spacing first (see ``resample_uniform``); the DP measures
are sampling-sensitive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frenet import Polyline
from .machine import KAPPA_EPS
from .rewards import alignment_loss
from .scene import Port, Scene

__all__ = [
    "LayoutReport",
    "discrete_frechet",
    "dtw",
    "edit_distance",
    "layout_report",
    "lcss",
    "resample_uniform",
]


@dataclass
class LayoutReport:
    pl: float  # pipe length, mm
    cfi: bool  # collision-free indicator
    mvr: float  # manufacturability violation rate in [0, 1]
    l_align: float

    def to_document(self) -> dict:
        return {"pl_mm": self.pl, "cfi": self.cfi, "mvr": self.mvr, "l_align": self.l_align}


def layout_report(
    polyline: Polyline,
    scene: Scene,
    r_min: float,
    target: Port,
    s_max: float = 20.0,
    sample_ds: float = 1.0,
) -> LayoutReport:
    """Evaluate a finished path."""
    if len(polyline) == 0:
        raise ValueError("empty polyline")
    pl = polyline.length()

    n = max(2, int(round((polyline.s[-1] - polyline.s[0]) / sample_ds)) + 1)
    s_query = np.linspace(polyline.s[0], polyline.s[-1], n)
    points = polyline.positions_at(s_query)
    cfi = bool(np.all(scene.clearance_many(points) >= 0.0))

    kappa, tau = polyline.kappa, polyline.tau
    r0 = kappa / np.maximum(kappa * kappa + tau * tau, 1e-30)
    ok = (kappa < KAPPA_EPS) | (r0 >= r_min * (1.0 - 1e-9))
    mvr = float(np.mean(~ok))

    l_align = alignment_loss(polyline.end_state(), target, s_max)[0]
    return LayoutReport(pl=pl, cfi=cfi, mvr=mvr, l_align=l_align)


def resample_uniform(points: np.ndarray, ds: float = 1.0) -> np.ndarray:
    """Resample a point sequence at uniform arc spacing (endpoints kept)."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return points.copy()
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        return points[:1].copy()
    n = max(1, int(np.floor(total / ds + 1e-9)))
    s_new = np.linspace(0.0, total, n + 1)
    out = np.empty((n + 1, 3))
    for axis in range(3):
        out[:, axis] = np.interp(s_new, s, points[:, axis])
    return out


def _dist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("trajectories must be non-empty")
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def lcss(a: np.ndarray, b: np.ndarray, eps: float) -> float:
    """Longest-common-subsequence ratio in [0, 1] under tolerance eps (mm)."""
    close = _dist_matrix(a, b) <= eps
    n, m = close.shape
    table = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        row_close = close[i - 1]
        prev = table[i - 1]
        cur = table[i]
        for j in range(1, m + 1):
            if row_close[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
    return float(table[n, m]) / min(n, m)


def discrete_frechet(a: np.ndarray, b: np.ndarray) -> float:
    """Discrete Frechet distance: min over couplings of the max pair distance."""
    d = _dist_matrix(a, b)
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0, 0] = d[0, 0]
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[n - 1, m - 1])


def dtw(a: np.ndarray, b: np.ndarray) -> float:
    """Dynamic time warping: min cumulative distance over monotone alignments."""
    d = _dist_matrix(a, b)
    n, m = d.shape
    acc = np.empty((n, m))
    acc[0, 0] = d[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + d[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + d[i, 0]
        for j in range(1, m):
            acc[i, j] = d[i, j] + min(acc[i - 1, j], acc[i - 1, j - 1], acc[i, j - 1])
    return float(acc[n - 1, m - 1])


def edit_distance(a: np.ndarray, b: np.ndarray, eps: float) -> int:
    """Edit distance on real sequences (EDR): pairs within eps match for free."""
    close = _dist_matrix(a, b) <= eps
    n, m = close.shape
    table = np.empty((n + 1, m + 1), dtype=np.int64)
    table[0, :] = np.arange(m + 1)
    table[:, 0] = np.arange(n + 1)
    for i in range(1, n + 1):
        row_close = close[i - 1]
        prev = table[i - 1]
        cur = table[i]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if row_close[j - 1] else 1)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
    return int(table[n, m])
