"""Six-axis free-bending die kinematics.

A pipe with local curvature kappa and torsion tau is formed by the spiral
microelement with base radius R0 = kappa/(kappa^2 + tau^2) and lead
P0 = 2*pi*tau/(kappa^2 + tau^2). Forming it deflects the bending die to

    alpha_A = arcsin(k * A0 / R0),   U_y = R0 * (1 - cos(alpha_A))

and the die pose rotates rigidly about the feed axis by the accumulated
angle sum of alpha_z = 2*pi*d*P0 / ((2*pi*R0)^2 + P0^2) per sample spacing d.
Straight spans (kappa below KAPPA_EPS) map to the home pose.

The closed-form three-stage spiral sequence doubles as an oracle for the
sampled pose generator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiePose",
    "HelixParams",
    "InfeasibleBendError",
    "KAPPA_EPS",
    "MachineConfig",
    "check_manufacturable",
    "die_deflection",
    "die_pose_sequence",
    "export_trajectory",
    "helix_params",
    "parse_trajectory",
    "spiral_stage_poses",
]

# Curvature below this is treated as a straight segment (infinite radius).
KAPPA_EPS = 1e-6


class InfeasibleBendError(ValueError):
    """k*A0 exceeds the local base radius: alpha_A does not exist."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass
class MachineConfig:
    """Bending machine geometry and feed parameters.

    a0 is machine specific; 40 mm is a documented placeholder. k = 1.5 and
    v_z = 1.5 mm/s match hardware trial settings.
    """

    a0: float = 40.0  # bending-die-to-guider center distance, mm
    k: float = 1.5  # springback correction factor
    v_z: float = 1.5  # pusher speed, mm/s
    r_min: float = 100.0  # minimum manufacturable bending radius, mm

    def __post_init__(self) -> None:
        for field_name in ("a0", "k", "v_z", "r_min"):
            if getattr(self, field_name) <= 0:
                raise ValueError(f"{field_name} must be positive")

    @classmethod
    def from_document(cls, doc: dict) -> "MachineConfig":
        return cls(
            a0=float(doc["A0"]),
            k=float(doc["k"]),
            v_z=float(doc["v_z"]),
            r_min=float(doc["R_min"]),
        )

    def to_document(self) -> dict:
        return {"schema_version": 1, "A0": self.a0, "k": self.k, "v_z": self.v_z, "R_min": self.r_min}


@dataclass
class HelixParams:
    r0: float  # base radius, mm
    p0: float  # lead (axial advance per turn), mm


@dataclass
class DiePose:
    px: float
    py: float
    phi_a: float
    phi_b: float
    t: float  # seconds


def helix_params(kappa: float, tau: float) -> HelixParams:
    """Spiral microelement parameters for a (kappa, tau) sample."""
    if kappa < KAPPA_EPS:
        raise ValueError(
            f"kappa={kappa} below KAPPA_EPS: straight segment, no finite helix"
        )
    denom = kappa * kappa + tau * tau
    return HelixParams(r0=kappa / denom, p0=2.0 * math.pi * tau / denom)


def check_manufacturable(kappa: float, tau: float, r_min: float) -> bool:
    """True iff the local base radius meets r_min (straight is always fine).

    Boundary-inclusive within 1e-9 relative so exact-limit samples such as
    kappa = 1/r_min, tau = 0 are not rejected by rounding.
    """
    if kappa < KAPPA_EPS:
        return True
    r0 = kappa / (kappa * kappa + tau * tau)
    return r0 >= r_min * (1.0 - 1e-9)


def die_deflection(h: HelixParams, cfg: MachineConfig) -> tuple[float, float]:
    """(alpha_A, U_y) for one spiral microelement."""
    ratio = cfg.k * cfg.a0 / h.r0
    if ratio > 1.0:
        raise InfeasibleBendError(
            f"k*A0 = {cfg.k * cfg.a0} exceeds base radius {h.r0}: bend infeasible"
        )
    alpha_a = math.asin(ratio)
    return alpha_a, h.r0 * (1.0 - math.cos(alpha_a))


def _alpha_z(h: HelixParams, spacing: float) -> float:
    denom = (2.0 * math.pi * h.r0) ** 2 + h.p0**2
    return 2.0 * math.pi * spacing * h.p0 / denom


def die_pose_sequence(samples, cfg: MachineConfig) -> list[DiePose]:
    """Die poses for path samples of (spacing, kappa, tau), first spacing 0.

    The accumulated feed-axis rotation drives a rigid rotation of the
    stage-1 deflection; timestamps add the alpha_A lead-in of the first
    sample once, then advance by spacing / v_z.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample list")
    if abs(samples[0][0]) > 1e-12:
        raise ValueError(f"first sample spacing must be 0, got {samples[0][0]}")

    poses: list[DiePose] = []
    cum_alpha_z = 0.0
    t = 0.0
    for i, (spacing, kappa, tau) in enumerate(samples):
        if spacing < 0:
            raise ValueError(f"negative spacing at sample {i}")
        t += spacing / cfg.v_z
        if kappa < KAPPA_EPS:
            # straight: home pose, and a straight lead-in has no alpha_A ramp
            poses.append(DiePose(0.0, 0.0, 0.0, 0.0, t))
            continue
        h = helix_params(kappa, tau)
        try:
            alpha_a, u_y = die_deflection(h, cfg)
        except InfeasibleBendError as exc:
            raise InfeasibleBendError(str(exc), index=i) from exc
        cum_alpha_z += _alpha_z(h, spacing)
        if i == 0:
            t += h.r0 * alpha_a / cfg.v_z  # stage-1 lead-in, applied once
        sin_z, cos_z = math.sin(cum_alpha_z), math.cos(cum_alpha_z)
        poses.append(
            DiePose(u_y * sin_z, u_y * cos_z, -alpha_a * cos_z, alpha_a * sin_z, t)
        )
    return poses


def spiral_stage_poses(
    r0: float, p0: float, l0: float, cfg: MachineConfig
) -> tuple[DiePose, DiePose, float, float]:
    """Closed-form stage-1/stage-2 end poses and durations for a spiral.

    Oracle for ``die_pose_sequence`` on constant-geometry pipes.
    """
    if l0 < 0:
        raise ValueError("arc length must be non-negative")
    ratio = cfg.k * cfg.a0 / r0
    if ratio > 1.0:
        raise InfeasibleBendError(f"k*A0/{r0} = {ratio} > 1: bend infeasible")
    alpha_a = math.asin(ratio)
    u_y = r0 * (1.0 - math.cos(alpha_a))
    t1 = r0 * alpha_a / cfg.v_z
    alpha_z = 2.0 * math.pi * l0 * p0 / ((2.0 * math.pi * r0) ** 2 + p0**2)
    t2 = l0 / cfg.v_z
    stage1 = DiePose(0.0, u_y, -alpha_a, 0.0, t1)
    stage2 = DiePose(
        u_y * math.sin(alpha_z),
        u_y * math.cos(alpha_z),
        -alpha_a * math.cos(alpha_z),
        alpha_a * math.sin(alpha_z),
        t1 + t2,
    )
    return stage1, stage2, t1, t2


_TRAJECTORY_HEADER = [
    "t_s",
    "Px_mm",
    "Py_mm",
    "phiA_rad",
    "phiB_rad",
    "z_mm",
    "vPx_mm_s",
    "vPy_mm_s",
    "vphiA_rad_s",
    "vphiB_rad_s",
    "vz_mm_s",
]


def export_trajectory(poses: list[DiePose], cfg: MachineConfig, fileobj) -> None:
    """Write the die trajectory CSV: poses, pusher position and axis velocities.

    z = v_z * t; velocity columns are forward differences over (Px, Py,
    phi_A, phi_B, z), with the last row repeating the previous rate. Values
    carry 17 significant digits so parsing the file reproduces the poses
    bit-exactly.
    """
    if not poses:
        raise ValueError("empty pose list")
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(_TRAJECTORY_HEADER)
    cols = np.array([[p.t, p.px, p.py, p.phi_a, p.phi_b] for p in poses])
    axes = np.column_stack([cols[:, 1:5], cfg.v_z * cols[:, 0]])
    n = len(poses)
    vel = np.zeros((n, 5))
    if n > 1:
        dt = np.diff(cols[:, 0])
        dt[dt == 0.0] = np.inf
        vel[:-1] = np.diff(axes, axis=0) / dt[:, None]
        vel[-1] = vel[-2]
    for i in range(n):
        row = [cols[i, 0], *axes[i], *vel[i]]
        writer.writerow([f"{v:.17g}" for v in row])


def parse_trajectory(fileobj) -> list[DiePose]:
    """Read back a trajectory CSV written by ``export_trajectory``.

    Leading comment lines (provenance) are skipped.
    """
    reader = csv.reader(fileobj)
    header = next(reader)
    while header and header[0].startswith("#"):
        header = next(reader)
    if header != _TRAJECTORY_HEADER:
        raise ValueError(f"unexpected trajectory header: {header}")
    poses = []
    for row in reader:
        t, px, py, phi_a, phi_b = (float(v) for v in row[:5])
        poses.append(DiePose(px, py, phi_a, phi_b, t))
    return poses
