"""Frenet-frame path reconstruction.

A pipe centerline is recovered from curvature/torsion functions kappa(s),
tau(s) by integrating the Frenet-Serret system

    T' = kappa N,   N' = -kappa T + tau B,   B' = -tau N,   r' = T

with classical fixed-step RK4. The moving frame is re-orthonormalized after
every step so numerical drift stays bounded over arbitrarily long
integrations. ``analytic_helix`` gives the closed-form constant
curvature/torsion solution used as an independent oracle.

Units are millimeters, radians and 1/mm throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MAX_RK4_STEP",
    "Frame",
    "FrameError",
    "IntegrationError",
    "PathState",
    "Polyline",
    "analytic_helix",
    "frame_from_tangent",
    "frenet_step",
    "integrate_segment",
    "reorthonormalize",
    "rotate_frame_about_tangent",
]

# Largest internal RK4 step (mm); kappa, tau <= 0.01 /mm makes this very safe.
MAX_RK4_STEP = 0.5


class FrameError(ValueError):
    """Frame is degenerate or too far from orthonormal to repair."""


class IntegrationError(ValueError):
    """Curvature/torsion evaluated to a non-finite value during integration."""


@dataclass
class Frame:
    """Right-handed orthonormal triad (tangent, normal, binormal)."""

    T: np.ndarray
    N: np.ndarray
    B: np.ndarray

    def __post_init__(self) -> None:
        self.T = np.asarray(self.T, dtype=float)
        self.N = np.asarray(self.N, dtype=float)
        self.B = np.asarray(self.B, dtype=float)

    def copy(self) -> "Frame":
        return Frame(self.T.copy(), self.N.copy(), self.B.copy())

    def as_matrix(self) -> np.ndarray:
        """Rows are T, N, B."""
        return np.stack([self.T, self.N, self.B])

    def orthonormality_error(self) -> float:
        """Max deviation from unit norms / pairwise orthogonality / B = T x N."""
        m = self.as_matrix()
        gram = m @ m.T
        err = float(np.abs(gram - np.eye(3)).max())
        err = max(err, float(np.abs(np.cross(self.T, self.N) - self.B).max()))
        return err


@dataclass
class PathState:
    """Moving point on the pipe axis: position, frame, arc length, local geometry."""

    r: np.ndarray
    frame: Frame
    s: float = 0.0
    kappa: float = 0.0
    tau: float = 0.0

    def __post_init__(self) -> None:
        self.r = np.asarray(self.r, dtype=float)

    def copy(self) -> "PathState":
        return PathState(self.r.copy(), self.frame.copy(), self.s, self.kappa, self.tau)


def frame_from_tangent(tangent: Sequence[float]) -> Frame:
    """Deterministic initial frame for a port tangent.

    The normal is the coordinate axis least aligned with T, orthogonalized
    against it; B completes the right-handed triad. Orientation is then
    adjusted by the startup-stage roll action, not here.
    """
    t = np.asarray(tangent, dtype=float)
    norm = np.linalg.norm(t)
    if norm < 1e-9:
        raise FrameError("zero tangent")
    t = t / norm
    axis = int(np.argmin(np.abs(t)))
    n = np.zeros(3)
    n[axis] = 1.0
    n -= (n @ t) * t
    n /= np.linalg.norm(n)
    return Frame(t, n, np.cross(t, n))


def reorthonormalize(frame: Frame) -> Frame:
    """Repair small orthonormality drift: Gram-Schmidt on (T, N), B = T x N."""
    t = np.asarray(frame.T, dtype=float)
    n = np.asarray(frame.N, dtype=float)
    tn = np.linalg.norm(t)
    if tn < 1e-6:
        raise FrameError("tangent norm ~ 0")
    t = t / tn
    n = n - (n @ t) * t
    nn = np.linalg.norm(n)
    if nn < 1e-6:
        raise FrameError("normal nearly parallel to tangent")
    n = n / nn
    return Frame(t, n, np.cross(t, n))


def rotate_frame_about_tangent(frame: Frame, theta: float) -> Frame:
    """Rotate N and B about T by theta (Rodrigues; T unchanged)."""
    c, s = math.cos(theta), math.sin(theta)
    n = c * frame.N + s * frame.B
    return Frame(frame.T.copy(), n, np.cross(frame.T, n))


class Polyline:
    """Path samples at fixed arc-length spacing.

    Parallel arrays: s (n,), r (n,3), T/N/B (n,3), kappa/tau (n,). Consecutive
    s values differ by the sampling step except for a final partial step.
    """

    __slots__ = ("s", "r", "T", "N", "B", "kappa", "tau")

    def __init__(self, s, r, T, N, B, kappa, tau):
        self.s = np.asarray(s, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.T = np.asarray(T, dtype=float)
        self.N = np.asarray(N, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        self.tau = np.asarray(tau, dtype=float)

    def __len__(self) -> int:
        return len(self.s)

    def state_at(self, i: int) -> PathState:
        return PathState(
            self.r[i].copy(),
            Frame(self.T[i].copy(), self.N[i].copy(), self.B[i].copy()),
            float(self.s[i]),
            float(self.kappa[i]),
            float(self.tau[i]),
        )

    def end_state(self) -> PathState:
        return self.state_at(len(self) - 1)

    def length(self) -> float:
        """Total chord length (equals arc length up to discretization)."""
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.r, axis=0), axis=1).sum())

    def positions_at(self, s_query: np.ndarray) -> np.ndarray:
        """Linear interpolation of positions at the given arc lengths."""
        s_query = np.asarray(s_query, dtype=float)
        out = np.empty((len(s_query), 3))
        for axis in range(3):
            out[:, axis] = np.interp(s_query, self.s, self.r[:, axis])
        return out

    def geometry_at(self, s_query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation of (kappa, tau) at the given arc lengths."""
        s_query = np.asarray(s_query, dtype=float)
        return (
            np.interp(s_query, self.s, self.kappa),
            np.interp(s_query, self.s, self.tau),
        )

    @classmethod
    def concat(cls, parts: Sequence["Polyline"]) -> "Polyline":
        """Join consecutive segments, dropping duplicated junction samples."""
        if not parts:
            raise ValueError("no polyline parts")
        keep = [parts[0]]
        for part in parts[1:]:
            prev_end = keep[-1].s[-1]
            start = 1 if abs(part.s[0] - prev_end) < 1e-9 else 0
            keep.append(
                cls(
                    part.s[start:], part.r[start:], part.T[start:], part.N[start:],
                    part.B[start:], part.kappa[start:], part.tau[start:],
                )
            )
        return cls(
            np.concatenate([p.s for p in keep]),
            np.concatenate([p.r for p in keep]),
            np.concatenate([p.T for p in keep]),
            np.concatenate([p.N for p in keep]),
            np.concatenate([p.B for p in keep]),
            np.concatenate([p.kappa for p in keep]),
            np.concatenate([p.tau for p in keep]),
        )


# ---------------------------------------------------------------------------
# RK4 core. State is packed as a (4, 3) array with rows (T, N, B, r).

def _pack(state: PathState) -> np.ndarray:
    return np.array([state.frame.T, state.frame.N, state.frame.B, state.r], dtype=float)


def _unpack(y: np.ndarray, s: float, kappa: float, tau: float) -> PathState:
    return PathState(y[3].copy(), Frame(y[0].copy(), y[1].copy(), y[2].copy()), s, kappa, tau)


def _rhs(y: np.ndarray, kappa: float, tau: float) -> np.ndarray:
    out = np.empty((4, 3))
    out[0] = kappa * y[1]
    out[1] = tau * y[2] - kappa * y[0]
    out[2] = -tau * y[1]
    out[3] = y[0]
    return out


def _orthonormalize_packed(y: np.ndarray) -> None:
    t = y[0]
    t /= math.sqrt(t @ t)
    n = y[1]
    n -= (n @ t) * t
    n /= math.sqrt(n @ n)
    # cross product unrolled; np.cross is disproportionately slow on 3-vectors
    y[2, 0] = t[1] * n[2] - t[2] * n[1]
    y[2, 1] = t[2] * n[0] - t[0] * n[2]
    y[2, 2] = t[0] * n[1] - t[1] * n[0]


def _rk4_step(y: np.ndarray, s: float, h: float, geo: Callable) -> np.ndarray:
    k0, t0 = geo(s)
    km, tm = geo(s + 0.5 * h)
    k1, t1 = geo(s + h)
    if not (math.isfinite(k0) and math.isfinite(t0) and math.isfinite(km)
            and math.isfinite(tm) and math.isfinite(k1) and math.isfinite(t1)):
        raise IntegrationError(f"non-finite curvature/torsion near s={s!r}")
    half_h = 0.5 * h
    a = _rhs(y, k0, t0)
    b = _rhs(y + half_h * a, km, tm)
    c = _rhs(y + half_h * b, km, tm)
    d = _rhs(y + h * c, k1, t1)
    a += d
    b += c
    b *= 2.0
    a += b
    a *= h / 6.0
    a += y
    return a


def frenet_step(
    state: PathState,
    kappa_fn: Callable[[float], float],
    tau_fn: Callable[[float], float],
    ds: float,
    renormalize: bool = True,
) -> PathState:
    """Advance the state by a single RK4 step of size ds."""
    if ds <= 0:
        raise ValueError(f"ds must be positive, got {ds}")
    geo = lambda s: (kappa_fn(s), tau_fn(s))
    y = _rk4_step(_pack(state), state.s, ds, geo)
    if renormalize:
        _orthonormalize_packed(y)
    s_next = state.s + ds
    return _unpack(y, s_next, kappa_fn(s_next), tau_fn(s_next))


def integrate_segment(
    state: PathState,
    profile,
    s_end: float,
    sample_ds: float,
) -> tuple[Polyline, PathState]:
    """Integrate from state.s to s_end, sampling every sample_ds.

    ``profile`` is either an object with ``eval_at(s) -> (kappa, tau)`` or a
    callable with that signature. Internal RK4 steps never exceed
    min(sample_ds, MAX_RK4_STEP). Returns the sampled polyline (both endpoints
    included) and the final state.
    """
    if s_end <= state.s:
        raise ValueError(f"s_end={s_end} must exceed state.s={state.s}")
    if sample_ds <= 0:
        raise ValueError("sample_ds must be positive")
    geo = profile.eval_at if hasattr(profile, "eval_at") else profile

    span = s_end - state.s
    n_full = int(math.floor(span / sample_ds + 1e-9))
    rem = span - n_full * sample_ds
    has_partial = rem > 1e-9 * max(1.0, abs(s_end))
    n_samples = n_full + 1 + (1 if has_partial else 0)

    s_vals = np.empty(n_samples)
    for i in range(n_full + 1):
        s_vals[i] = state.s + i * sample_ds
    s_vals[-1] = s_end  # exact endpoint regardless of rounding

    r = np.empty((n_samples, 3))
    tt = np.empty((n_samples, 3))
    nn = np.empty((n_samples, 3))
    bb = np.empty((n_samples, 3))
    kk = np.empty(n_samples)
    uu = np.empty(n_samples)

    y = _pack(state)
    for i, s_i in enumerate(s_vals):
        if i > 0:
            length = s_i - s_vals[i - 1]
            n_sub = max(1, math.ceil(length / MAX_RK4_STEP - 1e-12))
            h = length / n_sub
            s_cursor = s_vals[i - 1]
            for _ in range(n_sub):
                y = _rk4_step(y, s_cursor, h, geo)
                _orthonormalize_packed(y)
                s_cursor += h
        tt[i], nn[i], bb[i], r[i] = y
        kk[i], uu[i] = geo(float(s_i))

    poly = Polyline(s_vals, r, tt, nn, bb, kk, uu)
    return poly, poly.end_state()


def analytic_helix(kappa: float, tau: float, s: float, initial: PathState) -> PathState:
    """Closed-form state of a constant curvature/torsion helix.

    Base radius R0 = kappa/(kappa^2 + tau^2) and axial rate h = tau/(kappa^2
    + tau^2); the result is expressed in the coordinates of ``initial``. The
    helix axis passes through initial.r + R0 * initial.N with direction
    (tau * T + kappa * B) / sqrt(kappa^2 + tau^2).
    """
    if kappa <= 0:
        raise ValueError(f"analytic helix requires kappa > 0, got {kappa}")
    omega2 = kappa * kappa + tau * tau
    omega = math.sqrt(omega2)
    radius = kappa / omega2
    axial = tau / omega2
    theta = omega * s

    # Canonical helix r(s) = (R cos(ws), R sin(ws), h*ws) with |r'| = 1.
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rc = np.array([radius * cos_t, radius * sin_t, axial * theta])
    rc0 = np.array([radius, 0.0, 0.0])
    tc = np.array([-radius * omega * sin_t, radius * omega * cos_t, axial * omega])
    ncv = np.array([-cos_t, -sin_t, 0.0])
    bc = np.array([axial * omega * sin_t, -axial * omega * cos_t, radius * omega])

    # Rotate the canonical frame at s=0 onto the supplied initial frame.
    canon0 = np.column_stack([
        np.array([0.0, radius * omega, axial * omega]),
        np.array([-1.0, 0.0, 0.0]),
        np.array([0.0, -axial * omega, radius * omega]),
    ])
    target = np.column_stack([initial.frame.T, initial.frame.N, initial.frame.B])
    rot = target @ canon0.T

    return PathState(
        initial.r + rot @ (rc - rc0),
        Frame(rot @ tc, rot @ ncv, rot @ bc),
        initial.s + s,
        kappa,
        tau,
    )
