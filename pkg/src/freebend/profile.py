"""Piecewise cubic Hermite curvature/torsion profiles.

A profile is a list of knots (s_t, kappa_t, tau_t) with first derivatives
pinned to zero; between knots the values follow the cubic that matches both
endpoint values and zero endpoint slopes. Zero slopes make each piece
monotone, so interpolated values never leave the interval spanned by the
knots, and the assembled curve is C1 everywhere.

Manufacturability limits the admissible knot values: |tau| <= 1/(2 R_min)
and, exactly, kappa inside the tau-dependent band that keeps the local
bending radius kappa/(kappa^2 + tau^2) at or above R_min. The relaxed
(decoupled) box is kappa in [0, 1/R_min], which callers may use with
violations penalized downstream.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AdmissibleBounds",
    "GeoProfile",
    "Knot",
    "KnotBoundsError",
    "ProfileDomainError",
    "admissible_bounds",
    "hermite_coeffs",
]


class ProfileDomainError(ValueError):
    """Evaluation outside the profile's arc-length domain."""


class KnotBoundsError(ValueError):
    """Rejected knot: spacing or (kappa, tau) outside the allowed ranges."""


@dataclass(frozen=True)
class Knot:
    s: float
    kappa: float
    tau: float
    dkappa: float = 0.0  # pinned to zero by construction
    dtau: float = 0.0


def hermite_coeffs(
    s0: float, s1: float, v0: float, v1: float, d0: float, d1: float
) -> tuple[float, float, float, float]:
    """Cubic H(s) = c1 x^3 + c2 x^2 + c3 x + c4 with x = s - s0.

    Satisfies H(s0) = v0, H(s1) = v1, H'(s0) = d0, H'(s1) = d1.
    """
    if s1 <= s0:
        raise ValueError(f"need s1 > s0, got [{s0}, {s1}]")
    length = s1 - s0
    c4 = v0
    c3 = d0
    c1 = (2.0 * (v0 - v1) + (d0 + d1) * length) / length**3
    c2 = (3.0 * (v1 - v0) - (2.0 * d0 + d1) * length) / length**2
    return (c1, c2, c3, c4)


def _eval_cubic(coeffs: tuple[float, float, float, float], x: float) -> float:
    c1, c2, c3, c4 = coeffs
    return ((c1 * x + c2) * x + c3) * x + c4


def _eval_cubic_deriv(coeffs: tuple[float, float, float, float], x: float) -> float:
    c1, c2, c3, _ = coeffs
    return (3.0 * c1 * x + 2.0 * c2) * x + c3


@dataclass
class AdmissibleBounds:
    """Manufacturable knot ranges for a given minimum bending radius."""

    r_min: float
    tau_lo: float = field(init=False)
    tau_hi: float = field(init=False)
    kappa_relaxed_lo: float = field(init=False)
    kappa_relaxed_hi: float = field(init=False)

    def __post_init__(self) -> None:
        self.tau_hi = 1.0 / (2.0 * self.r_min)
        self.tau_lo = -self.tau_hi
        self.kappa_relaxed_lo = 0.0
        self.kappa_relaxed_hi = 1.0 / self.r_min

    def kappa_exact(self, tau: float) -> tuple[float, float]:
        """Exact kappa band for the given tau (collapses at |tau| = tau_hi)."""
        root = 1.0 - 4.0 * self.r_min**2 * tau**2
        root = math.sqrt(max(root, 0.0))
        return (
            (1.0 - root) / (2.0 * self.r_min),
            (1.0 + root) / (2.0 * self.r_min),
        )

    def contains_relaxed(self, kappa: float, tau: float, slack: float = 1e-12) -> bool:
        return (
            self.kappa_relaxed_lo - slack <= kappa <= self.kappa_relaxed_hi + slack
            and self.tau_lo - slack <= tau <= self.tau_hi + slack
        )

    def contains_exact(self, kappa: float, tau: float, rel: float = 1e-9) -> bool:
        if not self.tau_lo - rel * self.tau_hi <= tau <= self.tau_hi * (1.0 + rel):
            return False
        lo, hi = self.kappa_exact(tau)
        pad = rel * self.kappa_relaxed_hi
        return lo - pad <= kappa <= hi + pad


def admissible_bounds(r_min: float) -> AdmissibleBounds:
    if r_min <= 0:
        raise ValueError(f"r_min must be positive, got {r_min}")
    return AdmissibleBounds(r_min)


class GeoProfile:
    """Curvature/torsion profile built by appending knots.

    Starts with an implicit knot (s=0, kappa=0, tau=0): pipes leave the port
    straight. `s_max` caps the spacing of appended knots and `bounds`
    validates knot values; both default to None (unchecked) for free-standing
    geometric use - the routing episode supplies real limits.
    """

    def __init__(self, s_max: float | None = None, bounds: AdmissibleBounds | None = None):
        self.s_max = s_max
        self.bounds = bounds
        self.knot_s: list[float] = [0.0]
        self.knot_kappa: list[float] = [0.0]
        self.knot_tau: list[float] = [0.0]
        self._kappa_coeffs: list[tuple[float, float, float, float]] = []
        self._tau_coeffs: list[tuple[float, float, float, float]] = []

    @property
    def s_last(self) -> float:
        return self.knot_s[-1]

    @property
    def n_knots(self) -> int:
        return len(self.knot_s)

    def knots(self) -> list[Knot]:
        return [
            Knot(s, k, t)
            for s, k, t in zip(self.knot_s, self.knot_kappa, self.knot_tau)
        ]

    def append_knot(self, delta_s: float, kappa: float, tau: float) -> None:
        """Add a knot delta_s further along with zero end derivatives."""
        if not (delta_s > 0.0):
            raise KnotBoundsError(f"delta_s must be positive, got {delta_s}")
        if self.s_max is not None and delta_s > self.s_max * (1.0 + 1e-12):
            raise KnotBoundsError(f"delta_s={delta_s} exceeds s_max={self.s_max}")
        if self.bounds is not None and not self.bounds.contains_relaxed(kappa, tau):
            raise KnotBoundsError(
                f"(kappa={kappa}, tau={tau}) outside relaxed admissible box"
            )
        s0 = self.s_last
        s1 = s0 + delta_s
        self._kappa_coeffs.append(hermite_coeffs(s0, s1, self.knot_kappa[-1], kappa, 0.0, 0.0))
        self._tau_coeffs.append(hermite_coeffs(s0, s1, self.knot_tau[-1], tau, 0.0, 0.0))
        self.knot_s.append(s1)
        self.knot_kappa.append(kappa)
        self.knot_tau.append(tau)

    def _interval(self, s: float) -> int:
        if s < -1e-9 or s > self.s_last + 1e-9:
            raise ProfileDomainError(f"s={s} outside profile domain [0, {self.s_last}]")
        return min(max(bisect_right(self.knot_s, s) - 1, 0), len(self.knot_s) - 1)

    def eval_at(self, s: float) -> tuple[float, float]:
        """(kappa, tau) at arc length s; exact at knots."""
        idx = self._interval(s)
        if idx == len(self.knot_s) - 1:  # at (or within tolerance of) the last knot
            return (self.knot_kappa[idx], self.knot_tau[idx])
        x = s - self.knot_s[idx]
        return (
            _eval_cubic(self._kappa_coeffs[idx], x),
            _eval_cubic(self._tau_coeffs[idx], x),
        )

    def derivative_at(self, s: float, side: str = "right") -> tuple[float, float]:
        """(kappa', tau') at s; `side` selects the piece when s is a knot."""
        idx = self._interval(s)
        if side == "left" and idx > 0 and abs(s - self.knot_s[idx]) < 1e-12:
            idx -= 1
        if idx == len(self.knot_s) - 1:
            if idx == 0:
                return (0.0, 0.0)
            idx -= 1
        x = s - self.knot_s[idx]
        return (
            _eval_cubic_deriv(self._kappa_coeffs[idx], x),
            _eval_cubic_deriv(self._tau_coeffs[idx], x),
        )

    def eval_many(self, s_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s_values = np.asarray(s_values, dtype=float)
        kappa = np.empty(len(s_values))
        tau = np.empty(len(s_values))
        for i, s in enumerate(s_values):
            kappa[i], tau[i] = self.eval_at(float(s))
        return kappa, tau

    def export_csv(self, fileobj, ds: float = 1.0) -> None:
        """Sampled (s_mm, kappa_per_mm, tau_per_mm) rows at spacing ds."""
        if ds <= 0:
            raise ValueError("ds must be positive")
        n = int(math.floor(self.s_last / ds + 1e-9))
        s_values = [i * ds for i in range(n + 1)]
        if s_values[-1] < self.s_last - 1e-9:
            s_values.append(self.s_last)
        else:
            s_values[-1] = self.s_last
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["s_mm", "kappa_per_mm", "tau_per_mm"])
        for s in s_values:
            kappa, tau = self.eval_at(s)
            writer.writerow([f"{s:.17g}", f"{kappa:.17g}", f"{tau:.17g}"])
