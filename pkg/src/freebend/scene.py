"""Routing environment: obstacles, ports, workspace and agent observations.

Obstacles are analytic primitives (sphere, box, capsule) inflated by the pipe
radius, so checking the pipe centerline against the inflated geometry is
equivalent to checking the full pipe body. The workspace is an axis-aligned
box acting as an impassable boundary.

Distance probes intersect rays analytically with the inflated scene: the
inflated sphere/capsule stay a sphere/capsule, and an inflated box is the
union of three axis-expanded boxes plus twelve edge capsules. A hit along a
ray is never closer than ``min_clearance`` at its origin.

The observation vector packs, in order:

    [0:3]    position, workspace-normalized to [-1, 1]
    [3:17]   14 ray-probe distances / workspace diagonal
    [17:19]  kappa, tau, normalized by their admissible limits
    [19:22]  tangent T
    [22:25]  normal N
    [25:28]  target tangent minus T          (entries in [-2, 2])
    [28:31]  target position minus position, normalized by workspace
             half-extents and clipped to [-2, 2]

Probe directions live in the local frame: +/-T, +/-N, +/-B plus the eight
normalized (+/-T +/- N +/- B) diagonals.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .frenet import PathState, Polyline
from .machine import KAPPA_EPS

__all__ = [
    "Box",
    "Capsule",
    "OBS_DIM",
    "Port",
    "Scene",
    "SceneError",
    "Sphere",
    "load_scene",
]

OBS_DIM = 31
N_PROBES = 14
SCHEMA_VERSION = 1


class SceneError(ValueError):
    """Malformed or inconsistent scene document."""


@dataclass
class Port:
    position: np.ndarray
    direction: np.ndarray  # normalized on construction

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        direction = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(direction)
        if norm <= 1e-3:
            raise SceneError(f"port direction norm {norm} too small to normalize")
        self.direction = direction / norm


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=float)
        if self.radius <= 0:
            raise SceneError(f"sphere radius must be positive, got {self.radius}")

    def to_document(self) -> dict:
        return {"kind": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if not np.all(self.lo < self.hi):
            raise SceneError("box min corner must be strictly below max corner")

    def to_document(self) -> dict:
        return {"kind": "box", "min": list(self.lo), "max": list(self.hi)}


@dataclass
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        if self.radius <= 0:
            raise SceneError(f"capsule radius must be positive, got {self.radius}")

    def to_document(self) -> dict:
        return {
            "kind": "capsule",
            "p0": list(self.p0),
            "p1": list(self.p1),
            "radius": self.radius,
        }


def _sphere_sdf(points: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    # points (n,3), centers (k,3) -> (n,k)
    diff = points[:, None, :] - centers[None, :, :]
    return np.linalg.norm(diff, axis=2) - radii[None, :]


def _box_sdf(points: np.ndarray, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    center = 0.5 * (los + his)
    half = 0.5 * (his - los)
    q = np.abs(points[:, None, :] - center[None, :, :]) - half[None, :, :]
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=2)
    inside = np.minimum(q.max(axis=2), 0.0)
    return outside + inside


def _capsule_sdf(points: np.ndarray, p0s: np.ndarray, p1s: np.ndarray, radii: np.ndarray) -> np.ndarray:
    seg = p1s - p0s  # (k,3)
    seg_len2 = np.maximum((seg * seg).sum(axis=1), 1e-30)
    rel = points[:, None, :] - p0s[None, :, :]
    t = np.clip((rel * seg[None, :, :]).sum(axis=2) / seg_len2[None, :], 0.0, 1.0)
    closest = p0s[None, :, :] + t[:, :, None] * seg[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2) - radii[None, :]


# --- analytic ray intersections (origins assumed outside the solids) --------

def _ray_spheres_t(origin, dirs, centers, radii) -> np.ndarray:
    """Entry distance (m, k) of m unit rays into k spheres; inf on miss."""
    oc = centers - origin  # (k,3)
    b = dirs @ oc.T  # (m,k)
    cc = (oc * oc).sum(axis=1) - radii**2  # (k,)
    disc = b * b - cc[None, :]
    with np.errstate(invalid="ignore"):
        t = b - np.sqrt(disc)
    t = np.where((disc >= 0.0) & (t >= 0.0), t, np.inf)
    return np.where(cc[None, :] < 0.0, 0.0, t)  # started inside


def _ray_capsules_t(origin, dirs, p0s, p1s, radii) -> np.ndarray:
    """Entry distance (m, k) into k capsules: cylinder side plus two cap spheres."""
    axis = p1s - p0s
    length = np.linalg.norm(axis, axis=1)
    length = np.maximum(length, 1e-30)
    a = axis / length[:, None]  # (k,3)
    w = origin[None, :] - p0s  # (k,3)
    d_a = dirs @ a.T  # (m,k)
    w_a = (w * a).sum(axis=1)  # (k,)
    quad_a = 1.0 - d_a * d_a
    quad_b = dirs @ w.T - d_a * w_a[None, :]
    quad_c = ((w * w).sum(axis=1) - w_a**2)[None, :] - (radii**2)[None, :]
    disc = quad_b * quad_b - quad_a * quad_c
    with np.errstate(invalid="ignore", divide="ignore"):
        t_side = (-quad_b - np.sqrt(disc)) / quad_a
    axial = w_a[None, :] + t_side * d_a
    side_ok = (quad_a > 1e-12) & (disc >= 0.0) & (t_side >= 0.0)
    side_ok &= (axial >= 0.0) & (axial <= length[None, :])
    t_side = np.where(side_ok, t_side, np.inf)
    t_cap0 = _ray_spheres_t(origin, dirs, p0s, radii)
    t_cap1 = _ray_spheres_t(origin, dirs, p1s, radii)
    return np.minimum(t_side, np.minimum(t_cap0, t_cap1))


def _ray_aabbs_t(origin, dirs, los, his) -> np.ndarray:
    """Entry distance (m, k) into k axis-aligned boxes; 0 if started inside."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (los[None, :, :] - origin) / dirs[:, None, :]
        t2 = (his[None, :, :] - origin) / dirs[:, None, :]
    # fmin/fmax drop the NaNs from 0/0 (ray grazing a face it lies on)
    near = np.fmin(t1, t2)
    far = np.fmax(t1, t2)
    # degenerate axis (d == 0): inside the slab -> no constraint, else miss
    degenerate = np.abs(dirs)[:, None, :] < 1e-30
    outside = (origin < los[None, :, :]) | (origin > his[None, :, :])
    near = np.where(degenerate, np.where(outside, np.inf, -np.inf), near)
    far = np.where(degenerate, np.where(outside, -np.inf, np.inf), far)
    t_near = near.max(axis=2)
    t_far = far.min(axis=2)
    hit = (t_near <= t_far) & (t_far >= 0.0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


def _ray_box_exit_t(origin, dirs, lo, hi) -> np.ndarray:
    """Distance (m,) to the box boundary from an inside origin."""
    with np.errstate(divide="ignore"):
        t_hi = (hi[None, :] - origin) / dirs
        t_lo = (lo[None, :] - origin) / dirs
    t = np.where(dirs > 0.0, t_hi, np.where(dirs < 0.0, t_lo, np.inf))
    return t.min(axis=1)


def _box_edge_capsules(lo: np.ndarray, hi: np.ndarray) -> tuple[list, list]:
    """The 12 edges of a box as capsule axes (p0, p1 lists)."""
    p0s, p1s = [], []
    for axis in range(3):
        o1, o2 = [i for i in range(3) if i != axis]
        for u in (lo[o1], hi[o1]):
            for v in (lo[o2], hi[o2]):
                p0 = np.empty(3)
                p0[axis], p0[o1], p0[o2] = lo[axis], u, v
                p1 = p0.copy()
                p1[axis] = hi[axis]
                p0s.append(p0)
                p1s.append(p1)
    return p0s, p1s


class Scene:
    """Immutable routing scene: all queries are read-only."""

    def __init__(
        self,
        workspace_lo,
        workspace_hi,
        pipe_diameter: float,
        start: Port,
        target: Port,
        obstacles: list | None = None,
        name: str = "",
    ):
        self.workspace_lo = np.asarray(workspace_lo, dtype=float)
        self.workspace_hi = np.asarray(workspace_hi, dtype=float)
        if not np.all(self.workspace_lo < self.workspace_hi):
            raise SceneError("workspace min must be strictly below max")
        if pipe_diameter <= 0:
            raise SceneError(f"pipe_diameter must be positive, got {pipe_diameter}")
        self.pipe_diameter = float(pipe_diameter)
        self.pipe_radius = 0.5 * self.pipe_diameter
        self.start = start
        self.target = target
        self.obstacles = list(obstacles or [])
        self.name = name

        for label, port in (("start", start), ("target", target)):
            if not self.contains(port.position):
                raise SceneError(f"{label} port lies outside the workspace")

        self._spheres = [o for o in self.obstacles if isinstance(o, Sphere)]
        self._boxes = [o for o in self.obstacles if isinstance(o, Box)]
        self._capsules = [o for o in self.obstacles if isinstance(o, Capsule)]
        self._sphere_c = np.array([o.center for o in self._spheres]).reshape(-1, 3)
        self._sphere_r = np.array([o.radius for o in self._spheres])
        self._box_lo = np.array([o.lo for o in self._boxes]).reshape(-1, 3)
        self._box_hi = np.array([o.hi for o in self._boxes]).reshape(-1, 3)
        self._cap_p0 = np.array([o.p0 for o in self._capsules]).reshape(-1, 3)
        self._cap_p1 = np.array([o.p1 for o in self._capsules]).reshape(-1, 3)
        self._cap_r = np.array([o.radius for o in self._capsules])

        # Inflated geometry for the probe rays. An inflated box decomposes
        # into three single-axis expansions plus its twelve edge capsules.
        rp = self.pipe_radius
        cap_p0 = [o.p0 for o in self._capsules]
        cap_p1 = [o.p1 for o in self._capsules]
        cap_r = [o.radius + rp for o in self._capsules]
        exp_lo, exp_hi = [], []
        for box in self._boxes:
            for axis in range(3):
                pad = np.zeros(3)
                pad[axis] = rp
                exp_lo.append(box.lo - pad)
                exp_hi.append(box.hi + pad)
            edge_p0, edge_p1 = _box_edge_capsules(box.lo, box.hi)
            cap_p0.extend(edge_p0)
            cap_p1.extend(edge_p1)
            cap_r.extend([rp] * len(edge_p0))
        self._probe_sphere_c = self._sphere_c
        self._probe_sphere_r = self._sphere_r + rp
        self._probe_cap_p0 = np.array(cap_p0).reshape(-1, 3)
        self._probe_cap_p1 = np.array(cap_p1).reshape(-1, 3)
        self._probe_cap_r = np.array(cap_r)
        self._probe_box_lo = np.array(exp_lo).reshape(-1, 3)
        self._probe_box_hi = np.array(exp_hi).reshape(-1, 3)

    # -- geometry queries ---------------------------------------------------

    def contains(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(
            np.all(point >= self.workspace_lo) and np.all(point <= self.workspace_hi)
        )

    def workspace_diagonal(self) -> float:
        return float(np.linalg.norm(self.workspace_hi - self.workspace_lo))

    def _workspace_inner_many(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the workspace boundary (positive inside)."""
        lo = (points - self.workspace_lo[None, :]).min(axis=1)
        hi = (self.workspace_hi[None, :] - points).min(axis=1)
        return np.minimum(lo, hi)

    def _obstacle_sdf_many(self, points: np.ndarray) -> np.ndarray:
        """Min signed distance over raw (uninflated) obstacles; +inf if none."""
        best = np.full(len(points), np.inf)
        if len(self._sphere_r):
            best = np.minimum(best, _sphere_sdf(points, self._sphere_c, self._sphere_r).min(axis=1))
        if len(self._box_lo):
            best = np.minimum(best, _box_sdf(points, self._box_lo, self._box_hi).min(axis=1))
        if len(self._cap_r):
            best = np.minimum(best, _capsule_sdf(points, self._cap_p0, self._cap_p1, self._cap_r).min(axis=1))
        return best

    def clearance_many(self, points: np.ndarray) -> np.ndarray:
        """Signed clearance of centerline points (inflated by pipe radius)."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        obstacle = self._obstacle_sdf_many(points) - self.pipe_radius
        boundary = self._workspace_inner_many(points) - self.pipe_radius
        return np.minimum(obstacle, boundary)

    def min_clearance(self, point) -> float:
        """Signed clearance at one point; negative means the pipe collides."""
        return float(self.clearance_many(np.asarray(point, dtype=float)[None, :])[0])

    def _probe_field(self, points: np.ndarray) -> np.ndarray:
        # Probes hit inflated obstacles but the raw workspace wall.
        obstacle = self._obstacle_sdf_many(points) - self.pipe_radius
        return np.minimum(obstacle, self._workspace_inner_many(points))

    def ray_probe_many(self, point, directions: np.ndarray, max_range: float) -> np.ndarray:
        """Exact first-hit distances of unit rays from one point.

        Rays stop at inflated obstacles or the workspace wall, clamped to
        max_range; an origin already inside an impassable region reports 0.
        """
        point = np.asarray(point, dtype=float)
        dirs = np.asarray(directions, dtype=float)
        m = len(dirs)
        if self._probe_field(point[None, :])[0] < 0.0:
            return np.zeros(m)
        t = _ray_box_exit_t(point, dirs, self.workspace_lo, self.workspace_hi)
        if len(self._probe_sphere_r):
            t = np.minimum(
                t, _ray_spheres_t(point, dirs, self._probe_sphere_c, self._probe_sphere_r).min(axis=1)
            )
        if len(self._probe_cap_r):
            t = np.minimum(
                t,
                _ray_capsules_t(
                    point, dirs, self._probe_cap_p0, self._probe_cap_p1, self._probe_cap_r
                ).min(axis=1),
            )
        if len(self._probe_box_lo):
            t = np.minimum(
                t, _ray_aabbs_t(point, dirs, self._probe_box_lo, self._probe_box_hi).min(axis=1)
            )
        return np.clip(t, 0.0, max_range)

    def ray_probe(self, point, direction, max_range: float) -> float:
        direction = np.asarray(direction, dtype=float)
        return float(self.ray_probe_many(point, direction[None, :], max_range)[0])

    # -- routing-facing queries ---------------------------------------------

    def segment_indicators(
        self, polyline: Polyline, r_min: float, n_samples: int = 20
    ) -> tuple[float, float]:
        """Fractions of sampled segment points in collision / unmanufacturable.

        Samples n equally spaced arc positions over the polyline span,
        interpolating position and (kappa, tau) from the polyline.
        """
        if n_samples < 2:
            raise ValueError("need at least 2 samples")
        s_query = np.linspace(polyline.s[0], polyline.s[-1], n_samples)
        points = polyline.positions_at(s_query)
        kappa, tau = polyline.geometry_at(s_query)
        obs_frac = float(np.mean(self.clearance_many(points) < 0.0))
        r0 = kappa / np.maximum(kappa * kappa + tau * tau, 1e-30)
        manuf_ok = (kappa < KAPPA_EPS) | (r0 >= r_min * (1.0 - 1e-9))
        return obs_frac, float(np.mean(~manuf_ok))

    def probe_directions(self, state: PathState) -> np.ndarray:
        t, n, b = state.frame.T, state.frame.N, state.frame.B
        axes = [t, -t, n, -n, b, -b]
        inv_sqrt3 = 1.0 / math.sqrt(3.0)
        for st in (1.0, -1.0):
            for sn in (1.0, -1.0):
                for sb in (1.0, -1.0):
                    axes.append((st * t + sn * n + sb * b) * inv_sqrt3)
        return np.array(axes)

    def observation(
        self, state: PathState, kappa_max: float = 0.01, tau_max: float = 0.005
    ) -> np.ndarray:
        """31-entry observation for the routing agent (layout in module doc)."""
        lo, hi = self.workspace_lo, self.workspace_hi
        half = 0.5 * (hi - lo)
        center = lo + half
        diag = self.workspace_diagonal()

        obs = np.empty(OBS_DIM)
        obs[0:3] = np.clip((state.r - center) / half, -1.0, 1.0)
        dirs = self.probe_directions(state)
        obs[3:17] = self.ray_probe_many(state.r, dirs, diag) / diag
        obs[17] = np.clip(state.kappa / kappa_max, -1.0, 1.0)
        obs[18] = np.clip(state.tau / tau_max, -1.0, 1.0)
        obs[19:22] = state.frame.T
        obs[22:25] = state.frame.N
        obs[25:28] = self.target.direction - state.frame.T
        obs[28:31] = np.clip((self.target.position - state.r) / half, -2.0, 2.0)
        return obs

    # -- serialization --------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "workspace": {"min": list(self.workspace_lo), "max": list(self.workspace_hi)},
            "pipe_diameter": self.pipe_diameter,
            "start": {"position": list(self.start.position), "direction": list(self.start.direction)},
            "target": {"position": list(self.target.position), "direction": list(self.target.direction)},
            "obstacles": [o.to_document() for o in self.obstacles],
        }


def _parse_port(doc: dict, label: str) -> Port:
    try:
        return Port(np.asarray(doc["position"], dtype=float), np.asarray(doc["direction"], dtype=float))
    except KeyError as exc:
        raise SceneError(f"{label} port missing field {exc}") from exc


def _parse_obstacle(doc: dict):
    kind = doc.get("kind")
    if kind == "sphere":
        return Sphere(doc["center"], float(doc["radius"]))
    if kind == "box":
        return Box(doc["min"], doc["max"])
    if kind == "capsule":
        return Capsule(doc["p0"], doc["p1"], float(doc["radius"]))
    raise SceneError(f"unknown obstacle kind {kind!r}")


def scene_from_document(doc: dict, pair: str | int | None = None) -> Scene:
    """Build a Scene from a parsed document.

    Documents either carry `start`/`target` directly or a `port_pairs` list of
    named pairs selected by `pair` (name or index; defaults to the first).
    """
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SceneError(f"unsupported schema_version {version!r}")
    try:
        workspace = doc["workspace"]
        lo = np.asarray(workspace["min"], dtype=float)
        hi = np.asarray(workspace["max"], dtype=float)
        pipe_diameter = float(doc["pipe_diameter"])
    except KeyError as exc:
        raise SceneError(f"scene document missing field {exc}") from exc

    if "port_pairs" in doc:
        pairs = doc["port_pairs"]
        if not pairs:
            raise SceneError("port_pairs is empty")
        if pair is None:
            chosen = pairs[0]
        elif isinstance(pair, int):
            chosen = pairs[pair]
        else:
            matches = [p for p in pairs if p.get("name") == pair]
            if not matches:
                raise SceneError(f"no port pair named {pair!r}")
            chosen = matches[0]
        start = _parse_port(chosen["start"], "start")
        target = _parse_port(chosen["target"], "target")
    else:
        start = _parse_port(doc["start"], "start")
        target = _parse_port(doc["target"], "target")

    obstacles = [_parse_obstacle(o) for o in doc.get("obstacles", [])]
    return Scene(lo, hi, pipe_diameter, start, target, obstacles, name=doc.get("name", ""))


def load_scene(source, pair: str | int | None = None) -> Scene:
    """Load a scene from a document dict or a JSON file path."""
    if isinstance(source, dict):
        return scene_from_document(source, pair)
    path = FsPath(source)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"cannot parse scene file {path}: {exc}") from exc
    return scene_from_document(doc, pair)
