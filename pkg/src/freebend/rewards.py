"""Stage-guided episode machine and reward decomposition.

An episode walks four progressive stages: STARTUP (the first action also
rolls the initial frame), NAVIGATION (approach the target), ALIGNMENT
(within eps_align mm of the target) and SHOOTING (alignment loss below
eps_shoot); the route completes (DONE) once the alignment loss drops below
eps_final, after which a straight extension closes the terminal boundary
conditions. Episodes that exhaust their step budget fail.

Per-step reward = objective reward + stage bonus:

  objective: w1 * (distance gained) + w2 * (tangent angle gained)
           + w3 * (-segment length)  + w4 * (-collision fraction)
           + w5 * (-unmanufacturable fraction)
  stage:     one-time bonus on first entry to ALIGNMENT and to SHOOTING,
             plus w_align (or w_shoot) times the alignment-loss reduction.

With `len_normalized` the length penalty is -delta_s / s_max, keeping every
component O(1); the raw -delta_s form stays available behind the flag.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .frenet import PathState, Polyline, frame_from_tangent, integrate_segment, rotate_frame_about_tangent
from .profile import GeoProfile, admissible_bounds
from .scene import Port, Scene

__all__ = [
    "EpisodeState",
    "RewardWeights",
    "RoutingEpisode",
    "Stage",
    "alignment_loss",
    "finalize_path",
    "objective_reward",
    "objective_terms",
    "stage_bonus",
    "stage_transition",
    "write_trace_csv",
]


class Stage(enum.IntEnum):
    STARTUP = 0
    NAVIGATION = 1
    ALIGNMENT = 2
    SHOOTING = 3
    DONE = 4
    FAILED = 5


@dataclass
class RewardWeights:
    """Reward weights and stage thresholds.

    The defaults are the tuned working set; the manufacturability term w5
    defaults to 1. eps_align is a distance in mm; eps_shoot/eps_final are
    dimensionless alignment-loss levels.
    """

    w1: float = 0.0875  # distance progress
    w2: float = 0.005  # tangent angle progress
    w3: float = 2.5  # length penalty
    w4: float = 1.0  # obstacle fraction penalty
    w5: float = 1.0  # manufacturability fraction penalty
    r_bonus: float = 10.0
    w_align: float = 20.0
    w_shoot: float = 50.0
    eps_align: float = 200.0  # mm
    eps_shoot: float = 0.1
    eps_final: float = 0.05
    len_normalized: bool = True

    def __post_init__(self) -> None:
        if not self.eps_final < self.eps_shoot:
            raise ValueError("eps_final must be below eps_shoot")


@dataclass
class EpisodeState:
    """Mutable per-episode context owned by exactly one rollout worker."""

    path: PathState
    stage: Stage = Stage.STARTUP
    step: int = 0
    polyline: Polyline | None = None
    alignment_bonus_granted: bool = False
    shooting_bonus_granted: bool = False
    prev_l_align: float = math.inf


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom < 1e-30:
        return 0.0
    return math.acos(min(1.0, max(-1.0, float(a @ b) / denom)))


def alignment_loss(state: PathState, target: Port, s_max: float) -> tuple[float, float, float]:
    """(l_align, l_angle, l_dist): mean of normalized angular deviation and
    normalized perpendicular distance from the endpoint to the target line."""
    l_angle = _angle_between(state.frame.T, target.direction) / math.pi
    offset = state.r - target.position
    l_dist = float(np.linalg.norm(np.cross(offset, target.direction))) / (
        s_max * float(np.linalg.norm(target.direction))
    )
    return 0.5 * (l_angle + l_dist), l_angle, l_dist


def objective_terms(
    prev: PathState,
    nxt: PathState,
    indicators: tuple[float, float],
    target: Port,
    weights: RewardWeights,
    s_max: float,
) -> dict[str, float]:
    """Unweighted objective components for one step."""
    obs_frac, manuf_frac = indicators
    delta_s = nxt.s - prev.s
    r_len = -delta_s / s_max if weights.len_normalized else -delta_s
    return {
        "r_dist": float(np.linalg.norm(prev.r - target.position))
        - float(np.linalg.norm(nxt.r - target.position)),
        "r_angle": _angle_between(prev.frame.T, target.direction)
        - _angle_between(nxt.frame.T, target.direction),
        "r_len": r_len,
        "r_obs": -obs_frac,
        "r_manuf": -manuf_frac,
    }


def objective_reward(
    prev: PathState,
    nxt: PathState,
    indicators: tuple[float, float],
    target: Port,
    weights: RewardWeights,
    s_max: float,
) -> float:
    if nxt.s <= prev.s:
        raise ValueError("next state must be farther along the path")
    t = objective_terms(prev, nxt, indicators, target, weights, s_max)
    return (
        weights.w1 * t["r_dist"]
        + weights.w2 * t["r_angle"]
        + weights.w3 * t["r_len"]
        + weights.w4 * t["r_obs"]
        + weights.w5 * t["r_manuf"]
    )


def stage_transition(
    ep: EpisodeState,
    target: Port,
    weights: RewardWeights,
    s_max: float = 20.0,
    max_steps: int = 64,
) -> Stage:
    """Stage after the step just taken (ep.path/ep.step already updated).

    Gates cascade within one call: a step can carry the agent through
    several entries at once. The budget check runs last so a route finished
    exactly on the final step still counts as DONE.
    """
    stage = ep.stage
    if stage in (Stage.DONE, Stage.FAILED):
        return stage
    distance = float(np.linalg.norm(ep.path.r - target.position))
    l_align, _, _ = alignment_loss(ep.path, target, s_max)
    if stage == Stage.STARTUP:
        stage = Stage.NAVIGATION
    if stage == Stage.NAVIGATION and distance < weights.eps_align:
        stage = Stage.ALIGNMENT
    if stage == Stage.ALIGNMENT and l_align < weights.eps_shoot:
        stage = Stage.SHOOTING
    if stage == Stage.SHOOTING and l_align < weights.eps_final:
        stage = Stage.DONE
    if stage != Stage.DONE and ep.step >= max_steps:
        stage = Stage.FAILED
    return stage


def stage_bonus(
    ep: EpisodeState, l_prev: float, l_next: float, weights: RewardWeights
) -> float:
    """Stage reward for a step ending in ep.stage; grants entry bonuses once."""
    if ep.stage not in (Stage.ALIGNMENT, Stage.SHOOTING, Stage.DONE):
        return 0.0
    reward = 0.0
    if not ep.alignment_bonus_granted:
        ep.alignment_bonus_granted = True
        reward += weights.r_bonus
    if ep.stage >= Stage.SHOOTING and not ep.shooting_bonus_granted:
        ep.shooting_bonus_granted = True
        reward += weights.r_bonus
    weight = weights.w_align if ep.stage == Stage.ALIGNMENT else weights.w_shoot
    return reward + weight * (l_prev - l_next)


def finalize_path(ep: EpisodeState, target: Port, sample_ds: float = 1.0) -> Polyline:
    """Close the boundary conditions of a DONE episode.

    Extends straight along the target tangent to the closest approach of the
    target position, then snaps the terminus onto it; the snap displacement
    is the endpoint's perpendicular offset, bounded by eps_final via the
    alignment loss.
    """
    if ep.stage != Stage.DONE:
        raise ValueError(f"finalize_path requires stage DONE, got {ep.stage.name}")
    poly = ep.polyline
    end = poly.end_state()
    along = float((target.position - end.r) @ target.direction)
    if along < 0.0:
        # endpoint coasted past the port: drop trailing straight samples that
        # overshoot the closest approach, then extend/snap from there
        keep = len(poly)
        while keep > 1:
            candidate = poly.state_at(keep - 1)
            if (
                candidate.kappa < 1e-12
                and float((target.position - candidate.r) @ target.direction) < 0.0
            ):
                keep -= 1
            else:
                break
        if keep < len(poly):
            poly = Polyline(
                poly.s[:keep], poly.r[:keep], poly.T[:keep], poly.N[:keep],
                poly.B[:keep], poly.kappa[:keep], poly.tau[:keep],
            )
            end = poly.end_state()
            along = float((target.position - end.r) @ target.direction)
    along = max(along, 0.0)

    frame = frame_from_tangent(target.direction)
    # keep the normal continuous with the endpoint frame where possible
    n = end.frame.N - (end.frame.N @ frame.T) * frame.T
    norm = np.linalg.norm(n)
    if norm > 1e-9:
        frame.N = n / norm
        frame.B = np.cross(frame.T, n / norm)

    foot = end.r + along * target.direction
    snap = float(np.linalg.norm(foot - target.position))
    if along < 1e-12 and snap < 1e-12:
        return poly  # already at the port

    n_steps = max(1, math.ceil(along / sample_ds - 1e-12)) if along > 1e-12 else 1
    step = along / n_steps if along > 1e-12 else 0.0
    s_values, points = [], []
    for i in range(1, n_steps + 1):
        s_values.append(end.s + i * step)
        points.append(end.r + (i * step) * target.direction)
    # snap the terminus onto the port position, advancing s by the jump
    points[-1] = target.position.copy()
    s_values[-1] = end.s + along + snap

    m = len(points)
    ones = np.ones(m)
    extension = Polyline(
        np.array(s_values),
        np.array(points),
        np.outer(ones, frame.T),
        np.outer(ones, frame.N),
        np.outer(ones, frame.B),
        np.zeros(m),
        np.zeros(m),
    )
    return Polyline.concat([poly, extension])


TRACE_FIELDS = [
    "step", "stage", "delta_s", "kappa", "tau", "theta",
    "r_dist", "r_angle", "r_len", "r_obs", "r_manuf",
    "r_objective", "r_stage", "reward", "l_align",
]


def write_trace_csv(fileobj, trace: list[dict]) -> None:
    """Per-step episode trace (stage, action, reward components, l_align)."""
    fileobj.write(",".join(TRACE_FIELDS) + "\n")
    for row in trace:
        values = []
        for key in TRACE_FIELDS:
            value = row[key]
            if key == "stage":
                values.append(value.name)
            elif key == "step":
                values.append(str(value))
            else:
                values.append(f"{value:.17g}")
        fileobj.write(",".join(values) + "\n")


class RoutingEpisode:
    """Runs one routing episode: profile growth, integration, staged rewards.

    Owned by a single worker; all mutation happens through reset/step. Every
    step appends its record to ``trace`` for training-log export.
    """

    def __init__(
        self,
        scene: Scene,
        weights: RewardWeights | None = None,
        r_min: float = 100.0,
        s_max: float = 20.0,
        sample_ds: float = 1.0,
        max_steps: int = 64,
        indicator_samples: int = 20,
        min_delta_s: float = 1.0,
    ):
        self.scene = scene
        self.weights = weights or RewardWeights()
        self.r_min = r_min
        self.s_max = s_max
        self.sample_ds = sample_ds
        self.max_steps = max_steps
        self.indicator_samples = indicator_samples
        self.min_delta_s = min_delta_s
        self.bounds = admissible_bounds(r_min)
        self.profile: GeoProfile | None = None
        self.state: EpisodeState | None = None
        self.trace: list[dict] = []
        self._segments: list[Polyline] = []

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.stage in (Stage.DONE, Stage.FAILED)

    def reset(self) -> np.ndarray:
        start = self.scene.start
        path = PathState(start.position.copy(), frame_from_tangent(start.direction))
        self.profile = GeoProfile(s_max=self.s_max, bounds=self.bounds)
        self.state = EpisodeState(path=path)
        self.state.prev_l_align = alignment_loss(path, self.scene.target, self.s_max)[0]
        self.trace = []
        self._segments = []
        return self.scene.observation(path, self.bounds.kappa_relaxed_hi, self.bounds.tau_hi)

    def _clamp_action(self, delta_s, kappa, tau):
        delta_s = min(max(delta_s, self.min_delta_s), self.s_max)
        kappa = min(max(kappa, self.bounds.kappa_relaxed_lo), self.bounds.kappa_relaxed_hi)
        tau = min(max(tau, self.bounds.tau_lo), self.bounds.tau_hi)
        return delta_s, kappa, tau

    def step(self, delta_s: float, kappa: float, tau: float, theta: float = 0.0):
        """Apply one action; returns (obs, reward, done, info)."""
        if self.state is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        st = self.state
        weights = self.weights
        target = self.scene.target
        delta_s, kappa, tau = self._clamp_action(delta_s, kappa, tau)

        prev = st.path
        if st.step == 0 and theta != 0.0:
            prev = PathState(
                prev.r, rotate_frame_about_tangent(prev.frame, theta),
                prev.s, prev.kappa, prev.tau,
            )
        l_prev = st.prev_l_align if st.step > 0 else alignment_loss(prev, target, self.s_max)[0]

        self.profile.append_knot(delta_s, kappa, tau)
        segment, nxt = integrate_segment(prev, self.profile, self.profile.s_last, self.sample_ds)
        self._segments.append(segment)

        indicators = self.scene.segment_indicators(segment, self.r_min, self.indicator_samples)
        terms = objective_terms(prev, nxt, indicators, target, weights, self.s_max)
        r_objective = (
            weights.w1 * terms["r_dist"]
            + weights.w2 * terms["r_angle"]
            + weights.w3 * terms["r_len"]
            + weights.w4 * terms["r_obs"]
            + weights.w5 * terms["r_manuf"]
        )

        st.path = nxt
        st.step += 1
        st.stage = stage_transition(st, target, weights, self.s_max, self.max_steps)
        l_next, l_angle, l_dist = alignment_loss(nxt, target, self.s_max)
        r_stage = stage_bonus(st, l_prev, l_next, weights)
        st.prev_l_align = l_next
        st.polyline = None  # rebuilt lazily

        reward = r_objective + r_stage
        done = st.stage in (Stage.DONE, Stage.FAILED)
        info = {
            "stage": st.stage,
            "step": st.step,
            "l_align": l_next,
            "l_angle": l_angle,
            "l_dist": l_dist,
            "r_objective": r_objective,
            "r_stage": r_stage,
            "obs_frac": indicators[0],
            "manuf_frac": indicators[1],
            **terms,
        }
        self.trace.append({
            "step": st.step, "stage": st.stage,
            "delta_s": delta_s, "kappa": kappa, "tau": tau,
            "theta": theta if st.step == 1 else 0.0,
            **{k: terms[k] for k in ("r_dist", "r_angle", "r_len", "r_obs", "r_manuf")},
            "r_objective": r_objective, "r_stage": r_stage,
            "reward": reward, "l_align": l_next,
        })
        obs = self.scene.observation(nxt, self.bounds.kappa_relaxed_hi, self.bounds.tau_hi)
        return obs, reward, done, info

    def polyline(self) -> Polyline:
        """Path integrated so far (without the DONE closing extension)."""
        if not self._segments:
            raise RuntimeError("no steps taken yet")
        if self.state.polyline is None:
            self.state.polyline = Polyline.concat(self._segments)
        return self.state.polyline

    def finalize(self) -> Polyline:
        """Polyline with the straight closing extension (DONE episodes only)."""
        self.polyline()
        return finalize_path(self.state, self.scene.target, self.sample_ds)
