import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freebend.frenet import Frame, PathState, Polyline, frame_from_tangent
from freebend.scene import (
    OBS_DIM,
    Port,
    Scene,
    SceneError,
    load_scene,
    scene_from_document,
)


def empty_doc(**overrides):
    doc = {
        "schema_version": 1,
        "workspace": {"min": [-200, -200, -200], "max": [200, 200, 200]},
        "pipe_diameter": 25.0,
        "start": {"position": [0, 0, 0], "direction": [1, 0, 0]},
        "target": {"position": [150, 0, 0], "direction": [1, 0, 0]},
        "obstacles": [],
    }
    doc.update(overrides)
    return doc


def make_scene(**overrides) -> Scene:
    return scene_from_document(empty_doc(**overrides))


def state_at(position, tangent=(1, 0, 0), kappa=0.0, tau=0.0) -> PathState:
    frame = frame_from_tangent(tangent)
    return PathState(np.asarray(position, dtype=float), frame, 0.0, kappa, tau)


def straight_polyline(start, direction, length, ds=1.0, kappa=0.0, tau=0.0) -> Polyline:
    start = np.asarray(start, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    n = int(length / ds) + 1
    s = np.arange(n) * ds
    r = start[None, :] + s[:, None] * direction[None, :]
    frame = frame_from_tangent(direction)
    ones = np.ones(n)
    return Polyline(
        s, r, np.outer(ones, frame.T), np.outer(ones, frame.N), np.outer(ones, frame.B),
        np.full(n, kappa), np.full(n, tau),
    )


class TestLoadScene:
    def test_minimal_document(self):
        scene = make_scene()
        assert scene.pipe_radius == 12.5
        assert not scene.obstacles

    def test_negative_sphere_radius(self):
        with pytest.raises(SceneError):
            make_scene(obstacles=[{"kind": "sphere", "center": [0, 0, 0], "radius": -1}])

    def test_direction_normalized(self):
        scene = make_scene(start={"position": [0, 0, 0], "direction": [2, 0, 0]})
        assert np.allclose(scene.start.direction, [1.0, 0.0, 0.0])

    def test_zero_direction_rejected(self):
        with pytest.raises(SceneError):
            make_scene(start={"position": [0, 0, 0], "direction": [0, 0, 0]})

    def test_port_outside_workspace(self):
        with pytest.raises(SceneError):
            make_scene(target={"position": [500, 0, 0], "direction": [1, 0, 0]})

    def test_unknown_schema_version(self):
        with pytest.raises(SceneError):
            make_scene(schema_version=99)

    def test_unknown_obstacle_kind(self):
        with pytest.raises(SceneError):
            make_scene(obstacles=[{"kind": "torus", "center": [0, 0, 0], "radius": 1}])

    def test_box_needs_ordered_corners(self):
        with pytest.raises(SceneError):
            make_scene(obstacles=[{"kind": "box", "min": [10, 0, 0], "max": [0, 5, 5]}])

    def test_port_pairs_selection(self):
        doc = empty_doc()
        del doc["start"], doc["target"]
        doc["port_pairs"] = [
            {
                "name": "alpha",
                "start": {"position": [0, 0, 0], "direction": [1, 0, 0]},
                "target": {"position": [100, 0, 0], "direction": [1, 0, 0]},
            },
            {
                "name": "beta",
                "start": {"position": [0, 50, 0], "direction": [0, 1, 0]},
                "target": {"position": [0, 150, 0], "direction": [0, 1, 0]},
            },
        ]
        default = scene_from_document(doc)
        assert np.allclose(default.target.position, [100, 0, 0])
        named = scene_from_document(doc, pair="beta")
        assert np.allclose(named.start.position, [0, 50, 0])
        indexed = scene_from_document(doc, pair=1)
        assert np.allclose(indexed.start.position, [0, 50, 0])
        with pytest.raises(SceneError):
            scene_from_document(doc, pair="gamma")

    def test_file_roundtrip(self, tmp_path):
        import json

        scene = make_scene(
            obstacles=[
                {"kind": "sphere", "center": [50, 50, 0], "radius": 20},
                {"kind": "box", "min": [-100, -100, -100], "max": [-60, -60, -60]},
                {"kind": "capsule", "p0": [0, -150, 0], "p1": [0, -150, 80], "radius": 10},
            ]
        )
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(scene.to_document()))
        loaded = load_scene(path)
        assert loaded.to_document() == scene.to_document()


class TestMinClearance:
    def test_empty_scene_workspace_distance(self):
        scene = make_scene()
        # nearest face is 120 mm away; minus pipe radius
        assert scene.min_clearance([80, 0, 0]) == pytest.approx(120.0 - 12.5)

    def test_sphere_clearance(self):
        scene = make_scene(
            obstacles=[{"kind": "sphere", "center": [0, 0, 0], "radius": 50}]
        )
        assert scene.min_clearance([100, 0, 0]) == pytest.approx(100 - 50 - 12.5)

    def test_inside_sphere_negative(self):
        scene = make_scene(obstacles=[{"kind": "sphere", "center": [0, 0, 0], "radius": 50}])
        assert scene.min_clearance([10, 0, 0]) < 0

    def test_outside_workspace_negative(self):
        scene = make_scene()
        assert scene.min_clearance([250, 0, 0]) < 0

    def test_box_and_capsule_distances(self):
        scene = make_scene(
            obstacles=[
                {"kind": "box", "min": [100, -50, -50], "max": [150, 50, 50]},
                {"kind": "capsule", "p0": [-100, 0, -50], "p1": [-100, 0, 50], "radius": 10},
            ]
        )
        assert scene.min_clearance([80, 0, 0]) == pytest.approx(20 - 12.5)
        assert scene.min_clearance([-80, 0, 0]) == pytest.approx(10 - 12.5)

    @given(
        px=st.floats(-250, 250), py=st.floats(-250, 250), pz=st.floats(-250, 250),
        qx=st.floats(-250, 250), qy=st.floats(-250, 250), qz=st.floats(-250, 250),
    )
    @settings(max_examples=150, deadline=None)
    def test_lipschitz(self, px, py, pz, qx, qy, qz):
        scene = make_scene(
            obstacles=[
                {"kind": "sphere", "center": [60, 0, 0], "radius": 30},
                {"kind": "box", "min": [-150, 50, -80], "max": [-50, 150, 20]},
                {"kind": "capsule", "p0": [0, -120, -60], "p1": [40, -120, 60], "radius": 15},
            ]
        )
        p = np.array([px, py, pz])
        q = np.array([qx, qy, qz])
        gap = abs(scene.min_clearance(p) - scene.min_clearance(q))
        assert gap <= np.linalg.norm(p - q) + 1e-9


class TestRayProbe:
    def test_workspace_face(self):
        scene = make_scene()
        # from (120, 0, 0) toward +x the wall is 80 mm away
        assert scene.ray_probe([120, 0, 0], [1, 0, 0], 200.0) == pytest.approx(80.0, abs=1e-6)

    def test_no_hit_within_range(self):
        scene = make_scene()
        assert scene.ray_probe([0, 0, 0], [1, 0, 0], 50.0) == pytest.approx(50.0)

    def test_inflated_sphere_hit(self):
        scene = make_scene(
            obstacles=[{"kind": "sphere", "center": [0, 0, 100], "radius": 50}]
        )
        got = scene.ray_probe([0, 0, 0], [0, 0, 1], 400.0)
        assert got == pytest.approx(100 - 62.5, abs=1e-6)

    def test_probe_never_beats_clearance(self):
        scene = make_scene(
            obstacles=[
                {"kind": "sphere", "center": [60, 10, -20], "radius": 30},
                {"kind": "box", "min": [-150, 50, -80], "max": [-50, 150, 20]},
                {"kind": "capsule", "p0": [0, -120, -60], "p1": [40, -120, 60], "radius": 15},
            ]
        )
        rng = np.random.default_rng(123)
        for _ in range(200):
            p = rng.uniform(-180, 180, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            clearance = scene.min_clearance(p)
            probe = scene.ray_probe(p, d, 600.0)
            assert probe >= min(clearance, 600.0) - 1e-9


class TestSegmentIndicators:
    def test_fully_inside_obstacle(self):
        scene = make_scene(
            obstacles=[{"kind": "sphere", "center": [0, 0, 0], "radius": 80}]
        )
        poly = straight_polyline([-20, 0, 0], [1, 0, 0], 40.0)
        obs_frac, _ = scene.segment_indicators(poly, r_min=100.0)
        assert obs_frac == 1.0

    def test_boundary_curvature_manufacturable(self):
        scene = make_scene()
        poly = straight_polyline([0, 0, 0], [1, 0, 0], 20.0, kappa=0.01, tau=0.0)
        _, manuf_frac = scene.segment_indicators(poly, r_min=100.0)
        assert manuf_frac == 0.0

    def test_relaxed_corner_fully_violating(self):
        scene = make_scene()
        poly = straight_polyline([0, 0, 0], [1, 0, 0], 20.0, kappa=0.01, tau=0.005)
        _, manuf_frac = scene.segment_indicators(poly, r_min=100.0)
        assert manuf_frac == 1.0

    def test_partial_collision_fraction(self):
        scene = make_scene(
            obstacles=[{"kind": "box", "min": [50, -50, -50], "max": [200, 50, 50]}]
        )
        # 20 samples over [0, 95]: clearance < 0 once x > 37.5
        poly = straight_polyline([0, 0, 0], [1, 0, 0], 95.0)
        obs_frac, _ = scene.segment_indicators(poly, r_min=100.0, n_samples=20)
        s_samples = np.linspace(0, 95, 20)
        expected = np.mean(s_samples > 37.5)
        assert obs_frac == pytest.approx(expected)

    def test_needs_two_samples(self):
        scene = make_scene()
        poly = straight_polyline([0, 0, 0], [1, 0, 0], 10.0)
        with pytest.raises(ValueError):
            scene.segment_indicators(poly, r_min=100.0, n_samples=1)


class TestObservation:
    def test_layout_and_initial_zeros(self):
        scene = make_scene()
        obs = scene.observation(state_at([0, 0, 0]))
        assert obs.shape == (OBS_DIM,)
        assert obs[17] == 0.0 and obs[18] == 0.0  # kappa, tau start at zero
        assert np.all(np.isfinite(obs))

    def test_at_target_with_matching_tangent(self):
        scene = make_scene()
        obs = scene.observation(state_at([150, 0, 0], tangent=(1, 0, 0)))
        assert np.allclose(obs[25:28], 0.0)
        assert np.allclose(obs[28:31], 0.0)

    def test_probe_symmetry_at_center(self):
        scene = make_scene()
        obs = scene.observation(state_at([0, 0, 0]))
        probes = obs[3:17]
        axis_probes = probes[:6]
        diagonal_probes = probes[6:]
        assert np.ptp(axis_probes) < 1e-9
        assert np.ptp(diagonal_probes) < 1e-9
        # diagonals exit through the cube corner direction, sqrt(3) farther
        assert diagonal_probes[0] == pytest.approx(axis_probes[0] * math.sqrt(3), abs=1e-6)

    def test_normalization_ranges(self):
        scene = make_scene(
            obstacles=[{"kind": "sphere", "center": [80, 40, 0], "radius": 30}]
        )
        rng = np.random.default_rng(7)
        for _ in range(50):
            pos = rng.uniform(-195, 195, 3)
            tangent = rng.normal(size=3)
            state = state_at(pos, tangent=tangent,
                             kappa=rng.uniform(0, 0.01), tau=rng.uniform(-0.005, 0.005))
            obs = scene.observation(state)
            assert np.all(np.isfinite(obs))
            assert np.all(obs[0:3] >= -1) and np.all(obs[0:3] <= 1)
            assert np.all(obs[3:17] >= 0) and np.all(obs[3:17] <= 1)
            assert -1 <= obs[17] <= 1 and -1 <= obs[18] <= 1
            assert np.all(np.abs(obs[25:28]) <= 2) and np.all(np.abs(obs[28:31]) <= 2)

    def test_finite_outside_workspace(self):
        scene = make_scene()
        obs = scene.observation(state_at([350, 0, 0]))
        assert np.all(np.isfinite(obs))
        assert np.all(obs[3:17] == 0.0)  # probes report immediate hit


class TestPort:
    def test_direction_unit_after_init(self):
        port = Port(np.array([0.0, 0, 0]), np.array([3.0, 4.0, 0.0]))
        assert np.linalg.norm(port.direction) == pytest.approx(1.0, abs=1e-12)
