"""Command-line entry point.

Subcommands:
  route           train on a scene and write the best route's artifacts
  eval            layout report (PL / CFI / MVR / l_align) for a polyline
  export-machine  die trajectory CSV from a profile CSV or polyline
  compare         similarity report (LCSS / FD / DTW / ED) for two paths

`--scene desk-engine` resolves the bundled example scene. All outputs are
deterministic for a fixed seed and a single rollout worker.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import artifacts
from .machine import InfeasibleBendError, MachineConfig, die_pose_sequence, export_trajectory
from .metrics import discrete_frechet, dtw, edit_distance, layout_report, lcss, resample_uniform
from .ppo import NumericFault, RLConfig, save_checkpoint, train
from .profile import GeoProfile
from .rewards import RewardWeights
from .scene import Scene, SceneError, load_scene

BUNDLED_SCENES = {"desk-engine": "desk_engine.json"}


def _resolve_scene(spec: str, pair):
    if spec in BUNDLED_SCENES:
        ref = resources.files("freebend.data") / BUNDLED_SCENES[spec]
        return load_scene(json.loads(ref.read_text()), pair)
    return load_scene(spec, pair)


def _resolve_machine(spec: str | None) -> MachineConfig:
    if spec is None:
        ref = resources.files("freebend.data") / "machine_default.json"
        return MachineConfig.from_document(json.loads(ref.read_text()))
    return MachineConfig.from_document(json.loads(Path(spec).read_text()))


def _profile_from_knots(knots) -> GeoProfile:
    profile = GeoProfile()
    prev_s = 0.0
    for s, kappa, tau in knots:
        if s <= prev_s:
            continue
        profile.append_knot(s - prev_s, kappa, tau)
        prev_s = s
    return profile


def _profile_samples(profile: GeoProfile, ds: float):
    """(spacing, kappa, tau) rows at spacing ds, first spacing 0."""
    n = int(math.floor(profile.s_last / ds + 1e-9))
    s_values = [i * ds for i in range(n + 1)]
    if s_values[-1] < profile.s_last - 1e-9:
        s_values.append(profile.s_last)
    samples = []
    prev = 0.0
    for s in s_values:
        kappa, tau = profile.eval_at(s)
        samples.append((s - prev, kappa, tau))
        prev = s
    return samples


def _samples_from_profile_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "s_mm":
                continue
            rows.append([float(v) for v in row[:3]])
    if not rows:
        raise ValueError(f"no samples in profile file {path}")
    data = np.array(rows)
    spacings = np.diff(data[:, 0], prepend=data[0, 0])
    return [(float(d), float(k), float(t)) for d, (_, k, t) in zip(spacings, data)]


def cmd_route(args) -> int:
    scene = _resolve_scene(args.scene, args.pair)
    machine_cfg = _resolve_machine(args.machine)
    rl_cfg = RLConfig(
        total_steps=args.steps,
        rollout_len=args.rollout_len,
        noise_alpha=args.noise_alpha,
    )
    weights = RewardWeights(len_normalized=args.len_normalized)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    provenance = {
        "seed": args.seed,
        "scene": args.scene,
        "pair": args.pair,
        "workers": args.workers,
        "rl_config": asdict(rl_cfg),
        "machine": machine_cfg.to_document(),
        "weights": asdict(weights),
    }

    log_rows: list[dict] = []

    def progress(row: dict) -> None:
        log_rows.append(row)
        if not args.quiet:
            print(
                f"update {row['update_idx']:4d}  step {row['global_step']:8d}  "
                f"return {row['mean_return']:9.3f}  done {row['frac_done']:.2f}",
                flush=True,
            )

    try:
        result = train(
            scene, machine_cfg, rl_cfg, weights,
            seed=args.seed, workers=args.workers, progress=progress,
        )
    except NumericFault as fault:
        artifacts.write_training_log_csv(out / "training_log.csv", log_rows, provenance)
        print(f"numeric fault during training: {fault}", file=sys.stderr)
        return 1

    artifacts.write_training_log_csv(out / "training_log.csv", log_rows, provenance)
    save_checkpoint(out / "checkpoint.npz", result.params, rl_cfg, extra={"seed": args.seed})

    best = result.best
    if best is None:
        print("no completed episode; nothing to export", file=sys.stderr)
        return 1

    artifacts.write_polyline_csv(out / "polyline.csv", best.polyline, provenance)
    profile = _profile_from_knots(best.knots)
    with open(out / "profile.csv", "w", newline="") as fh:
        fh.write(artifacts.format_provenance(provenance) + "\n")
        profile.export_csv(fh, ds=args.profile_ds)

    report = layout_report(best.polyline, scene, machine_cfg.r_min, scene.target, rl_cfg.s_max)
    doc = report.to_document()
    doc["done"] = bool(best.done)
    doc["episode_return"] = best.ret
    artifacts.write_report_json(out / "layout_report.json", doc, provenance)

    try:
        samples = _profile_samples(profile, args.profile_ds)
        poses = die_pose_sequence(samples, machine_cfg)
        with open(out / "trajectory.csv", "w", newline="") as fh:
            fh.write(artifacts.format_provenance(provenance) + "\n")
            export_trajectory(poses, machine_cfg, fh)
    except InfeasibleBendError as exc:
        print(f"trajectory export skipped: {exc}", file=sys.stderr)

    for key, value in doc.items():
        if key != "provenance":
            print(f"{key}: {value}")
    return 0 if result.done_found else 1


def cmd_eval(args) -> int:
    scene = _resolve_scene(args.scene, args.pair)
    machine_cfg = _resolve_machine(args.machine)
    polyline = artifacts.read_polyline_csv(args.polyline)
    report = layout_report(polyline, scene, machine_cfg.r_min, scene.target, args.s_max)
    doc = report.to_document()
    for key, value in doc.items():
        print(f"{key}: {value}")
    if args.out:
        provenance = {"polyline": str(args.polyline), "scene": args.scene, "pair": args.pair}
        artifacts.write_report_json(args.out, doc, provenance)
    return 0


def cmd_export_machine(args) -> int:
    machine_cfg = _resolve_machine(args.machine)
    if args.profile:
        samples = _samples_from_profile_csv(args.profile)
    else:
        poly = artifacts.read_polyline_csv(args.polyline)
        spacings = np.diff(poly.s, prepend=poly.s[0])
        samples = [
            (float(d), float(k), float(t))
            for d, k, t in zip(spacings, poly.kappa, poly.tau)
        ]
    try:
        poses = die_pose_sequence(samples, machine_cfg)
    except InfeasibleBendError as exc:
        arc = sum(s for s, _, _ in samples[: (exc.index or 0) + 1])
        print(f"infeasible bend at s = {arc:.17g} mm: {exc}", file=sys.stderr)
        return 1
    with open(args.out, "w", newline="") as fh:
        export_trajectory(poses, machine_cfg, fh)
    print(f"wrote {len(poses)} poses to {args.out}")
    return 0


def cmd_compare(args) -> int:
    a = resample_uniform(artifacts.read_xyz_csv(args.a), args.ds)
    b = resample_uniform(artifacts.read_xyz_csv(args.b), args.ds)
    report = {
        "lcss_ratio": lcss(a, b, args.eps),
        "frechet_mm": discrete_frechet(a, b),
        "dtw_mm": dtw(a, b),
        "edit_distance": edit_distance(a, b, args.eps),
    }
    for key, value in report.items():
        print(f"{key}: {value}")
    if args.out:
        provenance = {"a": str(args.a), "b": str(args.b), "eps": args.eps, "ds": args.ds}
        artifacts.write_report_json(args.out, report, provenance)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freebend", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_route = sub.add_parser("route", help="train and export the best route")
    p_route.add_argument("--scene", required=True, help="scene JSON path or 'desk-engine'")
    p_route.add_argument("--pair", default=None, help="port pair name or index")
    p_route.add_argument("--machine", default=None, help="machine config JSON path")
    p_route.add_argument("--out", required=True, help="output directory")
    p_route.add_argument("--seed", type=int, default=0)
    p_route.add_argument("--steps", type=int, default=4_000_000)
    p_route.add_argument("--rollout-len", type=int, default=1024)
    p_route.add_argument("--noise-alpha", type=float, default=0.01)
    p_route.add_argument("--workers", type=int, default=1)
    p_route.add_argument("--profile-ds", type=float, default=1.0)
    p_route.add_argument("--len-normalized", action=argparse.BooleanOptionalAction,
                         default=True,
                         help="normalize the length penalty by s_max (default on)")
    p_route.add_argument("--quiet", action="store_true")
    p_route.set_defaults(func=cmd_route)

    p_eval = sub.add_parser("eval", help="layout report for a polyline CSV")
    p_eval.add_argument("--polyline", required=True)
    p_eval.add_argument("--scene", required=True)
    p_eval.add_argument("--pair", default=None)
    p_eval.add_argument("--machine", default=None)
    p_eval.add_argument("--s-max", type=float, default=20.0)
    p_eval.add_argument("--out", default=None, help="also write the report JSON here")
    p_eval.set_defaults(func=cmd_eval)

    p_exp = sub.add_parser("export-machine", help="die trajectory from a profile")
    group = p_exp.add_mutually_exclusive_group(required=True)
    group.add_argument("--profile", help="profile CSV (s_mm, kappa_per_mm, tau_per_mm)")
    group.add_argument("--polyline", help="polyline CSV")
    p_exp.add_argument("--machine", default=None)
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=cmd_export_machine)

    p_cmp = sub.add_parser("compare", help="similarity metrics for two paths")
    p_cmp.add_argument("--a", required=True)
    p_cmp.add_argument("--b", required=True)
    p_cmp.add_argument("--eps", type=float, default=25.0, help="match tolerance, mm")
    p_cmp.add_argument("--ds", type=float, default=1.0, help="resampling step, mm")
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SceneError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
