"""Command-line entry points: ``silpose synth | match | bench | report``.

Angles on flags are in degrees. Exit codes: 0 ok, 2 configuration or
parse error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as fio
from .benchmark import (
    DEFAULT_GAPS,
    SyntheticModelSpec,
    generate_sequence,
    joint_error,
    make_model,
    render_targets,
    build_targets,
    run_benchmark,
    sample_pairs,
    summarize,
)
from .chamfer import ChamferConfig, CircularMode, Variant
from .errors import EstimationFailedError, InvalidArgumentError, SilposeError
from .kinematics import PoseVector
from .silhouette import render_silhouette, posed_geometry
from .solver import SolverConfig, estimate_pose

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3


class ConfigError(Exception):
    pass


def default_variants() -> list[ChamferConfig]:
    return [
        ChamferConfig(Variant.CH),
        ChamferConfig(Variant.DCH_THRES, tau=np.deg2rad(22.5)),
        ChamferConfig(Variant.DCH_QUANT, bins=8, K=20.0),
        ChamferConfig(Variant.DCH_QUANT2, bins=8, K=20.0),
        ChamferConfig(Variant.DCH_DT3, lam=25.0, bins=16),
    ]


@dataclass(frozen=True)
class RunConfig:
    model: SyntheticModelSpec = field(default_factory=SyntheticModelSpec)
    frames: int = 200
    sequence_seed: int = 0
    amplitude: float = 1.0
    fraction: float = 0.10
    gaps: tuple[int, ...] = DEFAULT_GAPS
    pair_seed: int = 0
    variants: tuple[ChamferConfig, ...] = field(default_factory=lambda: tuple(default_variants()))
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: str = "bench_out"

    def __post_init__(self):
        if not self.gaps or min(self.gaps) < 0:
            raise InvalidArgumentError("gaps must be a non-empty list of non-negative integers")
        if self.frames <= max(self.gaps):
            raise InvalidArgumentError(
                f"sequence has {self.frames} frames but the largest gap is {max(self.gaps)}; "
                "every gap must be shorter than the sequence"
            )
        if not 0 < self.fraction <= 1:
            raise InvalidArgumentError("pairs.fraction must lie in (0, 1]")

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {"model", "sequence", "pairs", "variants", "solver", "output"}
        extra = set(d) - known
        if extra:
            raise InvalidArgumentError(f"unknown config keys: {sorted(extra)}")
        seq = d.get("sequence", {})
        pairs = d.get("pairs", {})
        kw = {}
        if "model" in d:
            kw["model"] = SyntheticModelSpec.from_json(d["model"])
        if "variants" in d:
            kw["variants"] = tuple(ChamferConfig.from_json(v) for v in d["variants"])
        if "solver" in d:
            kw["solver"] = SolverConfig.from_json(d["solver"])
        if "output" in d:
            kw["output"] = str(d["output"])
        return cls(
            frames=int(seq.get("frames", 200)),
            sequence_seed=int(seq.get("seed", 0)),
            amplitude=float(seq.get("amplitude", 1.0)),
            fraction=float(pairs.get("fraction", 0.10)),
            gaps=tuple(int(g) for g in pairs.get("gaps", DEFAULT_GAPS)),
            pair_seed=int(pairs.get("seed", 0)),
            **kw,
        )

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "sequence": {"frames": self.frames, "seed": self.sequence_seed, "amplitude": self.amplitude},
            "pairs": {"fraction": self.fraction, "gaps": list(self.gaps), "seed": self.pair_seed},
            "variants": [v.to_json() for v in self.variants],
            "solver": self.solver.to_json(),
            "output": self.output,
        }


def _read_config(path) -> dict:
    try:
        return fio.load_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc


# --- synth ---------------------------------------------------------------


def cmd_synth(args) -> int:
    d = _read_config(args.spec) if args.spec else {}
    try:
        spec = SyntheticModelSpec.from_json(d.get("model", {}))
        sq = d.get("sequence", {})
        frames, seed = int(sq.get("frames", 200)), int(sq.get("seed", 0))
        model = make_model(spec)
        seq = generate_sequence(model, seed, frames, float(sq.get("amplitude", 1.0)))
    except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth spec: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fio.save_model(model, out / "model.json", out / "cameras.json")
    fio.dump_json(fio.sequence_to_json(seq, seed), out / "sequence.json")
    print(
        f"bones={model.skeleton.bone_count} dof={model.skeleton.dof_count} "
        f"vertices={len(model.mesh.rest_vertices)} faces={len(model.mesh.faces)} "
        f"cameras={len(model.cameras)} frames={len(seq)}"
    )
    print(f"wrote {out}/model.json {out}/cameras.json {out}/sequence.json")
    return EXIT_OK


# --- match ---------------------------------------------------------------


def _config_from_flags(args) -> ChamferConfig:
    try:
        return ChamferConfig(
            Variant(args.variant),
            tau=np.deg2rad(args.tau_deg),
            K=args.K,
            lam=args.lam,
            bins=args.bins,
            mode=CircularMode(args.mode),
        )
    except (InvalidArgumentError, ValueError) as exc:
        raise ConfigError(f"invalid variant flags: {exc}") from exc


def _match_poses(args) -> tuple[PoseVector, PoseVector]:
    if args.sequence:
        seq = fio.sequence_from_json(_read_config(args.sequence))
        if args.start_frame is None or args.test_frame is None:
            raise ConfigError("--sequence requires --start-frame and --test-frame")
        for f in (args.start_frame, args.test_frame):
            if not 0 <= f < len(seq):
                raise ConfigError(f"frame {f} outside sequence of {len(seq)} frames")
        return seq.frames[args.start_frame], seq.frames[args.test_frame]
    if not (args.start and args.target):
        raise ConfigError("give --start and --target pose files, or --sequence with frame indices")
    return fio.pose_from_json(_read_config(args.start)), fio.pose_from_json(_read_config(args.target))


def cmd_match(args) -> int:
    cfg = _config_from_flags(args)
    scfg = SolverConfig(args.outer, args.inner)
    try:
        model = fio.load_model(args.model, args.cameras)
        start, truth = _match_poses(args)
        start.check(model.skeleton)
        truth.check(model.skeleton)
    except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid match inputs: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("config " + json.dumps(cfg.to_json(), sort_keys=True))
    masks = render_targets(model, truth)
    try:
        targets = build_targets(model, masks, cfg)
        est = estimate_pose(start, targets, model.skeleton, model.mesh, cfg, scfg)
    except (EstimationFailedError, SilposeError) as exc:
        fio.dump_json(fio.pose_to_json(start), out / "pose.json")
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    fio.dump_json(fio.pose_to_json(est.pose), out / "pose.json")
    (out / "history.csv").write_text(fio.history_to_csv(est.residual_history))
    verts, _, _ = posed_geometry(model.skeleton, model.mesh, est.pose)
    for cid, mask in masks:
        (out / f"target_{cid}.pbm").write_bytes(fio.mask_to_pbm(mask))
        cam = model.cameras[cid]
        try:
            final = render_silhouette(verts, model.mesh.faces, cam)
        except SilposeError:
            continue
        (out / f"final_{cid}.pbm").write_bytes(fio.mask_to_pbm(final))
    init = joint_error(start, truth, model.skeleton)
    err = joint_error(est.pose, truth, model.skeleton)
    print(
        f"initial_mm={init:.4f} final_mm={err:.4f} converged={int(est.converged)} "
        f"outer_iterations={est.outer_iterations}"
    )
    return EXIT_OK


# --- bench ---------------------------------------------------------------


def cmd_bench(args) -> int:
    d = _read_config(args.config) if args.config else {}
    try:
        rc = RunConfig.from_json(d)
    except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc
    out = Path(args.out or rc.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    model = make_model(rc.model)
    seq = generate_sequence(model, rc.sequence_seed, rc.frames, rc.amplitude)
    pairs = sample_pairs(rc.frames, rc.fraction, rc.gaps, rc.pair_seed)
    if not pairs:
        raise ConfigError("pair sampling produced no in-bounds pairs")
    try:
        report = run_benchmark(model, seq, pairs, list(rc.variants), rc.solver, args.jobs, args.timing)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    summary = summarize(report)
    (out / "records.csv").write_text(fio.records_to_csv(report.records))
    (out / "curves.csv").write_text(fio.curves_to_csv(summary["curves"]))
    agg = {k: summary[k] for k in ("columns", "table", "initial")}
    agg["config"] = rc.to_json()
    fio.dump_json(agg, out / "aggregate.json")
    failed = sum(r.failed for r in report.records)
    print(f"pairs={len(pairs)} variants={len(rc.variants)} records={len(report.records)} failed={failed}")
    print(format_report(reaggregate(report.records)))
    return EXIT_OK


# --- report --------------------------------------------------------------


def _cell(values) -> dict:
    return {"mean": statistics.fmean(values), "std": statistics.pstdev(values), "count": len(values)}


def reaggregate(records) -> dict:
    """Aggregate records from scratch with the statistics module.

    Kept separate from the benchmark's numpy path so the two can be
    cross-checked against each other.
    """
    variants = list(dict.fromkeys(r.variant for r in records))
    gaps = sorted({r.gap for r in records})
    table = {}
    for name in variants:
        rows = [r for r in records if r.variant == name]
        entry = {str(g): _cell([r.final_mm for r in rows if r.gap == g]) for g in gaps if any(r.gap == g for r in rows)}
        entry["All"] = _cell([r.final_mm for r in rows])
        entry["time_s"] = statistics.fmean(r.time_s for r in rows)
        table[name] = entry
    base = [r for r in records if r.variant == variants[0]]
    initial = {str(g): _cell([r.initial_mm for r in base if r.gap == g]) for g in gaps if any(r.gap == g for r in base)}
    initial["All"] = _cell([r.initial_mm for r in base])
    return {"columns": [str(g) for g in gaps] + ["All"], "table": table, "initial": initial}


def format_report(agg: dict) -> str:
    cols = agg["columns"]
    width = 16
    lines = [f"{'':<16}" + "".join(f"{c:>{width}}" for c in cols) + f"{'time_s':>10}"]

    def fmt(entry):
        return "".join(
            f"{entry[c]['mean']:.2f}±{entry[c]['std']:.2f}".rjust(width) if c in entry else "-".rjust(width)
            for c in cols
        )

    lines.append(f"{'initial':<16}" + fmt(agg["initial"]) + f"{'-':>10}")
    for name, entry in agg["table"].items():
        lines.append(f"{name:<16}" + fmt(entry) + f"{entry['time_s']:>10.3f}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        text = Path(args.records).read_text()
    except OSError as exc:
        raise ConfigError(f"{args.records}: {exc.strerror or exc}") from exc
    try:
        records = fio.records_from_csv(text)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    agg = reaggregate(records)
    if args.json:
        print(json.dumps(agg, indent=1))
    else:
        print("Mean error ± std (mm), mean time per pair (s)")
        print(format_report(agg))
    return EXIT_OK


# --- entry ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="silpose", description="Silhouette-based articulated pose estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic model, camera rig and motion sequence")
    s.add_argument("spec", nargs="?", help='JSON with optional "model" and "sequence" sections')
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("match", help="fit one frame pair")
    m.add_argument("--model", required=True)
    m.add_argument("--cameras", required=True)
    m.add_argument("--start", help="starting pose JSON")
    m.add_argument("--target", help="ground-truth pose JSON used to render target silhouettes")
    m.add_argument("--sequence", help="sequence JSON, used with --start-frame/--test-frame")
    m.add_argument("--start-frame", type=int)
    m.add_argument("--test-frame", type=int)
    m.add_argument("--variant", default="dch-thres", choices=[v.value for v in Variant])
    m.add_argument("--tau-deg", type=float, default=22.5)
    m.add_argument("--mode", default="signed", choices=[c.value for c in CircularMode])
    m.add_argument("--lambda", dest="lam", type=float, default=25.0)
    m.add_argument("--bins", type=int, default=16)
    m.add_argument("--K", type=float, default=None, help="penalty / clamp in pixels (default: image diagonal)")
    m.add_argument("--outer", type=int, default=10, help="outer iterations")
    m.add_argument("--inner", type=int, default=5, help="inner iterations")
    m.add_argument("--out", default=".", help="output directory")
    m.set_defaults(func=cmd_match)

    b = sub.add_parser("bench", help="run the frame-pair benchmark")
    b.add_argument("config", nargs="?", help="run config JSON (defaults apply to missing sections)")
    b.add_argument("--out", help="output directory (overrides the config)")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--timing", action="store_true", help="run sequentially for comparable wall times")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="aggregate a records CSV")
    r.add_argument("records")
    r.add_argument("--json", action="store_true", help="print aggregates as JSON")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
