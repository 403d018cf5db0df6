"""Frame-pair benchmark on procedurally generated capsule-limb models.

A pair couples a starting pose with a test frame a fixed number of frames
later.  The test frame's silhouettes are rendered from its ground-truth
pose, the estimator starts from the starting pose, and the error is the
mean Euclidean distance between estimated and true joint positions.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chamfer import ChamferConfig, prepare_fields
from .errors import EmptyMaskError, EstimationFailedError, InvalidArgumentError, SilposeError
from .kinematics import Bone, PoseVector, SkinnedMesh, Skeleton, Twist, joint_positions
from .projection import Camera
from .silhouette import oriented_target, posed_geometry, render_silhouette
from .solver import CameraTarget, SolverConfig, estimate_pose

DEFAULT_GAPS = (1, 5, 10, 15)
CURVE_STEP_MM = 0.5


@dataclass(frozen=True)
class SyntheticModelSpec:
    chains: int = 2
    bones_per_chain: int = 3
    bone_lengths: tuple[float, ...] = (40.0, 30.0, 25.0)
    radii: tuple[float, ...] = (9.0, 8.0, 7.0)
    chain_spacing: float = 22.0
    cameras: int = 4
    ring_radius: float = 350.0
    elevation_deg: float = 35.0
    focal: float = 520.0
    image_size: tuple[int, int] = (256, 256)
    segments: int = 16
    cap_rings: int = 4
    ring_spacing: float = 4.0
    contour_tol: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bone_lengths", tuple(float(x) for x in self.bone_lengths))
        object.__setattr__(self, "radii", tuple(float(x) for x in self.radii))
        object.__setattr__(self, "image_size", tuple(int(x) for x in self.image_size))
        if self.chains < 1 or self.bones_per_chain < 1:
            raise InvalidArgumentError("need at least one chain of one bone")
        if len(self.bone_lengths) < self.bones_per_chain or len(self.radii) < self.bones_per_chain:
            raise InvalidArgumentError("one length and radius per bone of a chain required")
        if min(self.bone_lengths) <= 0 or min(self.radii) <= 0:
            raise InvalidArgumentError("bone lengths and radii must be positive")
        if self.cameras < 1 or self.ring_radius <= 0 or self.focal <= 0 or min(self.image_size) <= 0:
            raise InvalidArgumentError("camera rig dimensions must be positive")
        if self.segments < 3 or self.cap_rings < 1:
            raise InvalidArgumentError("mesh resolution too coarse")

    def to_json(self) -> dict:
        return {
            "chains": self.chains,
            "bones_per_chain": self.bones_per_chain,
            "bone_lengths": list(self.bone_lengths),
            "radii": list(self.radii),
            "chain_spacing": self.chain_spacing,
            "cameras": self.cameras,
            "ring_radius": self.ring_radius,
            "elevation_deg": self.elevation_deg,
            "focal": self.focal,
            "image_size": list(self.image_size),
            "segments": self.segments,
            "cap_rings": self.cap_rings,
            "ring_spacing": self.ring_spacing,
            "contour_tol": self.contour_tol,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticModelSpec":
        known = cls().to_json().keys()
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidArgumentError(f"unknown model spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Model:
    skeleton: Skeleton
    mesh: SkinnedMesh
    cameras: tuple[Camera, ...]
    contour_tol: float = 1.0


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def capsule(base, axis, length: float, radius: float, segments: int, cap_rings: int, ring_spacing: float):
    """Capsule surface between ``base`` and ``base + length * axis``.

    Returns vertices, unit normals, faces and each vertex's axial
    coordinate measured from ``base``.
    """
    base = np.asarray(base, dtype=float)
    axis = np.asarray(axis, dtype=float)
    e1, e2 = _frame(axis)
    # (axial offset of the sphere center, latitude) per ring, from base pole to tip pole
    lat_base = [(-np.pi / 2) + (np.pi / 2) * i / cap_rings for i in range(1, cap_rings + 1)]
    n_cyl = max(1, int(math.ceil(length / ring_spacing)))
    rings = [(0.0, a) for a in lat_base]
    rings += [(length * i / n_cyl, 0.0) for i in range(1, n_cyl)]
    rings += [(length, -a) for a in reversed(lat_base)]
    ang = 2 * np.pi * np.arange(segments) / segments
    radial = np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)
    verts, normals, axial = [base - radius * axis], [-axis], [-radius]
    for s, lat in rings:
        n = np.cos(lat) * radial + np.sin(lat) * axis
        verts.extend(base + s * axis + radius * n)
        normals.extend(n)
        axial.extend([s + radius * np.sin(lat)] * segments)
    verts.append(base + (length + radius) * axis)
    normals.append(axis)
    axial.append(length + radius)
    nr = len(rings)
    faces = []
    ring_start = lambda r: 1 + r * segments  # noqa: E731
    for k in range(segments):
        k2 = (k + 1) % segments
        faces.append((0, ring_start(0) + k2, ring_start(0) + k))
        for r in range(nr - 1):
            a, b = ring_start(r) + k, ring_start(r) + k2
            c, d = ring_start(r + 1) + k, ring_start(r + 1) + k2
            faces.append((a, b, d))
            faces.append((a, d, c))
        tip = len(verts) - 1
        faces.append((ring_start(nr - 1) + k, ring_start(nr - 1) + k2, tip))
    normals = np.array(normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return np.array(verts), normals, np.array(faces, dtype=np.int64), np.array(axial)


def _ring_cameras(spec: SyntheticModelSpec, target: np.ndarray) -> tuple[Camera, ...]:
    elev = np.deg2rad(spec.elevation_deg)
    w, h = spec.image_size
    cams = []
    for i in range(spec.cameras):
        az = np.deg2rad(45.0) + 2 * np.pi * i / spec.cameras
        eye = target + spec.ring_radius * np.array([np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)])
        cams.append(Camera.look_at(eye, target, [0.0, 0.0, 1.0], spec.focal, w, h))
    return tuple(cams)


def bone_axis(k: int) -> np.ndarray:
    """Joint axis of the k-th bone of a chain (k >= 1): flexion about y, then abduction about z, alternating."""
    return np.array([0.0, 1.0, 0.0]) if k % 2 == 1 else np.array([0.0, 0.0, 1.0])


def make_model(spec: SyntheticModelSpec | None = None) -> Model:
    """Parallel capsule chains along +x, side by side in y, with a camera ring around them."""
    spec = spec or SyntheticModelSpec()
    bones, verts, normals, faces = [], [], [], []
    x_axis = np.array([1.0, 0.0, 0.0])
    blend = []  # (vertex slice, bone id, axial coords, length, radius)
    for c in range(spec.chains):
        y = (c - (spec.chains - 1) / 2.0) * spec.chain_spacing
        start = np.array([0.0, y, 0.0])
        for k in range(spec.bones_per_chain):
            bid = len(bones)
            parent = None if k == 0 else bid - 1
            twist = None if k == 0 else Twist.revolute(bone_axis(k), start)
            bones.append(Bone(bid, parent, twist, start.copy()))
            L, r = spec.bone_lengths[k], spec.radii[k]
            v, n, f, s = capsule(start, x_axis, L, r, spec.segments, spec.cap_rings, spec.ring_spacing)
            offset = sum(len(x) for x in verts)
            verts.append(v)
            normals.append(n)
            faces.append(f + offset)
            blend.append((offset, len(v), bid, s, L, r, k < spec.bones_per_chain - 1))
            start = start + L * x_axis
    skel = Skeleton(tuple(bones))
    V = sum(len(v) for v in verts)
    W = np.zeros((V, len(bones)))
    for offset, count, bid, s, L, r, has_child in blend:
        zone = 0.8 * r
        own = np.ones(count)
        rows = slice(offset, offset + count)
        parent = bones[bid].parent
        if parent is not None:
            wp = np.clip(0.5 - 0.5 * s / zone, 0.0, 1.0)
            W[rows, parent] = wp
            own -= wp
        if has_child:
            wc = np.clip(0.5 - 0.5 * (L - s) / zone, 0.0, 1.0)
            W[rows, bid + 1] = wc
            own -= wc
        W[rows, bid] = own
    mesh = SkinnedMesh(np.concatenate(verts), np.concatenate(normals), np.concatenate(faces), W)
    center = mesh.rest_vertices.min(axis=0) * 0.5 + mesh.rest_vertices.max(axis=0) * 0.5
    return Model(skel, mesh, _ring_cameras(spec, center), spec.contour_tol)


# --- motion --------------------------------------------------------------


@dataclass(frozen=True)
class Sequence:
    frames: tuple[PoseVector, ...]
    fps: float = 50.0

    def __len__(self) -> int:
        return len(self.frames)

    def array(self) -> np.ndarray:
        return np.array([f.theta for f in self.frames])


def dof_motion_ranges(skel: Skeleton) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per pose entry: base value, amplitude, lower and upper limit."""
    base, amp, lo, hi = [], [], [], []
    for b in skel.bones:
        if b.parent is None:
            base += [0.0] * 6
            amp += [8.0] * 3 + [0.15] * 3
            lo += [-40.0] * 3 + [-0.6] * 3
            hi += [40.0] * 3 + [0.6] * 3
            continue
        if abs(b.twist.omega[1]) > 0.5:  # flexion
            base.append(0.35)
            amp.append(0.35)
            lo.append(-0.2)
            hi.append(1.4)
        else:
            base.append(0.0)
            amp.append(0.15)
            lo.append(-0.4)
            hi.append(0.4)
    return tuple(np.array(x) for x in (base, amp, lo, hi))


def generate_sequence(model: Model, seed: int, frames: int, amplitude: float = 1.0, fps: float = 50.0) -> Sequence:
    """Band-limited pseudo-random joint trajectories, clipped to joint limits.

    Each pose entry is a sum of three sinusoids with frequencies in
    [0.3, 1.2] Hz, so displacement between frames grows with their
    distance for gaps below a third of a second.
    """
    if frames < 1:
        raise InvalidArgumentError("a sequence needs at least one frame")
    base, amp, lo, hi = dof_motion_ranges(model.skeleton)
    rng = np.random.default_rng(seed)
    ndof = len(base)
    freqs = rng.uniform(0.3, 1.2, size=(ndof, 3))
    phases = rng.uniform(0.0, 2 * np.pi, size=(ndof, 3))
    weights = rng.uniform(0.5, 1.0, size=(ndof, 3))
    weights /= weights.sum(axis=1, keepdims=True)
    t = np.arange(frames) / fps
    wave = np.einsum("dh,dht->td", weights, np.sin(2 * np.pi * freqs[:, :, None] * t + phases[:, :, None]))
    theta = np.clip(base + amplitude * amp * wave, lo, hi)
    return Sequence(tuple(PoseVector(row) for row in theta), fps)


# --- protocol ------------------------------------------------------------


@dataclass(frozen=True)
class FramePair:
    start_frame: int
    test_frame: int
    gap: int
    pair_id: int = 0

    def __post_init__(self):
        if self.test_frame - self.start_frame != self.gap or self.gap < 0 or self.start_frame < 0:
            raise InvalidArgumentError("frame pair must satisfy test - start = gap >= 0")


def sample_pairs(frames: int, fraction: float = 0.10, gaps=DEFAULT_GAPS, seed: int = 0) -> list[FramePair]:
    """Sample ``round(fraction * frames)`` test frames once and pair each with every in-bounds gap."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError("fraction must lie in (0, 1]")
    gaps = [int(g) for g in gaps]
    if not gaps:
        raise InvalidArgumentError("at least one gap required")
    if min(gaps) >= frames:
        raise InvalidArgumentError(f"a {frames}-frame sequence is too short for any gap in {gaps}")
    n_test = int(round(fraction * frames))
    rng = np.random.default_rng(seed)
    tests = np.sort(rng.choice(frames, size=n_test, replace=False))
    pairs = []
    for g in gaps:
        for t in tests:
            if t - g >= 0:
                pairs.append(FramePair(int(t - g), int(t), g, len(pairs)))
    return pairs


def joint_error(estimated, truth, skel: Skeleton) -> float:
    """Mean Euclidean distance between corresponding joint positions, in mm."""
    d = joint_positions(skel, estimated) - joint_positions(skel, truth)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def render_targets(model: Model, pose) -> list[tuple[int, object]]:
    """Silhouette of ``pose`` in every camera that sees it, as (camera id, mask)."""
    verts, _, _ = posed_geometry(model.skeleton, model.mesh, pose)
    out = []
    for cid, cam in enumerate(model.cameras):
        try:
            out.append((cid, render_silhouette(verts, model.mesh.faces, cam)))
        except EmptyMaskError:
            continue
    return out


def build_targets(model: Model, masks, cfg: ChamferConfig) -> list[CameraTarget]:
    targets = []
    for cid, mask in masks:
        cam = model.cameras[cid]
        oc = oriented_target(mask, model.contour_tol)
        targets.append(CameraTarget(cam, cid, mask, prepare_fields(oc, cam.width, cam.height, cfg)))
    return targets


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    gap: int
    variant: str
    initial_mm: float
    final_mm: float
    time_s: float
    converged: bool
    failed: bool = False


def run_pair(model: Model, seq: Sequence, pair: FramePair, cfg: ChamferConfig, scfg: SolverConfig) -> PairRecord:
    truth = seq.frames[pair.test_frame]
    start = seq.frames[pair.start_frame]
    skel = model.skeleton
    initial = joint_error(start, truth, skel)
    masks = render_targets(model, truth)
    t0 = time.perf_counter()
    try:
        targets = build_targets(model, masks, cfg)
        est = estimate_pose(start, targets, skel, model.mesh, cfg, scfg)
    except (EstimationFailedError, SilposeError):
        return PairRecord(pair.pair_id, pair.gap, cfg.name, initial, initial, time.perf_counter() - t0, False, True)
    elapsed = time.perf_counter() - t0
    return PairRecord(pair.pair_id, pair.gap, cfg.name, initial, joint_error(est.pose, truth, skel), elapsed, est.converged)


_WORKER = {}


def _init_worker(model, seq, scfg):
    _WORKER.update(model=model, seq=seq, scfg=scfg)


def _run_item(item):
    pair, cfg = item
    return run_pair(_WORKER["model"], _WORKER["seq"], pair, cfg, _WORKER["scfg"])


def run_benchmark(
    model: Model,
    seq: Sequence,
    pairs: list[FramePair],
    variants: list[ChamferConfig],
    scfg: SolverConfig | None = None,
    jobs: int = 1,
    timing: bool = False,
) -> "BenchmarkReport":
    """Evaluate every (pair, variant) cell; failures become rows, never exceptions.

    ``timing`` forces sequential execution so wall times are comparable.
    """
    if not pairs or not variants:
        raise InvalidArgumentError("need at least one pair and one variant")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"variant labels must be unique, got {names}")
    scfg = scfg or SolverConfig()
    items = [(p, v) for p in pairs for v in variants]
    if timing or jobs <= 1:
        records = [run_pair(model, seq, p, v, scfg) for p, v in items]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(model, seq, scfg)) as ex:
            records = list(ex.map(_run_item, items, chunksize=4))
    return BenchmarkReport(tuple(records), tuple(names), tuple(sorted({p.gap for p in pairs})))


# --- aggregation ---------------------------------------------------------


def _stats(values) -> dict:
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std()), "count": int(len(a))}


def curve(errors, thresholds) -> np.ndarray:
    e = np.sort(np.asarray(errors, dtype=float))
    return np.searchsorted(e, thresholds, side="right") / len(e)


def curve_thresholds(max_error: float, step: float = CURVE_STEP_MM) -> np.ndarray:
    top = step * (math.floor(max_error / step) + 1)
    return np.arange(0.0, top + step / 2, step)


@dataclass(frozen=True)
class BenchmarkReport:
    records: tuple[PairRecord, ...]
    variants: tuple[str, ...]
    gaps: tuple[int, ...]

    @cached_property
    def aggregates(self) -> dict:
        return summarize(self)["table"]

    @cached_property
    def curves(self) -> dict:
        return summarize(self)["curves"]


def summarize(report: BenchmarkReport) -> dict:
    """Per-gap and overall mean/std per variant, mean wall time, the initial row, and error curves."""
    if not report.records:
        raise InvalidArgumentError("empty report")
    recs = report.records
    gap_keys = [str(g) for g in report.gaps] + ["All"]
    table = {}
    for name in report.variants:
        rows = [r for r in recs if r.variant == name]
        entry = {}
        for g in report.gaps:
            sel = [r.final_mm for r in rows if r.gap == g]
            if sel:
                entry[str(g)] = _stats(sel)
        entry["All"] = _stats([r.final_mm for r in rows])
        entry["time_s"] = float(np.mean([r.time_s for r in rows]))
        entry["failed"] = int(sum(r.failed for r in rows))
        table[name] = entry
    first = report.variants[0]
    base_rows = [r for r in recs if r.variant == first]
    initial = {}
    for g in report.gaps:
        sel = [r.initial_mm for r in base_rows if r.gap == g]
        if sel:
            initial[str(g)] = _stats(sel)
    initial["All"] = _stats([r.initial_mm for r in base_rows])
    top = max(r.final_mm for r in recs)
    th = curve_thresholds(top)
    curves = {
        name: [(float(t), float(f)) for t, f in zip(th, curve([r.final_mm for r in recs if r.variant == name], th))]
        for name in report.variants
    }
    return {"columns": gap_keys, "table": table, "initial": initial, "curves": curves}


def format_table(summary: dict) -> str:
    """Text table: rows are variants, columns gaps + All + mean time."""
    cols = summary["columns"]
    head = f"{'':>14}" + "".join(f"{c:>14}" for c in cols) + f"{'time_s':>10}"
    lines = [head]

    def row(name, entry, time_s):
        cells = "".join(
            f"{entry[c]['mean']:>7.2f}±{entry[c]['std']:<6.2f}" if c in entry else f"{'-':>14}" for c in cols
        )
        t = f"{time_s:>10.3f}" if time_s is not None else f"{'-':>10}"
        return f"{name:>14}" + cells + t

    lines.append(row("initial", summary["initial"], None))
    for name, entry in summary["table"].items():
        lines.append(row(name, entry, entry["time_s"]))
    return "\n".join(lines)
