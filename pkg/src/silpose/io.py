"""File formats: model/camera/sequence/pose JSON, records and curve CSV, P4 bitmap masks."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .benchmark import Model, PairRecord, Sequence
from .errors import InvalidArgumentError
from .kinematics import Bone, PoseVector, SkinnedMesh, Skeleton, Twist
from .projection import Camera
from .silhouette import BinaryMask, OrientedContour

RECORD_COLUMNS = ["pair_id", "gap", "variant", "initial_mm", "final_mm", "time_s", "converged"]
CURVE_COLUMNS = ["variant", "threshold_mm", "fraction"]


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_json(path):
    """Parse a JSON file; decode errors propagate with line and column."""
    return json.loads(Path(path).read_text())


# --- model ---------------------------------------------------------------


def model_to_json(skel: Skeleton, mesh: SkinnedMesh, contour_tol: float | None = None) -> dict:
    bones = []
    for b in skel.bones:
        tw = None if b.twist is None else {"omega": _floats(b.twist.omega), "v": _floats(b.twist.v)}
        bones.append({"id": b.bone_id, "parent": b.parent, "twist": tw, "center": _floats(b.center)})
    weights = []
    for row in mesh.weights:
        nz = np.flatnonzero(row)
        weights.append([[int(j), float(row[j])] for j in nz])
    out = {
        "bones": bones,
        "vertices": [_floats(v) for v in mesh.rest_vertices],
        "normals": [_floats(n) for n in mesh.rest_normals],
        "faces": [[int(i) for i in f] for f in mesh.faces],
        "weights": weights,
    }
    if contour_tol is not None:
        out["contour_tol"] = float(contour_tol)
    return out


def model_from_json(d: dict) -> tuple[Skeleton, SkinnedMesh]:
    bones = []
    for b in d["bones"]:
        tw = b.get("twist")
        twist = None if tw is None else Twist(tw["omega"], tw["v"])
        bones.append(Bone(int(b["id"]), b["parent"], twist, b["center"]))
    skel = Skeleton(tuple(bones))
    verts = np.asarray(d["vertices"], dtype=float)
    W = np.zeros((len(verts), skel.bone_count))
    if len(d["weights"]) != len(verts):
        raise InvalidArgumentError("one weight list per vertex required")
    for i, row in enumerate(d["weights"]):
        for j, a in row:
            if not 0 <= int(j) < skel.bone_count:
                raise InvalidArgumentError(f"vertex {i} is weighted to unknown bone {j}")
            W[i, int(j)] = a
    mesh = SkinnedMesh(verts, np.asarray(d["normals"], dtype=float), np.asarray(d["faces"], dtype=np.int64), W)
    return skel, mesh


def cameras_to_json(cams) -> dict:
    return {
        "cameras": [
            {"K": _floats(c.K), "R": _floats(c.R), "t": _floats(c.t), "width": c.width, "height": c.height}
            for c in cams
        ]
    }


def cameras_from_json(d: dict) -> tuple[Camera, ...]:
    return tuple(Camera(c["K"], c["R"], c["t"], c["width"], c["height"]) for c in d["cameras"])


def save_model(model: Model, model_path, cameras_path) -> None:
    dump_json(model_to_json(model.skeleton, model.mesh, model.contour_tol), model_path)
    dump_json(cameras_to_json(model.cameras), cameras_path)


def load_model(model_path, cameras_path) -> Model:
    d = load_json(model_path)
    skel, mesh = model_from_json(d)
    return Model(skel, mesh, cameras_from_json(load_json(cameras_path)), float(d.get("contour_tol", 1.0)))


# --- poses and sequences ---------------------------------------------------


def pose_to_json(pose: PoseVector) -> dict:
    return {"theta": _floats(pose.theta)}


def pose_from_json(d) -> PoseVector:
    return PoseVector(d["theta"] if isinstance(d, dict) else d)


def sequence_to_json(seq: Sequence, seed: int | None = None) -> dict:
    out = {"fps": float(seq.fps), "frames": [_floats(f.theta) for f in seq.frames]}
    if seed is not None:
        out["seed"] = int(seed)
    return out


def sequence_from_json(d: dict) -> Sequence:
    return Sequence(tuple(PoseVector(f) for f in d["frames"]), float(d.get("fps", 50.0)))


# --- CSV -----------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([r.pair_id, r.gap, r.variant, _fmt(r.initial_mm), _fmt(r.final_mm), _fmt(r.time_s), int(r.converged)])
    return buf.getvalue()


def records_from_csv(text: str) -> list[PairRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise InvalidArgumentError("records CSV has no data rows")
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            out.append(
                PairRecord(
                    int(row["pair_id"]),
                    int(row["gap"]),
                    row["variant"],
                    float(row["initial_mm"]),
                    float(row["final_mm"]),
                    float(row["time_s"]),
                    bool(int(row["converged"])),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed records CSV at line {i}: {exc}") from exc
    return out


def curves_to_csv(curves: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for name, pts in curves.items():
        for t, f in pts:
            w.writerow([name, _fmt(t), _fmt(f)])
    return buf.getvalue()


def history_to_csv(history) -> str:
    lines = ["iter,objective"] + [f"{i},{_fmt(v)}" for i, v in enumerate(history)]
    return "\n".join(lines) + "\n"


def contour_to_csv(oc: OrientedContour) -> str:
    lines = ["x,y,phi"] + [f"{int(x)},{int(y)},{_fmt(p)}" for (x, y), p in zip(oc.points, oc.phi)]
    return "\n".join(lines) + "\n"


def contour_from_csv(text: str) -> OrientedContour:
    rows = list(csv.DictReader(io.StringIO(text)))
    pts = [(int(r["x"]), int(r["y"])) for r in rows]
    return OrientedContour(np.array(pts, dtype=np.int64).reshape(-1, 2), [float(r["phi"]) for r in rows])


# --- P4 bitmaps ---------------------------------------------------------


def mask_to_pbm(mask: BinaryMask) -> bytes:
    """Binary Netpbm (P4); foreground pixels are written as 1 (black)."""
    header = f"P4\n{mask.width} {mask.height}\n".encode()
    return header + np.packbits(mask.bits, axis=1).tobytes()


def mask_from_pbm(data: bytes) -> BinaryMask:
    tokens = []
    pos = 0
    while len(tokens) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode())
        pos = end
    if tokens[0] != "P4":
        raise InvalidArgumentError("not a binary P4 bitmap")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    row_bytes = (w + 7) // 8
    raw = np.frombuffer(data[pos : pos + row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(raw, axis=1)[:, :w].astype(bool)
    return BinaryMask(w, h, bits)
