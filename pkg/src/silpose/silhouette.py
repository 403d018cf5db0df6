"""Silhouette rendering, contour extraction, contour orientation and rim vertices."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, EmptyMaskError, InvalidArgumentError
from .kinematics import SkinnedMesh, Skeleton, forward_chain, skin_normals, skin_points
from .projection import Camera

TWO_PI = 2.0 * np.pi

RIM_DISTANCE_PX = 1.0
# the vertex normal may face away from the camera by at most 10 degrees past perpendicular
RIM_NORMAL_GATE = np.deg2rad(100.0)


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise InvalidArgumentError(f"mask raster is {bits.shape}, expected {(self.height, self.width)}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def border(self) -> np.ndarray:
        """Foreground pixels with at least one background 4-neighbor (outside counts as background)."""
        p = np.pad(self.bits, 1, constant_values=False)
        inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
        return self.bits & ~inner


@dataclass(frozen=True)
class Contour:
    """Closed 8-connected pixel loop, (N, 2) integer ``(x, y)`` points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if len(pts) < 3:
            raise InvalidArgumentError("a contour needs at least 3 points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def signed_area(self) -> float:
        x, y = self.points[:, 0].astype(float), self.points[:, 1].astype(float)
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def reversed(self) -> "Contour":
        return Contour(self.points[::-1])


@dataclass(frozen=True)
class OrientedContour:
    """Contour points with a full-circle tangent angle ``phi`` in [0, 2*pi) each."""

    points: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        phi = np.mod(np.asarray(self.phi, dtype=float).reshape(-1), TWO_PI)
        if len(phi) != len(pts):
            raise InvalidArgumentError("one angle per contour point required")
        pts.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "phi", phi)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def concat(cls, parts) -> "OrientedContour":
        parts = list(parts)
        return cls(np.concatenate([p.points for p in parts]), np.concatenate([p.phi for p in parts]))


@dataclass(frozen=True)
class RimProjection:
    vertex_ids: np.ndarray
    pixels: np.ndarray
    phi: np.ndarray
    camera_id: int

    def __len__(self) -> int:
        return len(self.vertex_ids)


# --- rasterization -------------------------------------------------------


@numba.njit(cache=True)
def _raster_triangles(px, py, faces, ok, height, width, out):
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        if not (ok[a] and ok[b] and ok[c]):
            continue
        ax, ay, bx, by, cx, cy = px[a], py[a], px[b], py[b], px[c], py[c]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        if area < 0.0:
            bx, by, cx, cy = cx, cy, bx, by
        x0 = max(int(np.ceil(min(ax, bx, cx))), 0)
        x1 = min(int(np.floor(max(ax, bx, cx))), width - 1)
        y0 = max(int(np.ceil(min(ay, by, cy))), 0)
        y1 = min(int(np.floor(max(ay, by, cy))), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        # top-left rule for pixel centers lying exactly on an edge
        e0x, e0y = bx - ax, by - ay
        e1x, e1y = cx - bx, cy - by
        e2x, e2y = ax - cx, ay - cy
        tl0 = (e0y == 0.0 and e0x > 0.0) or e0y < 0.0
        tl1 = (e1y == 0.0 and e1x > 0.0) or e1y < 0.0
        tl2 = (e2y == 0.0 and e2x > 0.0) or e2y < 0.0
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                w0 = e0x * (y - ay) - e0y * (x - ax)
                if w0 < 0.0 or (w0 == 0.0 and not tl0):
                    continue
                w1 = e1x * (y - by) - e1y * (x - bx)
                if w1 < 0.0 or (w1 == 0.0 and not tl1):
                    continue
                w2 = e2x * (y - cy) - e2y * (x - cx)
                if w2 < 0.0 or (w2 == 0.0 and not tl2):
                    continue
                out[y, x] = True


def _project_for_raster(vertices: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    pc = cam.to_camera(vertices)
    ok = pc[:, 2] > 1e-9
    z = np.where(ok, pc[:, 2], 1.0)
    h = pc @ cam.K.T
    return h[:, :2] / z[:, None], ok


def render_silhouette(vertices, faces, cam: Camera) -> BinaryMask:
    """Binary silhouette: a pixel is set iff its center is covered by some triangle.

    Triangles with a vertex at non-positive depth are skipped.
    """
    verts = np.asarray(vertices, dtype=float).reshape(-1, 3)
    faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
    pix, ok = _project_for_raster(verts, cam)
    bits = np.zeros((cam.height, cam.width), dtype=bool)
    _raster_triangles(
        np.ascontiguousarray(pix[:, 0]), np.ascontiguousarray(pix[:, 1]), faces, ok, cam.height, cam.width, bits
    )
    if not bits.any():
        raise EmptyMaskError("mesh does not cover any pixel center of the image")
    return BinaryMask(cam.width, cam.height, bits)


# --- contours ------------------------------------------------------------

# clockwise on screen (y down), starting west
_DIRS = np.array([(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)])
_DIR_INDEX = {(int(dx), int(dy)): i for i, (dx, dy) in enumerate(_DIRS)}


def _trace(bits: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighborhood border following.

    Stops on Jacob's criterion (start re-entered from the initial side) or
    when the first move is about to repeat, which ends loops around
    one-pixel-wide spurs.
    """
    h, w = bits.shape
    p, back = start, 0  # raster-order start: its west neighbor is background
    out = [p]
    first_move = None
    for _ in range(8 * bits.size + 8):
        for k in range(1, 9):
            d = (back + k) % 8
            cx, cy = p[0] + _DIRS[d, 0], p[1] + _DIRS[d, 1]
            if 0 <= cx < w and 0 <= cy < h and bits[cy, cx]:
                prev = (back + k - 1) % 8
                back = _DIR_INDEX[(p[0] + _DIRS[prev, 0] - cx, p[1] + _DIRS[prev, 1] - cy)]
                p = (int(cx), int(cy))
                break
        else:
            return out  # isolated pixel
        if p == start and back == 0:
            return out
        if first_move is None:
            first_move = (p, back)
        elif (p, back) == first_move:
            return out[:-1]
        out.append(p)
    raise RuntimeError("border following did not terminate")


def extract_contour(mask: BinaryMask) -> list[Contour]:
    """Outer border of every 8-connected foreground component.

    Each loop has positive signed area in (x, y) pixel coordinates, so the
    foreground lies to the left of the direction of travel in that frame.
    Components whose border has fewer than 3 points are dropped.
    """
    bits = mask.bits
    if not bits.any():
        raise EmptyMaskError("mask has no foreground")
    labels, n = ndimage.label(bits, structure=np.ones((3, 3), dtype=int))
    flat = labels.ravel()
    firsts = np.full(n + 1, -1, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # first raster index of each label
    order = np.unique(flat[nz], return_index=True)
    firsts[order[0]] = nz[order[1]]
    contours = []
    for lab in range(1, n + 1):
        y, x = divmod(int(firsts[lab]), mask.width)
        loop = _trace(bits, (x, y))
        if len(loop) < 3:
            continue
        c = Contour(np.array(loop))
        if c.signed_area() < 0:
            c = c.reversed()
        contours.append(c)
    if not contours:
        raise EmptyMaskError("no foreground component has a border of 3 or more pixels")
    return contours


def _point_segment_deviation(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = (b - a).astype(float)
    ap = (pts - a).astype(float)
    n = np.hypot(ab[0], ab[1])
    if n == 0.0:
        return np.hypot(ap[:, 0], ap[:, 1])
    return np.abs(ab[0] * ap[:, 1] - ab[1] * ap[:, 0]) / n


def _pick(dev: np.ndarray, pts: np.ndarray) -> int:
    """Index of the largest value, ties resolved by smallest (y, x)."""
    best = np.flatnonzero(dev == dev.max())
    if len(best) == 1:
        return int(best[0])
    key = pts[best, 1] * (1 << 32) + pts[best, 0]
    return int(best[np.argmin(key)])


def fit_polyline(c: Contour, tol: float) -> list[tuple[int, int]]:
    """Ramer-Douglas-Peucker simplification of a closed loop.

    The loop is first cut at its smallest-(y, x) point and the point
    farthest from it; each half is simplified independently.  Returns the
    segments as ``(start, end)`` contour indices; the last one wraps to the
    first breakpoint.  Tie-breaks depend on geometry only, so a reversed
    loop yields the same breakpoints.
    """
    pts = c.points
    n = len(pts)
    first = int(np.argmin(pts[:, 1] * (1 << 32) + pts[:, 0]))
    d0 = np.hypot(*(pts - pts[first]).T.astype(float))
    far = _pick(d0, pts)
    breaks = {first, far}
    # work on index ranges measured from `first` along the loop
    stack = [(0, (far - first) % n), ((far - first) % n, n)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        idx = (first + np.arange(lo + 1, hi)) % n
        dev = _point_segment_deviation(pts[idx], pts[(first + lo) % n], pts[(first + hi) % n])
        if dev.max() > tol:
            k = _pick(dev, pts[idx])
            mid = lo + 1 + k
            breaks.add((first + mid) % n)
            stack.append((lo, mid))
            stack.append((mid, hi))
    b = sorted(breaks)
    return [(b[i], b[(i + 1) % len(b)]) for i in range(len(b))]


def orient_contour(c: Contour, tol: float = 1.0) -> OrientedContour:
    """Give every contour point the direction angle of its covering polyline segment.

    A point belongs to the segment that starts at or before it along the
    traversal; angles follow the traversal direction.
    """
    pts = c.points
    n = len(pts)
    phi = np.empty(n)
    for start, end in fit_polyline(c, tol):
        dx, dy = pts[end] - pts[start]
        ang = np.mod(np.arctan2(dy, dx), TWO_PI)
        span = (end - start) % n or n
        phi[(start + np.arange(span)) % n] = ang
    return OrientedContour(pts, phi)


def oriented_target(mask: BinaryMask, tol: float = 1.0) -> OrientedContour:
    """All outer borders of ``mask``, oriented and pooled into one point set."""
    return OrientedContour.concat(orient_contour(c, tol) for c in extract_contour(mask))


# --- rim vertices --------------------------------------------------------


def _near_border(pix: np.ndarray, border: np.ndarray, radius: float) -> np.ndarray:
    h, w = border.shape
    base_x = np.floor(pix[:, 0]).astype(np.int64)
    base_y = np.floor(pix[:, 1]).astype(np.int64)
    best = np.full(len(pix), np.inf)
    r = int(np.ceil(radius))
    for oy in range(-r, r + 2):
        for ox in range(-r, r + 2):
            x, y = base_x + ox, base_y + oy
            inside = (x >= 0) & (x < w) & (y >= 0) & (y < h)
            hit = np.zeros(len(pix), dtype=bool)
            hit[inside] = border[y[inside], x[inside]]
            d = np.hypot(pix[:, 0] - x, pix[:, 1] - y)
            best = np.where(hit, np.minimum(best, d), best)
    return best <= radius


def image_normal_angles(points: np.ndarray, normals: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Angle of each normal's image-plane projection and its length in px per unit."""
    pc = cam.to_camera(points)
    hp = pc @ cam.K.T
    dn = (normals @ cam.R.T) @ cam.K.T
    z = hp[:, 2:3]
    d2 = (dn[:, :2] - hp[:, :2] / z * dn[:, 2:3]) / z
    return np.arctan2(d2[:, 1], d2[:, 0]), np.hypot(d2[:, 0], d2[:, 1])


def rim_from_posed(vertices, normals, valid, faces, cam: Camera, camera_id: int = 0):
    """Rim vertices of an already skinned mesh; returns ``(rim, rendered_mask)``."""
    mask = render_silhouette(vertices, faces, cam)
    pc = cam.to_camera(vertices)
    in_front = pc[:, 2] > 1e-9
    hp = pc @ cam.K.T
    pix = hp[:, :2] / np.where(in_front, hp[:, 2], 1.0)[:, None]
    to_cam = cam.center - vertices
    to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
    facing = np.einsum("ij,ij->i", normals, to_cam) >= np.cos(RIM_NORMAL_GATE)
    keep = in_front & valid & facing
    keep &= _near_border(pix, mask.border(), RIM_DISTANCE_PX)
    ids = np.flatnonzero(keep)
    ang, length = image_normal_angles(vertices[ids], normals[ids], cam)
    ok = length > 1e-9
    ids, ang = ids[ok], ang[ok]
    rim = RimProjection(ids, pix[ids], np.mod(ang + np.pi / 2.0, TWO_PI), camera_id)
    return rim, mask


def posed_geometry(skel: Skeleton, mesh: SkinnedMesh, pose):
    """Skinned vertices, normals and normal validity for ``pose``."""
    T, _ = forward_chain(skel, pose)
    verts = skin_points(mesh.rest_vertices, mesh.weights, T)
    normals, valid = skin_normals(mesh, T)
    return verts, normals, valid


def rim_vertices(skel: Skeleton, mesh: SkinnedMesh, pose, cam: Camera, camera_id: int = 0) -> RimProjection:
    """Vertices of the posed mesh that project onto its own silhouette border.

    Each entry's ``phi`` is the projected normal rotated by +pi/2, which is
    the tangent direction of a border traversed the way ``extract_contour``
    orders it.  Raises DegenerateInputError when no vertex qualifies.
    """
    verts, normals, valid = posed_geometry(skel, mesh, pose)
    rim, _ = rim_from_posed(verts, normals, valid, mesh.faces, cam, camera_id)
    if len(rim) == 0:
        raise DegenerateInputError(f"camera {camera_id} has no rim vertices")
    return rim
