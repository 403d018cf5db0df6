"""Generalized Chamfer distance: circular distances, distance fields and the five variants.

Rim points are evaluated at their nearest pixel center (``floor(x + 0.5)``),
clamped to the image, so every score is an exact lookup into a field.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numba
import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .projection import Camera, PixelPoint, PluckerLine, backproject_many
from .silhouette import Contour, OrientedContour, RimProjection

TWO_PI = 2.0 * np.pi


class CircularMode(enum.Enum):
    SIGNED = "signed"
    UNSIGNED = "unsigned"

    @property
    def period(self) -> float:
        return TWO_PI if self is CircularMode.SIGNED else np.pi


class Variant(enum.Enum):
    CH = "ch"
    DCH_THRES = "dch-thres"
    DCH_QUANT = "dch-quant"
    DCH_QUANT2 = "dch-quant2"
    DCH_DT3 = "dch-dt3"


def circular_distance(a, b, mode: CircularMode = CircularMode.SIGNED):
    """Shortest angular difference; [0, pi] signed, [0, pi/2] unsigned."""
    period = mode.period
    r = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), period)
    out = np.minimum(r, period - r)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ChamferConfig:
    variant: Variant = Variant.CH
    tau: float = np.deg2rad(22.5)
    K: float | None = None
    lam: float = 25.0
    bins: int = 16
    mode: CircularMode = CircularMode.SIGNED
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "mode", CircularMode(self.mode))
        if not 0.0 < self.tau <= np.pi:
            raise InvalidArgumentError("tau must lie in (0, pi]")
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be non-negative")
        if int(self.bins) != self.bins or self.bins < 2:
            raise InvalidArgumentError("bins must be an integer >= 2")
        object.__setattr__(self, "bins", int(self.bins))
        if self.K is not None and not self.K > 0:
            raise InvalidArgumentError("K must be positive")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        suffix = "-180" if self.mode is CircularMode.UNSIGNED else ""
        return self.variant.value + suffix

    def penalty(self, width: int, height: int) -> float:
        """K, defaulting to the image diagonal."""
        return float(np.hypot(width, height)) if self.K is None else float(self.K)

    @property
    def bin_width(self) -> float:
        return self.mode.period / self.bins

    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) * self.bin_width

    def snap(self, phi) -> np.ndarray:
        """Bin of the nearest center; exact midpoints go to the lower index."""
        r = np.mod(np.asarray(phi, dtype=float), self.mode.period)
        idx = np.ceil(r / self.bin_width).astype(np.int64) - 1
        return np.clip(idx, 0, self.bins - 1)

    def two_nearest_bins(self, phi) -> tuple[np.ndarray, np.ndarray]:
        """Containing bin and the neighbor on the side ``phi`` leans to."""
        r = np.mod(np.asarray(phi, dtype=float), self.mode.period)
        first = self.snap(r)
        centers = self.bin_centers()[first]
        second = np.where(r > centers, first + 1, first - 1) % self.bins
        return first, second

    def to_json(self) -> dict:
        return {
            "variant": self.variant.value,
            "tau_deg": float(np.rad2deg(self.tau)),
            "K": self.K,
            "lambda": self.lam,
            "bins": self.bins,
            "mode": self.mode.value,
            **({"label": self.label} if self.label else {}),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ChamferConfig":
        default = cls()
        tau = d.get("tau_deg")
        lam = d.get("lambda")
        bins = d.get("bins")
        return cls(
            variant=Variant(d.get("variant", default.variant.value)),
            tau=default.tau if tau is None else float(np.deg2rad(tau)),
            K=d.get("K"),
            lam=default.lam if lam is None else float(lam),
            bins=default.bins if bins is None else bins,
            mode=CircularMode(d.get("mode") or default.mode.value),
            label=d.get("label"),
        )


# --- exact Euclidean distance transform -----------------------------------


@numba.njit(cache=True)
def _edt_labels(seed, out_d2, out_lab):
    """Squared EDT with nearest-seed labels.

    ``seed`` holds a non-negative label at seed pixels and -1 elsewhere.
    Column pass: nearest seed above/below (ties to smaller label).  Row
    pass: lower envelope of parabolas.
    """
    h, w = seed.shape
    inf = np.inf
    g = np.empty((h, w))
    glab = np.empty((h, w), dtype=np.int64)
    for x in range(w):
        last = -1
        for y in range(h):
            if seed[y, x] >= 0:
                last = y
            if last >= 0:
                g[y, x] = y - last
                glab[y, x] = seed[last, x]
            else:
                g[y, x] = inf
                glab[y, x] = -1
        last = -1
        for y in range(h - 1, -1, -1):
            if seed[y, x] >= 0:
                last = y
            if last >= 0:
                dy = last - y
                lab = seed[last, x]
                if dy < g[y, x] or (dy == g[y, x] and lab < glab[y, x]):
                    g[y, x] = dy
                    glab[y, x] = lab
    v = np.empty(w, dtype=np.int64)
    z = np.empty(w + 1)
    for y in range(h):
        k = -1
        for q in range(w):
            if g[y, q] == inf:
                continue
            fq = g[y, q] * g[y, q]
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -inf
                z[1] = inf
                continue
            while True:
                p = v[k]
                fp = g[y, p] * g[y, p]
                s = ((fq + q * q) - (fp + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            k += 1
            v[k] = q
            z[k] = -inf if k == 0 else s
            z[k + 1] = inf
        if k < 0:
            for q in range(w):
                out_d2[y, q] = inf
                out_lab[y, q] = -1
            continue
        j = 0
        for q in range(w):
            while z[j + 1] < q:
                j += 1
            p = v[j]
            out_d2[y, q] = (q - p) * (q - p) + g[y, p] * g[y, p]
            out_lab[y, q] = glab[y, p]


@dataclass(frozen=True)
class DistanceField2D:
    width: int
    height: int
    dist: np.ndarray
    nearest: np.ndarray

    def __post_init__(self):
        self.dist.setflags(write=False)
        self.nearest.setflags(write=False)


def _as_points(c) -> np.ndarray:
    if isinstance(c, (Contour, OrientedContour)):
        return c.points
    return np.asarray(c, dtype=np.int64).reshape(-1, 2)


def _seed_raster(points: np.ndarray, indices: np.ndarray, w: int, h: int) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    if np.any((x < 0) | (x >= w) | (y < 0) | (y >= h)):
        raise InvalidArgumentError("contour point outside the image")
    seed = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    # smallest contour index wins where points repeat
    np.minimum.at(seed, (y, x), indices)
    seed[seed == np.iinfo(np.int64).max] = -1
    return seed


def _df_from_seed(seed: np.ndarray, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.empty((h, w))
    lab = np.empty((h, w), dtype=np.int64)
    _edt_labels(seed, d2, lab)
    return np.sqrt(d2), lab


def build_df2(c, w: int, h: int) -> DistanceField2D:
    """Exact Euclidean distance to the nearest contour point, with its index."""
    pts = _as_points(c)
    if len(pts) == 0:
        raise InvalidArgumentError("distance field needs at least one contour point")
    seed = _seed_raster(pts, np.arange(len(pts)), w, h)
    dist, lab = _df_from_seed(seed, w, h)
    return DistanceField2D(w, h, dist, lab)


def build_bin_fields(oc: OrientedContour, w: int, h: int, cfg: ChamferConfig) -> list[DistanceField2D | None]:
    """One field per orientation bin over the contour points snapped to it; None for empty bins."""
    bins = cfg.snap(oc.phi)
    fields: list[DistanceField2D | None] = []
    for b in range(cfg.bins):
        sel = np.flatnonzero(bins == b)
        if len(sel) == 0:
            fields.append(None)
            continue
        seed = _seed_raster(oc.points[sel], sel, w, h)
        dist, lab = _df_from_seed(seed, w, h)
        fields.append(DistanceField2D(w, h, dist, lab))
    return fields


@dataclass(frozen=True)
class DistanceTensor3D:
    width: int
    height: int
    bins: int
    dist: np.ndarray  # (bins, height, width)
    nearest: np.ndarray
    bin_centers: np.ndarray


def relax_orientation(dist: np.ndarray, nearest: np.ndarray, step: float, rounds: int = 2) -> bool:
    """Forward then backward circular min-plus passes over the bin axis, in place.

    Returns True when anything changed.
    """
    nb = dist.shape[0]
    changed = False
    for direction in (1, -1):
        for i in range(rounds * nb):
            o = (i * direction) % nb
            prev = (o - direction) % nb
            cand = dist[prev] + step
            better = cand < dist[o]
            if better.any():
                changed = True
                dist[o] = np.where(better, cand, dist[o])
                nearest[o] = np.where(better, nearest[prev], nearest[o])
    return changed


def build_dt3(oc: OrientedContour, w: int, h: int, cfg: ChamferConfig) -> DistanceTensor3D:
    """Quantized directional distance tensor.

    ``dist[o, y, x]`` is the min over contour points q of
    ``|(x, y) - q| + lam * |center(o) - center(bin(phi(q)))|``.
    """
    if len(oc) == 0:
        raise InvalidArgumentError("distance tensor needs at least one contour point")
    dist = np.full((cfg.bins, h, w), np.inf)
    nearest = np.full((cfg.bins, h, w), -1, dtype=np.int64)
    for b, f in enumerate(build_bin_fields(oc, w, h, cfg)):
        if f is not None:
            dist[b] = f.dist
            nearest[b] = f.nearest
    relax_orientation(dist, nearest, cfg.lam * cfg.bin_width)
    dist.setflags(write=False)
    nearest.setflags(write=False)
    return DistanceTensor3D(w, h, cfg.bins, dist, nearest, cfg.bin_centers())


@dataclass(frozen=True)
class TargetFields:
    """Everything the variants need from one camera's target contour."""

    contour: OrientedContour
    width: int
    height: int
    df2: DistanceField2D | None = None
    bin_fields: list | None = None
    dt3: DistanceTensor3D | None = None


def prepare_fields(oc: OrientedContour, w: int, h: int, cfg: ChamferConfig) -> TargetFields:
    """Build only the fields ``cfg.variant`` reads."""
    v = cfg.variant
    df2 = build_df2(oc, w, h) if v in (Variant.CH, Variant.DCH_THRES) else None
    bin_fields = build_bin_fields(oc, w, h, cfg) if v in (Variant.DCH_QUANT, Variant.DCH_QUANT2) else None
    dt3 = build_dt3(oc, w, h, cfg) if v is Variant.DCH_DT3 else None
    return TargetFields(oc, w, h, df2, bin_fields, dt3)


# --- scoring and correspondences ------------------------------------------


def pixel_index(pixels, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pixels, dtype=float).reshape(-1, 2)
    ix = np.clip(np.floor(p[:, 0] + 0.5), 0, w - 1).astype(np.int64)
    iy = np.clip(np.floor(p[:, 1] + 0.5), 0, h - 1).astype(np.int64)
    return ix, iy


@dataclass(frozen=True)
class _Matches:
    """Per rim entry (possibly two for soft binning): matched contour index and distance."""

    rim_index: np.ndarray
    target: np.ndarray  # contour index, -1 where no contour point is admissible
    dist: np.ndarray


def _matches(rim: RimProjection, fields: TargetFields, cfg: ChamferConfig) -> _Matches:
    w, h = fields.width, fields.height
    ix, iy = pixel_index(rim.pixels, w, h)
    n = len(ix)
    rows = np.arange(n)
    v = cfg.variant
    if v in (Variant.CH, Variant.DCH_THRES):
        f = fields.df2
        return _Matches(rows, f.nearest[iy, ix], f.dist[iy, ix])
    if v is Variant.DCH_DT3:
        b = cfg.snap(rim.phi)
        t = fields.dt3
        return _Matches(rows, t.nearest[b, iy, ix], t.dist[b, iy, ix])
    if v is Variant.DCH_QUANT:
        bins = [cfg.snap(rim.phi)]
    else:
        bins = list(cfg.two_nearest_bins(rim.phi))
    rim_index, target, dist = [], [], []
    for b in bins:
        tgt = np.full(n, -1, dtype=np.int64)
        d = np.full(n, np.inf)
        for k in np.unique(b):
            f = fields.bin_fields[k]
            if f is None:
                continue
            sel = b == k
            tgt[sel] = f.nearest[iy[sel], ix[sel]]
            d[sel] = f.dist[iy[sel], ix[sel]]
        rim_index.append(rows)
        target.append(tgt)
        dist.append(d)
    return _Matches(np.concatenate(rim_index), np.concatenate(target), np.concatenate(dist))


def score_terms(rim: RimProjection, oc: OrientedContour, fields: TargetFields, cfg: ChamferConfig) -> tuple[float, int]:
    """Sum of penalty terms and the normalizer count for one camera."""
    if len(rim) == 0:
        raise DegenerateInputError("rim projection is empty")
    m = _matches(rim, fields, cfg)
    K = cfg.penalty(fields.width, fields.height)
    f = m.dist.copy()
    if cfg.variant is Variant.DCH_THRES:
        dphi = circular_distance(rim.phi[m.rim_index], oc.phi[m.target], cfg.mode)
        f = np.where(dphi < cfg.tau, f, K)
    if cfg.variant in (Variant.DCH_QUANT, Variant.DCH_QUANT2):
        # no admissible point in the bin, or too far: saturate at K
        f = np.minimum(f, K)
    return float(f.sum()), len(f)


def chamfer_score(rim: RimProjection, oc: OrientedContour, fields: TargetFields, cfg: ChamferConfig) -> float:
    """Generalized Chamfer distance of one camera's rim against its target contour."""
    total, z = score_terms(rim, oc, fields, cfg)
    return total / z


def multiview_score(rims, contours, fields, cfg: ChamferConfig) -> float:
    """Global normalization: all penalty terms over all normalizer counts."""
    total, z = 0.0, 0
    for rim, oc, f in zip(rims, contours, fields):
        t, n = score_terms(rim, oc, f, cfg)
        total += t
        z += n
    if z == 0:
        raise DegenerateInputError("no rim entries in any camera")
    return total / z


@dataclass(frozen=True)
class Correspondence:
    vertex_id: int
    camera_id: int
    target: PixelPoint
    ray: PluckerLine


@dataclass(frozen=True)
class Correspondences:
    """Batched correspondences; ``rejected_all`` flags a set emptied by rejection."""

    vertex_ids: np.ndarray
    camera_ids: np.ndarray
    targets: np.ndarray
    d: np.ndarray
    m: np.ndarray
    rejected_all: bool = False

    def __len__(self) -> int:
        return len(self.vertex_ids)

    def __iter__(self) -> Iterator[Correspondence]:
        for i in range(len(self)):
            yield Correspondence(
                int(self.vertex_ids[i]),
                int(self.camera_ids[i]),
                PixelPoint(float(self.targets[i, 0]), float(self.targets[i, 1])),
                PluckerLine(self.d[i], self.m[i]),
            )

    @classmethod
    def empty(cls, rejected_all: bool = False) -> "Correspondences":
        return cls(
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, 2)),
            np.zeros((0, 3)),
            np.zeros((0, 3)),
            rejected_all,
        )

    @classmethod
    def from_lines(cls, vertex_ids, d, m, camera_ids=None, targets=None) -> "Correspondences":
        vertex_ids = np.asarray(vertex_ids, dtype=np.int64).reshape(-1)
        n = len(vertex_ids)
        return cls(
            vertex_ids,
            np.zeros(n, dtype=np.int64) if camera_ids is None else np.asarray(camera_ids, dtype=np.int64),
            np.full((n, 2), np.nan) if targets is None else np.asarray(targets, dtype=float),
            np.asarray(d, dtype=float).reshape(n, 3),
            np.asarray(m, dtype=float).reshape(n, 3),
        )

    @classmethod
    def concat(cls, parts) -> "Correspondences":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(rejected_all=True)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("vertex_ids", "camera_ids", "targets", "d", "m")))


def select_correspondences(
    rim: RimProjection, oc: OrientedContour, fields: TargetFields, cfg: ChamferConfig, cam: Camera
) -> Correspondences:
    """Pair each rim vertex with its variant-specific closest contour point and back-project it.

    DCH-Thres drops pairs whose orientations differ by tau or more instead of
    penalizing them; DCH-Quant2 yields up to two pairs per vertex.
    """
    if len(rim) == 0:
        raise DegenerateInputError("rim projection is empty")
    m = _matches(rim, fields, cfg)
    keep = m.target >= 0
    if cfg.variant in (Variant.DCH_QUANT, Variant.DCH_QUANT2):
        # saturated terms carry no pose gradient
        keep &= m.dist < cfg.penalty(fields.width, fields.height)
    if cfg.variant is Variant.DCH_THRES:
        tgt = np.where(keep, m.target, 0)
        keep &= circular_distance(rim.phi[m.rim_index], oc.phi[tgt], cfg.mode) < cfg.tau
    if not keep.any():
        return Correspondences.empty(rejected_all=True)
    rows, tgt = m.rim_index[keep], m.target[keep]
    q = oc.points[tgt].astype(float)
    d, mo = backproject_many(q, cam)
    return Correspondences(
        rim.vertex_ids[rows].astype(np.int64),
        np.full(len(rows), rim.camera_id, dtype=np.int64),
        q,
        d,
        mo,
    )
