"""Brute-force reference implementations shared by the unit and acceptance tests."""

import numpy as np

from silpose.silhouette import BinaryMask, OrientedContour, extract_contour, orient_contour


def grid(w, h):
    yy, xx = np.mgrid[:h, :w]
    return np.stack([xx, yy], axis=-1).astype(float)


def nn_distance(points, w, h):
    """Exhaustive distance to the nearest point at every pixel, shape (h, w)."""
    g = grid(w, h).reshape(-1, 1, 2)
    d = np.linalg.norm(g - np.asarray(points, dtype=float)[None], axis=2)
    return d.min(axis=1).reshape(h, w), d.reshape(h, w, -1)


def dt3_exhaustive(oc, w, h, cfg):
    """min over (q, snapped phi_q) of |p - q| + lam * circular distance between bin centers."""
    nb = cfg.bins
    centers = cfg.bin_centers()
    qbin = cfg.snap(oc.phi)
    _, pair = nn_distance(oc.points, w, h)  # (h, w, n)
    out = np.empty((nb, h, w))
    for o in range(nb):
        r = np.mod(centers[o] - centers[qbin], cfg.mode.period)
        ang = np.minimum(r, cfg.mode.period - r)
        out[o] = (pair + cfg.lam * ang[None, None, :]).min(axis=2)
    return out


def random_blob_mask(rng, w, h, blobs=3):
    yy, xx = np.mgrid[:h, :w]
    bits = np.zeros((h, w), dtype=bool)
    for _ in range(blobs):
        cx, cy = rng.uniform(0.2 * w, 0.8 * w), rng.uniform(0.2 * h, 0.8 * h)
        rx, ry = rng.uniform(0.05 * w, 0.25 * w), rng.uniform(0.05 * h, 0.25 * h)
        a = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(a) + (yy - cy) * np.sin(a)
        v = -(xx - cx) * np.sin(a) + (yy - cy) * np.cos(a)
        bits |= (u / rx) ** 2 + (v / ry) ** 2 <= 1
    return BinaryMask(w, h, bits)


def random_oriented_contour(rng, w, h, blobs=3):
    """Oriented outer borders of random elliptical blobs."""
    cs = extract_contour(random_blob_mask(rng, w, h, blobs))
    return OrientedContour.concat(orient_contour(c, 1.0) for c in cs)
