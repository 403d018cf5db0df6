import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from silpose.benchmark import SyntheticModelSpec, capsule, make_model
from silpose.chamfer import circular_distance
from silpose.errors import EmptyMaskError
from silpose.projection import Camera, project_points
from silpose.silhouette import (
    BinaryMask,
    extract_contour,
    fit_polyline,
    orient_contour,
    oriented_target,
    posed_geometry,
    render_silhouette,
    rim_from_posed,
    rim_vertices,
)


def mask_of(bits):
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(bits.shape[1], bits.shape[0], bits)


def front_camera(w=64, h=64, f=100.0, dist=100.0):
    # looks down +z from z = -dist
    K = [[f, 0, (w - 1) / 2], [0, f, (h - 1) / 2], [0, 0, 1]]
    return Camera(K, np.eye(3), (0, 0, dist), w, h)


def uv_sphere(center, radius, n_lat=24, n_lon=48):
    verts, normals = [], []
    for i in range(1, n_lat):
        lat = np.pi * i / n_lat - np.pi / 2
        for j in range(n_lon):
            lon = 2 * np.pi * j / n_lon
            n = np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
            verts.append(center + radius * n)
            normals.append(n)
    south, north = len(verts), len(verts) + 1
    verts += [center - (0, 0, radius), center + (0, 0, radius)]
    normals += [(0, 0, -1.0), (0, 0, 1.0)]
    faces = []
    ring = lambda i, j: (i * n_lon) + (j % n_lon)  # noqa: E731
    for j in range(n_lon):
        faces.append((south, ring(0, j + 1), ring(0, j)))
        faces.append((north, ring(n_lat - 2, j), ring(n_lat - 2, j + 1)))
        for i in range(n_lat - 2):
            faces.append((ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)))
            faces.append((ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)))
    return np.array(verts), np.array(normals), np.array(faces)


class TestRender:
    def test_large_triangle_covers_center(self):
        cam = front_camera()
        tri = np.array([[-50.0, -50, 0], [50, -50, 0], [0, 60, 0]])
        m = render_silhouette(tri, np.array([[0, 1, 2]]), cam)
        assert m.bits[32, 32] and m.bits[20:40, 25:40].all()

    def test_behind_camera_is_empty(self):
        cam = front_camera()
        tri = np.array([[-5.0, -5, -200], [5, -5, -200], [0, 5, -200]])
        with pytest.raises(EmptyMaskError):
            render_silhouette(tri, np.array([[0, 1, 2]]), cam)

    def test_pixel_center_rule_on_square(self):
        # square covering exactly x in [9.5, 13.5] etc at depth where 1 unit = 1 px
        cam = Camera([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1]], np.eye(3), (0, 0, 1.0), 32, 32)
        q = np.array([[9.5, 9.5, 0], [13.5, 9.5, 0], [13.5, 13.5, 0], [9.5, 13.5, 0]])
        m = render_silhouette(q, np.array([[0, 1, 2], [0, 2, 3]]), cam)
        # top-left rule: left/top edges through centers are in, right/bottom are out
        assert m.area == 16
        assert m.bits[10:14, 10:14].all()

    def test_capsule_area_matches_analytic(self, rng):
        for _ in range(5):
            r, L = rng.uniform(5, 12), rng.uniform(20, 50)
            ang = rng.uniform(0, np.pi)
            axis = np.array([np.cos(ang), np.sin(ang), 0.0])
            base = -0.5 * L * axis
            v, _, f, _ = capsule(base, axis, L, r, segments=96, cap_rings=24, ring_spacing=2.0)
            f_px, dist = 4000.0, 2000.0
            cam = front_camera(256, 256, f_px, dist)
            area = render_silhouette(v, f, cam).area
            s = f_px / dist
            expect = s * s * (2 * r * L + np.pi * r * r)
            assert abs(area - expect) / expect < 0.02


class TestContour:
    def test_three_by_three_square(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[1:4, 1:4] = True
        (c,) = extract_contour(mask_of(bits))
        assert len(c) == 8
        assert c.signed_area() > 0
        assert {tuple(p) for p in c.points} == {(x, y) for x in (1, 2, 3) for y in (1, 2, 3)} - {(2, 2)}

    def test_two_squares(self):
        bits = np.zeros((10, 12), dtype=bool)
        bits[1:4, 1:4] = True
        bits[5:9, 6:11] = True
        assert len(extract_contour(mask_of(bits))) == 2

    def test_empty_mask(self):
        with pytest.raises(EmptyMaskError):
            extract_contour(mask_of(np.zeros((4, 4))))

    def test_thin_spur_terminates(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:5, 2:5] = True
        bits[3, 5:8] = True
        (c,) = extract_contour(mask_of(bits))
        assert {(7, 3), (6, 3), (5, 3)} <= {tuple(p) for p in c.points}

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_points_are_border_pixels(self, seed):
        rng = np.random.default_rng(seed)
        bits = np.zeros((40, 40), dtype=bool)
        yy, xx = np.mgrid[:40, :40]
        for _ in range(rng.integers(1, 4)):
            cx, cy, r = rng.uniform(8, 32, 2).tolist() + [rng.uniform(3, 9)]
            bits |= (xx - cx) ** 2 / r**2 + (yy - cy) ** 2 / (r * rng.uniform(0.5, 1.5)) ** 2 <= 1
        mask = mask_of(bits)
        try:
            contours = extract_contour(mask)
        except EmptyMaskError:
            return
        p = np.pad(bits, 1)
        for c in contours:
            assert c.signed_area() > 0
            for x, y in c.points:
                assert bits[y, x]
                assert not (p[y, x + 1] and p[y + 2, x + 1] and p[y + 1, x] and p[y + 1, x + 2])


def rect_contour():
    bits = np.zeros((20, 30), dtype=bool)
    bits[4:12, 5:25] = True
    (c,) = extract_contour(mask_of(bits))
    return c


def circle_contour(r=20, size=64):
    yy, xx = np.mgrid[:size, :size]
    c0 = (size - 1) / 2
    bits = (xx - c0) ** 2 + (yy - c0) ** 2 <= r * r
    (c,) = extract_contour(mask_of(bits))
    return c, c0


class TestOrientation:
    def test_rectangle_four_directions(self):
        oc = orient_contour(rect_contour(), 0.5)
        got = sorted(set(np.round(oc.phi, 12)))
        assert np.allclose(got, [0, np.pi / 2, np.pi, 3 * np.pi / 2])
        assert len(fit_polyline(rect_contour(), 0.5)) == 4

    def test_large_tolerance_gives_two_segments(self):
        c, _ = circle_contour()
        assert len(fit_polyline(c, 1e9)) == 2
        assert len(fit_polyline(rect_contour(), 1e9)) == 2

    @staticmethod
    def _tangent_error(r, size, center):
        yy, xx = np.mgrid[:size, :size]
        bits = (xx - center) ** 2 + (yy - center) ** 2 <= r * r
        (c,) = extract_contour(mask_of(bits))
        oc = orient_contour(c, 1.0)
        rel = oc.points - center
        # positive area in (x, y) means the tangent is the radial direction + pi/2
        tangent = np.mod(np.arctan2(rel[:, 1], rel[:, 0]) + np.pi / 2, 2 * np.pi)
        return circular_distance(oc.phi, tangent)

    @pytest.mark.parametrize("center", [31.5, 31.75, 32.0, 31.8])
    def test_circle_tangent_within_chord_bound(self, center):
        # a chord with sagitta tol + half a pixel of digitization turns by at most acos(1 - s/r)
        bound = np.arccos(1 - 1.5 / 20)
        assert np.max(self._tangent_error(20, 64, center)) < bound

    @pytest.mark.xfail(strict=True, reason="segment-angle assignment at tol=1 reaches about 18 deg on this circle")
    def test_circle_tangent_within_15_degrees(self):
        assert np.max(self._tangent_error(20, 64, 32.0)) < np.deg2rad(15)

    def test_reversal_flips_orientation(self):
        for r in (9, 17, 23):
            c, _ = circle_contour(r, 50)
            fwd = orient_contour(c, 1.0)
            rev = orient_contour(c.reversed(), 1.0)
            n = len(c)
            # breakpoints take the outgoing segment, which differs between directions
            breaks = {s for s, _ in fit_polyline(c, 1.0)}
            inner = np.array([i for i in range(n) if i not in breaks])
            # reversed index i is forward index n-1-i
            d = circular_distance(rev.phi[::-1][inner], np.mod(fwd.phi[inner] + np.pi, 2 * np.pi))
            assert np.max(d) < 1e-9

    def test_reversed_loop_has_same_breakpoints(self):
        c, _ = circle_contour(17, 50)
        n = len(c)
        fwd = {s for s, _ in fit_polyline(c, 1.0)}
        rev = {n - 1 - s for s, _ in fit_polyline(c.reversed(), 1.0)}
        assert fwd == rev

    def test_oriented_target_pools_components(self):
        bits = np.zeros((10, 12), dtype=bool)
        bits[1:4, 1:4] = True
        bits[5:9, 6:11] = True
        oc = oriented_target(mask_of(bits))
        assert len(oc) == sum(len(c) for c in extract_contour(mask_of(bits)))


class TestRim:
    def test_sphere_rim_ring(self):
        cam = front_camera(128, 128, 150.0, 200.0)
        v, n, f = uv_sphere(np.zeros(3), 30.0)
        rim, mask = rim_from_posed(v, n, np.ones(len(v), dtype=bool), f, cam)
        assert len(rim) >= 24
        border = np.argwhere(mask.border())[:, ::-1]
        d = np.min(np.linalg.norm(rim.pixels[:, None, :] - border[None], axis=2), axis=1)
        assert np.max(d) <= 1.0
        center = project_points(np.zeros((1, 3)), cam)[0]
        ang = np.arctan2(*(rim.pixels - center).T[::-1])
        occupied = np.unique(np.floor((ang + np.pi) / (np.pi / 4)).astype(int) % 8)
        assert len(occupied) == 8

    def test_rest_pose_is_deterministic(self, small_model):
        skel, mesh, cam = small_model.skeleton, small_model.mesh, small_model.cameras[0]
        a = rim_vertices(skel, mesh, skel.zero_pose(), cam)
        b = rim_vertices(skel, mesh, np.zeros(skel.dof_count), cam)
        assert np.array_equal(a.vertex_ids, b.vertex_ids)

    def test_rim_orientation_matches_contour(self, rng):
        m = make_model(SyntheticModelSpec(chains=1, bones_per_chain=1))
        for _ in range(5):
            pose = np.zeros(6)
            pose[:3] = rng.uniform(-10, 10, 3)
            pose[3:] = rng.uniform(-0.5, 0.5, 3)
            v, _, _ = posed_geometry(m.skeleton, m.mesh, pose)
            for cam in m.cameras:
                rim = rim_vertices(m.skeleton, m.mesh, pose, cam)
                oc = oriented_target(render_silhouette(v, m.mesh.faces, cam))
                D = np.linalg.norm(rim.pixels[:, None, :] - oc.points[None].astype(float), axis=2)
                # pixel ties: any contour point within 1 px of the closest one counts as nearest
                near = D <= D.min(axis=1, keepdims=True) + 1.0
                err = np.where(near, circular_distance(rim.phi[:, None], oc.phi[None]), np.inf).min(axis=1)
                assert np.mean(err < np.deg2rad(20)) >= 0.9
