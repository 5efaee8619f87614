import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifted.geometry import quat_from_axis_angle, triangulate
from lifted.model import CameraPose, InstanceRecord, ShapeModel, UvGrid
from lifted.render import (export_obj, rasterize, rasterize_screen, read_obj,
                           render_normal_map_uv, shaded_render, uv_pixel_coords)


def bary_oracle(p, a, b, c):
    # solve p = a + s (b - a) + t (c - a)
    M = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
    s, t = np.linalg.solve(M, np.asarray(p) - a)
    return np.array([1 - s - t, s, t])


def test_single_triangle_against_oracle():
    xy = np.array([[1.3, 0.7], [8.6, 2.2], [3.1, 7.9]])
    attr = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    img = rasterize_screen(xy, np.zeros(3), [[0, 1, 2]], attr, 10, 10)
    for r in range(10):
        for c in range(10):
            w = bary_oracle((c, r), *xy)
            inside = np.all(w > 1e-9)
            outside = np.any(w < -1e-9)
            if inside:
                assert img.mask[r, c]
                assert np.allclose(img.color[r, c], w, atol=1e-12)
            elif outside:
                assert not img.mask[r, c]


def test_winding_does_not_matter():
    xy = np.array([[1.3, 0.7], [8.6, 2.2], [3.1, 7.9]])
    attr = np.arange(3.0)[:, None]
    a = rasterize_screen(xy, np.zeros(3), [[0, 1, 2]], attr, 10, 10)
    b = rasterize_screen(xy, np.zeros(3), [[0, 2, 1]], attr, 10, 10)
    assert np.array_equal(a.mask, b.mask)
    assert np.allclose(a.color, b.color, atol=1e-12)


def test_nearer_triangle_wins():
    xy = np.array([[0, 0], [9, 0], [0, 9], [0, 0], [9, 0], [0, 9]], float)
    depth = np.array([5, 5, 5, 1, 1, 1], float)
    attr = np.array([0, 0, 0, 1, 1, 1], float)
    img = rasterize_screen(xy, depth, [[0, 1, 2], [3, 4, 5]], attr, 10, 10)
    assert np.allclose(img.color[img.mask, 0], 1.0)
    assert np.all(img.triangle[img.mask] == 1)


def test_shared_edge_pixels_owned_once():
    # quad split on a diagonal that passes exactly through pixel centers
    xy = np.array([[0, 0], [6, 0], [6, 6], [0, 6]], float)
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    z = np.zeros(4)
    a = rasterize_screen(xy, z, tris[:1], np.ones(4), 8, 8)
    b = rasterize_screen(xy, z, tris[1:], np.ones(4), 8, 8)
    assert not np.any(a.mask & b.mask)
    both = rasterize_screen(xy, z, tris, np.ones(4), 8, 8)
    assert np.array_equal(both.mask, a.mask | b.mask)


def test_background():
    img = rasterize_screen(np.array([[0, 0], [1, 0], [0, 1]], float), np.zeros(3), [[0, 1, 2]],
                           np.ones(3), 5, 5)
    bg = ~img.mask
    assert np.all(np.isinf(img.depth[bg])) and np.all(img.triangle[bg] == -1)
    assert np.all(img.color[bg] == 0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_order_independence_bitwise(seed):
    r = np.random.default_rng(seed)
    V = 30
    xy = r.uniform(-2, 22, (V, 2))
    xy[:10] = np.round(xy[:10])  # integer vertices create edge/vertex hits
    depth = np.round(r.uniform(0, 3, V), 1)  # coarse depths create exact ties
    tris = r.integers(0, V, (40, 3))
    attr = r.normal(size=(V, 3))
    a = rasterize_screen(xy, depth, tris, attr, 20, 20)
    b = rasterize_screen(xy, depth, tris, attr, 20, 20, order=np.arange(len(tris))[::-1])
    c = rasterize_screen(xy, depth, tris, attr, 20, 20, order=r.permutation(len(tris)))
    for other in (b, c):
        assert np.array_equal(a.triangle, other.triangle)
        assert a.color.tobytes() == other.color.tobytes()
        assert a.depth.tobytes() == other.depth.tobytes()


def flat_model(n=8):
    g = UvGrid(n)
    mean = np.concatenate([g.uv - 0.5, np.zeros((g.num_vertices, 1))], axis=1)
    return ShapeModel(g, mean, np.zeros((0, g.num_vertices, 3)), np.zeros((0, g.num_vertices, 3)))


def test_flat_normal_map_points_up():
    m = flat_model()
    normals, mask = render_normal_map_uv(m, InstanceRecord("a", {}, [], [], CameraPose.identity()), 17)
    assert mask.all()
    assert np.allclose(normals[mask], [0, 0, 1])


def test_uv_pixel_coords_corners():
    uv = np.array([[0, 0], [1, 1], [1, 0]], float)
    assert np.allclose(uv_pixel_coords(uv, 11, 21), [[0, 0], [10, 20], [10, 0]])


def test_yaw_sweep_area_decreases():
    # rasterized area of a frontal flat patch shrinks like cos(yaw)
    m = flat_model(8)
    tris = triangulate(m.grid)
    areas = []
    for yaw in (0, 30, 60, 85):
        cam = CameraPose(quat_from_axis_angle([0, 1, 0], np.radians(yaw)), np.array([31.5, 31.5]), 40.0)
        img = rasterize(m.mean, tris, cam, np.ones(m.num_vertices), 64, 64)
        areas.append(img.mask.sum())
    assert all(a > b for a, b in zip(areas, areas[1:]))
    assert abs(areas[2] / areas[0] - 0.5) < 0.1


def test_camera_looks_down_minus_z():
    # two parallel planes: the one with larger z is nearer and must win
    m = flat_model(2)
    pts = np.concatenate([m.mean, m.mean + [0, 0, 1.0]])
    t = triangulate(m.grid)
    tris = np.concatenate([t, t + m.num_vertices])
    attr = np.r_[np.zeros(m.num_vertices), np.ones(m.num_vertices)]
    img = rasterize(pts, tris, CameraPose.identity(t=(5, 5), sigma=8), attr, 11, 11)
    assert np.allclose(img.color[img.mask, 0], 1.0)


def test_shaded_render_range():
    m = flat_model(4)
    rgb, img = shaded_render(m.mean, triangulate(m.grid), CameraPose.identity(t=(8, 8), sigma=12), 17, 17)
    assert rgb.shape == (17, 17, 3)
    assert rgb.min() >= 0 and rgb.max() <= 1
    assert np.allclose(rgb[img.mask], 0.8)


def test_obj_counts_mesh_64(tmp_path):
    g = UvGrid(64)
    pts = np.concatenate([g.uv, np.zeros((g.num_vertices, 1))], axis=1)
    export_obj(tmp_path / "m.obj", pts, triangulate(g), g.uv)
    lines = (tmp_path / "m.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 4225
    assert sum(l.startswith("vt ") for l in lines) == 4225
    assert sum(l.startswith("f ") for l in lines) == 8192


def test_obj_round_trip(tmp_path, rng):
    g = UvGrid(3)
    pts = rng.normal(size=(g.num_vertices, 3))
    tris = triangulate(g)
    export_obj(tmp_path / "m.obj", pts, tris, g.uv)
    v, vt, f = read_obj(tmp_path / "m.obj")
    assert np.array_equal(v, pts) and np.array_equal(vt, g.uv) and np.array_equal(f, tris)


def test_bad_size():
    with pytest.raises(ValueError):
        rasterize_screen(np.zeros((3, 2)), np.zeros(3), [[0, 1, 2]], np.zeros(3), 0, 5)
