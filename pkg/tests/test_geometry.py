import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifted.geometry import (Similarity, face_normals, procrustes_align, project,
                             quat_from_axis_angle, quat_from_euler_zyx, quat_multiply,
                             quat_normalize, quat_rotmat_jacobian, quat_slerp, quat_to_rotmat,
                             triangulate, vertex_normals, yaw_from_rotmat)
from lifted.model import CameraPose, UvGrid

unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 0.1)


def rodrigues(axis, angle):
    # independent axis-angle oracle
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def horn_procrustes(X, Y):
    """Horn's closed-form quaternion solution for min ||X - (s R Y + t)||."""
    mx, my = X.mean(0), Y.mean(0)
    Xc, Yc = X - mx, Y - my
    Sm = Yc.T @ Xc
    Sxx, Sxy, Sxz = Sm[0]
    Syx, Syy, Syz = Sm[1]
    Szx, Szy, Szz = Sm[2]
    Nm = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz]])
    w, V = np.linalg.eigh(Nm)
    R = quat_to_rotmat(V[:, -1])
    RY = Yc @ R.T
    s = np.sum(Xc * RY) / np.sum(Yc * Yc)
    return s * RY + mx


class TestQuaternions:
    @pytest.mark.parametrize("axis,angle", [([1, 0, 0], 0.3), ([0, 1, 0], -1.2),
                                            ([1, 2, 3], 2.5), ([0, 0, 1], math.pi)])
    def test_matches_rodrigues(self, axis, angle):
        R = quat_to_rotmat(quat_from_axis_angle(axis, angle))
        assert np.allclose(R, rodrigues(axis, angle), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(unit_quats)
    def test_rotation_is_orthonormal(self, q):
        R = quat_to_rotmat(np.array(q))
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(unit_quats)
    def test_sign_invariance(self, q):
        q = np.array(q)
        assert np.allclose(quat_to_rotmat(q), quat_to_rotmat(-q), atol=1e-14)

    def test_batched(self, rng):
        Q = rng.normal(size=(5, 4))
        R = quat_to_rotmat(Q)
        for k in range(5):
            assert np.allclose(R[k], quat_to_rotmat(Q[k]))

    def test_multiply_composes(self, rng):
        a, b = quat_normalize(rng.normal(size=4)), quat_normalize(rng.normal(size=4))
        assert np.allclose(quat_to_rotmat(quat_multiply(a, b)),
                           quat_to_rotmat(a) @ quat_to_rotmat(b), atol=1e-12)

    def test_jacobian_finite_difference(self, rng):
        qn = quat_normalize(rng.normal(size=4))
        J = quat_rotmat_jacobian(qn)
        h = 1e-6
        for k in range(4):
            dq = np.zeros(4)
            dq[k] = h
            num = (quat_to_rotmat(qn + dq) - quat_to_rotmat(qn - dq)) / (2 * h)
            # quat_to_rotmat normalizes, so only the tangential part of J is observable
            proj = np.einsum("kij,k->ij", J, np.eye(4)[k] - qn[k] * qn)
            assert np.allclose(num, proj, atol=1e-6)

    @pytest.mark.parametrize("yaw", [-80.0, -30.0, 0.0, 15.0, 60.0])
    def test_yaw_round_trip(self, yaw):
        q = quat_from_euler_zyx(math.radians(yaw), 0.1, -0.05)
        assert abs(yaw_from_rotmat(quat_to_rotmat(q)) - yaw) < 1e-9

    def test_slerp_endpoints_and_midpoint(self):
        q0 = quat_from_axis_angle([0, 1, 0], 0.0)
        q1 = quat_from_axis_angle([0, 1, 0], 1.0)
        assert np.allclose(quat_slerp(q0, q1, 0.0), q0)
        assert np.allclose(quat_slerp(q0, q1, 1.0), q1)
        assert np.allclose(quat_slerp(q0, q1, 0.5), quat_from_axis_angle([0, 1, 0], 0.5))

    def test_slerp_shortest_arc(self):
        q0 = quat_from_axis_angle([0, 0, 1], 0.2)
        q1 = -quat_from_axis_angle([0, 0, 1], 0.4)
        mid = quat_slerp(q0, q1, 0.5)
        assert np.allclose(quat_to_rotmat(mid), quat_to_rotmat(quat_from_axis_angle([0, 0, 1], 0.3)))


class TestProjection:
    def test_identity_camera(self):
        p = np.array([[1.0, 2.0, 3.0]])
        assert np.allclose(project(p, CameraPose.identity(t=(10, 20), sigma=2.0)), [[12.0, 24.0]])

    def test_depth_does_not_affect_position(self, rng):
        cam = CameraPose(quat_normalize(rng.normal(size=4)), rng.normal(size=2), 1.7)
        p = rng.normal(size=(4, 3))
        R = quat_to_rotmat(cam.q)
        shifted = p + R[2]  # move along the viewing axis
        assert np.allclose(project(p, cam), project(shifted, cam))


class TestMesh:
    def test_triangle_count_and_orientation(self):
        g = UvGrid(4)
        tris = triangulate(g)
        assert tris.shape == (2 * 4 * 4, 3)
        flat = np.concatenate([g.uv, np.zeros((g.num_vertices, 1))], axis=1)
        n = face_normals(flat, tris)
        assert np.all(n[:, 2] > 0)

    def test_every_vertex_used(self):
        g = UvGrid(3)
        assert set(triangulate(g).ravel()) == set(range(g.num_vertices))

    def test_paraboloid_normals(self):
        # analytic normal of z = a (x^2 + y^2) is (-2ax, -2ay, 1) normalized
        g = UvGrid(40)
        x, y = g.uv[:, 0] - 0.5, g.uv[:, 1] - 0.5
        a = 0.7
        pts = np.stack([x, y, a * (x * x + y * y)], axis=1)
        vn = vertex_normals(pts, triangulate(g))
        ref = np.stack([-2 * a * x, -2 * a * y, np.ones_like(x)], axis=1)
        ref /= np.linalg.norm(ref, axis=1, keepdims=True)
        interior = (np.abs(x) < 0.45) & (np.abs(y) < 0.45)
        assert np.max(np.linalg.norm(vn[interior] - ref[interior], axis=1)) < 5e-3

    def test_degenerate_normals_raise(self):
        g = UvGrid(1)
        with pytest.raises(ValueError, match="vert"):
            vertex_normals(np.zeros((4, 3)), triangulate(g))


class TestProcrustes:
    def test_recovers_similarity(self, rng):
        Y = rng.normal(size=(20, 3))
        R = quat_to_rotmat(quat_normalize(rng.normal(size=4)))
        X = 2.5 * Y @ R.T + np.array([1.0, -2.0, 0.5])
        sim, aligned = procrustes_align(X, Y)
        assert np.allclose(aligned, X, atol=1e-10)
        assert np.isclose(sim.scale, 2.5) and np.allclose(sim.rotation, R)

    def test_matches_horn_oracle(self, rng):
        for _ in range(5):
            X, Y = rng.normal(size=(15, 3)), rng.normal(size=(15, 3))
            _, aligned = procrustes_align(X, Y)
            assert np.allclose(aligned, horn_procrustes(X, Y), atol=1e-9)

    def test_reflection_never_returned(self, rng):
        Y = rng.normal(size=(10, 3))
        X = Y * np.array([1, 1, -1])  # mirror image
        sim, _ = procrustes_align(X, Y)
        assert np.linalg.det(sim.rotation) > 0

    def test_without_rotation(self, rng):
        Y = rng.normal(size=(10, 3))
        X = 3 * Y + 1
        sim, aligned = procrustes_align(X, Y, with_rotation=False)
        assert np.allclose(sim.rotation, np.eye(3)) and np.allclose(aligned, X)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_rotation_never_worse(self, seed):
        r = np.random.default_rng(seed)
        X, Y = r.normal(size=(8, 3)), r.normal(size=(8, 3))
        e_rot = np.linalg.norm(procrustes_align(X, Y, True)[1] - X)
        e_no = np.linalg.norm(procrustes_align(X, Y, False)[1] - X)
        assert e_rot <= e_no + 1e-9

    @pytest.mark.parametrize("bad", ["few", "collapsed", "nan"])
    def test_degenerate_inputs(self, bad):
        X = np.random.default_rng(0).normal(size=(5, 3))
        Y = X.copy()
        if bad == "few":
            X, Y = X[:2], Y[:2]
        elif bad == "collapsed":
            Y = np.ones_like(Y)
        else:
            Y[0, 0] = np.nan
        with pytest.raises(ValueError):
            procrustes_align(X, Y)

    def test_similarity_apply(self):
        s = Similarity(2.0, np.eye(3), np.array([1.0, 0, 0]))
        assert np.allclose(s.apply(np.array([[1.0, 1, 1]])), [[3.0, 2, 2]])
