"""Rotations, scaled orthographic projection, grid triangulation, normals and Procrustes.

Quaternions are (w, x, y, z) and act on column vectors: ``p' = R(q) @ p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CameraPose, UvGrid


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    nrm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(nrm == 0):
        raise ValueError("zero quaternion cannot be normalized")
    return q / nrm


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a (possibly unnormalized) quaternion; batched over leading axes."""
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(R.shape[:-1] + (3, 3))


def quat_rotmat_jacobian(q) -> np.ndarray:
    """dR/dq of the homogeneous-quadratic rotation formula at unit ``q``.

    Returns shape (..., 4, 3, 3). Only the component tangent to the unit sphere is
    meaningful; callers project out the radial part.
    """
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    o = np.zeros_like(w)
    dw = [o, -2 * z, 2 * y, 2 * z, o, -2 * x, -2 * y, 2 * x, o]
    dx = [o, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x]
    dy = [-4 * y, 2 * x, 2 * w, 2 * x, o, 2 * z, -2 * w, 2 * z, -4 * y]
    dz = [-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, o]
    J = np.stack([np.stack(d, axis=-1) for d in (dw, dx, dy, dz)], axis=-2)
    return J.reshape(J.shape[:-1] + (3, 3))


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_from_euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Quaternion of ``Rz(roll) @ Ry(yaw) @ Rx(pitch)`` (angles in radians).

    Yaw is the rotation about the vertical (y) axis, matching :func:`yaw_from_rotmat`.
    """
    qz = quat_from_axis_angle([0, 0, 1], roll)
    qy = quat_from_axis_angle([0, 1, 0], yaw)
    qx = quat_from_axis_angle([1, 0, 0], pitch)
    return quat_multiply(quat_multiply(qz, qy), qx)


def yaw_from_rotmat(R) -> float:
    """Y-axis angle of the ZYX Euler decomposition ``R = Rz @ Ry @ Rx``, in degrees."""
    return float(np.degrees(np.arcsin(np.clip(-np.asarray(R)[2, 0], -1.0, 1.0))))


def quat_slerp(q0, q1, alpha: float) -> np.ndarray:
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0:  # shortest arc
        q1, dot = -q1, -dot
    if dot > 1 - 1e-12:
        return quat_normalize((1 - alpha) * q0 + alpha * q1)
    theta = np.arccos(dot)
    return (np.sin((1 - alpha) * theta) * q0 + np.sin(alpha * theta) * q1) / np.sin(theta)


def project(points, camera: CameraPose) -> np.ndarray:
    """Scaled orthographic projection ``sigma * (R p)[:2] + t`` of (N, 3) points."""
    R = quat_to_rotmat(camera.q)
    return camera.sigma * np.asarray(points, dtype=float) @ R[:2].T + camera.t


def triangulate(grid: UvGrid) -> np.ndarray:
    """Split every grid quad along its lower-left to upper-right diagonal.

    Returns a (2 n^2, 3) int array, counter-clockwise in (u, v).
    """
    n = grid.n
    if n < 1:
        raise ValueError("triangulation needs n >= 1")
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a = (r * (n + 1) + c).ravel()
    b = a + 1            # (r, c+1)
    d = a + n + 2        # (r+1, c+1)
    e = a + n + 1        # (r+1, c)
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, d], axis=1)
    tris[1::2] = np.stack([a, d, e], axis=1)
    return tris


def face_normals(points, triangles) -> np.ndarray:
    """Unnormalized face normals (length = twice the triangle area)."""
    p = np.asarray(points, dtype=float)
    t = np.asarray(triangles)
    return np.cross(p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]])


def vertex_normals(points, triangles) -> np.ndarray:
    """Area-weighted vertex normals, normalized to unit length."""
    p = np.asarray(points, dtype=float)
    t = np.asarray(triangles)
    fn = face_normals(p, t)
    acc = np.zeros_like(p)
    for k in range(3):
        np.add.at(acc, t[:, k], fn)
    nrm = np.linalg.norm(acc, axis=1)
    bad = np.flatnonzero(nrm == 0)
    if bad.size:
        raise ValueError(f"zero accumulated normal at vertices {bad.tolist()}")
    return acc / nrm[:, None]


@dataclass
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, Y) -> np.ndarray:
        return self.scale * np.asarray(Y, dtype=float) @ self.rotation.T + self.translation


def procrustes_align(X, Y, with_rotation: bool = True) -> tuple[Similarity, np.ndarray]:
    """Similarity ``(s, R, t)`` minimizing ``||X - (s R Y + t)||^2``; returns it and the aligned Y.

    Rotations are proper (det +1). With ``with_rotation=False`` R is fixed to identity.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] < 3:
        raise ValueError(f"procrustes needs two matching (M>=3, d) arrays, got {X.shape} and {Y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("procrustes inputs must be finite")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var_y = float(np.sum(Yc * Yc))
    if var_y == 0 or float(np.sum(Xc * Xc)) == 0:
        raise ValueError("degenerate point set: all points coincide")
    d = X.shape[1]
    if with_rotation:
        U, sv, Vt = np.linalg.svd(Xc.T @ Yc)
        D = np.ones(d)
        if np.linalg.det(U) * np.linalg.det(Vt) < 0:
            D[-1] = -1.0  # flip the weakest axis instead of reflecting
        R = (U * D) @ Vt
        s = float(np.sum(sv * D)) / var_y
    else:
        R = np.eye(d)
        s = float(np.sum(Xc * Yc)) / var_y
    # the positive-scale infimum is approached as s -> 0 when the best scale is negative
    s = max(s, np.finfo(float).tiny)
    t = mx - s * R @ my
    sim = Similarity(s, R, t)
    return sim, sim.apply(Y)
