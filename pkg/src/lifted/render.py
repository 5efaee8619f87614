"""Forward z-buffer rasterization, UV-space normal maps and OBJ export.

Pixel ``(row, col)`` samples the image point ``(x, y) = (col, row)``. The camera looks
down the -z axis of its own frame, so depth is ``-z`` after rotation and the smaller
depth wins. Exact depth ties go to the lower triangle index, and pixels lying exactly
on an edge belong to one side only, so the output does not depend on submission order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import quat_to_rotmat, triangulate, vertex_normals
from .model import CameraPose, InstanceRecord, ShapeModel, instance_shape


@dataclass
class RasterImage:
    color: np.ndarray      # (H, W, C) interpolated attributes, 0 on background
    depth: np.ndarray      # (H, W), +inf on background
    mask: np.ndarray       # (H, W) foreground flag
    triangle: np.ndarray   # (H, W) winning triangle index, -1 on background

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


def _owns_zero_edge(dx, dy):
    # antisymmetric under edge reversal: exactly one of two triangles sharing an edge owns it
    return (dy > 0) | ((dy == 0) & (dx < 0))


def rasterize_screen(xy, depth, triangles, attributes, width: int, height: int,
                     order=None) -> RasterImage:
    """Rasterize triangles already in screen space.

    ``xy`` is (N, 2) pixel coordinates, ``depth`` (N,), ``attributes`` (N, C).
    ``order`` optionally permutes the submission order (results are identical).
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    xy = np.asarray(xy, dtype=float)
    depth = np.asarray(depth, dtype=float)
    attr = np.asarray(attributes, dtype=float)
    if attr.ndim == 1:
        attr = attr[:, None]
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    C = attr.shape[1]
    zbuf = np.full((height, width), np.inf)
    tbuf = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    order = np.arange(len(tris)) if order is None else np.asarray(order)

    for f in order:
        i0, i1, i2 = tris[f]
        p0, p1, p2 = xy[i0], xy[i1], xy[i2]
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if area == 0 or not np.isfinite(area):
            continue
        if area < 0:  # normalize orientation; barycentrics follow the swap below
            p1, p2 = p2, p1
            i1, i2 = i2, i1
            area = -area
        lo = np.maximum(np.ceil(np.minimum(np.minimum(p0, p1), p2)), 0).astype(int)
        hi = np.minimum(np.floor(np.maximum(np.maximum(p0, p1), p2)),
                        [width - 1, height - 1]).astype(int)
        if lo[0] > hi[0] or lo[1] > hi[1]:
            continue
        ys, xs = np.mgrid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        ws = []
        inside = np.ones(xs.shape, dtype=bool)
        for a, b in ((p1, p2), (p2, p0), (p0, p1)):
            dx, dy = b[0] - a[0], b[1] - a[1]
            e = dx * (ys - a[1]) - dy * (xs - a[0])
            inside &= (e > 0) | ((e == 0) & _owns_zero_edge(dx, dy))
            ws.append(e)
        if not inside.any():
            continue
        w = np.stack(ws, axis=-1)[inside] / area
        z = w @ depth[[i0, i1, i2]]
        yy, xx = ys[inside], xs[inside]
        cur_z, cur_t = zbuf[yy, xx], tbuf[yy, xx]
        win = (z < cur_z) | ((z == cur_z) & ((cur_t < 0) | (f < cur_t)))
        yy, xx = yy[win], xx[win]
        zbuf[yy, xx] = z[win]
        tbuf[yy, xx] = f
        # store barycentrics against the triangle's original vertex order
        wv = w[win]
        if tris[f][1] != i1:
            wv = wv[:, [0, 2, 1]]
        bary[yy, xx] = wv

    mask = tbuf >= 0
    color = np.zeros((height, width, C))
    if mask.any():
        corners = tris[tbuf[mask]]
        color[mask] = np.einsum("pk,pkc->pc", bary[mask], attr[corners])
    return RasterImage(color, zbuf, mask, tbuf)


def rasterize(points, triangles, camera: CameraPose, attributes, width: int,
              height: int, order=None) -> RasterImage:
    """Rasterize a 3D mesh under a scaled orthographic camera."""
    p = np.asarray(points, dtype=float)
    if p.size == 0:
        return rasterize_screen(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3), int),
                                np.zeros((0, 1)), width, height)
    R = quat_to_rotmat(camera.q)
    rot = p @ R.T
    xy = camera.sigma * rot[:, :2] + camera.t
    return rasterize_screen(xy, -rot[:, 2], triangles, attributes, width, height, order)


def uv_pixel_coords(uv, width: int, height: int) -> np.ndarray:
    """Texel coordinates of UV points: ``u`` spans columns, ``v`` spans rows."""
    uv = np.asarray(uv, dtype=float)
    return np.stack([uv[:, 0] * (width - 1), uv[:, 1] * (height - 1)], axis=1)


def render_normal_map_uv(model: ShapeModel, instance: InstanceRecord, width: int = 129,
                         height: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Model-space vertex normals interpolated over the UV triangulation.

    Returns ``(normals (H, W, 3), mask (H, W))``; interpolated normals are renormalized.
    """
    height = width if height is None else height
    tris = triangulate(model.grid)
    S = instance_shape(model, instance.code_identity, instance.code_expression)
    vn = vertex_normals(S, tris)
    xy = uv_pixel_coords(model.grid.uv, width, height)
    # texels on the outer border lie exactly on boundary edges; grow the chart by a
    # hair so that ownership rules only act on interior edges
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    xy = center + (xy - center) * (1.0 + 1e-9)
    img = rasterize_screen(xy, np.zeros(len(xy)), tris, vn, width, height)
    nrm = np.linalg.norm(img.color, axis=2, keepdims=True)
    normals = np.where(img.mask[:, :, None], img.color / np.where(nrm > 0, nrm, 1.0), 0.0)
    return normals, img.mask


def shaded_render(points, triangles, camera: CameraPose, width: int, height: int,
                  light=(0.0, 0.0, 1.0), albedo=(0.8, 0.8, 0.8)) -> tuple[np.ndarray, RasterImage]:
    """Lambertian preview with a directional light in camera space; returns (rgb, raster)."""
    vn = vertex_normals(points, triangles)
    R = quat_to_rotmat(camera.q)
    cam_n = vn @ R.T
    light = np.asarray(light, dtype=float)
    light = light / np.linalg.norm(light)
    shade = np.abs(cam_n @ light)  # two-sided
    img = rasterize(points, triangles, camera, shade, width, height)
    rgb = img.color[:, :, :1] * np.asarray(albedo)[None, None, :]
    return rgb, img


def export_obj(path, points, triangles, uv) -> None:
    """Wavefront OBJ with ``v``, ``vt`` and ``f v/vt`` records (1-based)."""
    points = np.asarray(points, dtype=float)
    uv = np.asarray(uv, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in points.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in uv.tolist()]
    lines += ["f " + " ".join(f"{i + 1}/{i + 1}" for i in tri) for tri in tris.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimal reader for the files written by :func:`export_obj`."""
    v, vt, f = [], [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                v.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vt":
                vt.append([float(x) for x in tok[1:3]])
            elif tok[0] == "f":
                f.append([int(x.split("/")[0]) - 1 for x in tok[1:4]])
    return np.array(v), np.array(vt), np.array(f, dtype=np.int64)
