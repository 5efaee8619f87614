"""Turn dense UV-correspondence maps into per-vertex 2D observations.

Each grid vertex is matched to the foreground pixel whose predicted UV is closest
to the vertex's own UV. Pixel centers sit at integer coordinates ``(x, y) = (col, row)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import read_pfm, write_pfm
from .model import UvGrid


@dataclass
class UvMap:
    """Per-pixel UV prediction (H, W, 2) plus a foreground mask (H, W)."""

    uv: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.uv.ndim != 3 or self.uv.shape[2] != 2 or self.uv.shape[:2] != self.mask.shape:
            raise ValueError(f"uv map must be (H, W, 2) with an (H, W) mask, got {self.uv.shape}, "
                             f"{self.mask.shape}")
        fg = self.uv[self.mask]
        if fg.size and (fg.min() < 0 or fg.max() > 1):
            raise ValueError("foreground UV values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


def read_uvmap(path) -> UvMap:
    img = read_pfm(path)
    if img.ndim != 3:
        raise ValueError(f"{path}: UV map needs 3 channels (u, v, mask)")
    mask = img[:, :, 2] > 0.5
    uv = np.where(mask[:, :, None], img[:, :, :2], 0.0)
    return UvMap(uv, mask)


def write_uvmap(path, uvmap: UvMap) -> None:
    img = np.concatenate([uvmap.uv, uvmap.mask[:, :, None].astype(float)], axis=2)
    write_pfm(path, img)


def extract_observations(uvmap: UvMap, grid: UvGrid, tau: float | None = None,
                         chunk: int = 256) -> tuple[dict[int, tuple[float, float]], np.ndarray]:
    """Nearest-UV pixel per vertex; vertices farther than ``tau`` (UV units) are invisible.

    ``tau`` defaults to half a grid cell, ``1 / (2 n)``. Ties go to the lowest
    row-major pixel index. Returns ``(observations, visibility)``.
    """
    if tau is None:
        tau = 1.0 / (2 * grid.n)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    N = grid.num_vertices
    vis = np.zeros(N)
    obs: dict[int, tuple[float, float]] = {}
    flat = np.flatnonzero(uvmap.mask.ravel())  # ascending row-major order
    if flat.size == 0:
        return obs, vis
    fg_uv = uvmap.uv.reshape(-1, 2)[flat]
    vuv = grid.uv
    for start in range(0, N, chunk):
        block = vuv[start:start + chunk]
        d2 = ((block[:, None, :] - fg_uv[None, :, :]) ** 2).sum(axis=2)
        best = np.argmin(d2, axis=1)  # first minimum wins ties
        best_d = np.sqrt(d2[np.arange(len(block)), best])
        for k in np.flatnonzero(best_d <= tau):
            row, col = divmod(int(flat[best[k]]), uvmap.width)
            obs[start + int(k)] = (float(col), float(row))
            vis[start + k] = 1.0
    return obs, vis
