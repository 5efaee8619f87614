"""Spherical-harmonics shading and albedo/shading decomposition of UV-space textures.

Shading is ``S(x) = <L, H(N(x))>`` with the order-2 monomial basis
``H(n) = [1, nx, ny, nz, nx*ny, nx*nz, ny*nz, nx^2 - ny^2, 3 nz^2 - 1]``; SH
normalization constants are folded into ``L``. Textures factor as ``T = S * A``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class RankDeficientError(ValueError):
    pass


def sh_basis(normal) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError(f"normal must be unit length, got norm {np.linalg.norm(n)}")
    return sh_basis_map(n)


def sh_basis_map(normals) -> np.ndarray:
    """Basis over the last axis of an (..., 3) normal array; no unit-length check."""
    n = np.asarray(normals, dtype=float)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack([np.ones_like(x), x, y, z, x * y, x * z, y * z, x * x - y * y,
                     3 * z * z - 1], axis=-1)


def normal_mask(normal_map) -> np.ndarray:
    return np.linalg.norm(np.asarray(normal_map), axis=-1) > 0.5


def render_shading(normal_map, L, mask=None) -> np.ndarray:
    """Per-pixel ``max(0, <L, H(N)>)``; pixels outside ``mask`` are 0."""
    if mask is None:
        mask = normal_mask(normal_map)
    S = sh_basis_map(normal_map) @ np.asarray(L, dtype=float)
    return np.where(mask, np.maximum(S, 0.0), 0.0)


def _as_channels(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    return T[:, :, None] if T.ndim == 2 else T


def estimate_illumination(texture, normal_map, mask=None, albedo: float = 0.5,
                          max_condition: float = 1e10) -> np.ndarray:
    """Least-squares SH coefficients of ``gray(T) / albedo`` under a constant-albedo guess."""
    if mask is None:
        mask = normal_mask(normal_map)
    gray = _as_channels(texture).mean(axis=2)
    H = sh_basis_map(np.asarray(normal_map)[mask])
    if H.shape[0] < 9:
        raise RankDeficientError(f"need at least 9 defined pixels, got {H.shape[0]}")
    sv = np.linalg.svd(H, compute_uv=False)
    cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
    if cond > max_condition:
        raise RankDeficientError(f"normal system is rank deficient (condition number {cond:.3g})")
    target = gray[mask] / albedo
    L, *_ = np.linalg.lstsq(H, target, rcond=None)
    return L


@dataclass
class LuxConfig:
    lambda_shade: float = 1e-4
    lambda_albedo: float = 2e-6
    huber_delta: float = 1.0
    iterations: int = 3000
    lr: float = 1e-2
    lr_final: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    target_mean_albedo: float = 0.5


@dataclass
class ShMapState:
    L: np.ndarray
    albedo: np.ndarray            # (H, W, C) in [0, 1]
    shading: np.ndarray           # adapted shading, (H, W) >= 0
    normal_map: np.ndarray        # (H, W, 3)
    mask: np.ndarray              # (H, W) bool

    def shading_rendered(self) -> np.ndarray:
        return render_shading(self.normal_map, self.L, self.mask)

    def reconstruction(self) -> np.ndarray:
        return np.where(self.mask[:, :, None], self.shading[:, :, None] * self.albedo, 0.0)

    def copy(self) -> "ShMapState":
        return ShMapState(self.L.copy(), self.albedo.copy(), self.shading.copy(),
                          self.normal_map.copy(), self.mask.copy())


def huber(r, delta: float = 1.0):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_grad(r, delta: float = 1.0):
    return np.clip(r, -delta, delta)


def _forward_pairs(mask):
    """Valid horizontal/vertical neighbour pairs: both pixels inside the mask."""
    return mask[:, 1:] & mask[:, :-1], mask[1:, :] & mask[:-1, :]


def _diffs(X, mask):
    vx, vy = _forward_pairs(mask)
    if X.ndim == 3:
        vx, vy = vx[:, :, None], vy[:, :, None]
    return np.where(vx, X[:, 1:] - X[:, :-1], 0.0), np.where(vy, X[1:] - X[:-1], 0.0)


def _scatter_diff_grad(gx, gy, shape):
    g = np.zeros(shape)
    g[:, 1:] += gx
    g[:, :-1] -= gx
    g[1:] += gy
    g[:-1] -= gy
    return g


def lux_losses(state: ShMapState, texture, L_hat, config: LuxConfig | None = None):
    """All illumination terms and their gradients w.r.t. ``L``, albedo and shading.

    Returns ``(terms, grads)`` where ``terms`` has keys ``shading_smooth``,
    ``albedo_smooth``, ``light_prior``, ``consistency``, ``reconstruction``.
    """
    cfg = config or LuxConfig()
    mask = state.mask
    T = _as_channels(texture)
    A, S, L = state.albedo, state.shading, state.L
    m3 = mask[:, :, None]

    Hmap = sh_basis_map(state.normal_map)
    raw = Hmap @ L
    S_r = np.where(mask, np.maximum(raw, 0.0), 0.0)

    sx, sy = _diffs(S, mask)
    shading_smooth = cfg.lambda_shade * float(np.sum(sx * sx) + np.sum(sy * sy))
    g_S = _scatter_diff_grad(2 * cfg.lambda_shade * sx, 2 * cfg.lambda_shade * sy, S.shape)

    ax, ay = _diffs(A, mask)
    albedo_smooth = cfg.lambda_albedo * float(np.sum(np.abs(ax)) + np.sum(np.abs(ay)))
    g_A = _scatter_diff_grad(cfg.lambda_albedo * np.sign(ax), cfg.lambda_albedo * np.sign(ay),
                             A.shape)

    dL = L - np.asarray(L_hat, dtype=float)
    light_prior = float(dL @ dL)
    g_L = 2 * dL

    r = np.where(mask, S - S_r, 0.0)
    consistency = float(np.sum(huber(r, cfg.huber_delta)))
    hg = np.where(mask, huber_grad(r, cfg.huber_delta), 0.0)
    g_S = g_S + hg
    lit = mask & (raw > 0)
    g_L = g_L - Hmap[lit].T @ hg[lit]

    resid = np.where(m3, T - S[:, :, None] * A, 0.0)
    reconstruction = float(np.sum(resid * resid))
    g_A = g_A - 2 * resid * S[:, :, None]
    g_S = g_S - 2 * np.sum(resid * A, axis=2)

    terms = {"shading_smooth": shading_smooth, "albedo_smooth": albedo_smooth,
             "light_prior": light_prior, "consistency": consistency,
             "reconstruction": reconstruction}
    grads = {"L": g_L, "albedo": np.where(m3, g_A, 0.0), "shading": np.where(mask, g_S, 0.0)}
    return terms, grads


@dataclass
class LuxProblem:
    """A lux state bundled with its data so it can ride along in the total loss."""

    state: ShMapState
    texture: np.ndarray
    L_hat: np.ndarray
    config: LuxConfig

    def losses(self):
        return lux_losses(self.state, self.texture, self.L_hat, self.config)


@dataclass
class DecomposeResult:
    state: ShMapState
    L_hat: np.ndarray
    terms: dict
    history: list
    reconstruction_mse: float


def decompose(texture, normal_map, mask=None, config: LuxConfig | None = None) -> DecomposeResult:
    """Jointly fit SH coefficients, albedo and adapted shading to a UV texture.

    Starts from the constant-albedo estimate ``L_hat``, albedo 0.5 and the rendered
    shading; after optimization rescales albedo to the configured mean.
    """
    cfg = config or LuxConfig()
    normal_map = np.asarray(normal_map, dtype=float)
    if mask is None:
        mask = normal_mask(normal_map)
    mask = np.asarray(mask, dtype=bool)
    T = np.where(mask[:, :, None], _as_channels(texture), 0.0)
    L_hat = estimate_illumination(T, normal_map, mask)
    state = ShMapState(L_hat.copy(), np.where(mask[:, :, None], 0.5, 0.0) * np.ones_like(T),
                       render_shading(normal_map, L_hat, mask), normal_map, mask)

    vars_ = {"L": state.L, "albedo": state.albedo, "shading": state.shading}
    m = {k: np.zeros_like(v) for k, v in vars_.items()}
    v2 = {k: np.zeros_like(v) for k, v in vars_.items()}
    history = []
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.iterations - 1, 1))
    for it in range(1, cfg.iterations + 1):
        terms, grads = lux_losses(state, T, L_hat, cfg)
        if it == 1 or it % 100 == 0:
            history.append({"iteration": it, **terms})
        lr = cfg.lr * decay ** (it - 1)
        for k, x in vars_.items():
            g = grads[k]
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
            v2[k] = cfg.beta2 * v2[k] + (1 - cfg.beta2) * g * g
            mh = m[k] / (1 - cfg.beta1 ** it)
            vh = v2[k] / (1 - cfg.beta2 ** it)
            x -= lr * mh / (np.sqrt(vh) + cfg.eps)
        np.clip(state.albedo, 0.0, 1.0, out=state.albedo)
        np.maximum(state.shading, 0.0, out=state.shading)

    # scale gauge: (c A, S / c) reconstructs the same texture
    mean_a = float(state.albedo[mask].mean()) if mask.any() else 0.0
    if mean_a > 0:
        c = cfg.target_mean_albedo / mean_a
        state.albedo *= c
        state.shading /= c
        state.L /= c
        if state.albedo.max() > 1.0:
            log.warning("albedo exceeds 1 after gauge fixing (max %.3f)", state.albedo.max())
    terms, _ = lux_losses(state, T, L_hat, cfg)
    resid = np.where(mask[:, :, None], T - state.reconstruction(), 0.0)
    mse = float(np.sum(resid * resid) / max(mask.sum(), 1))
    return DecomposeResult(state, L_hat, terms, history, mse)


def relight(state: ShMapState, L_new) -> np.ndarray:
    """Texture under new SH coefficients, keeping the adapted shading's residual detail."""
    S_new = render_shading(state.normal_map, L_new, state.mask)
    S = np.maximum(state.shading + S_new - state.shading_rendered(), 0.0)
    return np.where(state.mask[:, :, None], S[:, :, None] * state.albedo, 0.0)


def hemisphere_normals(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Normal map of a unit hemisphere seen from +z over a ``size`` x ``size`` grid."""
    c = (np.arange(size) + 0.5) / size * 2 - 1
    y, x = np.meshgrid(-c, c, indexing="ij")
    r2 = x * x + y * y
    mask = r2 < 1.0
    z = np.sqrt(np.clip(1 - r2, 0, None))
    N = np.stack([x, y, z], axis=-1)
    return np.where(mask[:, :, None], N, 0.0), mask
