"""Synthetic ground truth: smooth morphable surfaces, grouped codes, cameras, observations,
landmarks and SH-lit textures with known albedo."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .correspond import UvMap, write_uvmap
from .evalkit import default_landmark_spec, save_gt_landmarks
from .geometry import quat_from_euler_zyx, quat_to_rotmat, triangulate, yaw_from_rotmat
from .imageio import write_pfm
from .lux import render_shading
from .model import (CameraPose, Dataset, InstanceRecord, ShapeModel, UvGrid, instance_shape,
                    save_dataset, save_instances, save_model)
from .render import rasterize, render_normal_map_uv


@dataclass
class SynthConfig:
    n: int = 16
    I: int = 4
    E: int = 3
    K: int = 150
    yaw_range: tuple[float, float] = (-45.0, 45.0)
    pitch_range: tuple[float, float] = (-10.0, 10.0)
    roll_range: tuple[float, float] = (-5.0, 5.0)
    sigma_range: tuple[float, float] = (40.0, 60.0)
    image_size: int = 128
    noise_std: float = 0.0
    occlusion_rate: float = 0.1
    identity_groups: int = 10
    expression_groups: int = 6
    pose_groups: int = 0          # 0: every instance has its own camera and no pose label
    basis_scale: float = 0.03     # RMS vertex displacement of a unit code, relative to diameter
    lux_size: int = 0             # > 0 adds an SH-lit texture of this UV resolution
    checker_cell: int = 8
    uvmaps: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("yaw_range", "pitch_range", "roll_range", "sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
            setattr(self, name, (float(lo), float(hi)))
        if self.sigma_range[0] <= 0:
            raise ValueError("sigma_range must be positive")
        if not 0 <= self.occlusion_rate < 1:
            raise ValueError(f"occlusion_rate must be in [0, 1), got {self.occlusion_rate}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if min(self.n, self.K) < 1 or min(self.I, self.E) < 0:
            raise ValueError("n and K must be >= 1; I and E must be >= 0")
        if min(self.identity_groups, self.expression_groups) < 1 or self.pose_groups < 0:
            raise ValueError("group counts must be >= 1 (pose_groups >= 0)")


@dataclass
class SynthLux:
    texture: np.ndarray
    albedo: np.ndarray
    L: np.ndarray
    normal_map: np.ndarray
    mask: np.ndarray
    instance_id: str


@dataclass
class SynthResult:
    config: SynthConfig
    truth: Dataset                   # gt model, codes and cameras
    landmarks: list[dict]            # gt landmark records, one per instance
    landmark_spec: object
    lux: SynthLux | None = None
    uvmaps: dict[str, UvMap] = field(default_factory=dict)

    @property
    def diameter(self) -> float:
        return shape_diameter(self.truth.model.mean)

    def observations_only(self) -> Dataset:
        """The fitting input: observations and labels, no model variables."""
        m = self.truth.model
        empty = ShapeModel(m.grid, m.mean, np.zeros((m.num_identity, m.num_vertices, 3)),
                           np.zeros((m.num_expression, m.num_vertices, 3)))
        insts = [InstanceRecord(i.id, dict(i.observations), labels=dict(i.labels))
                 for i in self.truth.instances]
        return Dataset(empty, insts)


def shape_diameter(points) -> float:
    p = np.asarray(points, dtype=float)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def _low_frequency_field(uv, rng, terms: int = 3) -> np.ndarray:
    """Random smooth scalar field over the unit square (sum of low cosines)."""
    out = np.zeros(len(uv))
    for a in range(terms):
        for b in range(terms):
            out += rng.normal() / (1 + a + b) ** 2 * np.cos(np.pi * a * uv[:, 0]) * np.cos(np.pi * b * uv[:, 1])
    return out


def ground_truth_mean(grid: UvGrid, rng) -> np.ndarray:
    uv = grid.uv
    x, y = uv[:, 0] - 0.5, uv[:, 1] - 0.5
    z = 0.25 * np.exp(-(x * x + y * y) / (2 * 0.2 ** 2))
    z += 0.03 * _low_frequency_field(uv, rng)
    return np.stack([x, y, z], axis=1)


def similarity_modes(mean: np.ndarray) -> np.ndarray:
    """Orthonormal (7, N, 3) basis of first-order translations, rotations and scaling of ``mean``."""
    c = mean - mean.mean(axis=0)
    modes = [np.broadcast_to(e, mean.shape) for e in np.eye(3)]
    modes += [np.cross(e, c) for e in np.eye(3)]
    modes.append(c)
    Q, _ = np.linalg.qr(np.stack([m.ravel() for m in modes], axis=1))
    return Q.T.reshape(7, *mean.shape)


def orthonormal_bases(grid: UvGrid, count: int, rng, mean: np.ndarray | None = None) -> np.ndarray:
    """``count`` smooth fields over (N, 3), orthonormal in R^{3N}.

    With ``mean`` given they are also orthogonal to its similarity modes, so no
    deformation can pass for a change of camera.
    """
    N = grid.num_vertices
    raw = np.stack([np.stack([_low_frequency_field(grid.uv, rng, 4) for _ in range(3)], axis=1)
                    for _ in range(count)]) if count else np.zeros((0, N, 3))
    fixed = [] if mean is None else list(similarity_modes(mean).reshape(7, -1))
    basis = []
    for v in raw.reshape(count, -1):
        w = v.copy()
        for b in fixed + basis:
            w -= (w @ b) * b
        nrm = np.linalg.norm(w)
        if nrm < 1e-10:
            raise RuntimeError("degenerate random basis; try another seed")
        basis.append(w / nrm)
    return np.array(basis).reshape(count, N, 3) if count else raw


def checker_albedo(height: int, width: int, cell: int, lo: float = 0.4, hi: float = 0.6) -> np.ndarray:
    r, c = np.mgrid[:height, :width]
    return np.where(((r // cell) + (c // cell)) % 2 == 0, lo, hi)


def random_light(rng) -> np.ndarray:
    L = np.concatenate([[1.0], rng.uniform(-0.25, 0.25, 8)])
    return L


def generate(config: SynthConfig | None = None) -> SynthResult:
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    grid = UvGrid(cfg.n)
    N = grid.num_vertices
    mean = ground_truth_mean(grid, rng)
    diam = shape_diameter(mean)
    bases = orthonormal_bases(grid, cfg.I + cfg.E, rng, mean)
    # unit code -> RMS per-vertex displacement of basis_scale * diameter
    bases *= cfg.basis_scale * diam * np.sqrt(N)
    model = ShapeModel(grid, mean, bases[:cfg.I], bases[cfg.I:])

    id_codes = rng.normal(size=(cfg.identity_groups, cfg.I))
    ex_codes = rng.normal(size=(cfg.expression_groups, cfg.E))
    pose_cams = [_random_camera(cfg, rng) for _ in range(cfg.pose_groups)]
    spec = default_landmark_spec(grid)
    W = spec.matrix(N)

    insts, landmarks = [], []
    width = len(str(cfg.K - 1))
    for k in range(cfg.K):
        gi = int(rng.integers(cfg.identity_groups))
        ge = int(rng.integers(cfg.expression_groups))
        labels = {"identity_id": f"id{gi:02d}", "expression_id": f"ex{ge:02d}"}
        if cfg.pose_groups:
            gp = int(rng.integers(cfg.pose_groups))
            cam = pose_cams[gp].copy()
            labels["pose_id"] = f"pose{gp:02d}"
        else:
            cam = _random_camera(cfg, rng)
        S = instance_shape(model, id_codes[gi], ex_codes[ge])
        R = quat_to_rotmat(cam.q)
        x = cam.sigma * S @ R[:2].T + cam.t
        if cfg.noise_std > 0:
            x = x + rng.normal(0.0, cfg.noise_std, x.shape)
        keep = rng.random(N) >= cfg.occlusion_rate
        obs = {int(i): (float(x[i, 0]), float(x[i, 1])) for i in np.flatnonzero(keep)}
        iid = f"inst{k:0{width}d}"
        insts.append(InstanceRecord(iid, obs, id_codes[gi].copy(), ex_codes[ge].copy(), cam, labels))
        landmarks.append({"id": iid, "landmarks": W @ S, "landmarks_2d": W @ (cam.sigma * S @ R[:2].T + cam.t),
                          "left_eye": spec.left_eye, "right_eye": spec.right_eye,
                          "yaw": yaw_from_rotmat(R)})
    truth = Dataset(model, insts)
    result = SynthResult(cfg, truth, landmarks, spec)
    if cfg.lux_size > 0:
        result.lux = _lux_sample(truth, cfg, rng)
    if cfg.uvmaps:
        result.uvmaps = {inst.id: render_uvmap(model, inst, cfg.image_size) for inst in insts}
    return result


def _random_camera(cfg: SynthConfig, rng) -> CameraPose:
    yaw = np.radians(rng.uniform(*cfg.yaw_range))
    pitch = np.radians(rng.uniform(*cfg.pitch_range))
    roll = np.radians(rng.uniform(*cfg.roll_range))
    sigma = float(rng.uniform(*cfg.sigma_range))
    center = (cfg.image_size - 1) / 2.0
    t = center + rng.uniform(-0.05, 0.05, 2) * cfg.image_size
    return CameraPose(quat_from_euler_zyx(yaw, pitch, roll), t, sigma)


def _lux_sample(truth: Dataset, cfg: SynthConfig, rng) -> SynthLux:
    inst = truth.instances[0]
    normals, mask = render_normal_map_uv(truth.model, inst, cfg.lux_size)
    L = random_light(rng)
    A = checker_albedo(cfg.lux_size, cfg.lux_size, cfg.checker_cell)
    S = render_shading(normals, L, mask)
    A = np.where(mask, A, 0.0)
    T = np.repeat((S * A)[:, :, None], 3, axis=2)
    return SynthLux(T, np.repeat(A[:, :, None], 3, axis=2), L, normals, mask, inst.id)


def render_uvmap(model: ShapeModel, inst: InstanceRecord, size: int) -> UvMap:
    """Dense UV-correspondence image of an instance, as a deforming autoencoder would emit."""
    S = instance_shape(model, inst.code_identity, inst.code_expression)
    img = rasterize(S, triangulate(model.grid), inst.camera, model.grid.uv, size, size)
    return UvMap(np.clip(img.color, 0.0, 1.0), img.mask)


# ------------------------------------------------------------------ files

def write(result: SynthResult, out_dir) -> dict[str, str]:
    """Write every artifact of ``result`` into ``out_dir``; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "model_gt": os.path.join(out_dir, "model_gt.json"),
        "dataset_gt": os.path.join(out_dir, "dataset_gt.jsonl"),
        "observations": os.path.join(out_dir, "observations.jsonl"),
        "landmarks_gt": os.path.join(out_dir, "landmarks_gt.jsonl"),
        "landmark_spec": os.path.join(out_dir, "landmark_spec.json"),
        "config": os.path.join(out_dir, "synth_config.json"),
    }
    save_model(paths["model_gt"], result.truth.model)
    save_dataset(paths["dataset_gt"], result.truth)
    save_instances(paths["observations"], result.observations_only().instances)
    save_gt_landmarks(paths["landmarks_gt"], result.landmarks)
    with open(paths["landmark_spec"], "w") as fh:
        json.dump(result.landmark_spec.to_dict(), fh, indent=1)
    with open(paths["config"], "w") as fh:
        json.dump(asdict(result.config), fh, indent=1, sort_keys=True)
    if result.lux is not None:
        lx = result.lux
        paths["texture"] = os.path.join(out_dir, "texture.pfm")
        paths["albedo_gt"] = os.path.join(out_dir, "albedo_gt.pfm")
        paths["lux_gt"] = os.path.join(out_dir, "lux_gt.json")
        write_pfm(paths["texture"], lx.texture)
        write_pfm(paths["albedo_gt"], lx.albedo)
        with open(paths["lux_gt"], "w") as fh:
            json.dump({"L": lx.L.tolist(), "instance": lx.instance_id}, fh, indent=1)
    if result.uvmaps:
        uv_dir = os.path.join(out_dir, "uvmaps")
        os.makedirs(uv_dir, exist_ok=True)
        for iid, uvm in result.uvmaps.items():
            write_uvmap(os.path.join(uv_dir, f"{iid}.pfm"), uvm)
        paths["uvmaps"] = uv_dir
    return paths
