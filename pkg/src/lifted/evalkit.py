"""Landmark evaluation: landmarks as vertex combinations, 2D/3D NME, yaw-binned reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import procrustes_align, project, quat_to_rotmat, yaw_from_rotmat
from .model import InstanceRecord, ShapeModel, UvGrid, instance_shape


@dataclass
class LandmarkSpec:
    """Each landmark is a convex combination of mesh vertices."""

    landmarks: list[list[tuple[int, float]]]
    names: list[str] | None = None
    left_eye: int | None = None
    right_eye: int | None = None

    def __post_init__(self):
        for k, lm in enumerate(self.landmarks):
            if not lm:
                raise ValueError(f"landmark {k} has no vertices")
            w = np.array([wt for _, wt in lm], dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"landmark {k}: weights must be >= 0 and sum to 1")

    def __len__(self) -> int:
        return len(self.landmarks)

    def matrix(self, num_vertices: int) -> np.ndarray:
        W = np.zeros((len(self.landmarks), num_vertices))
        for k, lm in enumerate(self.landmarks):
            for i, wt in lm:
                if not 0 <= i < num_vertices:
                    raise IndexError(f"landmark {k}: vertex {i} out of range [0, {num_vertices})")
                W[k, i] += wt
        return W

    def to_dict(self) -> dict:
        return {"landmarks": [[[int(i), float(w)] for i, w in lm] for lm in self.landmarks],
                "names": self.names, "left_eye": self.left_eye, "right_eye": self.right_eye}

    @classmethod
    def from_dict(cls, obj: dict) -> "LandmarkSpec":
        return cls([[(int(i), float(w)) for i, w in lm] for lm in obj["landmarks"]],
                   obj.get("names"), obj.get("left_eye"), obj.get("right_eye"))


def landmark_spec_from_uv(grid: UvGrid, uvs, names=None, left_eye=None,
                          right_eye=None) -> LandmarkSpec:
    """Bilinear vertex weights for landmarks placed at UV positions."""
    n = grid.n
    out = []
    for u, v in np.asarray(uvs, dtype=float):
        fc, fr = u * n, v * n
        c0, r0 = min(int(math.floor(fc)), n - 1), min(int(math.floor(fr)), n - 1)
        a, b = fc - c0, fr - r0
        terms = {}
        for dr, dc, wt in ((0, 0, (1 - a) * (1 - b)), (0, 1, a * (1 - b)),
                           (1, 0, (1 - a) * b), (1, 1, a * b)):
            if wt > 0:
                i = grid.index(r0 + dr, c0 + dc)
                terms[i] = terms.get(i, 0.0) + wt
        total = sum(terms.values())
        out.append([(i, w / total) for i, w in sorted(terms.items())])
    return LandmarkSpec(out, names, left_eye, right_eye)


# default layout: eyes, nose tip, mouth corners and a few contour points
DEFAULT_LANDMARK_UV = [
    (0.33, 0.62), (0.67, 0.62), (0.50, 0.50), (0.38, 0.30), (0.62, 0.30),
    (0.20, 0.75), (0.80, 0.75), (0.50, 0.15), (0.25, 0.40), (0.75, 0.40),
]
DEFAULT_LANDMARK_NAMES = ["left_eye", "right_eye", "nose", "mouth_left", "mouth_right",
                          "brow_left", "brow_right", "chin", "cheek_left", "cheek_right"]


def default_landmark_spec(grid: UvGrid) -> LandmarkSpec:
    return landmark_spec_from_uv(grid, DEFAULT_LANDMARK_UV, DEFAULT_LANDMARK_NAMES, 0, 1)


def predict_landmarks(model: ShapeModel, instance: InstanceRecord, spec: LandmarkSpec,
                      space: str = "3d") -> np.ndarray:
    S = instance_shape(model, instance.code_identity, instance.code_expression)
    W = spec.matrix(model.num_vertices)
    if space == "3d":
        return W @ S
    if space == "2d":
        return W @ project(S, instance.camera)
    raise ValueError(f"space must be '2d' or '3d', got {space!r}")


def nme_2d(pred, gt, left_eye: int, right_eye: int) -> float:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    iod = float(np.linalg.norm(gt[left_eye] - gt[right_eye]))
    if iod == 0:
        raise ValueError("inter-ocular distance is zero (eye landmarks coincide)")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) / iod)


def bbox_diagonal(points) -> float:
    p = np.asarray(points, dtype=float)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def nme_3d(pred, gt, with_rotation: bool = True) -> float:
    """Mean landmark error after Procrustes, in percent of the gt bounding-box diagonal."""
    gt = np.asarray(gt, dtype=float)
    diag = bbox_diagonal(gt)
    if diag == 0:
        raise ValueError("ground-truth bounding box is degenerate")
    _, aligned = procrustes_align(gt, pred, with_rotation=with_rotation)
    return float(100.0 * np.mean(np.linalg.norm(aligned - gt, axis=1)) / diag)


def instance_yaw(instance: InstanceRecord) -> float:
    return yaw_from_rotmat(quat_to_rotmat(instance.camera.q))


DEFAULT_YAW_BINS = [(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)]


def _in_bin(yaw: float, lo: float, hi: float, first: bool) -> bool:
    return (lo <= yaw <= hi) if first else (lo < yaw <= hi)


def _bin_label(lo, hi, first) -> str:
    return f"{'[' if first else '('}{lo:g},{hi:g}]"


def bin_by_yaw(errors, yaws, bins=DEFAULT_YAW_BINS) -> list[dict]:
    """Mean and (population) std of per-instance errors grouped by |yaw|.

    The first bin is closed, the rest are left-open, matching ``[0,30] (30,60] (60,90]``.
    Empty bins report ``count = 0`` and no statistics.
    """
    errors = np.asarray(errors, dtype=float)
    ay = np.abs(np.asarray(yaws, dtype=float))
    rows = []
    for k, (lo, hi) in enumerate(bins):
        sel = np.array([_in_bin(y, lo, hi, k == 0) for y in ay], dtype=bool)
        row = {"bin": _bin_label(lo, hi, k == 0), "count": int(sel.sum()), "mean": None, "std": None}
        if sel.any():
            row["mean"] = float(errors[sel].mean())
            row["std"] = float(errors[sel].std())
        rows.append(row)
    rows.append({"bin": "all", "count": int(errors.size),
                 "mean": float(errors.mean()) if errors.size else None,
                 "std": float(errors.std()) if errors.size else None})
    return rows


def instance_errors(model: ShapeModel, instances, gt: dict[str, dict], spec: LandmarkSpec,
                    space: str = "3d", with_rotation: bool = True) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Per-instance NME and |yaw| for fitted ``instances`` against ``gt`` records.

    Yaw comes from the gt record when present, else from the fitted camera.
    """
    missing = [inst.id for inst in instances if inst.id not in gt]
    if missing:
        raise KeyError(f"no ground truth for ids: {missing}")
    ids, errs, yaws = [], [], []
    for inst in instances:
        rec = gt[inst.id]
        pred = predict_landmarks(model, inst, spec, space)
        if space == "3d":
            errs.append(nme_3d(pred, rec["landmarks"], with_rotation))
        else:
            gt2 = rec.get("landmarks_2d")
            gt2 = rec["landmarks"] if gt2 is None else gt2
            errs.append(nme_2d(pred, gt2, rec["left_eye"], rec["right_eye"]))
        yaws.append(rec["yaw"] if rec.get("yaw") is not None else instance_yaw(inst))
        ids.append(inst.id)
    return ids, np.array(errs), np.abs(np.array(yaws, dtype=float))


def report_by_yaw(model: ShapeModel, instances, gt: dict[str, dict], spec: LandmarkSpec,
                  bins=DEFAULT_YAW_BINS, with_rotation: bool = True) -> list[dict]:
    _, errs, yaws = instance_errors(model, instances, gt, spec, "3d", with_rotation)
    return bin_by_yaw(errs, yaws, bins)


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "count", "mean", "std"])
    for r in rows:
        w.writerow([r["bin"], r["count"], "" if r["mean"] is None else repr(r["mean"]),
                    "" if r["std"] is None else repr(r["std"])])
    return buf.getvalue()


def load_gt_landmarks(path) -> dict[str, dict]:
    """Ground-truth landmark records keyed by instance id."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rec["landmarks"] = np.array(rec["landmarks"], dtype=float)
                if rec.get("landmarks_2d") is not None:
                    rec["landmarks_2d"] = np.array(rec["landmarks_2d"], dtype=float)
                out[rec["id"]] = rec
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return out


def save_gt_landmarks(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            out = dict(rec)
            for key in ("landmarks", "landmarks_2d"):
                if out.get(key) is not None:
                    out[key] = np.asarray(out[key], dtype=float).tolist()
            fh.write(json.dumps(out) + "\n")
