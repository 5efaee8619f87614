"""Domain types for the morphable surface model, cameras, observations and datasets.

File formats
------------
Model files are a single JSON object::

    {"n": int, "I": int, "E": int,
     "mean": [N][3], "identity_basis": [I][N][3], "expression_basis": [E][N][3]}

Dataset files are JSON lines, one instance per line::

    {"id": str, "labels": {...}?, "points": [{"i": int, "x": float, "y": float}],
     "codes": {"identity": [...], "expression": [...]}?,
     "camera": {"q": [4], "t": [2], "sigma": float}?}

Absent ``codes``/``camera`` mean the instance still has to be initialized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class ValidationError(ValueError):
    """Raised when data violates a model invariant."""


class ParseError(ValueError):
    """Raised when a model or dataset file cannot be parsed."""


@dataclass(frozen=True)
class UvGrid:
    """Regular (n+1) x (n+1) vertex lattice over the unit UV square.

    Vertex ``i = r * (n + 1) + c`` sits at ``(u, v) = (c / n, r / n)``.
    """

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"grid subdivision n must be a positive integer, got {self.n!r}")

    @property
    def side(self) -> int:
        return self.n + 1

    @property
    def num_vertices(self) -> int:
        return (self.n + 1) ** 2

    def index(self, row: int, col: int) -> int:
        return row * self.side + col

    def rowcol(self, i: int) -> tuple[int, int]:
        return divmod(i, self.side)

    @property
    def uv(self) -> np.ndarray:
        """(N, 2) array of vertex UV coordinates in row-major order."""
        ticks = np.arange(self.side) / self.n
        vv, uu = np.meshgrid(ticks, ticks, indexing="ij")
        return np.stack([uu.ravel(), vv.ravel()], axis=1)


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")


@dataclass
class ShapeModel:
    grid: UvGrid
    mean: np.ndarray
    identity_basis: np.ndarray
    expression_basis: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.identity_basis = np.asarray(self.identity_basis, dtype=float)
        self.expression_basis = np.asarray(self.expression_basis, dtype=float)
        N = self.grid.num_vertices
        if self.mean.shape != (N, 3):
            raise ValidationError(
                f"mean has shape {self.mean.shape}, expected ({N}, 3) for n={self.grid.n}")
        # empty bases come in as shape (0,) from JSON
        if self.identity_basis.size == 0:
            self.identity_basis = self.identity_basis.reshape(0, N, 3)
        if self.expression_basis.size == 0:
            self.expression_basis = self.expression_basis.reshape(0, N, 3)
        for name, basis in (("identity_basis", self.identity_basis),
                            ("expression_basis", self.expression_basis)):
            if basis.ndim != 3 or basis.shape[1:] != (N, 3):
                raise ValidationError(f"{name} has shape {basis.shape}, expected (*, {N}, 3)")
        _finite("mean", self.mean)
        _finite("identity_basis", self.identity_basis)
        _finite("expression_basis", self.expression_basis)

    @property
    def num_identity(self) -> int:
        return self.identity_basis.shape[0]

    @property
    def num_expression(self) -> int:
        return self.expression_basis.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.grid.num_vertices

    def copy(self) -> "ShapeModel":
        return ShapeModel(self.grid, self.mean.copy(), self.identity_basis.copy(),
                          self.expression_basis.copy())


@dataclass
class CameraPose:
    """Scaled orthographic camera: unit quaternion (w, x, y, z), 2D offset, scale."""

    q: np.ndarray
    t: np.ndarray
    sigma: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        self.t = np.asarray(self.t, dtype=float).reshape(2)
        self.sigma = float(self.sigma)
        _finite("camera", np.concatenate([self.q, self.t, [self.sigma]]))
        if self.sigma <= 0:
            raise ValidationError(f"camera scale must be positive, got {self.sigma}")
        if np.linalg.norm(self.q) == 0:
            raise ValidationError("camera quaternion is zero")

    @classmethod
    def identity(cls, t=(0.0, 0.0), sigma: float = 1.0) -> "CameraPose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.asarray(t, dtype=float), sigma)

    def copy(self) -> "CameraPose":
        return CameraPose(self.q.copy(), self.t.copy(), self.sigma)


@dataclass
class InstanceRecord:
    """One image: observed 2D points keyed by vertex index plus its free variables.

    Visibility is implied by ``observations``: a vertex is visible iff it has a point.
    """

    id: str
    observations: dict[int, tuple[float, float]] = field(default_factory=dict)
    code_identity: np.ndarray | None = None
    code_expression: np.ndarray | None = None
    camera: CameraPose | None = None
    labels: dict[str, str] | None = None

    def __post_init__(self):
        if self.code_identity is not None:
            self.code_identity = np.asarray(self.code_identity, dtype=float).reshape(-1)
            _finite(f"instance {self.id!r} identity code", self.code_identity)
        if self.code_expression is not None:
            self.code_expression = np.asarray(self.code_expression, dtype=float).reshape(-1)
            _finite(f"instance {self.id!r} expression code", self.code_expression)
        for i, xy in self.observations.items():
            if not (math.isfinite(xy[0]) and math.isfinite(xy[1])):
                raise ValidationError(f"instance {self.id!r}: non-finite observation at vertex {i}")

    @property
    def num_visible(self) -> int:
        return len(self.observations)

    def visibility(self, num_vertices: int) -> np.ndarray:
        nu = np.zeros(num_vertices)
        if self.observations:
            nu[np.fromiter(self.observations.keys(), dtype=int)] = 1.0
        return nu

    def dense_points(self, num_vertices: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(points (N, 2), visibility (N,))`` with zeros at missing vertices."""
        pts = np.zeros((num_vertices, 2))
        nu = np.zeros(num_vertices)
        for i, xy in self.observations.items():
            pts[i] = xy
            nu[i] = 1.0
        return pts, nu

    def is_initialized(self) -> bool:
        return (self.camera is not None and self.code_identity is not None
                and self.code_expression is not None)


@dataclass
class Dataset:
    model: ShapeModel
    instances: list[InstanceRecord]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        N = self.model.num_vertices
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValidationError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            for i in inst.observations:
                if not 0 <= i < N:
                    raise ValidationError(
                        f"instance {inst.id!r}: vertex index {i} out of range [0, {N})")
            if inst.code_identity is not None and inst.code_identity.shape[0] != self.model.num_identity:
                raise ValidationError(
                    f"instance {inst.id!r}: identity code has {inst.code_identity.shape[0]} "
                    f"entries, model has I={self.model.num_identity}")
            if inst.code_expression is not None and inst.code_expression.shape[0] != self.model.num_expression:
                raise ValidationError(
                    f"instance {inst.id!r}: expression code has {inst.code_expression.shape[0]} "
                    f"entries, model has E={self.model.num_expression}")

    def __len__(self) -> int:
        return len(self.instances)

    def by_id(self, instance_id: str) -> InstanceRecord:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(f"unknown instance id {instance_id!r}")

    def copy(self) -> "Dataset":
        insts = [InstanceRecord(
            inst.id, dict(inst.observations),
            None if inst.code_identity is None else inst.code_identity.copy(),
            None if inst.code_expression is None else inst.code_expression.copy(),
            None if inst.camera is None else inst.camera.copy(),
            None if inst.labels is None else dict(inst.labels)) for inst in self.instances]
        return Dataset(self.model.copy(), insts)


def instance_shape(model: ShapeModel, code_identity, code_expression) -> np.ndarray:
    """Vertex positions B0 + sum_s sI_s BI_s + sum_s sE_s BE_s, shape (N, 3)."""
    sI = np.asarray(code_identity, dtype=float).reshape(-1)
    sE = np.asarray(code_expression, dtype=float).reshape(-1)
    if sI.shape[0] != model.num_identity:
        raise ValidationError(
            f"identity axis mismatch: code has {sI.shape[0]} entries, model has I={model.num_identity}")
    if sE.shape[0] != model.num_expression:
        raise ValidationError(
            f"expression axis mismatch: code has {sE.shape[0]} entries, model has E={model.num_expression}")
    return (model.mean
            + np.tensordot(sI, model.identity_basis, axes=1)
            + np.tensordot(sE, model.expression_basis, axes=1))


# --------------------------------------------------------------------------- I/O

def model_to_dict(model: ShapeModel) -> dict:
    return {
        "n": model.grid.n,
        "I": model.num_identity,
        "E": model.num_expression,
        "mean": model.mean.tolist(),
        "identity_basis": model.identity_basis.tolist(),
        "expression_basis": model.expression_basis.tolist(),
    }


def model_from_dict(obj: dict, source: str = "<model>") -> ShapeModel:
    try:
        n = obj["n"]
        I, E = obj["I"], obj["E"]
        mean = np.array(obj["mean"], dtype=float)
        idb = np.array(obj["identity_basis"], dtype=float)
        exb = np.array(obj["expression_basis"], dtype=float)
    except KeyError as exc:
        raise ParseError(f"{source}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{source}: malformed array ({exc})") from None
    if not isinstance(n, int) or not isinstance(I, int) or not isinstance(E, int):
        raise ParseError(f"{source}: fields n, I, E must be integers")
    N = (n + 1) ** 2
    if mean.ndim != 2 or mean.shape[0] != N:
        raise ValidationError(f"{source}: mean has {mean.shape[0] if mean.ndim else 0} vertices, "
                              f"expected N=(n+1)^2={N}")
    if (idb.shape[0] if idb.ndim else 0) != I:
        raise ValidationError(f"{source}: identity_basis has {idb.shape[0]} elements, header says I={I}")
    if (exb.shape[0] if exb.ndim else 0) != E:
        raise ValidationError(f"{source}: expression_basis has {exb.shape[0]} elements, header says E={E}")
    return ShapeModel(UvGrid(n), mean, idb, exb)


def save_model(path, model: ShapeModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> ShapeModel:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return model_from_dict(obj, source=str(path))


def instance_to_dict(inst: InstanceRecord) -> dict:
    out: dict = {"id": inst.id}
    if inst.labels is not None:
        out["labels"] = dict(inst.labels)
    out["points"] = [{"i": int(i), "x": float(x), "y": float(y)}
                     for i, (x, y) in sorted(inst.observations.items())]
    if inst.code_identity is not None and inst.code_expression is not None:
        out["codes"] = {"identity": inst.code_identity.tolist(),
                        "expression": inst.code_expression.tolist()}
    if inst.camera is not None:
        out["camera"] = {"q": inst.camera.q.tolist(), "t": inst.camera.t.tolist(),
                         "sigma": inst.camera.sigma}
    return out


def instance_from_dict(obj: dict, where: str = "") -> InstanceRecord:
    try:
        iid = obj["id"]
        if not isinstance(iid, str):
            raise ParseError(f"{where}: field 'id' must be a string")
        obs: dict[int, tuple[float, float]] = {}
        for k, p in enumerate(obj.get("points", [])):
            try:
                i, x, y = p["i"], float(p["x"]), float(p["y"])
            except (KeyError, TypeError, ValueError):
                raise ParseError(f"{where}: malformed point #{k}") from None
            if not isinstance(i, int):
                raise ParseError(f"{where}: point #{k} has non-integer vertex index")
            if i in obs:
                raise ValidationError(f"vertex {i} observed twice")
            obs[i] = (x, y)
        codes = obj.get("codes")
        sI = sE = None
        if codes is not None:
            sI = np.array(codes["identity"], dtype=float)
            sE = np.array(codes["expression"], dtype=float)
        cam = obj.get("camera")
        camera = None
        if cam is not None:
            camera = CameraPose(np.array(cam["q"], dtype=float), np.array(cam["t"], dtype=float),
                                float(cam["sigma"]))
        labels = obj.get("labels")
        if labels is not None:
            labels = {str(k): str(v) for k, v in labels.items()}
    except ParseError:
        raise
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None
    return InstanceRecord(iid, obs, sI, sE, camera, labels)


def save_instances(path, instances: Iterable[InstanceRecord]) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst)) + "\n")


def load_instances(path) -> list[InstanceRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno} column {exc.colno}: {exc.msg}") from None
            out.append(instance_from_dict(obj, where=f"{path}: line {lineno}"))
    return out


def save_dataset(path, dataset: Dataset) -> None:
    """Write the instances of ``dataset`` as JSON lines (the model goes to its own file)."""
    save_instances(path, dataset.instances)


def load_dataset(path, model: ShapeModel) -> Dataset:
    return Dataset(model, load_instances(path))
