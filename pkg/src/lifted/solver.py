"""Initialization, Adam fitting and finite-difference gradient checks for the total loss."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lux import LuxProblem
from .model import CameraPose, Dataset, InstanceRecord, ShapeModel
from .objective import (FACTORS, LossWeights, Params, TripletSampler, pack, projections,
                        regularization_terms, reprojection_terms, restrict_triplets,
                        total_loss, triplet_terms, unpack)

log = logging.getLogger(__name__)

MIN_VISIBLE = 4
SIGMA_FLOOR = 1e-6
INIT_HEIGHT = 0.3
INIT_WIDTH = 0.15
INIT_BASIS_STD = 1e-3

PER_INSTANCE = ("q", "t", "sigma", "code_identity", "code_expression")


class FitAborted(RuntimeError):
    pass


@dataclass
class SolverConfig:
    lr: float = 1e-4
    decay_factor: float = 0.5
    decay_every_epochs: int = 50
    epochs: int = 400
    batch_size: int = 64
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    # optional per-block step-size multipliers, e.g. {"t": 100.0}
    lr_scale: dict[str, float] = field(default_factory=dict)
    # every this many epochs (and after the last), re-express codes so labeled groups
    # separate along their own factor's columns (0: off)
    align_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every_epochs < 1:
            raise ValueError("decay_every_epochs must be >= 1")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.align_every < 0:
            raise ValueError("align_every must be >= 0")
        unknown = set(self.lr_scale) - set(Params.BLOCKS)
        if unknown:
            raise ValueError(f"unknown parameter blocks in lr_scale: {sorted(unknown)}")

    def lr_at(self, epoch: int) -> float:
        """Step size during 0-based ``epoch``."""
        return self.lr * self.decay_factor ** (epoch // self.decay_every_epochs)


# ------------------------------------------------------------------ initialization

def gaussian_surface(grid, height: float = INIT_HEIGHT, width: float = INIT_WIDTH) -> np.ndarray:
    """Gaussian bump over the centered unit square, bulging toward +z (the camera)."""
    uv = grid.uv
    x, y = uv[:, 0] - 0.5, uv[:, 1] - 0.5
    z = height * np.exp(-(x * x + y * y) / (2 * width * width))
    return np.stack([x, y, z], axis=1)


def fittable(dataset: Dataset) -> np.ndarray:
    """Mask of instances with enough visible points to constrain a camera."""
    return np.array([inst.num_visible >= MIN_VISIBLE for inst in dataset.instances], dtype=bool)


def initialize(dataset: Dataset, config: SolverConfig | None = None,
               num_identity: int | None = None, num_expression: int | None = None) -> Dataset:
    """Fresh model and per-instance variables for ``dataset``'s observations.

    Basis sizes default to those of ``dataset.model``. Instances with fewer than four
    visible points keep a default camera and are skipped by :func:`fit`.
    """
    cfg = config or SolverConfig()
    rng = np.random.default_rng(cfg.seed)
    grid = dataset.model.grid
    I = dataset.model.num_identity if num_identity is None else num_identity
    E = dataset.model.num_expression if num_expression is None else num_expression
    N = grid.num_vertices
    mean = gaussian_surface(grid)
    model = ShapeModel(grid, mean, rng.normal(0.0, INIT_BASIS_STD, (I, N, 3)),
                       rng.normal(0.0, INIT_BASIS_STD, (E, N, 3)))

    insts = []
    for inst in dataset.instances:
        cam = CameraPose.identity()
        if inst.num_visible >= MIN_VISIBLE:
            idx = np.fromiter(inst.observations.keys(), dtype=int)
            pts = np.array([inst.observations[i] for i in idx])
            # frontal view of the visible part of the surface gives the scale reference
            ref = mean[idx, :2]
            ref_diag = np.linalg.norm(ref.max(axis=0) - ref.min(axis=0))
            obs_diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
            sigma = obs_diag / ref_diag if ref_diag > 0 and obs_diag > 0 else 1.0
            cam = CameraPose(np.array([1.0, 0.0, 0.0, 0.0]), pts.mean(axis=0), sigma)
        else:
            log.warning("instance %r has %d visible points (< %d); excluded from fitting",
                        inst.id, inst.num_visible, MIN_VISIBLE)
        insts.append(InstanceRecord(inst.id, dict(inst.observations), np.zeros(I), np.zeros(E),
                                    cam, None if inst.labels is None else dict(inst.labels)))
    return Dataset(model, insts)


# ------------------------------------------------------------------ fitting

@dataclass
class FitHistory:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def record(self, epoch: int, terms: dict[str, float]) -> None:
        for name, value in terms.items():
            self.rows.append((epoch, name, float(value)))

    def series(self, name: str) -> np.ndarray:
        return np.array([v for _, n, v in self.rows if n == name])

    def final(self, name: str) -> float:
        return self.series(name)[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "term", "value"])
            for epoch, name, value in self.rows:
                w.writerow([epoch, name, repr(value)])


class _Adam:
    """Adam over a :class:`Params` bundle.

    Shared blocks are dense. Per-instance rows only move (and only advance their own
    step counter) when they received a gradient, so untouched instances stay put.
    """

    def __init__(self, params: Params, cfg: SolverConfig):
        self.cfg = cfg
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.shared_steps = 0
        self.row_steps = np.zeros(params.num_instances, dtype=np.int64)

    def reset(self) -> None:
        """Forget moment estimates (after a change of coordinates)."""
        for name in Params.BLOCKS:
            getattr(self.m, name)[...] = 0.0
            getattr(self.v, name)[...] = 0.0
        self.shared_steps = 0
        self.row_steps[:] = 0

    def step(self, params: Params, grad: Params, lr: float, rows: np.ndarray) -> None:
        c = self.cfg
        b1, b2 = c.adam_beta1, c.adam_beta2
        self.shared_steps += 1
        self.row_steps[rows] += 1
        for name in Params.BLOCKS:
            x, g = getattr(params, name), getattr(grad, name)
            m, v = getattr(self.m, name), getattr(self.v, name)
            step_lr = lr * c.lr_scale.get(name, 1.0)
            if name in PER_INSTANCE:
                x, g, m_r, v_r = x[rows], g[rows], m[rows], v[rows]
                t = self.row_steps[rows].reshape((-1,) + (1,) * (x.ndim - 1))
                m_r = b1 * m_r + (1 - b1) * g
                v_r = b2 * v_r + (1 - b2) * g * g
                upd = step_lr * (m_r / (1 - b1 ** t)) / (np.sqrt(v_r / (1 - b2 ** t)) + c.adam_eps)
                m[rows], v[rows] = m_r, v_r
                getattr(params, name)[rows] = x - upd
            else:
                t = self.shared_steps
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                x -= step_lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + c.adam_eps)


def _project_constraints(params: Params, rows: np.ndarray) -> None:
    q = params.q[rows]
    params.q[rows] = q / np.linalg.norm(q, axis=1, keepdims=True)
    np.maximum(params.sigma, SIGMA_FLOOR, out=params.sigma)


def _group_index(labels, key: str, rows) -> np.ndarray:
    """Integer group per row of ``rows`` (-1 where the label is missing)."""
    names, out = {}, np.full(len(rows), -1)
    for j, k in enumerate(rows):
        lab = labels[k]
        if lab is not None and key in lab:
            out[j] = names.setdefault(lab[key], len(names))
    return out


def _within_scatter(C: np.ndarray, groups: np.ndarray) -> np.ndarray:
    S = np.zeros((C.shape[1], C.shape[1]))
    for g in np.unique(groups[groups >= 0]):
        D = C[groups == g] - C[groups == g].mean(axis=0)
        S += D.T @ D
    return S


def _generalized_eigh(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Eigenvectors of ``A v = w B v`` (B positive definite), ascending ``w``, ``v^T B v = 1``."""
    L = np.linalg.cholesky(B)
    Li = np.linalg.inv(L)
    _, U = np.linalg.eigh(Li @ A @ Li.T)
    return Li.T @ U


def _centroid_gap(C: np.ndarray, groups: np.ndarray, q: float = 0.1) -> float:
    cents = np.array([C[groups == g].mean(axis=0) for g in np.unique(groups[groups >= 0])])
    if len(cents) < 2:
        return 0.0
    d2 = np.sum((cents[:, None] - cents[None]) ** 2, axis=2)[np.triu_indices(len(cents), 1)]
    return float(np.quantile(d2, q))


def align_codes(params: Params, labels, rows, margin: float, max_cond: float = 1e6) -> bool:
    """Move along the symmetry ``C -> C M``, ``B -> M^-1 B`` so labels explain the columns.

    ``M``'s identity columns span the directions in which codes vary least within
    identity groups relative to their overall second moment (a generalized eigenproblem
    over the labeled ``rows``); expression columns likewise. Each factor is then scaled
    so most group centroids sit at least ``2 * margin`` apart in squared distance.
    Deviations, hence reprojection and shape terms, are unchanged. Returns False (and
    leaves ``params`` alone) when the labels cannot pin down a well-conditioned ``M``.
    """
    I, E = params.code_identity.shape[1], params.code_expression.shape[1]
    rows = np.asarray(rows)
    C = np.concatenate([params.code_identity, params.code_expression], axis=1)
    Cr = C[rows]
    St = Cr.T @ Cr / max(len(rows), 1)
    if I + E == 0 or np.linalg.cond(St) > max_cond ** 2:
        return False
    blocks = []
    for key, dim in (("identity_id", I), ("expression_id", E)):
        if dim == 0:
            continue
        groups = _group_index(labels, key, rows)
        if np.unique(groups[groups >= 0]).size < 2:
            return False
        vecs = _generalized_eigh(_within_scatter(Cr, groups), St)
        P = vecs[:, :dim]
        gap = _centroid_gap(Cr @ P, groups)
        scale = math.sqrt(2 * margin / gap) if gap > 0 else 1.0
        blocks.append(P * max(scale, 1.0))
    M = np.concatenate(blocks, axis=1)
    if np.linalg.cond(M) > max_cond:
        return False
    B = np.concatenate([params.identity_basis, params.expression_basis], axis=0)
    B = np.linalg.solve(M, B.reshape(I + E, -1))
    C = C @ M
    params.code_identity[...] = C[:, :I]
    params.code_expression[...] = C[:, I:]
    params.identity_basis[...] = B[:I].reshape(params.identity_basis.shape)
    params.expression_basis[...] = B[I:].reshape(params.expression_basis.shape)
    return True


def _diagnose_nonfinite(params, obs, weights, triplets, idx) -> str:
    checks = [
        ("l3d", lambda: reprojection_terms(params, obs, idx)[1]),
        ("regularizer", lambda: regularization_terms(params, weights, idx)[1]),
    ]
    for f in FACTORS:
        checks.append((f, lambda f=f: triplet_terms(params, {f: triplets.get(f, np.zeros((0, 3), int))},
                                                    weights.triplet_margin)[1]))
    bad = []
    for name, fn in checks:
        g = fn()
        blocks = [b for b, arr in g.items() if not np.all(np.isfinite(arr))]
        if blocks:
            bad.append(f"{name} (blocks: {', '.join(blocks)})")
    return "; ".join(bad) or "unknown term"


def mean_reprojection_error(params: Params, obs, idx=None) -> float:
    """Mean Euclidean distance between projected and observed points over visible entries."""
    idx = np.arange(params.num_instances) if idx is None else np.asarray(idx)
    x = projections(params, idx)
    nu = obs.visibility[idx]
    d = np.linalg.norm(x - obs.points[idx], axis=2)
    n = nu.sum()
    return float((nu * d).sum() / n) if n else 0.0


def _epoch_terms(params, obs, weights, triplets, idx) -> dict[str, float]:
    rep = total_loss(params, obs, weights, triplets, idx)
    out = {"total": rep.total}
    out.update(rep.terms)
    out["reproj_mean"] = mean_reprojection_error(params, obs, idx)
    return out


def fit(dataset: Dataset, config: SolverConfig | None = None,
        callback=None) -> tuple[Dataset, FitHistory]:
    """Minimize the total loss with mini-batch Adam.

    Each epoch shuffles the fittable instances into batches, resamples one triplet per
    labeled anchor and factor, and keeps each batch's triplets whose anchor lies in the
    batch. History rows are full-dataset values at the start (epoch 0) and after every
    epoch. ``callback(epoch, terms)`` may return True to stop early.
    """
    cfg = config or SolverConfig()
    if not all(inst.is_initialized() for inst in dataset.instances):
        raise ValueError("dataset is not initialized; run initialize() first")
    rng = np.random.default_rng(cfg.seed)
    params, obs = pack(dataset)
    active = np.flatnonzero(fittable(dataset))
    if active.size == 0:
        raise ValueError(f"no instance has at least {MIN_VISIBLE} visible points")
    labels = [inst.labels for inst in dataset.instances]
    sampler = TripletSampler(labels, fittable(dataset))
    opt = _Adam(params, cfg)
    history = FitHistory()
    weights = cfg.weights

    triplets = sampler.sample(rng)
    history.record(0, _epoch_terms(params, obs, weights, triplets, active))
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = active[rng.permutation(active.size)]
        for start in range(0, order.size, cfg.batch_size):
            batch = np.sort(order[start:start + cfg.batch_size])
            trip = restrict_triplets(triplets, batch)
            rep = total_loss(params, obs, weights, trip, batch)
            if not all(np.all(np.isfinite(arr)) for _, arr in rep.grad.items()):
                raise FitAborted(f"non-finite gradient in epoch {epoch + 1}: "
                                 + _diagnose_nonfinite(params, obs, weights, trip, batch))
            touched = np.unique(np.concatenate([batch] + [t.ravel() for t in trip.values()]))
            opt.step(params, rep.grad, lr, touched)
            _project_constraints(params, touched)
        triplets = sampler.sample(rng)
        last = epoch + 1 == cfg.epochs
        if cfg.align_every and ((epoch + 1) % cfg.align_every == 0 or last):
            if align_codes(params, labels, active, weights.triplet_margin):
                opt.reset()
        terms = _epoch_terms(params, obs, weights, triplets, active)
        if not math.isfinite(terms["total"]):
            raise FitAborted(f"loss became non-finite in epoch {epoch + 1}: "
                             + ", ".join(k for k, v in terms.items() if not math.isfinite(v)))
        history.record(epoch + 1, terms)
        if callback is not None and callback(epoch + 1, terms):
            break
    return unpack(params, dataset), history


# ------------------------------------------------------------------ gradient check

@dataclass
class GradientCheckReport:
    max_rel_error: float
    worst: tuple[str, tuple, float, float]   # (block, index, analytic, numeric)
    checked: list[tuple[str, tuple, float, float, float]]

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def relative_error(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(dataset: Dataset, config: SolverConfig | None = None, samples: int = 100,
                   lux: LuxProblem | None = None, step: float = 1e-5, floor: float = 1e-6,
                   seed: int | None = None) -> GradientCheckReport:
    """Analytic vs central finite-difference gradients of the total loss.

    Coordinates are drawn uniformly over the parameter blocks (and the lux variables
    when ``lux`` is given) so every term is exercised. Relative errors use
    ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    cfg = config or SolverConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params, obs = pack(dataset)
    triplets = TripletSampler([inst.labels for inst in dataset.instances]).sample(rng)
    weights = cfg.weights

    def loss(name: str, idx) -> float:
        # only terms that depend on the perturbed coordinate; the rest cancel exactly in
        # the central difference but would add rounding noise proportional to their size
        if name.startswith("lux."):
            return float(sum(lux.losses()[0].values()))
        if name in PER_INSTANCE:
            k = idx[0]
            near = {f: t[np.any(t == k, axis=1)] for f, t in triplets.items()}
            return total_loss(params, obs, weights, near, [k]).total
        return total_loss(params, obs, weights, triplets, lux=lux).total

    rep = total_loss(params, obs, weights, triplets, lux=lux)
    targets = [(name, arr, getattr(rep.grad, name)) for name, arr in params.items() if arr.size]
    if lux is not None:
        st = lux.state
        for name, arr in (("lux.L", st.L), ("lux.albedo", st.albedo), ("lux.shading", st.shading)):
            g = rep.lux_grad[name.split(".")[1]]
            if name != "lux.L":
                # only pixels inside the mask are variables
                sel = np.argwhere(st.mask)
                targets.append((name, arr, g, sel))
                continue
            targets.append((name, arr, g))

    checked = []
    for _ in range(samples):
        tgt = targets[rng.integers(len(targets))]
        name, arr, g = tgt[:3]
        if len(tgt) == 4:
            pix = tuple(tgt[3][rng.integers(len(tgt[3]))])
            idx = pix + tuple(int(rng.integers(s)) for s in arr.shape[len(pix):])
        else:
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + step
        fp = loss(name, idx)
        arr[idx] = orig - step
        fm = loss(name, idx)
        arr[idx] = orig
        num = (fp - fm) / (2 * step)
        ana = float(g[idx])
        checked.append((name, idx, ana, num, relative_error(ana, num, floor)))
    worst = max(checked, key=lambda c: c[4])
    return GradientCheckReport(worst[4], worst[:4], checked)
