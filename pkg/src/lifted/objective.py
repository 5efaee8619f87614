"""Loss terms of the full training objective and their analytic gradients.

The free variables of a dataset are packed into a :class:`Params` bundle of dense
arrays (one row per instance) so that every term is evaluated batch-wise with numpy.
Gradients come back as a ``Params`` of identical shapes.

Quaternions enter every term through ``q / |q|``; the gradient reported for ``q`` is
therefore already projected onto the tangent space of the unit sphere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import quat_rotmat_jacobian, quat_to_rotmat
from .model import CameraPose, Dataset, InstanceRecord, ShapeModel

log = logging.getLogger(__name__)

EPS = 1e-8
FACTORS = ("expression", "identity", "pose")
LABEL_KEYS = {"expression": "expression_id", "identity": "identity_id", "pose": "pose_id"}


@dataclass
class LossWeights:
    lambda_3d: float = 50.0
    lambda_disentangle: float = 1.0
    lambda_scale: float = 0.01
    lambda_shape: float = 0.1
    triplet_margin: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")


@dataclass
class Params:
    mean: np.ndarray
    identity_basis: np.ndarray
    expression_basis: np.ndarray
    q: np.ndarray
    t: np.ndarray
    sigma: np.ndarray
    code_identity: np.ndarray
    code_expression: np.ndarray

    BLOCKS = ("mean", "identity_basis", "expression_basis", "q", "t", "sigma",
              "code_identity", "code_expression")
    SHARED = ("mean", "identity_basis", "expression_basis")

    def zeros_like(self) -> "Params":
        return Params(*(np.zeros_like(getattr(self, b)) for b in self.BLOCKS))

    def copy(self) -> "Params":
        return Params(*(getattr(self, b).copy() for b in self.BLOCKS))

    def items(self):
        return ((b, getattr(self, b)) for b in self.BLOCKS)

    def add_(self, other: "Params", scale: float = 1.0) -> "Params":
        for b in self.BLOCKS:
            getattr(self, b)[...] += scale * getattr(other, b)
        return self

    @property
    def num_instances(self) -> int:
        return self.q.shape[0]


@dataclass
class Observations:
    points: np.ndarray      # (K, N, 2)
    visibility: np.ndarray  # (K, N) in {0, 1}


def pack(dataset: Dataset) -> tuple[Params, Observations]:
    """Dense arrays of every free variable and observation in ``dataset``."""
    m = dataset.model
    K, N = len(dataset.instances), m.num_vertices
    q = np.zeros((K, 4))
    t = np.zeros((K, 2))
    sigma = np.ones(K)
    sI = np.zeros((K, m.num_identity))
    sE = np.zeros((K, m.num_expression))
    pts = np.zeros((K, N, 2))
    vis = np.zeros((K, N))
    q[:, 0] = 1.0
    for k, inst in enumerate(dataset.instances):
        if inst.camera is not None:
            q[k], t[k], sigma[k] = inst.camera.q, inst.camera.t, inst.camera.sigma
        if inst.code_identity is not None:
            sI[k] = inst.code_identity
        if inst.code_expression is not None:
            sE[k] = inst.code_expression
        pts[k], vis[k] = inst.dense_points(N)
    params = Params(m.mean.copy(), m.identity_basis.copy(), m.expression_basis.copy(),
                    q, t, sigma, sI, sE)
    return params, Observations(pts, vis)


def unpack(params: Params, dataset: Dataset) -> Dataset:
    """New dataset holding ``params``; observations and labels are taken from ``dataset``."""
    model = ShapeModel(dataset.model.grid, params.mean.copy(), params.identity_basis.copy(),
                       params.expression_basis.copy())
    insts = []
    for k, inst in enumerate(dataset.instances):
        insts.append(InstanceRecord(
            inst.id, dict(inst.observations), params.code_identity[k].copy(),
            params.code_expression[k].copy(),
            CameraPose(params.q[k].copy(), params.t[k].copy(), float(params.sigma[k])),
            None if inst.labels is None else dict(inst.labels)))
    return Dataset(model, insts)


def _batch(idx, K):
    return np.arange(K) if idx is None else np.asarray(idx, dtype=int)


def shapes(params: Params, idx=None) -> np.ndarray:
    """Instance vertex positions, shape (B, N, 3)."""
    idx = _batch(idx, params.num_instances)
    return (params.mean[None]
            + np.einsum("bi,inc->bnc", params.code_identity[idx], params.identity_basis)
            + np.einsum("be,enc->bnc", params.code_expression[idx], params.expression_basis))


def deviations(params: Params, idx=None) -> np.ndarray:
    """Non-rigid deviation from the mean shape, shape (B, N, 3)."""
    idx = _batch(idx, params.num_instances)
    return (np.einsum("bi,inc->bnc", params.code_identity[idx], params.identity_basis)
            + np.einsum("be,enc->bnc", params.code_expression[idx], params.expression_basis))


def projections(params: Params, idx=None) -> np.ndarray:
    """Projected vertices of every instance in the batch, shape (B, N, 2)."""
    idx = _batch(idx, params.num_instances)
    R = quat_to_rotmat(params.q[idx])
    S = shapes(params, idx)
    return (params.sigma[idx, None, None] * np.einsum("bnc,bjc->bnj", S, R[:, :2])
            + params.t[idx, None, :])


def _push_quat_grad(grad_q: np.ndarray, q: np.ndarray, g_unit: np.ndarray) -> None:
    """Chain a gradient w.r.t. ``q/|q|`` back to ``q`` (rows of the batch), in place."""
    nrm = np.linalg.norm(q, axis=1, keepdims=True)
    qh = q / nrm
    radial = np.sum(g_unit * qh, axis=1, keepdims=True)
    grad_q += (g_unit - radial * qh) / nrm


def reprojection_terms(params: Params, obs: Observations, idx=None,
                       eps: float = EPS) -> tuple[float, Params]:
    """Smoothed reprojection distance summed over visible points of the batch."""
    idx = _batch(idx, params.num_instances)
    grad = params.zeros_like()
    if idx.size == 0:
        return 0.0, grad
    q = params.q[idx]
    qh = q / np.linalg.norm(q, axis=1, keepdims=True)
    R = quat_to_rotmat(qh)
    P = R[:, :2]
    sI, sE = params.code_identity[idx], params.code_expression[idx]
    S = (params.mean[None] + np.einsum("bi,inc->bnc", sI, params.identity_basis)
         + np.einsum("be,enc->bnc", sE, params.expression_basis))
    PS = np.einsum("bnc,bjc->bnj", S, P)
    sig = params.sigma[idx]
    x = sig[:, None, None] * PS + params.t[idx, None, :]
    nu = obs.visibility[idx]
    r = x - obs.points[idx]
    d = np.sqrt(np.sum(r * r, axis=2) + eps * eps)
    value = float(np.sum(nu * d))

    G = (nu / d)[:, :, None] * r
    grad.t[idx] = G.sum(axis=1)
    grad.sigma[idx] = np.sum(G * PS, axis=(1, 2))
    gP = sig[:, None, None] * np.einsum("bnj,bnc->bjc", G, S)
    J = quat_rotmat_jacobian(qh)
    g_unit = np.einsum("bjc,bkjc->bk", gP, J[:, :, :2, :])
    gq = np.zeros_like(q)
    _push_quat_grad(gq, q, g_unit)
    grad.q[idx] = gq
    GS = sig[:, None, None] * np.einsum("bnj,bjc->bnc", G, P)
    grad.mean[...] = GS.sum(axis=0)
    grad.identity_basis[...] = np.einsum("bi,bnc->inc", sI, GS)
    grad.expression_basis[...] = np.einsum("be,bnc->enc", sE, GS)
    grad.code_identity[idx] = np.einsum("inc,bnc->bi", params.identity_basis, GS)
    grad.code_expression[idx] = np.einsum("enc,bnc->be", params.expression_basis, GS)
    return value, grad


def regularization_terms(params: Params, weights: LossWeights, idx=None) -> tuple[dict, Params]:
    """Weighted scale and shape-deviation penalties; returns ``({"scale", "shape"}, grad)``."""
    idx = _batch(idx, params.num_instances)
    grad = params.zeros_like()
    sig = params.sigma[idx]
    sI, sE = params.code_identity[idx], params.code_expression[idx]
    D = (np.einsum("bi,inc->bnc", sI, params.identity_basis)
         + np.einsum("be,enc->bnc", sE, params.expression_basis))
    scale = weights.lambda_scale * float(np.sum(sig * sig))
    shape = weights.lambda_shape * float(np.sum(D * D))
    grad.sigma[idx] = 2 * weights.lambda_scale * sig
    gD = 2 * weights.lambda_shape * D
    grad.identity_basis[...] = np.einsum("bi,bnc->inc", sI, gD)
    grad.expression_basis[...] = np.einsum("be,bnc->enc", sE, gD)
    grad.code_identity[idx] = np.einsum("inc,bnc->bi", params.identity_basis, gD)
    grad.code_expression[idx] = np.einsum("enc,bnc->be", params.expression_basis, gD)
    return {"scale": scale, "shape": shape}, grad


# ------------------------------------------------------------------ triplets

def factor_features(params: Params, factor: str) -> np.ndarray:
    """Latent vector compared by the triplet loss of ``factor``, one row per instance."""
    if factor == "expression":
        return params.code_expression
    if factor == "identity":
        return params.code_identity
    if factor == "pose":
        qh = params.q / np.linalg.norm(params.q, axis=1, keepdims=True)
        sign = np.where(qh[:, :1] >= 0, 1.0, -1.0)
        return np.concatenate([sign * qh, params.t, params.sigma[:, None]], axis=1)
    raise ValueError(f"unknown factor {factor!r}")


def triplet_value_grad(F: np.ndarray, triplets: np.ndarray,
                       margin: float = 1.0) -> tuple[float, float, np.ndarray]:
    """Similarity + hinge triplet loss over rows of ``F``.

    ``triplets`` is (T, 3) of (anchor, positive, negative) row indices. Returns
    ``(similarity, hinge, dF)``.
    """
    dF = np.zeros_like(F)
    if len(triplets) == 0:
        return 0.0, 0.0, dF
    a, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    dap = F[a] - F[p]
    dan = F[a] - F[n]
    sp = np.sum(dap * dap, axis=1)
    sn = np.sum(dan * dan, axis=1)
    h = margin + sp - sn
    active = (h > 0).astype(float)[:, None]
    similarity = float(np.sum(sp))
    hinge = float(np.sum(np.maximum(h, 0.0)))
    ga = 2 * dap * (1 + active) - 2 * active * dan
    np.add.at(dF, a, ga)
    np.add.at(dF, p, -2 * dap * (1 + active))
    np.add.at(dF, n, 2 * active * dan)
    return similarity, hinge, dF


def _feature_grad_to_params(params: Params, factor: str, dF: np.ndarray, grad: Params) -> None:
    if factor == "expression":
        grad.code_expression += dF
    elif factor == "identity":
        grad.code_identity += dF
    else:
        qh = params.q / np.linalg.norm(params.q, axis=1, keepdims=True)
        sign = np.where(qh[:, :1] >= 0, 1.0, -1.0)
        _push_quat_grad(grad.q, params.q, sign * dF[:, :4])
        grad.t += dF[:, 4:6]
        grad.sigma += dF[:, 6]


def triplet_terms(params: Params, triplets: dict[str, np.ndarray],
                  margin: float = 1.0) -> tuple[dict, Params]:
    """Per-factor disentanglement losses (unweighted) and their joint gradient."""
    grad = params.zeros_like()
    values = {}
    for factor in FACTORS:
        trip = triplets.get(factor)
        if trip is None or len(trip) == 0:
            values[factor] = 0.0
            continue
        F = factor_features(params, factor)
        sim, hinge, dF = triplet_value_grad(F, trip, margin)
        values[factor] = sim + hinge
        _feature_grad_to_params(params, factor, dF, grad)
    return values, grad


class TripletSampler:
    """Samples one (anchor, positive, negative) triplet per labeled anchor and factor.

    Positive: same factor label, differs in at least one other label. Negative:
    different factor label and identical other labels when such an instance exists,
    otherwise any instance with a different factor label.
    """

    def __init__(self, labels: list[dict | None], active=None):
        K = len(labels)
        if active is None:
            active = np.ones(K, dtype=bool)
        self.candidates: dict[str, list[tuple[int, np.ndarray, np.ndarray]]] = {}
        usable = [k for k in range(K) if labels[k] is not None and active[k]]
        for factor in FACTORS:
            key = LABEL_KEYS[factor]
            others = [LABEL_KEYS[f] for f in FACTORS if f != factor]
            have = [k for k in usable if key in labels[k]]
            fl = np.array([labels[k][key] for k in have], dtype=object)
            ol = [np.array([labels[k].get(o) for k in have], dtype=object) for o in others]
            cands = []
            for j, a in enumerate(have):
                same_f = fl == fl[j]
                same_others = np.ones(len(have), dtype=bool)
                for arr in ol:
                    same_others &= arr == arr[j]
                pos = np.flatnonzero(same_f & ~same_others)
                neg = np.flatnonzero(~same_f & same_others)
                if neg.size == 0:
                    neg = np.flatnonzero(~same_f)
                if pos.size and neg.size:
                    cands.append((a, np.asarray(have)[pos], np.asarray(have)[neg]))
            if not cands:
                log.info("no valid %s triplet; that factor contributes 0", factor)
            self.candidates[factor] = cands

    def sample(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = {}
        for factor in FACTORS:
            rows = [(a, pos[rng.integers(pos.size)], neg[rng.integers(neg.size)])
                    for a, pos, neg in self.candidates[factor]]
            out[factor] = np.array(rows, dtype=int).reshape(-1, 3)
        return out

    def enumerate(self, factor: str) -> np.ndarray:
        """Every valid triplet of ``factor``."""
        rows = [(a, p, n) for a, pos, neg in self.candidates[factor] for p in pos for n in neg]
        return np.array(rows, dtype=int).reshape(-1, 3)


def restrict_triplets(triplets: dict[str, np.ndarray], anchors) -> dict[str, np.ndarray]:
    """Keep the triplets whose anchor is in ``anchors``."""
    anchors = np.asarray(anchors)
    return {f: t[np.isin(t[:, 0], anchors)] for f, t in triplets.items()}


# ------------------------------------------------------------------ totals

@dataclass
class LossReport:
    total: float
    terms: dict[str, float]
    weighted: dict[str, float]
    grad: Params
    lux_grad: dict[str, np.ndarray] = field(default_factory=dict)


TERM_ORDER = ("l3d", "expression", "identity", "pose", "scale", "shape")


def total_loss(params: Params, obs: Observations, weights: LossWeights,
               triplets: dict[str, np.ndarray] | None = None, idx=None,
               lux=None) -> LossReport:
    """Weighted sum of all terms, restricted to the instances in ``idx`` (all by default).

    ``lux`` is an optional :class:`lifted.lux.LuxProblem`; its terms are added with the
    weights carried by the problem itself.
    """
    l3d, g3d = reprojection_terms(params, obs, idx)
    reg, greg = regularization_terms(params, weights, idx)
    tri_vals, gtri = triplet_terms(params, triplets or {}, weights.triplet_margin)
    terms = {"l3d": l3d, **tri_vals, "scale": reg["scale"], "shape": reg["shape"]}
    weighted = {
        "l3d": weights.lambda_3d * l3d,
        **{f: weights.lambda_disentangle * tri_vals[f] for f in FACTORS},
        # the regularizer already carries its weights
        "scale": reg["scale"],
        "shape": reg["shape"],
    }
    grad = params.zeros_like()
    grad.add_(g3d, weights.lambda_3d).add_(gtri, weights.lambda_disentangle).add_(greg)
    lux_grad = {}
    if lux is not None:
        lux_terms, lux_grad = lux.losses()
        for name, v in lux_terms.items():
            terms[name] = v
            weighted[name] = v
    total = float(sum(weighted.values()))
    return LossReport(total, terms, weighted, grad, lux_grad)


# ------------------------------------------------------------------ record-level API

def reprojection_loss(instance: InstanceRecord, model: ShapeModel,
                      eps: float = EPS) -> tuple[float, dict[str, np.ndarray]]:
    """Reprojection loss of one instance with gradients keyed by variable name."""
    params, obs = pack(Dataset(model, [instance]))
    value, g = reprojection_terms(params, obs, eps=eps)
    return value, {
        "q": g.q[0], "t": g.t[0], "sigma": float(g.sigma[0]),
        "code_identity": g.code_identity[0], "code_expression": g.code_expression[0],
        "mean": g.mean, "identity_basis": g.identity_basis,
        "expression_basis": g.expression_basis,
    }


def dataset_loss_3d(dataset: Dataset) -> tuple[float, Params]:
    if len(dataset.instances) == 0:
        raise ValueError("dataset is empty")
    params, obs = pack(dataset)
    return reprojection_terms(params, obs)


def regularization_loss(dataset: Dataset, weights: LossWeights) -> tuple[float, Params]:
    params, _ = pack(dataset)
    vals, grad = regularization_terms(params, weights)
    return vals["scale"] + vals["shape"], grad


def triplet_losses(dataset: Dataset, weights: LossWeights, rng=None,
                   triplets: dict[str, np.ndarray] | None = None) -> tuple[float, dict, Params]:
    """Disentanglement loss; triplets are sampled from the labels unless given."""
    params, _ = pack(dataset)
    if triplets is None:
        rng = np.random.default_rng(0) if rng is None else rng
        triplets = TripletSampler([i.labels for i in dataset.instances]).sample(rng)
    vals, grad = triplet_terms(params, triplets, weights.triplet_margin)
    return float(sum(vals.values())), vals, grad


def dataset_total_loss(dataset: Dataset, weights: LossWeights, triplets=None,
                       lux=None) -> LossReport:
    params, obs = pack(dataset)
    return total_loss(params, obs, weights, triplets, lux=lux)
