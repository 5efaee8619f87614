import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifted.geometry import project
from lifted.model import Dataset, InstanceRecord, instance_shape
from lifted.objective import (EPS, LossWeights, Params, TripletSampler, dataset_loss_3d, deviations,
                              pack, regularization_terms, reprojection_terms, restrict_triplets,
                              total_loss, triplet_terms, triplet_value_grad)

from conftest import random_dataset


def naive_reprojection(ds, eps=EPS):
    total = 0.0
    for inst in ds.instances:
        x = project(instance_shape(ds.model, inst.code_identity, inst.code_expression), inst.camera)
        for j, y in inst.observations.items():
            total += np.sqrt(np.sum((x[j] - np.asarray(y)) ** 2) + eps * eps)
    return total


def test_reprojection_matches_loop_oracle(rng):
    ds = random_dataset(rng, K=5)
    assert np.isclose(dataset_loss_3d(ds)[0], naive_reprojection(ds), rtol=1e-12)


def test_exact_synthesis_reaches_epsilon_floor(rng):
    ds = random_dataset(rng, K=4, visible=1.0)
    for inst in ds.instances:
        x = project(instance_shape(ds.model, inst.code_identity, inst.code_expression), inst.camera)
        inst.observations = {j: tuple(x[j]) for j in range(len(x))}
    N, K = ds.model.num_vertices, len(ds.instances)
    value, grad = dataset_loss_3d(ds)
    assert value <= N * K * EPS * (1 + 1e-6)


def test_occluded_points_do_not_contribute(rng):
    ds = random_dataset(rng, K=3)
    base = dataset_loss_3d(ds)[0]
    inst = ds.instances[0]
    hidden = next(j for j in range(ds.model.num_vertices) if j not in inst.observations)
    params, obs = pack(ds)
    obs.points[0, hidden] = 1e6  # garbage behind a zero visibility flag
    assert np.isclose(reprojection_terms(params, obs)[0], base)


def test_regularizer_values(rng):
    ds = random_dataset(rng, K=4)
    params, _ = pack(ds)
    w = LossWeights(lambda_scale=0.3, lambda_shape=0.7)
    vals, _ = regularization_terms(params, w)
    D = [instance_shape(ds.model, i.code_identity, i.code_expression) - ds.model.mean
         for i in ds.instances]
    assert np.isclose(vals["scale"], 0.3 * sum(i.camera.sigma ** 2 for i in ds.instances))
    assert np.isclose(vals["shape"], 0.7 * sum(np.sum(d * d) for d in D))


def test_triplet_value_loop_oracle(rng):
    F = rng.normal(size=(7, 3))
    trip = np.array([[0, 1, 2], [3, 4, 5], [6, 0, 1], [2, 2, 3]])
    sim, hinge, _ = triplet_value_grad(F, trip, margin=0.8)
    exp_sim = exp_hinge = 0.0
    for a, p, n in trip:
        sp = np.sum((F[a] - F[p]) ** 2)
        sn = np.sum((F[a] - F[n]) ** 2)
        exp_sim += sp
        exp_hinge += max(0.0, 0.8 + sp - sn)
    assert np.isclose(sim, exp_sim) and np.isclose(hinge, exp_hinge)


def _fd_check(params, fn, grad, rng, count=60, h=1e-6):
    blocks = [b for b, arr in params.items() if arr.size]
    for _ in range(count):
        b = blocks[rng.integers(len(blocks))]
        arr = getattr(params, b)
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        fp = fn()
        arr[idx] = orig - h
        fm = fn()
        arr[idx] = orig
        num = (fp - fm) / (2 * h)
        ana = getattr(grad, b)[idx]
        assert abs(num - ana) <= 1e-5 * max(1.0, abs(num)), (b, idx, ana, num)


def test_total_gradient_finite_difference(rng):
    ds = random_dataset(rng, K=6)
    params, obs = pack(ds)
    w = LossWeights(lambda_3d=2.0, lambda_disentangle=0.5, lambda_scale=0.1, lambda_shape=0.3)
    trip = TripletSampler([i.labels for i in ds.instances]).sample(np.random.default_rng(1))
    rep = total_loss(params, obs, w, trip)
    _fd_check(params, lambda: total_loss(params, obs, w, trip).total, rep.grad, rng)


def test_batch_gradient_finite_difference(rng):
    ds = random_dataset(rng, K=6)
    params, obs = pack(ds)
    w = LossWeights()
    idx = np.array([1, 4])
    rep = total_loss(params, obs, w, None, idx)
    _fd_check(params, lambda: total_loss(params, obs, w, None, idx).total, rep.grad, rng, 40)
    others = np.setdiff1d(np.arange(6), idx)
    assert np.all(rep.grad.code_identity[others] == 0) and np.all(rep.grad.t[others] == 0)


def test_quaternion_gradient_is_tangent(rng):
    ds = random_dataset(rng, K=4)
    params, obs = pack(ds)
    params.q *= 3.0  # unnormalized on purpose
    _, g = reprojection_terms(params, obs)
    assert np.allclose(np.sum(g.q * params.q, axis=1), 0.0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_gauge_invariance(seed):
    """C -> C M, B -> M^-1 B leaves reprojection and shape terms unchanged."""
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, K=5)
    params, obs = pack(ds)
    w = LossWeights()
    before = reprojection_terms(params, obs)[0], regularization_terms(params, w)[0]["shape"]
    I = params.code_identity.shape[1]
    M = np.eye(4) + 0.3 * rng.normal(size=(4, 4))
    C = np.hstack([params.code_identity, params.code_expression]) @ M
    B = np.linalg.solve(M, np.concatenate([params.identity_basis, params.expression_basis]).reshape(4, -1))
    moved = Params(params.mean, B[:I].reshape(params.identity_basis.shape),
                   B[I:].reshape(params.expression_basis.shape), params.q, params.t, params.sigma,
                   C[:, :I], C[:, I:])
    assert np.allclose(deviations(moved), deviations(params), atol=1e-9)
    after = reprojection_terms(moved, obs)[0], regularization_terms(moved, w)[0]["shape"]
    assert np.allclose(after, before, rtol=1e-9)


# ------------------------------------------------------------------ sampler

LABELS = [
    {"identity_id": "a", "expression_id": "x", "pose_id": "p"},
    {"identity_id": "a", "expression_id": "y", "pose_id": "p"},
    {"identity_id": "b", "expression_id": "x", "pose_id": "p"},
    {"identity_id": "b", "expression_id": "y", "pose_id": "q"},
    None,
    {"identity_id": "a", "expression_id": "x", "pose_id": "q"},
]


def oracle_triplets(labels, factor):
    key = {"identity": "identity_id", "expression": "expression_id", "pose": "pose_id"}[factor]
    others = [k for k in ("identity_id", "expression_id", "pose_id") if k != key]
    out = set()
    for a, la in enumerate(labels):
        if la is None:
            continue
        pos = [p for p, lp in enumerate(labels) if lp and lp[key] == la[key]
               and any(lp[o] != la[o] for o in others)]
        strict = [n for n, ln in enumerate(labels) if ln and ln[key] != la[key]
                  and all(ln[o] == la[o] for o in others)]
        neg = strict or [n for n, ln in enumerate(labels) if ln and ln[key] != la[key]]
        if pos and neg:
            out |= {(a, p, n) for p in pos for n in neg}
    return out


@pytest.mark.parametrize("factor", ["identity", "expression", "pose"])
def test_sampler_matches_rule_oracle(factor):
    sampler = TripletSampler(LABELS)
    got = {tuple(t) for t in sampler.enumerate(factor)}
    assert got == oracle_triplets(LABELS, factor)
    sample = sampler.sample(np.random.default_rng(0))[factor]
    assert {tuple(t) for t in sample} <= got
    assert len(set(sample[:, 0])) == len(sample)


def test_sampler_without_labels_contributes_zero(rng):
    ds = random_dataset(rng, K=4, labels=False)
    trip = TripletSampler([i.labels for i in ds.instances]).sample(rng)
    params, _ = pack(ds)
    vals, grad = triplet_terms(params, trip)
    assert all(v == 0 for v in vals.values())
    assert all(np.all(a == 0) for _, a in grad.items())


def test_restrict_triplets():
    trip = {"identity": np.array([[0, 1, 2], [3, 1, 0], [5, 0, 1]])}
    assert restrict_triplets(trip, [0, 5])["identity"].tolist() == [[0, 1, 2], [5, 0, 1]]


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_shape=-1)
    with pytest.raises(ValueError):
        LossWeights(lambda_3d=float("nan"))
