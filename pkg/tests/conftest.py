import numpy as np
import pytest

from lifted.geometry import quat_normalize
from lifted.model import CameraPose, Dataset, InstanceRecord, ShapeModel, UvGrid


def random_model(rng, n=3, I=2, E=2, scale=0.1):
    grid = UvGrid(n)
    N = grid.num_vertices
    return ShapeModel(grid, rng.normal(size=(N, 3)), scale * rng.normal(size=(I, N, 3)),
                      scale * rng.normal(size=(E, N, 3)))


def random_camera(rng):
    return CameraPose(quat_normalize(rng.normal(size=4)), rng.normal(size=2) * 5,
                      float(rng.uniform(0.5, 3.0)))


def random_dataset(rng, n=3, I=2, E=2, K=6, visible=0.7, labels=True):
    """Initialized dataset with random observations (not consistent with the model)."""
    model = random_model(rng, n, I, E)
    N = model.num_vertices
    insts = []
    for k in range(K):
        vis = rng.random(N) < visible
        obs = {int(i): tuple(rng.normal(size=2) * 5) for i in np.flatnonzero(vis)}
        lab = None
        if labels:
            lab = {"identity_id": f"i{k % 2}", "expression_id": f"e{(k // 2) % 3}",
                   "pose_id": f"p{k % 3}"}
        insts.append(InstanceRecord(f"k{k}", obs, rng.normal(size=I), rng.normal(size=E),
                                    random_camera(rng), lab))
    return Dataset(model, insts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
