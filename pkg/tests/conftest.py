import numpy as np
import pytest

from ldle import graph, local_views
from ldle.datasets import DistanceSource, grid2d


class SmallGrid:
    """Stages up to the local views on a coarse square grid, shared by several test modules."""

    def __init__(self, spacing=0.1, k_nn=12, k_tune=4, N=12, k_lv=6):
        self.cloud = grid2d(1.0, 1.0, spacing)
        self.dist = DistanceSource.from_points(self.cloud.points)
        self.nbrs = graph.knn_search(self.dist, k_nn)
        self.lap = graph.build_laplacian(self.dist, k_nn, k_tune, self.nbrs)
        self.basis = graph.smallest_eigenpairs(self.lap, N)
        self.scales = local_views.compute_local_scales(self.dist, k_lv, 0.99, 2, self.nbrs)
        raw = local_views.build_local_views(
            self.basis, self.scales, self.lap, "finite_sum", None, 50.0, 0.9, 2, self.dist
        )
        self.raw = raw.copy()
        self.params, self.post_log = local_views.postprocess(raw, self.scales, self.basis, self.dist)


@pytest.fixture(scope="session")
def small_grid():
    return SmallGrid()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
