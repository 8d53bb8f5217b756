# %% [markdown]
# # Local views of a square grid
#
# Builds the graph Laplacian of a regular grid, picks a pair of eigenvectors
# for every point and inspects how distorted the resulting local maps are.
# Points near the border get noticeably worse views, and the postprocessing
# pass borrows better maps from neighbours.

# %%
import numpy as np

from ldle import graph, local_views
from ldle.datasets import DistanceSource, grid2d

cloud = grid2d(1, 1, 0.02)  # 51 x 51
dist = DistanceSource.from_points(cloud.points)
nbrs = graph.knn_search(dist, 49)
lap = graph.build_laplacian(dist, 49, 7, nbrs)
basis = graph.smallest_eigenpairs(lap, 100)
print("first eigenvalues:", np.round(basis.values[:6], 5))

# %% [markdown]
# The gradient estimator should recover the identity on the coordinate
# functions away from the border.

# %%
scales = local_views.compute_local_scales(dist, 25, 0.99, 2, nbrs)
X = cloud.points
inner = np.flatnonzero(np.all((X > 0.25) & (X < 0.75), axis=1))
A = local_views.estimate_gradient_inner_products(basis, scales, lap, "finite_sum", points=inner, values=X).values
print("mean A(x,x), A(y,y), A(x,y):", A[:, 0, 0].mean(), A[:, 1, 1].mean(), A[:, 0, 1].mean())

# %%
raw = local_views.build_local_views(basis, scales, lap, dist=dist)
post, plog = local_views.postprocess(raw, scales, basis, dist)
print("postprocess passes:", plog.passes, "replacements:", plog.replacements)

border = np.minimum(X, 1 - X).min(axis=1)
near = border <= np.quantile(border, 0.1)
for name, p in (("selected", raw), ("postprocessed", post)):
    print(f"{name:>14}: median zeta inside {np.median(p.zeta[~near]):.2f}, near border {np.median(p.zeta[near]):.2f}")

# %% [markdown]
# Colour each point by the log-distortion of its view.

# %%
from ldle.svg import emit_svg_scatter

z = np.log(post.zeta)
emit_svg_scatter(X, z, "local_view_distortion.svg")
print("wrote local_view_distortion.svg")
