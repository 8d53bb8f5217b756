# %% [markdown]
# # Tearing a sphere open
#
# A closed surface cannot be flattened without a cut.  With tearing enabled
# the alignment only glues views that are neighbours both on the sphere and
# in the embedding, so a seam opens.  Points on the seam are coloured so
# that matching colours show which edges belong together.

# %%
import numpy as np

from ldle.pipeline import PipelineConfig, run_pipeline

art = run_pipeline(PipelineConfig(dataset="sphere:n=2000", out="sphere_run"))
E = art.embedding
colored = E.tear_colors >= 0
print(f"{art.clustering.M} views, {len(E.torn_pairs)} torn view pairs, {colored.sum()} seam points")

# %% [markdown]
# Seam points should sit on the outer rim of the flattened sphere.

# %%
y = E.y - E.y.mean(axis=0)
r = np.linalg.norm(y, axis=1)
print(f"median radius: seam {np.median(r[colored]):.3f}, rest {np.median(r[~colored]):.3f}")

# %% [markdown]
# Without tearing every view is glued to all of its neighbours, so the two
# hemispheres end up stacked on top of each other.  A simple symptom: points
# whose nearest embedded neighbour is far away on the sphere.

# %%
from scipy.spatial import cKDTree

from ldle.datasets import generate_manifold

X = generate_manifold("sphere:n=2000").points


def folded_fraction(y, gap=0.3):
    _, nn = cKDTree(y).query(y, k=2)
    return np.mean(np.linalg.norm(X - X[nn[:, 1]], axis=1) > gap)


glued = run_pipeline(PipelineConfig(dataset="sphere:n=2000", out="sphere_glued", to_tear=False))
print(f"folded points: torn {folded_fraction(E.y):.3f}, glued {folded_fraction(glued.y):.3f}")

# %% [markdown]
# The seam has a price: shortest paths that cross it turn into detours
# around the rim, so the geodesic distortion of the torn embedding is larger.

# %%
print("median D_k torn:", np.median(art.report.values))
print("median D_k glued:", np.median(glued.report.values))
