"""Nearest neighbours, the self-tuned sparse graph Laplacian and its spectrum."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import dijkstra

from .datasets import DistanceSource, euclidean
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateScaleError,
    InvalidParameterError,
    UnreachableError,
)

DENSE_EIGEN_LIMIT = 2000


@dataclass(frozen=True)
class NeighborLists:
    """``indices[k]`` are the ``k_nn`` nearest neighbours of point ``k`` (self excluded)."""

    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self):
        return self.indices.shape[1]


@dataclass(frozen=True)
class SparseLaplacian:
    L: sp.csr_matrix
    sigma: np.ndarray
    kernel_nnz: int

    @property
    def n(self):
        return self.L.shape[0]


@dataclass(frozen=True)
class EigenBasis:
    """Nontrivial eigenpairs; ``vectors[:, i]`` has eigenvalue ``values[i]``."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def N(self):
        return self.values.shape[0]


def _as_source(dist):
    if isinstance(dist, DistanceSource):
        return dist
    return DistanceSource.from_points(dist)


def _sort_rows(idx, dst, self_idx, k):
    """Order candidates by (distance, index), drop self, keep the first ``k``."""
    n_rows = idx.shape[0]
    out_i = np.empty((n_rows, k), dtype=np.intp)
    out_d = np.empty((n_rows, k))
    for r in range(n_rows):
        keep = idx[r] != self_idx[r]
        ii, dd = idx[r][keep], dst[r][keep]
        order = np.lexsort((ii, dd))[:k]
        out_i[r], out_d[r] = ii[order], dd[order]
    return out_i, out_d


def knn_search(dist, k_nn, brute_force=False):
    """Exact ``k_nn`` nearest neighbours of every point, self excluded.

    Ties are broken by point index.  Euclidean sources use a k-d tree to find
    candidates and then re-rank them with the same distance formula as the
    brute-force path, so both give identical lists.
    """
    dist = _as_source(dist)
    n = dist.n
    k_nn = int(k_nn)
    if not 1 <= k_nn < n:
        raise InvalidParameterError(f"k_nn must satisfy 1 <= k_nn < n={n}, got {k_nn}")
    if dist.matrix is not None or brute_force or n <= 64:
        return _knn_brute(dist, k_nn)
    tree = dist.tree()
    pts = dist.points
    pad = 8
    while True:
        q = min(n, k_nn + 1 + pad)
        _, cand = tree.query(pts, k=q)
        cand = np.asarray(cand, dtype=np.intp)
        diff = pts[cand] - pts[:, None, :]
        cd = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        idx, dd = _sort_rows(cand, cd, np.arange(n), k_nn)
        # Candidates beyond the k-th distance prove no tie was cut off.
        worst = cd.max(axis=1)
        if q == n or np.all(worst > dd[:, -1]):
            return NeighborLists(idx, dd)
        pad *= 2


def _knn_brute(dist, k_nn, block=512):
    n = dist.n
    all_idx = np.arange(n)
    idx = np.empty((n, k_nn), dtype=np.intp)
    dd = np.empty((n, k_nn))
    for start in range(0, n, block):
        rows = all_idx[start : start + block]
        d = dist.pairwise(rows, all_idx)
        # (k_nn + 1)-th smallest value bounds the answer even when self is excluded
        kth = np.partition(d, k_nn, axis=1)[:, k_nn]
        for r, row in enumerate(rows):
            cand = np.flatnonzero(d[r] <= kth[r])
            i, dr = _sort_rows(cand[None], d[r, cand][None], [row], k_nn)
            idx[row], dd[row] = i[0], dr[0]
    return NeighborLists(idx, dd)


def build_laplacian(dist, k_nn, k_tune, neighbors=None):
    """Self-tuned Gaussian kernel on the k-NN graph and ``L = D - K``.

    ``K[k, k'] = exp(-d(k, k')**2 / (sigma_k * sigma_k'))`` for ``k'`` among
    the ``k_nn`` neighbours of ``k``, where ``sigma_k`` is the distance to the
    ``k_tune``-th neighbour.  The kernel is symmetrised by taking the
    elementwise maximum of ``K`` and its transpose.
    """
    dist = _as_source(dist)
    if not 1 <= k_tune <= k_nn:
        raise InvalidParameterError(f"need 1 <= k_tune <= k_nn, got {k_tune}, {k_nn}")
    nbrs = neighbors if neighbors is not None else knn_search(dist, k_nn)
    if nbrs.k < k_nn:
        raise InvalidParameterError("neighbour lists are shorter than k_nn")
    n = dist.n
    sigma = nbrs.distances[:, k_tune - 1].copy()
    bad = np.flatnonzero(sigma <= 0)
    if bad.size:
        raise DegenerateScaleError(int(bad[0]))
    cols = nbrs.indices[:, :k_nn]
    d = nbrs.distances[:, :k_nn]
    w = np.exp(-(d**2) / (sigma[:, None] * sigma[cols]))
    rows = np.repeat(np.arange(n), k_nn)
    K = sp.csr_matrix((w.ravel(), (rows, cols.ravel())), shape=(n, n))
    K = K.maximum(K.T).tocsr()
    K.setdiag(0.0)
    K.eliminate_zeros()
    deg = np.asarray(K.sum(axis=1)).ravel()
    L = (sp.diags(deg) - K).tocsr()
    L.sort_indices()
    return SparseLaplacian(L=L, sigma=sigma, kernel_nnz=K.nnz)


def _fix_signs(vectors):
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def smallest_eigenpairs(lap, N, tol=1e-8, max_iter=None, dense_limit=DENSE_EIGEN_LIMIT):
    """The ``N`` smallest nontrivial eigenpairs of the Laplacian.

    Small problems go to LAPACK; larger ones use shift-invert Lanczos
    (ARPACK) just below zero.  The computed subspace is re-orthonormalised
    and Rayleigh-Ritz refined, the constant eigenvector is dropped, and each
    eigenvector is signed so that its largest-magnitude entry is positive.
    """
    L = lap.L if isinstance(lap, SparseLaplacian) else sp.csr_matrix(lap)
    n = L.shape[0]
    N = int(N)
    if N < 1 or N + 1 > n:
        raise InvalidParameterError(f"need 1 <= N and N + 1 <= n={n}, got N={N}")
    if n <= dense_limit:
        vals, vecs = scipy.linalg.eigh(L.toarray(), subset_by_index=(0, N))
    else:
        vals, vecs = _lanczos(L, N + 1, tol, max_iter or 10 * n)
    vals, vecs = _rayleigh_ritz(L, vecs)
    if vals[1] <= 1e-10 * max(1.0, abs(vals[-1])):
        raise DataError("graph Laplacian has more than one zero eigenvalue (disconnected graph)")
    vals, vecs = vals[1:], _fix_signs(vecs[:, 1:])
    resid = np.linalg.norm(L @ vecs - vecs * vals, axis=0)
    limit = 1e-6 * max(1.0, vals[-1])
    if np.any(resid > limit):
        raise ConvergenceError("eigenpair residual above tolerance", residual=float(resid.max()))
    return EigenBasis(values=vals, vectors=vecs)


def _lanczos(L, k, tol, max_iter):
    n = L.shape[0]
    diag_max = float(L.diagonal().max())
    shift = -1e-3 * diag_max / n
    v0 = np.ones(n) + np.sin(np.arange(n))
    try:
        vals, vecs = spla.eigsh(
            L.tocsc(), k=k, sigma=shift, which="LM", tol=tol, maxiter=max_iter, v0=v0
        )
    except spla.ArpackNoConvergence as exc:
        if exc.eigenvectors is None or exc.eigenvectors.shape[1] == 0:
            raise ConvergenceError("Lanczos iteration did not converge") from None
        vecs = exc.eigenvectors
        resid = np.linalg.norm(L @ vecs - vecs * exc.eigenvalues, axis=0)
        raise ConvergenceError(
            "Lanczos iteration did not converge", residual=float(resid.max())
        ) from None
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _rayleigh_ritz(L, vecs):
    q, _ = np.linalg.qr(vecs)
    h = q.T @ (L @ q)
    h = (h + h.T) / 2
    vals, w = np.linalg.eigh(h)
    return vals, q @ w


def _union_graph(dist, k):
    nbrs = knn_search(dist, k)
    n = dist.n
    rows = np.repeat(np.arange(n), k)
    G = sp.csr_matrix((nbrs.distances.ravel(), (rows, nbrs.indices.ravel())), shape=(n, n))
    # Zero-length edges would vanish from the sparse structure.
    G.data = np.maximum(G.data, np.finfo(float).tiny)
    return G.maximum(G.T).tocsr()


def geodesic_lengths(dist, k=5, sources=None, return_predecessors=False, graph=None):
    """Shortest-path lengths on the union-symmetrised ``k``-NN graph.

    Returns an array of shape ``(len(sources), n)``.  Raises
    :class:`UnreachableError` if some vertex cannot be reached.
    """
    dist = _as_source(dist)
    n = dist.n
    G = graph if graph is not None else _union_graph(dist, k)
    src = np.arange(n) if sources is None else np.atleast_1d(np.asarray(sources, dtype=np.intp))
    out = dijkstra(G, directed=False, indices=src, return_predecessors=return_predecessors)
    lengths = out[0] if return_predecessors else out
    bad = np.argwhere(~np.isfinite(lengths))
    if bad.size:
        r, c = bad[0]
        raise UnreachableError(int(src[r]), int(c))
    return out


__all__ = [
    "NeighborLists",
    "SparseLaplacian",
    "EigenBasis",
    "knn_search",
    "build_laplacian",
    "smallest_eigenpairs",
    "geodesic_lengths",
    "euclidean",
]
