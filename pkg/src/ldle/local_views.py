"""Low distortion local views from Laplacian eigenvectors.

For every point ``k`` this module builds the discrete ball ``U_k``, estimates
the inner products of eigenvector gradients at ``x_k`` and picks ``d``
eigenvectors whose scaled gradients are large and close to orthogonal.  The
local parameterization maps ``x`` to ``(gamma_1 phi_i1(x), ..., gamma_d phi_id(x))``.

Eigenvector indices are 0-based column indices into ``EigenBasis.vectors``;
column 0 is the first nontrivial eigenvector.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .datasets import DistanceSource
from .errors import (
    DegenerateScaleError,
    InvalidInputError,
    InvalidParameterError,
    SelectionInfeasibleError,
)
from .graph import EigenBasis, SparseLaplacian, knn_search

# Returned instead of +inf when two distinct points map to the same place.
DISTORTION_OVERFLOW = 1e12
PINV_RCOND = 1e-10
BALL_RTOL = 1e-9

METHODS = ("finite_sum", "feynman_kac", "feynman_kac_lowrank")


def chi2_inverse_cdf(p, d):
    """Quantile of the chi-squared distribution with ``d`` degrees of freedom."""
    if not 0 < p < 1:
        raise InvalidParameterError(f"p must lie in (0, 1), got {p}")
    if int(d) != d or d < 1:
        raise InvalidParameterError(f"d must be a positive integer, got {d}")
    return float(scipy.stats.chi2.ppf(p, int(d)))


@dataclass
class LocalScales:
    """Ball radii, heat-kernel bandwidths, balls and kernel weights.

    ``balls[k]`` lists the members of ``U_k`` (self first, then by distance);
    ``weights[k]`` holds the matching heat-kernel weights with a zero for
    ``k`` itself.
    """

    eps: np.ndarray
    t: np.ndarray
    balls: list
    weights: list
    k_lv: int
    p: float
    d: int
    _padded: tuple | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.eps.shape[0]

    def padded(self):
        """``(index, mask)`` arrays of shape ``(n, max |U_k|)``; padding points at ``k``."""
        if self._padded is None:
            width = max(len(b) for b in self.balls)
            idx = np.empty((self.n, width), dtype=np.intp)
            mask = np.zeros((self.n, width), dtype=bool)
            for k, b in enumerate(self.balls):
                idx[k, : len(b)] = b
                idx[k, len(b) :] = k
                mask[k, : len(b)] = True
            self._padded = (idx, mask)
        return self._padded


def compute_local_scales(dist, k_lv=25, p=0.99, d=2, neighbors=None):
    """Discrete balls ``U_k`` and heat-kernel weights ``G_k`` for every point.

    ``eps_k`` is the distance to the ``k_lv``-th nearest neighbour (self
    excluded), ``t_k = eps_k**2 / (2 chi2inv(p, d))`` and ``U_k`` holds every
    point within ``eps_k``.  Distances equal to ``eps_k`` up to a relative
    ``1e-9`` count as inside, so geometric ties are not split by rounding.
    """
    if not isinstance(dist, DistanceSource):
        dist = DistanceSource.from_points(dist)
    n = dist.n
    if not 1 <= k_lv < n:
        raise InvalidParameterError(f"k_lv must satisfy 1 <= k_lv < n={n}")
    chi = chi2_inverse_cdf(p, d)
    nbrs = neighbors if neighbors is not None and neighbors.k >= k_lv else knn_search(dist, k_lv)
    eps = nbrs.distances[:, k_lv - 1].copy()
    bad = np.flatnonzero(eps <= 0)
    if bad.size:
        raise DegenerateScaleError(int(bad[0]), what="epsilon")
    t = 0.5 * eps**2 / chi
    radius = eps * (1 + BALL_RTOL)
    if dist.is_euclidean:
        cand = dist.tree().query_ball_point(dist.points, radius * (1 + 1e-12))
    else:
        cand = [np.flatnonzero(dist.matrix[k] <= radius[k]) for k in range(n)]
    balls, weights = [], []
    for k in range(n):
        c = np.asarray(cand[k], dtype=np.intp)
        dk = dist.pairwise([k], c)[0]
        keep = dk <= radius[k]
        c, dk = c[keep], dk[keep]
        order = np.lexsort((c, dk))
        c, dk = c[order], dk[order]
        if c[0] != k:
            pos = np.flatnonzero(c == k)[0]
            c = np.r_[k, np.delete(c, pos)]
            dk = np.r_[0.0, np.delete(dk, pos)]
        w = np.exp(-(dk**2) / (4 * t[k]))
        g = w / w.sum()
        g[0] = 0.0
        balls.append(c)
        weights.append(g)
    return LocalScales(eps=eps, t=t, balls=balls, weights=weights, k_lv=k_lv, p=p, d=d)


@dataclass
class GradientInnerProducts:
    """``values[b]`` is the symmetric matrix of estimated ``grad f_i . grad f_j`` at ``points[b]``."""

    values: np.ndarray
    points: np.ndarray
    method: str
    rank: int | None = None


def parse_method(text):
    """Turn ``finite-sum``, ``feynman-kac`` or ``feynman-kac-lowrank=R`` into ``(method, rank)``."""
    name, _, rank = text.replace("-", "_").partition("=")
    if name not in METHODS:
        raise InvalidParameterError(f"unknown estimator {text!r}")
    if name == "feynman_kac_lowrank":
        if not rank:
            raise InvalidParameterError("feynman-kac-lowrank needs a rank, e.g. =50")
        return name, int(rank)
    if rank:
        raise InvalidParameterError(f"{name} takes no rank")
    return name, None


def estimate_gradient_inner_products(
    basis, scales, lap=None, method="finite_sum", points=None, values=None, rank=None
):
    """Estimate gradient inner products of the basis functions at ``points``.

    ``finite_sum`` uses the heat-kernel weights of the local scales,
    ``feynman_kac`` the rows of the Laplacian and ``feynman_kac_lowrank``
    the rank-``rank`` spectral approximation of the Laplacian built from
    ``basis``.  ``values`` replaces the eigenvectors by arbitrary function
    values of shape ``(n, q)``; the result then estimates the gradient inner
    products of those functions.
    """
    F = basis.vectors if values is None else np.asarray(values, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    n = F.shape[0]
    pts = np.arange(n) if points is None else np.atleast_1d(np.asarray(points, dtype=np.intp))
    if method == "finite_sum":
        idx, mask = scales.padded()
        idx, mask = idx[pts], mask[pts]
        w = np.zeros(idx.shape)
        for b, k in enumerate(pts):
            w[b, : len(scales.weights[k])] = scales.weights[k]
        w /= 2 * scales.t[pts, None]
        A = _weighted_gram(F, pts, idx, w)
    elif method == "feynman_kac":
        if lap is None:
            raise InvalidParameterError("feynman_kac needs the Laplacian")
        L = lap.L if isinstance(lap, SparseLaplacian) else lap
        L = L.tocsr()
        rows = [L.indices[L.indptr[k] : L.indptr[k + 1]] for k in pts]
        width = max(len(r) for r in rows)
        idx = np.empty((len(pts), width), dtype=np.intp)
        w = np.zeros((len(pts), width))
        for b, (k, r) in enumerate(zip(pts, rows)):
            idx[b, : len(r)] = r
            idx[b, len(r) :] = k
            w[b, : len(r)] = -0.5 * L.data[L.indptr[k] : L.indptr[k + 1]]
        A = _weighted_gram(F, pts, idx, w)
    elif method == "feynman_kac_lowrank":
        if rank is None or not 1 <= rank <= basis.N:
            raise InvalidParameterError(f"rank must lie in [1, {basis.N}]")
        Phi = basis.vectors[:, :rank]
        lam = basis.values[:rank]
        A = np.empty((len(pts), F.shape[1], F.shape[1]))
        for b, k in enumerate(pts):
            # k-th row of sum_s lam_s phi_s phi_s^T
            row = Phi @ (lam * Phi[k])
            delta = F - F[k]
            A[b] = -0.5 * delta.T @ (row[:, None] * delta)
    else:
        raise InvalidParameterError(f"unknown estimator {method!r}")
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    return GradientInnerProducts(values=A, points=pts, method=method, rank=rank)


def _weighted_gram(F, pts, idx, w):
    delta = F[idx] - F[pts][:, None, :]
    return np.einsum("bu,bui,buj->bij", w, delta, delta, optimize=True)


def local_gamma(F, ball):
    """Inverse root-mean-square of each column of ``F`` over ``ball``."""
    rms = np.sqrt(np.mean(F[ball] ** 2, axis=0))
    with np.errstate(divide="ignore"):
        return np.where(rms > 0, 1.0 / rms, 0.0)


def _argmin_lambda(candidates, eigenvalues):
    # candidates are sorted ascending, so argmin's first hit is the smallest index
    return int(candidates[np.argmin(eigenvalues[candidates])])


def select_local_parameterization(A, eigenvalues, gamma, tau=50.0, delta=0.9, d=2, point=None):
    """Pick ``d`` eigenvectors for one point from its gradient inner products.

    Parameters
    ----------
    A : (N, N) array
        Estimated gradient inner products at the point.
    eigenvalues : (N,) array
    gamma : (N,) array
        Inverse RMS of each eigenvector over the point's ball.
    tau, delta : float or sequence of length d
        Percentile thresholds and fractions per stage.

    Returns
    -------
    indices : (d,) int array
    scales : (d,) float array
        ``gamma`` at the selected indices.
    """
    N = A.shape[0]
    taus = np.broadcast_to(np.asarray(tau, dtype=float), (d,))
    deltas = np.broadcast_to(np.asarray(delta, dtype=float), (d,))
    lam = np.asarray(eigenvalues)
    diag = np.diag(A)
    theta = np.percentile(diag, taus[0])
    S = np.flatnonzero(diag >= theta)
    if S.size < d:
        raise SelectionInfeasibleError(point, 1)

    r = _argmin_lambda(S, lam)
    proj = A[:, r]
    chosen = [_pick(S, proj, gamma, deltas[0], lam, point, 1)]
    for s in range(2, d + 1):
        cand = np.setdiff1d(S, chosen, assume_unique=True)
        if cand.size == 0:
            raise SelectionInfeasibleError(point, s)
        sel = np.asarray(chosen)
        gram = A[np.ix_(sel, sel)]
        # H = A - A[:, sel] gram^+ A[sel, :]
        H = A - A[:, sel] @ np.linalg.pinv(gram, rcond=PINV_RCOND) @ A[sel, :]
        hdiag = np.diag(H)
        theta = np.percentile(hdiag[S], taus[s - 1])
        R = cand[hdiag[cand] >= theta]
        if R.size == 0:
            raise SelectionInfeasibleError(point, s)
        r = _argmin_lambda(R, lam)
        chosen.append(_pick(cand, H[:, r], gamma, deltas[s - 1], lam, point, s))
    idx = np.asarray(chosen, dtype=np.intp)
    return idx, gamma[idx]


def _pick(S, proj, gamma, frac, lam, point, stage):
    score = gamma[S] * np.abs(proj[S])
    alpha = score.max()
    ok = S[score >= frac * alpha]
    if ok.size == 0:
        # only reachable through NaNs; take the strongest candidate
        ok = S[[int(np.nanargmax(score))]]
    return _argmin_lambda(ok, lam)


def distortion(mapped, ambient):
    """Bi-Lipschitz distortion of a map on a finite point set.

    ``mapped`` is the ``(u, d)`` image of the set and ``ambient`` either its
    ``(u, u)`` distance matrix or its ``(u, D)`` coordinates.  Returns
    ``max(|f(a)-f(b)| / |a-b|) * max(|a-b| / |f(a)-f(b)|)`` over distinct pairs,
    or :data:`DISTORTION_OVERFLOW` when two points map to the same place.
    """
    Y = np.asarray(mapped, dtype=float)
    u = Y.shape[0]
    if u < 2:
        raise InvalidInputError("distortion needs at least two points")
    amb = np.asarray(ambient, dtype=float)
    if amb.shape != (u, u) or not np.allclose(np.diag(amb), 0):
        from .datasets import euclidean

        amb = euclidean(amb, amb)
    iu = np.triu_indices(u, 1)
    a = amb[iu]
    if np.any(a <= 0):
        raise InvalidInputError("distortion needs distinct input points")
    from .datasets import euclidean

    e = euclidean(Y, Y)[iu]
    return _ratio_product(e, a)


def _ratio_product(e, a):
    if np.any(e <= 0):
        return DISTORTION_OVERFLOW
    ratio = e / a
    return float(min(ratio.max() / ratio.min(), DISTORTION_OVERFLOW))


@dataclass
class LocalParameterization:
    """Selected eigenvector indices, their scales and distortions for every point.

    Row ``k`` of ``indices``/``scales`` defines the map
    ``x -> scales[k] * vectors[x, indices[k]]``.
    """

    indices: np.ndarray
    scales: np.ndarray
    zeta: np.ndarray

    def copy(self):
        return LocalParameterization(self.indices.copy(), self.scales.copy(), self.zeta.copy())

    def map(self, vectors, k, pts):
        """Image of the points ``pts`` under the parameterization of point ``k``."""
        return vectors[np.asarray(pts)][:, self.indices[k]] * self.scales[k]


def _ball_distances(dist, scales, ks):
    idx, mask = scales.padded()
    idx = idx[ks]
    if dist.is_euclidean:
        X = dist.points[idx]
        diff = X[:, :, None, :] - X[:, None, :, :]
        amb = np.sqrt(np.einsum("buvk,buvk->buv", diff, diff))
    else:
        amb = dist.matrix[idx[:, :, None], idx[:, None, :]]
    return amb, mask[ks]


def _distortion_batch(mapped, amb, mask):
    """Distortions of ``J`` maps per ball: ``mapped`` is ``(B, J, u, d)``, ``amb`` ``(B, u, u)``."""
    u = amb.shape[-1]
    iu, ju = np.triu_indices(u, 1)
    diff = mapped[:, :, iu, :] - mapped[:, :, ju, :]
    e = np.sqrt(np.einsum("bjpd,bjpd->bjp", diff, diff))
    a = amb[:, iu, ju][:, None, :]
    valid = (mask[:, iu] & mask[:, ju])[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = e / a
    hi = np.where(valid, ratio, -np.inf).max(axis=2)
    lo = np.where(valid, ratio, np.inf).min(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hi / lo
    out = np.where(lo > 0, out, DISTORTION_OVERFLOW)
    return np.minimum(out, DISTORTION_OVERFLOW)


def ball_distortions(vectors, params, scales, dist, ks, chunk=64):
    """``Z[b, j]``: distortion on ``U_k`` of the parameterization of its ``j``-th member, ``k = ks[b]``."""
    idx_all, mask_all = scales.padded()
    ks = np.asarray(ks, dtype=np.intp)
    out = np.full((ks.size, idx_all.shape[1]), np.inf)
    for start in range(0, ks.size, chunk):
        kb = ks[start : start + chunk]
        idx = idx_all[kb]
        amb, mask = _ball_distances(dist, scales, kb)
        F = vectors[idx]  # (B, u, N)
        owners = idx  # parameterization j belongs to point idx[b, j]
        cols = params.indices[owners]  # (B, J, d)
        gam = params.scales[owners]  # (B, J, d)
        B, u = idx.shape
        b_ix = np.arange(B)[:, None, None, None]
        x_ix = np.arange(u)[None, None, :, None]
        mapped = F[b_ix, x_ix, cols[:, :, None, :]] * gam[:, :, None, :]
        z = _distortion_batch(mapped, amb, mask)
        out[start : start + kb.size] = np.where(mask, z, np.inf)
    return out


def build_local_views(
    basis,
    scales,
    lap=None,
    method="finite_sum",
    rank=None,
    tau=50.0,
    delta=0.9,
    d=2,
    dist=None,
    chunk=256,
):
    """Select a local parameterization for every point and its distortion on its own ball."""
    n = scales.n
    N = basis.N
    if d > N:
        raise InvalidParameterError("d cannot exceed N")
    F = basis.vectors
    indices = np.empty((n, d), dtype=np.intp)
    gammas = np.empty((n, d))
    for start in range(0, n, chunk):
        pts = np.arange(start, min(n, start + chunk))
        A = estimate_gradient_inner_products(basis, scales, lap, method, points=pts, rank=rank)
        for b, k in enumerate(pts):
            gamma = local_gamma(F, scales.balls[k])
            indices[k], gammas[k] = select_local_parameterization(
                A.values[b], basis.values, gamma, tau, delta, d, point=int(k)
            )
    params = LocalParameterization(indices, gammas, np.empty(n))
    if dist is not None:
        params.zeta = self_distortions(F, params, scales, dist)
    return params


def self_distortions(vectors, params, scales, dist, chunk=512):
    """Distortion of each point's own parameterization on its own ball."""
    n = scales.n
    idx_all, _ = scales.padded()
    out = np.empty(n)
    for start in range(0, n, chunk):
        kb = np.arange(start, min(n, start + chunk))
        amb, mask = _ball_distances(dist, scales, kb)
        F = vectors[idx_all[kb]]
        cols = params.indices[kb][:, None, None, :]
        b_ix = np.arange(kb.size)[:, None, None, None]
        x_ix = np.arange(F.shape[1])[None, None, :, None]
        mapped = F[b_ix, x_ix, cols] * params.scales[kb][:, None, None, :]
        out[kb] = _distortion_batch(mapped, amb, mask)[:, 0]
    return out


@dataclass
class PostprocessLog:
    replacements: list
    zeta_history: list

    @property
    def passes(self):
        return len(self.replacements)


def postprocess(params, scales, basis, dist, max_passes=1000):
    """Swap in a neighbour's parameterization wherever it is less distorted on ``U_k``.

    Each pass compares, for every point, the distortions on ``U_k`` of the
    parameterizations of all members of ``U_k`` as they stood at the start of
    the pass, and adopts the best one when it is strictly better.  Passes
    repeat until none makes a replacement.  Returns the updated
    parameterization and a log with per-pass replacement counts and ``zeta``.
    """
    F = basis.vectors
    n = scales.n
    idx_all, _ = scales.padded()
    cur = params.copy()
    Z = ball_distortions(F, cur, scales, dist, np.arange(n))
    cur.zeta = Z[:, 0].copy()
    log = PostprocessLog(replacements=[], zeta_history=[cur.zeta.copy()])
    for _ in range(max_passes):
        old = cur.copy()
        best = np.argmin(Z, axis=1)
        better = Z[np.arange(n), best] < Z[:, 0]
        ks = np.flatnonzero(better)
        src = idx_all[ks, best[ks]]
        cur.indices[ks] = old.indices[src]
        cur.scales[ks] = old.scales[src]
        cur.zeta[ks] = Z[ks, best[ks]]
        log.replacements.append(int(ks.size))
        log.zeta_history.append(cur.zeta.copy())
        if ks.size == 0:
            break
        changed = np.zeros(n, dtype=bool)
        changed[ks] = True
        stale = np.flatnonzero(changed[idx_all].any(axis=1))
        Z[stale] = ball_distortions(F, cur, scales, dist, stale)
        # a replaced parameterization keeps exactly the distortion it was chosen for
        cur.zeta[stale] = Z[stale, 0]
    return cur, log
