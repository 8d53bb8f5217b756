"""Greedy merging of local views into larger intermediate views.

Every point starts as its own cluster carrying its local parameterization.
Clusters then bid for points of small neighbouring clusters; a bid is the
inverse distortion the bidder's parameterization would have on its grown
domain.  The highest bid is accepted repeatedly until no cluster smaller
than ``eta`` is left, for ``eta = 2 .. eta_min``.

Cluster labels are 0-based.
"""

import heapq
from dataclasses import dataclass

import numpy as np

from .datasets import DistanceSource
from .errors import InvalidParameterError
from .local_views import DISTORTION_OVERFLOW


@dataclass(frozen=True)
class Clustering:
    """Partition of the points into clusters with their domains and parameterizations.

    Attributes
    ----------
    labels : (n,) int array
        Cluster of every point, contiguous in ``0 .. M-1``.
    members : list of int arrays
        Sorted points of each cluster.
    domains : list of int arrays
        Sorted union of the balls of each cluster's members.
    seeds : (M,) int array
        Point whose local parameterization the cluster uses.
    indices, scales : (M, d) arrays
        Eigenvector columns and scales of each cluster's parameterization.
    """

    labels: np.ndarray
    members: list
    domains: list
    seeds: np.ndarray
    indices: np.ndarray
    scales: np.ndarray
    eta_min: int
    relabels: int = 0

    @property
    def M(self):
        return len(self.members)

    def map(self, vectors, m, pts):
        return vectors[np.asarray(pts)][:, self.indices[m]] * self.scales[m]


def _ball_inverse(balls, n):
    owners = np.repeat(np.arange(n), [len(b) for b in balls])
    flat = np.concatenate(balls)
    order = np.argsort(flat, kind="stable")
    split = np.searchsorted(flat[order], np.arange(n + 1))
    return [owners[order[split[j] : split[j + 1]]] for j in range(n)]


class _BidState:
    """Mutable clustering state with incremental bid evaluation."""

    def __init__(self, vectors, params, balls, dist):
        self.F = vectors
        self.balls = balls
        self.dist = dist
        n = len(balls)
        self.n = n
        self.labels = np.arange(n)
        self.size = np.ones(n, dtype=np.intp)
        self.members = [{k} for k in range(n)]
        self.domains = [np.sort(b) for b in balls]
        self.indices = params.indices
        self.scales = params.scales
        self.inverse = _ball_inverse(balls, n)
        self.in_domain = np.zeros(n, dtype=bool)
        self.extent = np.empty((n, 2))
        for m in range(n):
            self.extent[m] = self._extent(m)

    def mapped(self, m, pts):
        return self.F[pts][:, self.indices[m]] * self.scales[m]

    def _ambient(self, rows, cols):
        return self.dist.pairwise(rows, cols)

    def _extent(self, m):
        """Largest and smallest distance ratio of cluster ``m``'s map on its domain."""
        dom = self.domains[m]
        if dom.size < 2:
            return np.inf, -np.inf
        Y = self.mapped(m, dom)
        iu = np.triu_indices(dom.size, 1)
        a = self._ambient(dom, dom)[iu]
        diff = Y[:, None, :] - Y[None, :, :]
        e = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))[iu]
        r = e / a
        return r.max(), r.min()

    def bids(self, m, ks):
        """Inverse distortion of cluster ``m``'s map on ``domain_m`` grown by each ball ``U_k``."""
        dom = self.domains[m]
        self.in_domain[dom] = True
        new = [b[~self.in_domain[b]] for b in (self.balls[k] for k in ks)]
        self.in_domain[dom] = False
        width = max(len(p) for p in new)
        hi0, lo0 = self.extent[m]
        hi = np.full(len(ks), hi0)
        lo = np.full(len(ks), lo0)
        if width:
            P = np.empty((len(ks), width), dtype=np.intp)
            mask = np.zeros((len(ks), width), dtype=bool)
            for b, p in enumerate(new):
                P[b, : len(p)] = p
                P[b, len(p) :] = p[0] if len(p) else dom[0]
                mask[b, : len(p)] = True
            flat = P.ravel()
            YP = self.mapped(m, flat).reshape(len(ks), width, -1)
            Yd = self.mapped(m, dom)
            cross_e = np.linalg.norm(YP[:, :, None, :] - Yd[None, None], axis=-1)
            cross_a = self._ambient(flat, dom).reshape(len(ks), width, dom.size)
            self_e = np.linalg.norm(YP[:, :, None, :] - YP[:, None, :, :], axis=-1)
            self_a = self._ambient_batch(P)
            pair_ok = mask[:, :, None] & mask[:, None, :]
            pair_ok &= np.triu(np.ones((width, width), dtype=bool), 1)[None]
            with np.errstate(divide="ignore", invalid="ignore"):
                rc = cross_e / cross_a
                rs = self_e / self_a
            cm = mask[:, :, None]
            hi = np.maximum(hi, np.where(cm, rc, -np.inf).max(axis=(1, 2)))
            lo = np.minimum(lo, np.where(cm, rc, np.inf).min(axis=(1, 2)))
            hi = np.maximum(hi, np.where(pair_ok, rs, -np.inf).max(axis=(1, 2)))
            lo = np.minimum(lo, np.where(pair_ok, rs, np.inf).min(axis=(1, 2)))
        with np.errstate(divide="ignore", invalid="ignore"):
            zeta = np.where(lo > 0, hi / lo, np.inf)
        # an overflowing distortion never wins a bid
        return np.where(zeta < DISTORTION_OVERFLOW, 1.0 / zeta, 0.0)

    def _ambient_batch(self, P):
        if self.dist.is_euclidean:
            X = self.dist.points[P]
            return np.linalg.norm(X[:, :, None, :] - X[:, None, :, :], axis=-1)
        return self.dist.matrix[P[:, :, None], P[:, None, :]]

    def eligible(self, m, k, eta):
        c = self.labels[k]
        return m != c and 0 < self.size[c] < eta and self.size[m] >= self.size[c]

    def vicinity(self, m):
        """Points whose ball meets cluster ``m``."""
        mem = self.members[m]
        if not mem:
            return np.empty(0, dtype=np.intp)
        return np.unique(np.concatenate([self.inverse[j] for j in mem]))

    def move(self, k, m):
        s = self.labels[k]
        self.members[s].discard(k)
        self.members[m].add(k)
        self.labels[k] = m
        self.size[s] -= 1
        self.size[m] += 1
        self.domains[m] = np.union1d(self.domains[m], self.balls[k])
        if self.members[s]:
            self.domains[s] = np.unique(np.concatenate([self.balls[j] for j in self.members[s]]))
        else:
            self.domains[s] = np.empty(0, dtype=np.intp)
        self.extent[m] = self._extent(m)
        self.extent[s] = self._extent(s)
        return s


class _BidBook:
    """Current bids with a lazy max-heap; ties go to the smaller cluster, then point."""

    def __init__(self):
        self.by_point = {}
        self.by_bidder = {}
        self.heap = []

    def drop_point(self, k):
        for m in self.by_point.pop(k, {}):
            self.by_bidder[m].discard(k)

    def drop_bidder(self, m):
        for k in self.by_bidder.pop(m, set()):
            self.by_point[k].pop(m, None)

    def put(self, m, k, value):
        if value <= 0:
            return
        self.by_point.setdefault(k, {})[m] = value
        self.by_bidder.setdefault(m, set()).add(k)
        heapq.heappush(self.heap, (-value, m, k))

    def best(self):
        while self.heap:
            neg, m, k = self.heap[0]
            if self.by_point.get(k, {}).get(m) == -neg:
                return m, k, -neg
            heapq.heappop(self.heap)
        return None


def _evaluate(state, book, pairs):
    by_m = {}
    for m, k in pairs:
        by_m.setdefault(m, []).append(k)
    for m in sorted(by_m):
        ks = sorted(set(by_m[m]))
        vals = state.bids(m, ks)
        for k, v in zip(ks, vals):
            book.put(m, k, float(v))


def _point_pairs(state, k, eta):
    c = state.labels[k]
    if not 0 < state.size[c] < eta:
        return []
    return [(int(m), k) for m in np.unique(state.labels[state.balls[k]]) if state.eligible(m, k, eta)]


def _bidder_pairs(state, m, eta):
    return [(m, int(k)) for k in state.vicinity(m) if state.eligible(m, k, eta)]


def bid(m, k, eta, state):
    """Bid of cluster ``m`` for point ``k`` under the current state (0 when ineligible)."""
    if m not in state.labels[state.balls[k]] or not state.eligible(m, k, eta):
        return 0.0
    return float(state.bids(m, [k])[0])


def cluster_views(vectors, params, balls, dist, eta_min=5, on_relabel=None):
    """Merge local views until every cluster has at least ``eta_min`` points.

    Parameters
    ----------
    vectors : (n, N) array
        Eigenvectors used by the parameterizations.
    params : LocalParameterization
    balls : list of int arrays
        The ball ``U_k`` of every point.
    dist : DistanceSource or array
    eta_min : int
    on_relabel : callable, optional
        Called as ``on_relabel(state, book)`` after each relabelling; used by
        tests to compare incremental bids with a full recomputation.

    Returns
    -------
    Clustering
    """
    if not isinstance(dist, DistanceSource):
        dist = DistanceSource.from_points(dist)
    n = len(balls)
    eta_min = int(eta_min)
    if not 1 <= eta_min <= n:
        raise InvalidParameterError(f"eta_min must lie in [1, n={n}], got {eta_min}")
    state = _BidState(vectors, params, balls, dist)
    relabels = 0
    for eta in range(2, eta_min + 1):
        book = _BidBook()
        pairs = []
        for k in range(n):
            pairs.extend(_point_pairs(state, k, eta))
        _evaluate(state, book, pairs)
        budget = 10 * n
        while True:
            top = book.best()
            if top is None:
                break
            m, k, _ = top
            s = state.move(k, m)
            relabels += 1
            budget -= 1
            if budget < 0:
                raise RuntimeError("clustering failed to settle")
            book.drop_bidder(m)
            book.drop_bidder(s)
            touched = state.members[m] | state.members[s]
            for j in touched:
                book.drop_point(j)
            pairs = _bidder_pairs(state, m, eta) + _bidder_pairs(state, s, eta)
            for j in touched:
                pairs.extend(_point_pairs(state, j, eta))
            _evaluate(state, book, pairs)
            if on_relabel is not None:
                on_relabel(state, book, eta)
    return _finish(state, eta_min, relabels)


def _finish(state, eta_min, relabels):
    keep = np.flatnonzero(state.size > 0)
    remap = np.full(state.n, -1, dtype=np.intp)
    remap[keep] = np.arange(keep.size)
    labels = remap[state.labels]
    members = [np.array(sorted(state.members[m]), dtype=np.intp) for m in keep]
    domains = [np.unique(np.concatenate([state.balls[j] for j in mem])) for mem in members]
    return Clustering(
        labels=labels,
        members=members,
        domains=domains,
        seeds=keep.copy(),
        indices=state.indices[keep].copy(),
        scales=state.scales[keep].copy(),
        eta_min=eta_min,
        relabels=relabels,
    )


def full_bid_table(state, eta):
    """All nonzero bids recomputed from scratch, as ``{(m, k): bid}``."""
    out = {}
    for k in range(state.n):
        for m, _ in _point_pairs(state, k, eta):
            v = float(state.bids(m, [k])[0])
            if v > 0:
                out[(m, k)] = v
    return out
