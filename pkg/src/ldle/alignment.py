"""Rigid registration of intermediate views into one global embedding.

Each view ``m`` is placed by ``b_m * Phi_m(x) @ T_m + v_m``.  Views are
first visited along a maximum spanning tree of pairwise alignment
confidence, each aligned to its parent and then to the centroid of its
already placed neighbours.  Refinement passes repeat the procedure in random
order.  With tearing enabled, a view is only aligned to neighbours that are
also close in the current embedding, which lets closed manifolds open up
along a seam.
"""

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .datasets import DistanceSource
from .errors import AlignmentInfeasibleError, DegenerateViewError, InvalidParameterError

log = logging.getLogger(__name__)

AMBIGUITY_TOL = 1e-10


@dataclass
class ProcrustesResult:
    T: np.ndarray
    v: np.ndarray
    b: float = 1.0
    ambiguous: bool = False

    def apply(self, A):
        return self.b * np.asarray(A) @ self.T + self.v


def procrustes(A, B, with_scaling=False):
    """Orthogonal map (reflections allowed) and translation taking ``A`` onto ``B``.

    Minimizes ``||b A T + 1 v^T - B||_F`` over orthogonal ``T``, translation
    ``v`` and, when ``with_scaling``, a positive scale ``b``.

    Parameters
    ----------
    A, B : (n, d) array_like

    Returns
    -------
    ProcrustesResult
        ``ambiguous`` is set when the smallest singular value of the centred
        cross-covariance is at most ``1e-10``, in which case ``T`` is not unique.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] < 1:
        raise InvalidParameterError("procrustes needs two nonempty arrays of equal shape")
    ma, mb = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - ma, B - mb
    U, s, Vt = np.linalg.svd(Ac.T @ Bc)
    T = U @ Vt
    b = 1.0
    if with_scaling:
        na = np.einsum("ij,ij->", Ac, Ac)
        b = float(s.sum() / na) if na > 0 else 1.0
    v = mb - b * ma @ T
    return ProcrustesResult(T=T, v=v, b=b, ambiguous=bool(s[-1] <= AMBIGUITY_TOL))


def _median_pairwise(X):
    n = X.shape[0]
    iu = np.triu_indices(n, 1)
    diff = X[iu[0]] - X[iu[1]]
    return float(np.median(np.sqrt(np.einsum("ij,ij->i", diff, diff))))


def initial_scales(local_views, domains, dist):
    """Ratio of median ambient to median embedded pairwise distance, per view.

    ``local_views[m]`` holds the local coordinates of ``domains[m]``.
    """
    if not isinstance(dist, DistanceSource):
        dist = DistanceSource.from_points(dist)
    b = np.empty(len(domains))
    for m, (Y, dom) in enumerate(zip(local_views, domains)):
        if len(dom) < 2:
            raise InvalidParameterError(f"view {m} has fewer than two points")
        amb = dist.pairwise(dom, dom)[np.triu_indices(len(dom), 1)]
        emb = _median_pairwise(Y)
        if emb <= 0:
            raise DegenerateViewError(m)
        b[m] = np.median(amb) / emb
    return b


@dataclass
class Overlaps:
    """Pairwise intersections of index sets.

    ``pos[m][m2]`` gives the positions, within set ``m``, of the points that
    set ``m`` shares with set ``m2``.  Positions are ordered by point index,
    so ``sets[m][pos[m][m2]] == sets[m2][pos[m2][m]]``.
    """

    sets: list
    pos: list

    def neighbors(self, m):
        return sorted(self.pos[m])

    def points(self, m, m2):
        return self.sets[m][self.pos[m][m2]]


def _membership(sets, n):
    rows = np.repeat(np.arange(len(sets)), [len(s) for s in sets])
    cols = np.concatenate(sets) if sets else np.empty(0, dtype=np.intp)
    return sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(len(sets), n))


def compute_overlaps(sets, n):
    """All nonempty pairwise intersections of the sorted index arrays ``sets``."""
    S = _membership(sets, n)
    G = (S @ S.T).tocoo()
    pos = [dict() for _ in sets]
    for m, m2 in zip(G.row, G.col):
        if m < m2:
            _, i, j = np.intersect1d(sets[m], sets[m2], assume_unique=True, return_indices=True)
            pos[m][int(m2)] = i
            pos[m2][int(m)] = j
    return Overlaps(sets=list(sets), pos=pos)


@dataclass
class AlignmentOrder:
    root: int
    sequence: np.ndarray
    parents: np.ndarray
    W: np.ndarray


def _ambiguity(Va, Vb):
    Ac = Va - Va.mean(axis=0)
    Bc = Vb - Vb.mean(axis=0)
    return float(np.linalg.svd(Ac.T @ Bc, compute_uv=False)[-1])


def overlap_components(overlaps):
    M = len(overlaps.sets)
    rows = [m for m in range(M) for _ in overlaps.pos[m]]
    cols = [m2 for m in range(M) for m2 in overlaps.pos[m]]
    G = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(M, M))
    return connected_components(G, directed=False)


def alignment_order(global_views, overlaps, sizes):
    """Root, breadth-first visiting order and parents for the initial pass.

    The root is the largest cluster.  Parents come from a maximum spanning
    tree of the overlap graph weighted by the smallest singular value of the
    centred cross-covariance of the two embeddings of each overlap.  Children
    are visited in ascending index order.

    Parameters
    ----------
    global_views : list of (|U_m|, d) arrays
        Current embedding of every view's domain.
    overlaps : Overlaps
    sizes : (M,) array
        Cluster sizes.
    """
    M = len(global_views)
    ncomp, lab = overlap_components(overlaps)
    if ncomp > 1:
        comps = [np.flatnonzero(lab == c) for c in range(ncomp)]
        raise AlignmentInfeasibleError(comps)
    W = np.zeros((M, M))
    for m in range(M):
        for m2, pm in overlaps.pos[m].items():
            if m < m2:
                pm2 = overlaps.pos[m2][m]
                W[m, m2] = W[m2, m] = _ambiguity(global_views[m][pm], global_views[m2][pm2])
    root = int(np.argmax(sizes))
    parents = _max_spanning_tree(W, overlaps, root)
    children = [[] for _ in range(M)]
    for c, p in enumerate(parents):
        if p >= 0:
            children[p].append(c)
    seq, queue = [], deque([root])
    while queue:
        s = queue.popleft()
        seq.append(s)
        queue.extend(sorted(children[s]))
    return AlignmentOrder(root=root, sequence=np.asarray(seq), parents=parents, W=W)


def _max_spanning_tree(W, overlaps, root):
    """Prim's algorithm on the dense weight matrix, restricted to overlapping pairs."""
    M = W.shape[0]
    adj = np.zeros((M, M), dtype=bool)
    for m in range(M):
        adj[m, list(overlaps.pos[m])] = True
    in_tree = np.zeros(M, dtype=bool)
    best = np.full(M, -np.inf)
    parent = np.full(M, -1, dtype=np.intp)
    in_tree[root] = True
    upd = adj[root] & (W[root] > best)
    best[upd], parent[upd] = W[root, upd], root
    for _ in range(M - 1):
        cand = np.where(in_tree, -np.inf, best)
        j = int(np.argmax(cand))
        in_tree[j] = True
        upd = adj[j] & ~in_tree & (W[j] > best)
        best[upd], parent[upd] = W[j, upd], j
    return parent


def embedding_balls(y, size, placed=None, query=None):
    """Points strictly closer to ``y_k`` than its ``size``-th nearest neighbour.

    Only points flagged in ``placed`` take part.  Returns a sparse boolean
    matrix whose row ``k`` marks the ball of ``y_k``; rows are filled for the
    placed points listed in ``query`` (default: all placed points).
    """
    n = y.shape[0]
    idx = np.arange(n) if placed is None else np.flatnonzero(placed)
    qry = idx if query is None else np.asarray(query, dtype=np.intp)
    if idx.size == 0 or qry.size == 0:
        return sp.csr_matrix((n, n), dtype=bool)
    tree = cKDTree(y[idx])
    q = min(size + 1, idx.size)
    dd, ii = tree.query(y[qry], k=q)
    dd = dd.reshape(qry.size, q)
    ii = ii.reshape(qry.size, q)
    if q == size + 1:
        keep = dd < dd[:, -1:]
    else:
        keep = np.ones_like(dd, dtype=bool)
    rows = np.broadcast_to(qry[:, None], dd.shape)[keep]
    cols = idx[ii[keep]]
    return sp.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))


def _embedding_neighbors(y, clustering, s, candidates, size, placed):
    """Which ``candidates`` have embedding views meeting that of cluster ``s``."""
    mem = clustering.members
    query = np.concatenate([mem[s]] + [mem[m] for m in candidates])
    balls = embedding_balls(y, size, placed, query)
    n = y.shape[0]
    mine = np.zeros(n, dtype=bool)
    mine[balls[mem[s]].indices] = True
    return {m: bool(mine[balls[mem[m]].indices].any()) for m in candidates}


def embedding_overlaps(y, labels, M, size, placed=None):
    """``(M, M)`` boolean matrix of nonempty overlaps of the clusters' embedding views.

    The embedding view of a cluster is the union of the embedding balls of
    its members; ``size`` is ``nu * k_lv``.
    """
    n = y.shape[0]
    if not 1 <= size < n:
        raise InvalidParameterError(f"nu * k_lv must lie in [1, n), got {size}")
    balls = embedding_balls(y, size, placed)
    C = sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(M, n))
    Ug = (C @ balls.astype(float)) > 0
    Ug = Ug.astype(float)
    return ((Ug @ Ug.T) > 0).toarray()


@dataclass
class AlignedEmbedding:
    y: np.ndarray
    T: np.ndarray
    v: np.ndarray
    b: np.ndarray
    order: AlignmentOrder
    tear_colors: np.ndarray
    torn_pairs: list
    objective: list = field(default_factory=list)
    to_tear: bool = True
    nu: int = 3
    n_refine: int = 100


class _Views:
    """Local coordinates of every view's domain and the current transforms."""

    def __init__(self, local, b, d):
        M = len(local)
        self.local = local
        self.b = b
        self.T = np.tile(np.eye(d), (M, 1, 1))
        self.v = np.zeros((M, d))

    def glob(self, m, pos=None):
        X = self.local[m] if pos is None else self.local[m][pos]
        return self.b[m] * X @ self.T[m] + self.v[m]

    def compose(self, m, res):
        # new map: (b X T + v) Omega + omega
        self.T[m] = self.T[m] @ res.T
        self.v[m] = self.v[m] @ res.T + res.v


def alignment_error(views, overlaps):
    """Half the mean over views of the squared misfit on every overlap."""
    M = len(overlaps.sets)
    total = 0.0
    for m in range(M):
        for m2, pm in overlaps.pos[m].items():
            diff = views.glob(m, pm) - views.glob(m2, overlaps.pos[m2][m])
            total += np.einsum("ij,ij->", diff, diff)
    return total / (2 * M)


def _point_coords(views, clustering):
    """``y_k`` from each point's own cluster; positions of members within domains."""
    n = clustering.labels.size
    d = views.T.shape[1]
    y = np.empty((n, d))
    for m, (mem, dom) in enumerate(zip(clustering.members, clustering.domains)):
        pos = np.searchsorted(dom, mem)
        y[mem] = views.glob(m, pos)
    return y


def _align_step(s, p, views, overlaps, allowed):
    """Steps R1 to R4 for view ``s``; ``allowed()`` is evaluated after R1 and returns a predicate."""
    pm = overlaps.pos[s][p]
    views.compose(s, procrustes(views.glob(s, pm), views.glob(p, overlaps.pos[p][s])))
    allowed = allowed()
    Z = [m2 for m2 in overlaps.neighbors(s) if allowed(m2)]
    if not Z:
        return
    dom = overlaps.sets[s]
    acc = np.zeros((dom.size, views.T.shape[1]))
    cnt = np.zeros(dom.size)
    for m2 in Z:
        ps = overlaps.pos[s][m2]
        acc[ps] += views.glob(m2, overlaps.pos[m2][s])
        cnt[ps] += 1
    used = np.flatnonzero(cnt)
    mu = acc[used] / cnt[used, None]
    views.compose(s, procrustes(views.glob(s, used), mu))


def _row_predicate(row):
    if row is None:
        return lambda: (lambda m2: True)
    return lambda: (lambda m2: row[m2])


def global_align(
    vectors,
    clustering,
    dist,
    to_tear=True,
    nu=3,
    k_lv=25,
    n_refine=100,
    seed=0,
    callback=None,
):
    """Register all intermediate views and return the global embedding.

    Parameters
    ----------
    vectors : (n, N) array
        Eigenvectors used by the cluster parameterizations.
    clustering : Clustering
    dist : DistanceSource or array
    to_tear : bool
        Align a view only with neighbours that also overlap in the embedding.
    nu, k_lv : int
        Embedding balls reach the ``nu * k_lv``-th nearest neighbour.
    n_refine : int
        Number of random-order refinement passes.
    seed : int
        Seed of the refinement permutations.
    callback : callable, optional
        Called as ``callback(iteration, y)`` after every pass.

    Returns
    -------
    AlignedEmbedding
    """
    if not isinstance(dist, DistanceSource):
        dist = DistanceSource.from_points(dist)
    M = clustering.M
    n = clustering.labels.size
    d = clustering.indices.shape[1]
    size = int(nu * k_lv)
    if to_tear and not 1 <= size < n:
        raise InvalidParameterError(f"nu * k_lv must lie in [1, n={n}), got {size}")
    local = [clustering.map(vectors, m, dom) for m, dom in enumerate(clustering.domains)]
    b = initial_scales(local, clustering.domains, dist)
    views = _Views(local, b, d)
    overlaps = compute_overlaps(clustering.domains, n)
    sizes = np.array([len(c) for c in clustering.members])
    order = alignment_order([views.glob(m) for m in range(M)], overlaps, sizes)
    labels = clustering.labels
    objective = []

    # initial pass along the tree
    visited = np.zeros(M, dtype=bool)
    visited[order.root] = True
    for s in order.sequence[1:]:
        if to_tear:

            def allowed(s=s):
                placed = visited[labels] | (labels == s)
                cands = [m2 for m2 in overlaps.neighbors(s) if visited[m2]]
                y = _point_coords(views, clustering)
                near = _embedding_neighbors(y, clustering, s, cands, size, placed)
                return lambda m2: near.get(m2, False)

        else:

            def allowed():
                return lambda m2: visited[m2]

        _align_step(s, order.parents[s], views, overlaps, allowed)
        visited[s] = True
    objective.append(alignment_error(views, overlaps))
    log.info("alignment pass 1: objective %.6g", objective[-1])
    if callback is not None:
        callback(1, _point_coords(views, clustering))

    rng = np.random.default_rng(seed)
    rest = np.array([m for m in range(M) if m != order.root], dtype=np.intp)
    for it in range(2, n_refine + 2):
        near_all = None
        if to_tear:
            near_all = embedding_overlaps(_point_coords(views, clustering), labels, M, size)
        for s in rng.permutation(rest):
            row = None if near_all is None else near_all[s]
            _align_step(s, order.parents[s], views, overlaps, _row_predicate(row))
        objective.append(alignment_error(views, overlaps))
        log.info("alignment pass %d: objective %.6g", it, objective[-1])
        if callback is not None:
            callback(it, _point_coords(views, clustering))

    y = _point_coords(views, clustering)
    colors, torn = (np.full(n, -1, dtype=np.intp), [])
    if to_tear:
        colors, torn = tear_coloring(y, clustering, size, overlaps)
    return AlignedEmbedding(
        y=y,
        T=views.T,
        v=views.v,
        b=views.b,
        order=order,
        tear_colors=colors,
        torn_pairs=torn,
        objective=objective,
        to_tear=to_tear,
        nu=nu,
        n_refine=n_refine,
    )


def tear_coloring(y, clustering, size, overlaps=None):
    """Colour classes marking view pairs adjacent in the data but apart in the embedding.

    Every pair ``(m, m2)`` whose domains overlap while their embedding views
    do not gets its own class, given to the shared points that belong to
    either cluster.  A point keeps the first class it receives; uncoloured
    points get ``-1``.

    Returns
    -------
    colors : (n,) int array
    torn : list of (m, m2) tuples
    """
    n = clustering.labels.size
    M = clustering.M
    if overlaps is None:
        overlaps = compute_overlaps(clustering.domains, n)
    near = embedding_overlaps(y, clustering.labels, M, size)
    colors = np.full(n, -1, dtype=np.intp)
    torn = []
    for m in range(M):
        for m2 in overlaps.neighbors(m):
            if m2 <= m or near[m, m2]:
                continue
            shared = overlaps.points(m, m2)
            pts = shared[np.isin(clustering.labels[shared], (m, m2))]
            free = pts[colors[pts] < 0]
            colors[free] = len(torn)
            torn.append((m, m2))
    return colors, torn
