import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from ldle import local_views as lv
from ldle.datasets import DistanceSource
from ldle.errors import InvalidInputError, InvalidParameterError, SelectionInfeasibleError
from ldle.graph import EigenBasis


# -- chi-squared quantile ---------------------------------------------------


def test_chi2_closed_forms():
    assert lv.chi2_inverse_cdf(0.99, 2) == pytest.approx(-2 * np.log(0.01), abs=1e-10)
    assert lv.chi2_inverse_cdf(0.5, 2) == pytest.approx(2 * np.log(2), abs=1e-10)


def test_chi2_quadrature_oracle():
    x = lv.chi2_inverse_cdf(0.99, 10)
    k = 10

    def density(t):
        return t ** (k / 2 - 1) * np.exp(-t / 2) / (2 ** (k / 2) * gamma_fn(k / 2))

    mass, _ = quad(density, 0, x, epsabs=1e-13)
    assert mass == pytest.approx(0.99, abs=1e-10)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_chi2_rejects_bad_probability(p):
    with pytest.raises(InvalidParameterError):
        lv.chi2_inverse_cdf(p, 2)


# -- local scales -------------------------------------------------------------


def test_collinear_ball_includes_tie():
    sc = lv.compute_local_scales(np.array([[0.0], [1.0], [2.0]]), k_lv=1)
    assert sc.eps[1] == 1.0
    assert sorted(sc.balls[1].tolist()) == [0, 1, 2]
    assert sc.balls[1][0] == 1


def test_equidistant_ball_has_uniform_weights():
    ang = np.arange(6) * np.pi / 3
    X = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    sc = lv.compute_local_scales(X, k_lv=6)
    w = sc.weights[0]
    assert w[0] == 0.0
    np.testing.assert_allclose(w[1:], w[1], rtol=1e-14)


def test_bandwidth_formula():
    sc = lv.compute_local_scales(np.array([[0.0], [0.05], [0.1], [0.2]]), k_lv=1)
    assert sc.eps[0] == pytest.approx(0.05)
    assert sc.t[0] == pytest.approx(0.5 * 0.0025 / 9.21034037, rel=1e-8)


def test_local_scale_invariants(small_grid):
    sc = small_grid.scales
    chi = lv.chi2_inverse_cdf(sc.p, sc.d)
    np.testing.assert_array_equal(sc.t, sc.eps**2 / (2 * chi))
    for k, (ball, w) in enumerate(zip(sc.balls, sc.weights)):
        assert ball[0] == k and len(ball) >= sc.k_lv + 1
        assert w[0] == 0 and np.all(w >= 0) and w.sum() <= 1


def test_duplicate_points_degenerate_radius():
    from ldle.errors import DegenerateScaleError

    with pytest.raises(DegenerateScaleError):
        lv.compute_local_scales(np.array([[0.0], [0.0], [1.0]]), k_lv=1)


# -- gradient inner products ----------------------------------------------


def test_constant_functions_have_zero_gradient(small_grid):
    F = np.ones((small_grid.cloud.n, 3))
    A = lv.estimate_gradient_inner_products(small_grid.basis, small_grid.scales, values=F)
    assert np.all(A.values == 0)


def test_finite_sum_equals_kernel_row_feynman_kac(small_grid):
    sc = small_grid.scales
    n = sc.n
    rows, cols, vals = [], [], []
    for k in range(n):
        g = -sc.weights[k] / sc.t[k]
        g[0] += 1 / sc.t[k]
        rows += [k] * len(g)
        cols += sc.balls[k].tolist()
        vals += g.tolist()
    Lk = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    a = lv.estimate_gradient_inner_products(small_grid.basis, sc, method="finite_sum")
    b = lv.estimate_gradient_inner_products(small_grid.basis, sc, Lk, method="feynman_kac")
    np.testing.assert_allclose(a.values, b.values, rtol=1e-10, atol=1e-12)


def test_estimates_are_symmetric(small_grid):
    for method, rank in [("finite_sum", None), ("feynman_kac", None), ("feynman_kac_lowrank", 8)]:
        A = lv.estimate_gradient_inner_products(
            small_grid.basis, small_grid.scales, small_grid.lap, method, rank=rank
        ).values
        np.testing.assert_allclose(A, np.swapaxes(A, 1, 2), atol=1e-9)


def test_lowrank_full_rank_matches_spectral_reconstruction(small_grid):
    b = small_grid.basis
    A = lv.estimate_gradient_inner_products(
        b, small_grid.scales, method="feynman_kac_lowrank", rank=b.N, points=[5, 40]
    ).values
    Lr = (b.vectors * b.values) @ b.vectors.T
    for j, k in enumerate([5, 40]):
        delta = b.vectors - b.vectors[k]
        want = -0.5 * delta.T @ (Lr[k][:, None] * delta)
        np.testing.assert_allclose(A[j], want, atol=1e-12)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("finite-sum", ("finite_sum", None)),
        ("feynman-kac", ("feynman_kac", None)),
        ("feynman-kac-lowrank=7", ("feynman_kac_lowrank", 7)),
    ],
)
def test_parse_method(text, expected):
    assert lv.parse_method(text) == expected


@pytest.mark.parametrize("text", ["magic", "feynman-kac-lowrank", "finite-sum=3"])
def test_parse_method_rejects(text):
    with pytest.raises(InvalidParameterError):
        lv.parse_method(text)


# -- eigenvector selection ---------------------------------------------------


def test_d1_picks_lowest_frequency_above_threshold():
    A = np.array([[1.0, 0.2, 0.9], [0.2, 4.0, 1.9], [0.9, 1.9, 3.0]])
    lam = np.array([1.0, 2.0, 3.0])
    gamma = np.ones(3)
    # S = {1, 2} (median of diag is 3), r1 = 1, scores |A[:,1]| = 4, 1.9 -> only 1 passes 0.9*4
    idx, sc = lv.select_local_parameterization(A, lam, gamma, tau=50, delta=0.9, d=1)
    assert idx.tolist() == [1] and sc.tolist() == [1.0]


def test_diagonal_hand_trace():
    # tau=0 keeps every candidate; r1 = 0 (lowest lambda); scores gamma*|A[i,0]| vanish off i=0
    A = np.diag([2.0, 5.0, 3.0])
    lam = np.array([0.5, 1.0, 2.0])
    gamma = np.array([1.0, 1.0, 1.0])
    idx, _ = lv.select_local_parameterization(A, lam, gamma, tau=0, delta=1, d=1)
    assert idx.tolist() == [0]
    # with delta=1 only the maximiser of gamma*A_ii*[i==r1] qualifies at stage 2 as well
    idx, _ = lv.select_local_parameterization(A, lam, gamma, tau=0, delta=1, d=2)
    assert idx.tolist() == [0, 1]


def test_selection_indices_distinct_and_scales_positive(small_grid):
    p = small_grid.params
    assert np.all(p.indices[:, 0] != p.indices[:, 1])
    assert np.all(p.scales > 0) and np.all(p.zeta >= 1)


def test_selection_permutation_invariance(rng):
    N = 12
    G = rng.normal(size=(N, 2))
    A = G @ G.T
    lam = np.sort(rng.uniform(1, 10, N))
    gamma = rng.uniform(0.5, 2, N)
    base, _ = lv.select_local_parameterization(A, lam, gamma, d=2)
    perm = rng.permutation(N)
    idx, _ = lv.select_local_parameterization(A[np.ix_(perm, perm)], lam[perm], gamma[perm], d=2)
    assert perm[idx].tolist() == base.tolist()


def test_too_few_candidates():
    with pytest.raises(SelectionInfeasibleError) as info:
        lv.select_local_parameterization(np.diag([1.0, 2.0]), [1.0, 2.0], np.ones(2), tau=99, d=2, point=3)
    assert info.value.stage == 1 and info.value.point == 3


# -- distortion -------------------------------------------------------------


def test_distortion_isometry_and_scaling(rng):
    X = rng.normal(size=(10, 2))
    Q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    assert lv.distortion(X @ Q + 1.0, X) == pytest.approx(1.0, abs=1e-12)
    assert lv.distortion(3 * X, X) == pytest.approx(1.0, abs=1e-12)


def test_distortion_three_point_brute_force():
    U = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    Y = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    ratios = [np.linalg.norm(Y[a] - Y[b]) / np.linalg.norm(U[a] - U[b]) for a, b in itertools.combinations(range(3), 2)]
    want = max(ratios) * max(1 / r for r in ratios)
    assert lv.distortion(Y, U) == pytest.approx(want, rel=1e-14)
    assert want == pytest.approx(2.0)


def test_distortion_accepts_distance_matrix():
    U = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    D = np.linalg.norm(U[:, None] - U[None], axis=-1)
    Y = U * [2.0, 1.0]
    assert lv.distortion(Y, D) == lv.distortion(Y, U)


def test_distortion_overflow_and_duplicates():
    U = np.array([[0.0], [1.0], [2.0]])
    assert lv.distortion(np.array([[0.0], [1.0], [1.0]]), U) == lv.DISTORTION_OVERFLOW
    with pytest.raises(InvalidInputError):
        lv.distortion(np.array([[0.0], [1.0], [2.0]]), np.array([[0.0], [0.0], [1.0]]))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**31),
    st.floats(0.0, 2 * np.pi),
    st.floats(0.01, 100.0),
    st.floats(-50, 50),
)
def test_distortion_similarity_invariance(seed, angle, scale, shift):
    r = np.random.default_rng(seed)
    U = r.normal(size=(8, 3))
    Y = r.normal(size=(8, 2))
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    a = lv.distortion(Y, U)
    b = lv.distortion(scale * Y @ R + shift, U)
    assert b == pytest.approx(a, rel=1e-9)
    assert a >= 1


# -- postprocessing ---------------------------------------------------------


def _line_setup(own):
    x = np.arange(6, dtype=float)
    dist = DistanceSource.from_points(x[:, None])
    sc = lv.compute_local_scales(dist, k_lv=2)
    basis = EigenBasis(np.array([1.0, 2.0]), np.column_stack([x, (x - 2.5) ** 3]))
    indices = np.array([[c] for c in own])
    params = lv.LocalParameterization(indices, np.ones((6, 1)), np.empty(6))
    params.zeta = lv.self_distortions(basis.vectors, params, sc, dist)
    return params, sc, basis, dist


def test_postprocess_replaces_worse_view_in_one_pass():
    params, sc, basis, dist = _line_setup([0, 1, 0, 0, 0, 0])
    assert params.zeta[1] > 1
    out, log = lv.postprocess(params, sc, basis, dist)
    assert out.indices[1, 0] == 0 and out.zeta[1] == pytest.approx(1.0)
    assert log.replacements == [1, 0]


def test_postprocess_fixed_point_is_identity():
    params, sc, basis, dist = _line_setup([0] * 6)
    out, log = lv.postprocess(params, sc, basis, dist)
    assert log.replacements == [0]
    np.testing.assert_array_equal(out.indices, params.indices)


def test_postprocess_monotone_and_fixed_point(small_grid):
    hist = np.array(small_grid.post_log.zeta_history)
    assert np.all(np.diff(hist, axis=0) <= 0)
    p = small_grid.params
    Z = lv.ball_distortions(small_grid.basis.vectors, p, small_grid.scales, small_grid.dist, np.arange(p.zeta.size))
    np.testing.assert_allclose(Z[:, 0], p.zeta, rtol=1e-12)
    assert np.all(p.zeta <= Z.min(axis=1) + 1e-12)
