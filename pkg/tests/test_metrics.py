import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from imle_lab import tensor as T
from imle_lab.gradcheck import check_grads
from imle_lab.metrics import (
    FWVConfig,
    L2Metric,
    PerceptualProxy,
    WeightUnderflowError,
    distance,
    faithfulness_weighted_variance,
    frechet_feature_distance,
    frechet_from_moments,
    gaussian_moments,
    kde_region_contains,
    make_metric,
    mode_coverage,
    sqrtm_psd,
    trace_sqrt_product,
)

finite = st.floats(-5, 5, allow_nan=False, width=32)


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + 0.1 * np.eye(n)


def test_l2_pythagoras():
    assert distance(L2Metric(), [0, 0], [3, 4]) == pytest.approx(5.0)


@pytest.mark.parametrize("kind", ["l2", "perceptual_proxy"])
def test_identity_and_nonnegativity(kind):
    rng = np.random.default_rng(0)
    metric = make_metric(kind, 12)
    a = rng.standard_normal((30, 12))
    assert np.all(metric(a, a).data == 0)
    assert np.all(metric(a, rng.standard_normal((30, 12))).data >= 0)


def test_proxy_symmetry_100_pairs():
    rng = np.random.default_rng(1)
    metric = PerceptualProxy(20)
    a, b = rng.standard_normal((100, 20)), rng.standard_normal((100, 20))
    assert np.max(np.abs(metric(a, b).data - metric(b, a).data)) < 1e-6


def test_proxy_matches_embedding_distance():
    rng = np.random.default_rng(2)
    metric = PerceptualProxy(10)
    a, b = rng.standard_normal((5, 10)), rng.standard_normal((5, 10))
    emb = np.linalg.norm(metric.embed(a) - metric.embed(b), axis=1)
    np.testing.assert_allclose(metric(a, b).data, emb, rtol=1e-5)
    np.testing.assert_allclose(np.diag(metric.pairwise(a, b)), emb, rtol=1e-4)


def test_proxy_is_frozen_and_seeded():
    a, b = PerceptualProxy(8, seed=3), PerceptualProxy(8, seed=3)
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))
    assert not np.array_equal(a.weights[0], PerceptualProxy(8, seed=4).weights[0])


def test_dimension_mismatch():
    with pytest.raises(T.ShapeError):
        L2Metric()(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(T.ShapeError):
        distance(L2Metric(), np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("kind", ["l2", "perceptual_proxy"])
def test_metric_gradients(kind):
    rng = np.random.default_rng(3)
    metric = make_metric(kind, 6)
    a, b = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    assert check_grads(lambda t: metric(t[0], t[1]), [a, b]) <= 1e-4


@settings(max_examples=60)
@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (3, 4), elements=finite))
def test_l2_symmetric_property(a, b):
    m = L2Metric()
    np.testing.assert_allclose(m(a, b).data, m(b, a).data)


# -- FWV --------------------------------------------------------------------------------

def test_fwv_hand_case():
    assert faithfulness_weighted_variance([0.3, -0.3], [0.0], 0.3) == pytest.approx(0.09, abs=1e-6)


def test_fwv_identical_samples_zero():
    s = np.tile(np.array([[0.2, -0.1, 0.5]]), (7, 1))
    assert faithfulness_weighted_variance(s, np.zeros(3), 0.3) == 0.0


def test_fwv_single_sample_zero():
    assert faithfulness_weighted_variance([[1.0, 2.0]], [0.0, 0.0], 5.0) == 0.0


def test_fwv_zero_distance_weight_is_one():
    from imle_lab.metrics import faithfulness_weights
    assert faithfulness_weights(np.array([0.0]), 0.3)[0] == 1.0


def test_fwv_matches_direct_formula():
    rng = np.random.default_rng(4)
    s, y, sigma = rng.standard_normal((9, 3)), rng.standard_normal(3), 1.5
    w = np.array([np.exp(-np.sum((si - y) ** 2) / (2 * sigma ** 2)) for si in s])
    mean = sum(wi * si for wi, si in zip(w, s)) / w.sum()
    expected = sum(wi * np.sum((si - mean) ** 2) for wi, si in zip(w, s)) / w.sum()
    assert faithfulness_weighted_variance(s, y, sigma) == pytest.approx(expected, rel=1e-12)


def test_fwv_scaling_law_large_sigma():
    rng = np.random.default_rng(5)
    y = rng.standard_normal(4)
    spread = rng.standard_normal((12, 4)) * 0.1
    c = 3.0
    base = faithfulness_weighted_variance(y + spread, y, 1e6)
    scaled = faithfulness_weighted_variance(y + c * spread, y, 1e6)
    assert scaled == pytest.approx(c * c * base, rel=1e-5)


def test_fwv_underflow_error():
    with pytest.raises(WeightUnderflowError, match="larger bandwidth"):
        faithfulness_weighted_variance([[100.0], [101.0]], [0.0], 0.3)


def test_fwv_bad_sigma():
    with pytest.raises(ValueError):
        FWVConfig(sigma=0.0)


def test_fwv_with_proxy_metric():
    rng = np.random.default_rng(6)
    s = rng.uniform(0, 1, (5, 16))
    cfg = FWVConfig(0.3, PerceptualProxy(16))
    assert faithfulness_weighted_variance(s, s[0], cfg) > 0


@settings(max_examples=40)
@given(st.permutations(list(range(6))))
def test_fwv_permutation_invariant(perm):
    rng = np.random.default_rng(7)
    s, y = rng.standard_normal((6, 2)), rng.standard_normal(2)
    assert faithfulness_weighted_variance(s[perm], y, 1.0) == pytest.approx(
        faithfulness_weighted_variance(s, y, 1.0), rel=1e-12)


# -- Frechet --------------------------------------------------------------------------------

def test_frechet_scalar_closed_form():
    assert frechet_from_moments([0.0], [[1.0]], [2.0], [[4.0]]) == pytest.approx(5.0, abs=1e-6)


def test_frechet_identical_sets_zero():
    feats = np.random.default_rng(8).standard_normal((50, 3))
    assert frechet_feature_distance(feats, feats) == pytest.approx(0.0, abs=1e-6)


def test_trace_sqrt_vs_eigvals_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a, b = random_spd(rng, 5), random_spd(rng, 5)
        # eigenvalues of the (non-symmetric) product are real and non-negative for SPD pairs
        oracle = np.sum(np.sqrt(np.linalg.eigvals(a @ b).real))
        assert trace_sqrt_product(a, b) == pytest.approx(oracle, rel=1e-6)
        assert np.trace(scipy.linalg.sqrtm(a @ b)).real == pytest.approx(oracle, rel=1e-6)


def test_sqrtm_psd_squares_back():
    a = random_spd(np.random.default_rng(10), 6)
    r = sqrtm_psd(a)
    np.testing.assert_allclose(r @ r, a, rtol=1e-9, atol=1e-9)


def test_frechet_symmetric_and_zero_iff_equal():
    rng = np.random.default_rng(11)
    mu1, mu2 = rng.standard_normal(4), rng.standard_normal(4)
    c1, c2 = random_spd(rng, 4), random_spd(rng, 4)
    d12, d21 = frechet_from_moments(mu1, c1, mu2, c2), frechet_from_moments(mu2, c2, mu1, c1)
    assert d12 == pytest.approx(d21, rel=1e-9)
    assert d12 > 0
    assert frechet_from_moments(mu1, c1, mu1, c1) == pytest.approx(0.0, abs=1e-9)
    assert frechet_from_moments(mu1, c1, mu1 + 0.1, c1) > 0
    assert frechet_from_moments(mu1, c1, mu1, c1 * 1.5) > 0


def test_degenerate_covariance_without_regularisation():
    feats = np.random.default_rng(12).standard_normal((3, 5))  # fewer samples than dims
    with pytest.raises(np.linalg.LinAlgError):
        gaussian_moments(feats, eps=None)
    _, cov = gaussian_moments(feats)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_frechet_with_feature_map():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((200, 2))
    b = a + np.array([3.0, 0.0])
    value = frechet_feature_distance(a, b, feature_map=lambda v: v[:, :1])
    assert value == pytest.approx(9.0, rel=1e-6)


# -- mode coverage --------------------------------------------------------------------------------

def naive_coverage(samples, centers, r):
    hit = 0
    for c in centers:
        for s in samples:
            if np.sqrt(np.sum((s - c) ** 2)) <= r:
                hit += 1
                break
    return hit / len(centers)


def test_coverage_exact_centres():
    centers = np.random.default_rng(14).standard_normal((5, 2))
    assert mode_coverage(centers, centers, 0.01) == 1.0


def test_coverage_two_of_five():
    centers = np.array([[0, 0], [5, 0], [10, 0], [15, 0], [20, 0]], dtype=float)
    samples = np.array([[0.05, 0.0], [5.0, 0.1], [7.5, 0.0]])
    assert mode_coverage(samples, centers, 0.3) == 0.4


def test_coverage_matches_naive_oracle():
    rng = np.random.default_rng(15)
    for _ in range(50):
        centers, samples = rng.uniform(-3, 3, (5, 2)), rng.uniform(-3, 3, (rng.integers(1, 20), 2))
        r = rng.uniform(0.1, 1.5)
        assert mode_coverage(samples, centers, r) == naive_coverage(samples, centers, r)


def test_coverage_needs_centres():
    with pytest.raises(ValueError):
        mode_coverage(np.zeros((3, 2)), np.zeros((0, 2)), 1.0)


@settings(max_examples=60)
@given(hnp.arrays(np.float64, (8, 2), elements=finite), st.floats(0.01, 3), st.floats(0.01, 3), st.integers(1, 8))
def test_coverage_monotone(samples, r1, r2, keep):
    centers = np.array([[0.0, 0.0], [2.0, 2.0], [-2.0, 1.0]])
    lo, hi = sorted([r1, r2])
    assert mode_coverage(samples, centers, lo) <= mode_coverage(samples, centers, hi)
    assert mode_coverage(samples[:keep], centers, lo) <= mode_coverage(samples, centers, lo)


# -- KDE probe ----------------------------------------------------------------------------------------

def test_kde_region_contains():
    pts = np.random.default_rng(16).standard_normal((200, 2))
    assert kde_region_contains(pts, [0.0, 0.0])
    assert not kde_region_contains(pts, [6.0, 6.0])
