import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ce2.clustering import GMM, SIGMA2_FLOOR, edge_indices, fps, fps_init, select_edge

from oracles import max_min_holds, mixture_density


def random_gmm(rng, n_comp=None, dim=None):
    n_comp = n_comp or int(rng.integers(1, 6))
    dim = dim or int(rng.integers(1, 4))
    w = rng.random(n_comp) + 0.05
    return GMM(rng.normal(0, 2, (n_comp, dim)), w / w.sum(), float(rng.uniform(0.3, 2.0)))


# -- fps ----------------------------------------------------------------------------
def test_fps_1d_endpoints():
    assert sorted(fps_init([0.0, 1.0, 10.0], 2, first=0).ravel()) == [0.0, 10.0]


def test_fps_degenerate_identical():
    np.testing.assert_array_equal(fps_init([5.0, 5.0, 5.0], 2, first=0).ravel(), [5.0, 5.0])


def test_fps_square_diagonal():
    pts = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    np.testing.assert_array_equal(fps_init(pts, 2, first=0)[1], [1, 1])


def test_fps_errors():
    with pytest.raises(ValueError):
        fps(np.zeros((2, 2)), 3)
    with pytest.raises(ValueError):
        fps(np.zeros((0, 2)), 0)


def test_fps_tie_lowest_index():
    pts = np.array([[0.0], [-1.0], [1.0]])
    assert list(fps(pts, 2, first=0)) == [0, 1]


def test_fps_max_min_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        pts = rng.normal(size=(n, int(rng.integers(1, 4))))
        chosen = list(fps(pts, int(rng.integers(1, n + 1)), rng))
        assert max_min_holds(pts, chosen)
        assert len(set(chosen)) == len(chosen)


# -- densities ------------------------------------------------------------------------
def test_density_closed_forms():
    g = GMM(np.array([[0.0]]), np.array([1.0]), 1.0)
    assert g.total_probability(np.array([0.0])) == pytest.approx(0.398942, abs=1e-6)
    g = GMM(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]), 1.0)
    assert g.total_probability(np.array([0.0])) == pytest.approx(0.241971, abs=1e-6)
    assert g.total_probability(np.array([60.0])) < 1e-300


def test_density_matches_term_by_term_sum():
    rng = np.random.default_rng(1)
    for _ in range(50):
        g = random_gmm(rng)
        z = rng.normal(0, 2, g.dim)
        assert g.total_probability(z) == pytest.approx(
            mixture_density(z, g.centroids, g.weights, g.sigma2), rel=1e-10)


# -- edges ------------------------------------------------------------------------------
def test_select_edge_examples():
    g = GMM(np.array([[0.0]]), np.array([1.0]), 1.0)
    cand = np.array([[0.5], [2.5], [1.0]])  # densities ordered 0.35, 0.02, 0.24
    np.testing.assert_array_equal(select_edge(g, cand, 1), [[2.5]])
    assert len(select_edge(g, cand, 3)) == 3
    with pytest.raises(ValueError):
        select_edge(g, cand, 4)


def test_select_edge_ties_by_index():
    g = GMM(np.array([[0.0]]), np.array([1.0]), 1.0)
    cand = np.array([[1.0], [-1.0], [1.0], [0.0]])
    assert list(edge_indices(g, cand, 3)) == [0, 1, 2]


def test_select_edge_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = random_gmm(rng)
        cand = rng.normal(0, 3, (50, g.dim))
        n_edge = int(rng.integers(1, 51))
        dens = [mixture_density(c, g.centroids, g.weights, g.sigma2) for c in cand]
        expected = sorted(range(50), key=lambda i: (dens[i], i))[:n_edge]
        assert list(edge_indices(g, cand, n_edge)) == expected


# -- fitting ------------------------------------------------------------------------------
def test_assign_centroids():
    rng = np.random.default_rng(0)
    batch = np.concatenate([rng.normal(-10, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
    g = GMM.create(2, 2, init_sigma2=0.7)
    g.sigma2 = 5.0
    idx = g.assign_centroids(batch, rng)
    np.testing.assert_array_equal(g.weights, [0.5, 0.5])
    assert g.sigma2 == 0.7
    np.testing.assert_array_equal(g.centroids, batch[idx])
    assert np.sign(g.centroids[0, 0]) != np.sign(g.centroids[1, 0])
    with pytest.raises(ValueError):
        GMM.create(5, 2).assign_centroids(batch[:3], rng)


def test_single_component_recovers_moments():
    rng = np.random.default_rng(3)
    batch = rng.normal(2.0, 1.5, (200, 1))
    g = GMM(np.array([[-3.0]]), np.array([1.0]), 1.0)
    for _ in range(30_000):
        g.elbo_step(batch)
    assert g.centroids[0, 0] == pytest.approx(batch.mean(), abs=1e-3)
    assert g.sigma2 == pytest.approx(batch.var(), abs=1e-3)


def test_objective_monotone_full_em():
    rng = np.random.default_rng(4)
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        batch = np.concatenate([rng.normal(rng.normal(0, 4, dim), 0.5, (30, dim)) for _ in range(3)])
        g = GMM.create(4, dim)
        g.assign_centroids(batch, rng)
        vals = [g.elbo_step(batch, step_size=1.0) for _ in range(50)]
        assert np.all(np.diff(vals) >= -1e-10)


def test_elbo_equals_objective_at_posterior():
    rng = np.random.default_rng(5)
    g = random_gmm(rng, 3, 2)
    g.prior_strength = 0.0
    z = rng.normal(size=(40, 2))
    assert g.elbo(z) == pytest.approx(g.objective(z), rel=1e-10)


def test_infinite_prior_keeps_uniform():
    rng = np.random.default_rng(6)
    g = GMM.create(3, 2, prior_strength=np.inf)
    z = np.concatenate([rng.normal(0, 0.1, (50, 2)), rng.normal(5, 0.1, (2, 2))])
    g.assign_centroids(z, rng)
    for _ in range(10):
        g.elbo_step(z, step_size=1.0)
    np.testing.assert_array_equal(g.weights, np.full(3, 1 / 3))


def test_sigma_floor():
    g = GMM(np.array([[0.0]]), np.array([1.0]), 1.0)
    g.elbo_step(np.zeros((10, 1)), step_size=1.0)
    assert g.sigma2 == SIGMA2_FLOOR


def test_empty_batch():
    with pytest.raises(ValueError):
        GMM.create(2, 2).elbo_step(np.zeros((0, 2)))


def test_weight_simplex_random_operation_sequences():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        g = GMM.create(int(rng.integers(1, 6)), 2, prior_strength=float(rng.choice([0.0, 0.1, 2.0, np.inf])))
        for _ in range(int(rng.integers(1, 6))):
            op = rng.integers(3)
            batch = rng.normal(0, 3, (int(rng.integers(g.n_components, 20)), 2))
            if op == 0:
                g.assign_centroids(batch, rng)
            elif op == 1:
                g.elbo_step(batch, step_size=float(rng.random()))
            else:
                g.sample(5, rng)
            assert abs(g.weights.sum() - 1.0) <= 1e-9
            assert np.all(g.weights >= 0)
            assert g.sigma2 >= SIGMA2_FLOOR


# -- sampling ----------------------------------------------------------------------------
def test_sample_frequencies_and_seed():
    g = GMM(np.array([[0.0], [10.0], [20.0]]), np.array([0.2, 0.5, 0.3]), 1.0)
    z, comp = g.sample(10_000, np.random.default_rng(0), return_components=True)
    np.testing.assert_allclose(np.bincount(comp, minlength=3) / 10_000, g.weights, atol=0.02)
    np.testing.assert_array_equal(g.sample(7, np.random.default_rng(1)), g.sample(7, np.random.default_rng(1)))


def test_sample_at_floor_hugs_centroids():
    g = GMM(np.array([[1.0, 2.0]]), np.array([1.0]), SIGMA2_FLOOR)
    z = g.sample(100, np.random.default_rng(0))
    assert np.max(np.abs(z - [1.0, 2.0])) < 0.06


def test_snapshot_roundtrip():
    rng = np.random.default_rng(8)
    g = random_gmm(rng, 3, 2)
    back = GMM.from_snapshot(__import__("json").loads(g.to_json()))
    np.testing.assert_array_equal(back.centroids, g.centroids)
    np.testing.assert_array_equal(back.weights, g.weights)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_edge_densities_bound_rest(seed, n_edge):
    rng = np.random.default_rng(seed)
    g = random_gmm(rng)
    cand = rng.normal(0, 3, (30, g.dim))
    idx = edge_indices(g, cand, n_edge)
    rest = np.setdiff1d(np.arange(30), idx)
    logp = g.log_total_probability(cand)
    if len(rest):
        assert logp[idx].max() <= logp[rest].min()
