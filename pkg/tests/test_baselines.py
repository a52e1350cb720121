import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from caaf.baselines import (
    BayesConfig,
    bayes_select,
    bayes_utility,
    bin_targets,
    effective_independence,
    ei_select,
    ke_scores,
    ke_select,
    pod_qr_select,
    qr_pivots,
    uniform_grid_select,
    uniform_select,
)
from caaf.datamodel import SensorDataset
from caaf.errors import ConfigError, RankError
from caaf.generators import BeamModel, SyntheticSpec, beam_mode_shapes, gen_synthetic
from oracles import best_det_subset, ei_reference, fisher_det_of


def test_ei_small_example_keeps_first_two():
    phi = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.1, 0.1]])
    r = ei_select(phi, 2)
    assert sorted(r.selected) == [0, 1]
    assert not r.ordered


def test_ei_matches_reference_loop():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(n + 1, 13))
        k = int(rng.integers(n, m))
        phi = rng.normal(size=(m, n))
        r = ei_select(phi, k)
        keep, order, traces = ei_reference(phi, k)
        assert sorted(r.selected) == keep
        assert r.metadata["elimination_order"] == order
        np.testing.assert_allclose(r.metadata["ef_trace"], n, atol=1e-9)
        np.testing.assert_allclose(r.metadata["ef_trace"], traces, atol=1e-12)


def test_ei_keeps_max_det_on_easy_cases():
    # one clearly dominant row per mode plus small noise rows
    rng = np.random.default_rng(1)
    for _ in range(10):
        phi = np.vstack([5 * np.eye(2) + rng.normal(scale=0.1, size=(2, 2)),
                         rng.normal(scale=0.2, size=(5, 2))])
        r = ei_select(phi, 2)
        assert tuple(sorted(r.selected)) == best_det_subset(phi, 2)


def test_ei_rank_error():
    phi = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(RankError) as err:
        ei_select(phi, 2)
    assert err.value.step == 1


def test_ei_k_equals_m_and_bounds():
    modes = beam_mode_shapes(BeamModel())
    assert sorted(ei_select(modes, 30).selected) == list(range(30))
    with pytest.raises(ConfigError):
        ei_select(modes, 2)


@given(st.integers(0, 10_000))
def test_effective_independence_sums_to_rank(seed):
    phi = np.random.default_rng(seed).normal(size=(7, 3))
    assert effective_independence(phi).sum() == pytest.approx(3.0, abs=1e-9)


def test_ke_example():
    phi = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    np.testing.assert_allclose(ke_scores(phi, np.eye(3)), [1.0, 4.0, 2.0])
    assert ke_select(phi, np.eye(3), 2).selected == (1, 2)


def test_qr_pivots_match_scipy():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.normal(size=(4, 12))
        perm, rdiag = qr_pivots(a, 4)
        _, r, p = scipy.linalg.qr(a, pivoting=True)
        assert list(perm) == list(p[:4])
        np.testing.assert_allclose(rdiag, np.abs(np.diag(r)), rtol=1e-10)


def test_qr_ties_go_to_lowest_index():
    perm, _ = qr_pivots(np.eye(3), 3)
    assert list(perm) == [0, 1, 2]


def test_pod_identity_and_all_candidates():
    ds = SensorDataset(np.eye(4), np.zeros((4, 1)), list("abcd"), ["y"])
    assert pod_qr_select(ds, 2).selected == (0, 1)
    rng = np.random.default_rng(2)
    ds = SensorDataset(rng.normal(size=(50, 6)), np.zeros((50, 1)), list("abcdef"), ["y"])
    assert sorted(pod_qr_select(ds, 6).selected) == list(range(6))


def test_pod_dominant_variance_first():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(400, 5))
    x[:, 3] *= 20.0
    ds = SensorDataset(x, np.zeros((400, 1)), list("abcde"), ["y"])
    assert pod_qr_select(ds, 1).selected == (3,)


def test_pod_rank_deficient_returns_fewer():
    x = np.outer(np.arange(1.0, 11.0), [1.0, 2.0, 3.0])
    ds = SensorDataset(x, np.zeros((10, 1)), list("abc"), ["y"])
    r = pod_qr_select(ds, 2)
    assert r.k == 1 and r.metadata["requested_k"] == 2


def _bivariate(rho, n=20_000, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    x = rho * z[:, 0] + np.sqrt(1 - rho**2) * z[:, 1]
    return SensorDataset(x[:, None], z[:, :1], ["x"], ["y"])


def test_bayes_gaussian_calibration():
    u = bayes_utility(_bivariate(0.89)).utilities[0]
    assert abs(u - (-0.5 * np.log(1 - 0.89**2))) <= 0.15
    assert abs(bayes_utility(_bivariate(0.0)).utilities[0]) <= 0.05


def test_bayes_invariant_to_affine_rescaling():
    ds = _bivariate(0.6, 5000)
    x = np.column_stack([ds.values[:, 0], 3.0 * ds.values[:, 0] - 7.0])
    u = bayes_utility(SensorDataset(x, ds.targets, ["a", "b"], ["y"])).utilities
    assert u[0] == pytest.approx(u[1], rel=1e-9)


def test_bayes_table1_ordering():
    ds = gen_synthetic(SyntheticSpec(n=20_000))
    r = bayes_select(ds, BayesConfig(), 3)
    assert r.selected == (1, 0, 2)
    assert bayes_select(ds, BayesConfig(), 1).selected == (1,)


def test_bin_targets_merges_empty_bins():
    y = np.array([0.0, 0.01, 0.02, 1.0])
    idx, empty = bin_targets(y, 4)
    assert empty == (1, 2)
    assert set(idx.tolist()) == {0, 3}


def test_uniform_examples():
    r = uniform_select(376, 10)
    assert r.selected[0] == 0 and r.selected[-1] == 375
    assert uniform_select(5, 3).selected == (0, 2, 4)
    assert uniform_select(5, 1, anchors="none").selected == (2,)
    with pytest.raises(ConfigError):
        uniform_select(5, 1)


@given(st.integers(2, 400), st.data())
def test_uniform_distinct_and_spread(m, data):
    k = data.draw(st.integers(2, m))
    sel = uniform_select(m, k).selected
    assert len(set(sel)) == k
    assert min(sel) == 0 and max(sel) == m - 1


def test_uniform_grid():
    r = uniform_grid_select((19, 19), 10)
    assert len(set(r.selected)) == 10
    assert r.metadata["lattice"] in ([2, 5], [5, 2])
    assert len(uniform_grid_select((19, 19), 9).selected) == 9
