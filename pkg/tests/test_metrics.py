import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from caaf.errors import MetricError, ShapeError
from caaf.generators import gen_correlated_field
from caaf.metrics import (
    condition_number,
    crosscorr_map,
    fisher_det,
    l2_error,
    metric_report,
    mmac,
    pearson,
    rms_offdiag,
)


def test_orthonormal_modes_are_ideal():
    phi = np.eye(4)[:, :3]
    r = metric_report(phi, np.eye(4), [0, 1, 2])
    assert r.rms_mmac == 0.0
    assert r.cn == 1.0
    assert r.det_fisher == pytest.approx(1.0)


def test_mmac_diagonal_and_range():
    rng = np.random.default_rng(0)
    phi = rng.normal(size=(10, 3))
    m = mmac(phi, np.diag(rng.uniform(0.5, 2, 10)))
    np.testing.assert_allclose(np.diag(m), 1.0)
    assert np.all((m >= 0) & (m <= 1 + 1e-12))
    np.testing.assert_allclose(m, m.T)


def test_parallel_modes():
    phi = np.array([[1.0, 2.0], [1.0, 2.0]])
    assert rms_offdiag(mmac(phi)) == pytest.approx(1.0)
    assert condition_number(phi) == float("inf")


def test_zero_mode_is_error():
    with pytest.raises(MetricError):
        mmac(np.array([[1.0, 0.0], [1.0, 0.0]]))


@given(arrays(np.float64, (6, 2), elements=st.floats(-10, 10)))
def test_cn_at_least_one_and_det_nonnegative(phi):
    assert condition_number(phi) >= 1.0
    assert fisher_det(phi) >= -1e-9 * max(1.0, np.abs(phi).max() ** 4)


def test_l2_error():
    truth = np.array([1.0, 2.0, 3.0])
    assert l2_error(truth, truth) == 0.0
    assert l2_error(np.full(3, 2.0), truth) == pytest.approx(1.0)
    with pytest.raises(MetricError):
        l2_error(truth, np.ones(3))
    with pytest.raises(ShapeError):
        l2_error(truth, truth[:2])


def test_pearson_matches_numpy():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 100))
    assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)
    with pytest.raises(MetricError):
        pearson(a, np.ones(100))


def test_crosscorr_peaks_at_shift():
    base, other = gen_correlated_field(24, 20, 300, 1.5, seed=2, shift=(3, -2))
    cm = crosscorr_map(base, other, range(-5, 6), range(-5, 6))
    assert cm.argmax() == (3, -2)
    assert cm.values.max() > 0.9
    cp = crosscorr_map(base, other, range(-5, 6), range(-5, 6), periodic=True)
    assert cp.argmax() == (3, -2)


def test_crosscorr_self_zero_offset_is_one():
    base, _ = gen_correlated_field(10, 10, 50, 1.0, seed=0)
    cm = crosscorr_map(base, base, [0], [0])
    assert cm.values[0, 0] == pytest.approx(1.0)
