import numpy as np
import pytest
from hypothesis import given, strategies as st

from caaf.errors import ConfigError, GenerationError
from caaf.generators import (
    BeamModel,
    ModeShapeMatrix,
    SyntheticSpec,
    beam_mode_shapes,
    beta_roots,
    gen_beam_dataset,
    gen_correlated_field,
    gen_synthetic,
)


def _corr(ds):
    return np.corrcoef(np.column_stack([ds.values, ds.targets]), rowvar=False)


def test_table1_correlations_within_tolerance():
    ds = gen_synthetic(SyntheticSpec(n=20_000, seed=1))
    c = _corr(ds)
    np.testing.assert_allclose(c[0, :3], [1.0, 0.9, 0.0], atol=1e-10)
    np.testing.assert_allclose(c[:3, 3], [0.65, 0.89, 0.32], atol=0.02)


def test_feasible_spec_is_exact():
    ds = gen_synthetic(SyntheticSpec(corr_to_target=(0.5, 0.6, 0.3), n=5000))
    np.testing.assert_allclose(_corr(ds)[:3, 3], [0.5, 0.6, 0.3], atol=1e-10)


def test_far_infeasible_spec_raises():
    with pytest.raises(GenerationError, match="eigenvalue"):
        gen_synthetic(SyntheticSpec(corr_to_target=(0.9, 0.1, 0.9)))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(corr_to_ref=(0.5, 0.5))
    with pytest.raises(ConfigError):
        SyntheticSpec(corr_to_ref=(1.0, 1.5), corr_to_target=(0.1, 0.1))
    with pytest.raises(ConfigError):
        SyntheticSpec(n=3)


@given(st.floats(0.0, 0.6), st.integers(0, 1000))
def test_feasible_random_specs(c3, seed):
    ds = gen_synthetic(SyntheticSpec(corr_to_target=(0.3, 0.3, c3), n=200, seed=seed))
    np.testing.assert_allclose(_corr(ds)[:3, 3], [0.3, 0.3, c3], atol=1e-9)


def test_beta_roots():
    np.testing.assert_allclose(beta_roots(3), np.pi * np.arange(1, 4))
    np.testing.assert_allclose(beta_roots(3, classical=True), [1.8751, 4.6941, 7.8548], atol=1e-4)


def test_beam_modes_normalization_and_tip():
    beam = BeamModel()
    modes = beam_mode_shapes(beam)
    assert modes.phi.shape == (30, 3)
    np.testing.assert_allclose(np.linalg.norm(modes.unit_phi, axis=0), 1.0)
    np.testing.assert_allclose(modes.coords[[0, -1]], [0.015, 0.45])
    # with n*pi roots the free end is an analytic zero of every mode
    assert np.all(modes.phi[-1] == 0.0)
    assert not np.any(beam_mode_shapes(BeamModel(classical_roots=True)).phi[-1] == 0.0)


def test_beam_dataset():
    ds, modes = gen_beam_dataset(BeamModel(), 1000, seed=3)
    assert ds.values.shape == (1000, 30) and ds.targets.shape == (1000, 3)
    assert np.all(np.abs(ds.targets) <= 1.0)
    np.testing.assert_allclose(ds.values, ds.targets @ modes.phi.T)
    back = ModeShapeMatrix.from_dict(modes.to_dict())
    np.testing.assert_array_equal(back.phi, modes.phi)


def test_beam_frequencies_increase():
    w = BeamModel(classical_roots=True).natural_frequencies()
    assert np.all(np.diff(w) > 0)


def test_field_shapes_and_shift():
    base, other = gen_correlated_field(8, 6, 40, 1.0, seed=0, shift=(2, 1), noise=0.0)
    assert base.shape == (40, 8, 6)
    np.testing.assert_allclose(other, np.roll(base, (2, 1), axis=(1, 2)))
    assert base.std() == pytest.approx(1.0)


def test_generators_deterministic():
    a = gen_synthetic(SyntheticSpec(n=100, seed=4))
    b = gen_synthetic(SyntheticSpec(n=100, seed=4))
    np.testing.assert_array_equal(a.values, b.values)
    f1 = gen_correlated_field(5, 5, 10, 1.0, seed=9)
    f2 = gen_correlated_field(5, 5, 10, 1.0, seed=9)
    np.testing.assert_array_equal(f1[1], f2[1])
