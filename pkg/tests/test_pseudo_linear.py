import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.generators.diffusion import DiffusionEvolution
from src.generators.pseudo_linear import PseudoLinearEvolution, chi, chi_inv
from src.models.field import OrientationField
from src.models.params import DiffusionParams, PseudoParams
from src.utils.tessellation import build_tessellation


@pytest.fixture
def diffusion_params():
    return DiffusionParams(d11=0.04, d33=1.0, d44=0.04, t=0.2)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-5.0, max_value=5.0), st.floats(min_value=0.0, max_value=1.0))
def test_grey_value_maps_are_inverse(C, I):
    assert chi_inv(chi(I, C), C) == pytest.approx(I, abs=1e-9)


@pytest.mark.parametrize('C', [-3.0, 0.0, 1e-10, 2.0])
def test_grey_value_map_fixes_the_endpoints(C):
    assert chi(0.0, C) == 0.0
    assert chi(1.0, C) == pytest.approx(1.0, abs=1e-12)
    assert chi_inv(1.0, C) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize('method', ['run_conjugated', 'run_direct'])
def test_zero_balance_is_plain_diffusion(random_field, diffusion_params, method):
    linear = DiffusionEvolution(diffusion_params, progress=False).run_enhancement(random_field)
    evolution = PseudoLinearEvolution(PseudoParams(balance=0.0, diffusion=diffusion_params), progress=False)
    out = getattr(evolution, method)(random_field)
    assert np.allclose(out.data, linear.data, atol=1e-10)


@pytest.mark.parametrize('C', [-2.0, 2.0])
@pytest.mark.parametrize('method', ['run_conjugated', 'run_direct'])
def test_output_stays_within_the_input_range(random_field, diffusion_params, C, method):
    evolution = PseudoLinearEvolution(PseudoParams(balance=C, diffusion=diffusion_params), progress=False)
    out = getattr(evolution, method)(random_field)
    assert out.data.min() >= random_field.data.min() - 1e-9
    assert out.data.max() <= random_field.data.max() + 1e-9


def test_positive_balance_leans_towards_dilation(random_field, diffusion_params):
    plain = PseudoLinearEvolution(PseudoParams(balance=0.0, diffusion=diffusion_params), progress=False)
    dilating = PseudoLinearEvolution(PseudoParams(balance=2.0, diffusion=diffusion_params), progress=False)
    assert np.all(dilating.run_conjugated(random_field).data >= plain.run_conjugated(random_field).data - 1e-12)


def test_constant_field_is_returned_unchanged(tess0):
    U = OrientationField(np.full((2, 2, 2, 12), 3.0), 1.0, tess0)
    evolution = PseudoLinearEvolution(PseudoParams(balance=2.0), progress=False)
    assert np.array_equal(evolution.run_conjugated(U).data, U.data)
    assert np.array_equal(evolution.run_direct(U).data, U.data)


def test_balance_must_be_finite():
    with pytest.raises(ValueError):
        PseudoParams(balance=float('nan'))


def _smooth_glyph_field(shape, order):
    tessellation = build_tessellation(order)
    centre = (np.array(shape) - 1) / 2.0
    grid = np.stack(np.meshgrid(*(np.arange(s) for s in shape), indexing='ij'), axis=-1)
    spatial = np.exp(-np.sum((grid - centre) ** 2, axis=-1) / 8.0)
    axis = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    angular = (tessellation.vertices @ axis) ** 2
    return OrientationField(0.1 + spatial[..., None] * angular, 1.0, tessellation)


@pytest.mark.slow
def test_direct_scheme_matches_the_conjugated_route_at_first_order():
    U = _smooth_glyph_field((8, 8, 8), 2)
    errors = []
    for dt in (0.01, 0.005):
        diffusion = DiffusionParams(d33=1.0, d44=0.04, t=1.0, dt=dt)
        evolution = PseudoLinearEvolution(PseudoParams(balance=2.0, diffusion=diffusion), progress=False)
        conjugated = evolution.run_conjugated(U).data
        direct = evolution.run_direct(U).data
        errors.append(np.max(np.abs(direct - conjugated)) / np.max(np.abs(conjugated)))
    assert errors[0] <= 0.02
    assert 1.5 <= errors[0] / errors[1] <= 2.5
