import numpy as np
import pytest

from src.generators.convolution import morph_convolve
from src.generators.morphology import MorphologyEvolution
from src.models.field import OrientationField
from src.models.params import MorphParams
from src.utils.kernels import morph_kernel
from src.utils.tessellation import build_tessellation


@pytest.fixture
def morph_params():
    return MorphParams(d11=0.1, d44=0.4, eta=1.0, t=0.1, dt=0.02)


def test_constant_field_is_unchanged(tess1, morph_params):
    U = OrientationField(np.full((3, 3, 3, tess1.n_vertices), 0.7), 1.0, tess1)
    evolution = MorphologyEvolution(morph_params, progress=False)
    assert np.allclose(evolution.run_erosion(U).data, 0.7, atol=1e-12)
    assert np.allclose(evolution.run_dilation(U).data, 0.7, atol=1e-12)
    assert evolution.hj_stable_dt(U) > 1e6


@pytest.mark.parametrize('seed', range(5))
def test_erosion_shrinks_and_dilation_grows(tess1, morph_params, seed):
    rng = np.random.default_rng(seed)
    U = OrientationField(rng.uniform(0.0, 1.0, size=(3, 3, 3, tess1.n_vertices)), 1.0, tess1)
    evolution = MorphologyEvolution(morph_params, progress=False)
    assert np.all(evolution.run_erosion(U).data <= U.data)
    assert np.all(evolution.run_dilation(U).data >= U.data)


@pytest.mark.parametrize('eta', [0.5, 0.75, 1.0])
def test_dilation_is_dual_to_erosion(random_field, eta):
    params = MorphParams(d11=0.1, d44=0.4, eta=eta, t=0.06, dt=0.02)
    evolution = MorphologyEvolution(params, progress=False)
    dilated = evolution.run_dilation(random_field)
    eroded = evolution.run_erosion(random_field.with_data(-random_field.data, signed=True))
    assert np.array_equal(dilated.data, -eroded.data)


def test_erosion_stays_within_the_input_range(random_field, morph_params):
    W = MorphologyEvolution(morph_params, progress=False).run_erosion(random_field)
    assert W.data.min() >= random_field.data.min() - 1e-12


def test_large_steps_are_subdivided(random_field):
    params = MorphParams(d44=5.0, t=0.5, dt=0.5)
    evolution = MorphologyEvolution(params, progress=False)
    assert evolution.hj_stable_dt(random_field) < 0.5
    W = evolution.run_erosion(random_field)
    assert np.all(np.isfinite(W.data))
    assert W.data.min() >= random_field.data.min() - 1e-12


def test_run_uses_the_configured_mode(random_field):
    params = MorphParams(d44=0.4, t=0.04, dt=0.02, mode='dilation')
    evolution = MorphologyEvolution(params, progress=False)
    assert np.array_equal(evolution.run(random_field).data, evolution.run_dilation(random_field).data)


def test_adaptive_erosion_without_curvature_is_still(tess1):
    U = OrientationField(np.full((2, 2, 2, tess1.n_vertices), 1.5), 1.0, tess1)
    params = MorphParams(d44=0.4, t=0.1, dt=0.02, threshold=0.0)
    W = MorphologyEvolution(params, progress=False).run_adaptive_erosion(U)
    assert np.allclose(W.data, U.data, atol=1e-12)


def test_adaptive_erosion_sharpens(random_field):
    params = MorphParams(d44=0.4, t=0.1, dt=0.02, threshold=0.0)
    W = MorphologyEvolution(params, progress=False).run_adaptive_erosion(random_field)
    assert W.data.max() >= random_field.data.max() - 1e-12
    assert W.data.min() <= random_field.data.min() + 1e-12


def test_parameter_validation():
    with pytest.raises(ValueError):
        MorphParams(eta=0.3)
    with pytest.raises(ValueError):
        MorphParams(mode='opening')
    with pytest.raises(ValueError):
        MorphParams(dt=0.0)


def test_single_upwind_step(random_field):
    evolution = MorphologyEvolution(MorphParams(d44=0.4, dt=0.01), progress=False)
    dt = min(0.01, evolution.hj_stable_dt(random_field))
    eroded = evolution.upwind_step(random_field, dt=dt)
    dilated = evolution.upwind_step(random_field, dt=dt, mode='dilation')
    assert np.all(eroded.data <= random_field.data)
    assert np.all(dilated.data >= random_field.data)
    assert eroded.data.min() >= random_field.data.min() - 1e-12


def _glyphs(shape, tessellation, rng, concentration=2.0):
    axes = rng.normal(size=shape + (3,))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    data = np.exp(concentration * (axes @ tessellation.vertices.T - 1.0))
    return OrientationField(data, 1.0, tessellation)


@pytest.mark.parametrize('eta', [0.5, 1.0])
def test_erosion_narrows_the_angular_profile(eta):
    tessellation = build_tessellation(2)
    peak = 0
    data = np.zeros((1, 1, 1, tessellation.n_vertices))
    data[..., peak] = 1.0
    ring = np.unique(tessellation.edges()[np.any(tessellation.edges() == peak, axis=1)])
    data[..., ring[ring != peak]] = 0.52
    U = OrientationField(data, 1.0, tessellation)

    def half_max_area(W):
        values = W.data[0, 0, 0]
        level = 0.5 * (values.max() + values.min())
        return float(np.sum(tessellation.measures[values >= level]))

    areas = [half_max_area(U)]
    for t in (0.1, 0.2, 0.3, 0.4):
        params = MorphParams(d44=0.4, eta=eta, t=t, dt=0.02)
        W = MorphologyEvolution(params, progress=False).run_erosion(U)
        assert int(np.argmax(W.data[0, 0, 0])) == peak
        areas.append(half_max_area(W))
    assert all(b <= a + 1e-12 for a, b in zip(areas, areas[1:]))
    assert areas[-1] < areas[0]


def test_upwind_erosion_agrees_with_morphological_convolution(rng):
    tessellation = build_tessellation(2)
    U = _glyphs((8, 8, 8), tessellation, rng)
    params = MorphParams(d44=0.4, eta=1.0, t=0.4, dt=0.02)
    upwind = MorphologyEvolution(params, progress=False).run_erosion(U).data
    convolved = morph_convolve(U, lambda y, n: morph_kernel(y, n, params.t, params), radius=1,
                               progress=False).data
    assert np.max(np.abs(upwind - convolved)) <= 0.1 * np.max(np.abs(convolved))
