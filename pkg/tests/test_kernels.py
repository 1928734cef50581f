import numpy as np
import pytest

from src.models.params import KernelSpec, MorphParams
from src.utils.kernels import (_half_angle_ratio, enhancement_kernel, enhancement_mass,
                               enhancement_normalization,
                               gaussian_estimate_kernel, kernel_accuracy_m, kernel_function,
                               kresolvent_kernel, morph_kernel, se2_kernel_estimate)
from src.utils.tessellation import build_tessellation

E_Z = np.array([0.0, 0.0, 1.0])


def test_se2_estimate_at_origin():
    t, d33, d44 = 0.7, 1.0, 0.04
    value = se2_kernel_estimate(0.0, 0.0, 0.0, t, d33, d44)
    assert value == pytest.approx(1.0 / (4.0 * np.pi * t * t * d44 * d33))


def test_half_angle_ratio_series_branch():
    theta = np.array([1e-4, -1e-4])
    exact = (theta / 2.0) / np.tan(theta / 2.0)
    assert np.allclose(_half_angle_ratio(theta), exact, rtol=1e-12)
    edge = np.array([np.pi / 10.0 - 1e-9, np.pi / 10.0 + 1e-9])
    values = _half_angle_ratio(edge)
    assert abs(values[0] - values[1]) < 2e-5


@pytest.mark.parametrize('k', [1, 2, 3])
def test_kresolvent_singularity_order(k):
    z = 2.0 ** -np.arange(4, 11)
    values = kresolvent_kernel(0.0, 0.0, z, 0.0, 0.0, lam=1.0, k=k, d44=0.04)
    slope = np.polyfit(np.log(z), np.log(values), 1)[0]
    assert slope == pytest.approx(k - 5, abs=0.1)


def test_kresolvent_bounded_for_k5_and_causal():
    lam, d44 = 1.0, 0.04
    peak = 3.0 / (4.0 * (d44 * np.pi) ** 2) * lam ** 5 / 24.0
    assert kresolvent_kernel(0.0, 0.0, 1e-6, 0.0, 0.0, lam, 5, d44) == pytest.approx(peak, rel=1e-5)
    behind = kresolvent_kernel(0.0, 0.0, np.array([-1.0, 0.0]), 0.0, 0.0, lam, 2, d44)
    assert np.array_equal(behind, [0.0, 0.0])
    with pytest.raises(ValueError):
        kresolvent_kernel(0.0, 0.0, 1.0, 0.0, 0.0, lam, 0, d44)


def test_gaussian_estimate_kernel():
    t, d33, d44 = 1.0, 1.0, 0.04
    assert gaussian_estimate_kernel(np.zeros(3), E_Z, t, d33, d44) == pytest.approx(
        (1.0 / (4.0 * np.pi * t * t * d33 * d44)) ** 2)
    y = np.array([[0.0, 0.0, z] for z in (0.0, 0.5, 1.0, 2.0)])
    values = gaussian_estimate_kernel(y, np.broadcast_to(E_Z, y.shape), t, d33, d44)
    assert np.all(np.diff(values) < 0.0)


def test_enhancement_kernel_at_the_unity_element():
    t, d33, d44 = 1.0, 1.0, 0.04
    value = enhancement_kernel(0.0, 0.0, 0.0, 0.0, 0.0, t, d33, d44)
    peak = 1.0 / (4.0 * np.pi * t * t * d44 * d33)
    assert value == pytest.approx(enhancement_normalization(t, d33, d44) * peak ** 2)
    assert enhancement_kernel(0.0, 0.0, 0.0, np.pi / 2.0, 0.0, t, d33, d44) == 0.0


def test_kernel_function_dispatch():
    y = np.zeros((1, 3))
    n = E_Z.reshape(1, 3)
    gaussian = kernel_function(KernelSpec(kind='gaussian-estimate'))(y, n)
    assert gaussian[0] == pytest.approx(gaussian_estimate_kernel(y, n, 1.0, 1.0, 0.04)[0])
    completion = kernel_function(KernelSpec(kind='completion-heisenberg-kstep', d33=0.0, k=5))
    assert completion(np.array([[0.0, 0.0, -0.5]]), n)[0] == 0.0
    with pytest.raises(ValueError):
        KernelSpec(kind='mystery')


def test_morph_kernel_is_zero_at_unity_and_non_negative(rng):
    params = MorphParams(d11=0.1, d44=0.4)
    assert morph_kernel(np.zeros(3), E_Z, 0.5, params) == 0.0
    y = rng.normal(size=(200, 3))
    n = rng.normal(size=(200, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    assert np.all(morph_kernel(y, n, 0.5, params) >= 0.0)


def test_morph_kernel_along_the_fiber():
    params = MorphParams(d11=0.1, d44=0.4, eta=1.0)
    value = morph_kernel(np.array([0.0, 0.0, 0.3]), E_Z, 0.5, params)
    assert value == pytest.approx(0.5 * 0.3 / np.sqrt(0.1 * 0.4) / 0.5)


def test_flat_and_instantaneous_kernels():
    flat = MorphParams(d11=0.1, d44=0.4, eta=0.5)
    y = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 10.0]])
    n = np.broadcast_to(E_Z, y.shape)
    assert np.array_equal(morph_kernel(y, n, 0.5, flat), [0.0, np.inf])
    assert np.array_equal(morph_kernel(y, n, 0.0, MorphParams(d11=0.1)), [0.0, np.inf])
    with pytest.raises(ValueError):
        morph_kernel(y, n, 0.5, flat, section='euler')


def test_chart2_section_agrees_on_the_fiber():
    params = MorphParams(d11=0.1, d44=0.4)
    y = np.array([0.0, 0.0, 0.7])
    assert morph_kernel(y, E_Z, 0.5, params, section='chart2') == pytest.approx(
        morph_kernel(y, E_Z, 0.5, params))


def test_kernel_accuracy_on_the_axes():
    axis = np.linspace(-np.pi / 3.0, np.pi / 3.0, 11)
    assert np.allclose(kernel_accuracy_m(axis, 0.0), 1.0, atol=1e-6)
    assert np.allclose(kernel_accuracy_m(0.0, axis), 1.0, atol=1e-6)


@pytest.mark.parametrize('extent, tolerance', [(np.pi / 6.0, 0.05), (np.pi / 4.0, 0.055)])
def test_kernel_accuracy_near_the_unity_element(extent, tolerance):
    grid = np.linspace(-extent, extent, 33)
    beta, gamma = np.meshgrid(grid, grid, indexing='ij')
    m = kernel_accuracy_m(beta, gamma)
    assert np.max(np.abs(m - 1.0)) <= tolerance
    assert np.allclose(m, kernel_accuracy_m(-beta, -gamma), atol=1e-6)


def test_enhancement_kernel_decays_laterally_like_a_laplace_profile():
    t, d33, d44 = 1.0, 1.0, 0.04
    x = np.array([0.0, 1.0, 2.0])
    profile = enhancement_kernel(x, 0.0, 0.0, 0.0, 0.0, t, d33, d44)
    scale = 4.0 * t * np.sqrt(d33 * d44)
    assert np.allclose(profile / profile[0], np.exp(-x / scale), rtol=1e-12)


def test_closed_form_normalization_holds_for_small_angular_diffusion():
    assert enhancement_mass(1.0, 1.0, 0.01) == pytest.approx(1.0, abs=0.2)
    assert enhancement_mass(1.0, 1.0, 0.04) > 1.2


@pytest.mark.slow
def test_normalized_enhancement_kernel_has_unit_mass():
    spec = KernelSpec(d33=1.0, d44=0.04, t=1.0, normalize=True)
    kernel = kernel_function(spec)
    tessellation = build_tessellation(3)
    h, radius = 0.5, 12
    grid = h * np.arange(-radius, radius + 1)
    X, Y = np.meshgrid(grid, grid, indexing='ij')
    n = tessellation.vertices[None, :, :]
    mass = 0.0
    for z in grid:
        y = np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], axis=-1)[:, None, :]
        mass += float(np.sum(kernel(y, n) * tessellation.measures)) * h ** 3
    assert mass == pytest.approx(1.0, abs=0.1)


def test_eta_one_erosion_kernel_is_quadratic_in_the_angle():
    params = MorphParams(d11=0.1, d44=0.4, eta=1.0)
    theta = np.array([0.1, 0.4, 0.8])
    n = np.stack([np.sin(theta), np.zeros(3), np.cos(theta)], axis=-1)
    values = morph_kernel(np.zeros((3, 3)), n, 0.5, params)
    assert np.allclose(values, theta ** 2 / (2.0 * 0.4 * 0.5), rtol=1e-9)
