import numpy as np
import pytest

from src.generators.diffusion import DiffusionEvolution, stability_dt
from src.models.errors import AllZeroCoefficients, UnstableStep
from src.models.field import OrientationField
from src.models.params import DiffusionParams
from src.utils.tessellation import build_tessellation


def test_stability_bound_examples():
    assert stability_dt(DiffusionParams(d11=0.0, d33=1.0, d44=0.0), 1.0, 0.3) == pytest.approx(0.5)
    bound = stability_dt(DiffusionParams(d11=0.04, d33=1.0, d44=0.04), 1.0, 0.4)
    assert bound == pytest.approx(1.0 / 3.16)
    with pytest.raises(AllZeroCoefficients):
        stability_dt(DiffusionParams(d11=0.0, d33=0.0, d44=0.0), 1.0, 0.3)


def test_zero_time_leaves_field_unchanged(random_field):
    evolution = DiffusionEvolution(DiffusionParams(t=0.0), progress=False)
    assert np.array_equal(evolution.run_enhancement(random_field).data, random_field.data)


def test_unstable_step_is_rejected(random_field):
    evolution = DiffusionEvolution(DiffusionParams(dt=10.0), progress=False)
    with pytest.raises(UnstableStep):
        evolution.run_enhancement(random_field)


def test_time_step_divides_horizon(random_field):
    evolution = DiffusionEvolution(DiffusionParams(t=1.0, dt=0.1), progress=False)
    dt, steps = evolution.time_step(random_field, 1.0, convection=False)
    assert (dt, steps) == (0.1, 10)
    dt, steps = evolution.time_step(random_field, 0.95, convection=False)
    assert steps == 10 and dt == pytest.approx(0.095)


def test_max_principle_and_mass_conservation(tess1, rng):
    U = OrientationField(rng.uniform(0.0, 1.0, size=(4, 4, 4, tess1.n_vertices)), 1.0, tess1)
    params = DiffusionParams(d11=0.04, d33=1.0, d44=0.04, boundary='periodic')
    evolution = DiffusionEvolution(params, progress=False)
    dt = evolution.stable_dt(U, convection=False)
    Q = evolution.generator(U, convection=False)
    mass0 = U.mass()
    previous_max, previous_min = U.data.max(), U.data.min()
    for w in evolution.trajectory(U, Q, dt, 200):
        assert w.max() <= previous_max + 1e-12
        assert w.min() >= previous_min - 1e-12
        previous_max, previous_min = w.max(), w.min()
    assert abs(U.with_data(w).mass() - mass0) <= 1e-10 * mass0


def test_semigroup_property(random_field):
    params = DiffusionParams(d33=1.0, d44=0.04, t=0.4, dt=0.05)
    whole = DiffusionEvolution(params, progress=False).run_enhancement(random_field)
    half = DiffusionEvolution(DiffusionParams(d33=1.0, d44=0.04, t=0.2, dt=0.05), progress=False)
    twice = half.run_enhancement(half.run_enhancement(random_field))
    assert np.array_equal(whole.data, twice.data)


def test_completion_transports_along_the_fiber(tess0):
    data = np.zeros((3, 3, 16, 12))
    data[1, 1, 2, 0] = 1.0
    U = OrientationField(data, 1.0, tess0)
    params = DiffusionParams(d11=0.0, d33=0.0, d44=0.0, a3=1.0, t=5.0)
    W = DiffusionEvolution(params, progress=False).run_completion(U)
    profile = W.data[1, 1, :, 0]
    assert profile.sum() == pytest.approx(1.0, abs=1e-12)
    centroid = (np.arange(16) * profile).sum() / profile.sum()
    assert centroid == pytest.approx(7.0, abs=1e-12)
    assert np.all(W.data[..., 1:] == 0.0)


def test_completion_needs_convection(random_field):
    with pytest.raises(ValueError):
        DiffusionEvolution(DiffusionParams(a3=0.0), progress=False).run_completion(random_field)


def test_resolvent_matches_direct_solve(random_field):
    params = DiffusionParams(d33=1.0, d44=0.04, a3=0.5, dt=0.005, boundary='periodic')
    evolution = DiffusionEvolution(params, progress=False)
    iterative = evolution.resolvent(random_field, 1.0)
    direct = evolution.resolvent_direct(random_field, 1.0)
    error = np.max(np.abs(iterative.data - direct.data)) / np.max(np.abs(direct.data))
    assert error <= 1e-2
    assert iterative.mass() == pytest.approx(random_field.mass(), rel=1e-6)


def test_gamma_weighted_matches_k_step(random_field):
    params = DiffusionParams(d33=1.0, d44=0.04, a3=0.5, dt=0.005)
    evolution = DiffusionEvolution(params, progress=False)
    k_step = evolution.k_step(random_field, 1.0, 2)
    weighted = evolution.gamma_weighted(random_field, 1.0, 2)
    error = np.max(np.abs(k_step.data - weighted.data)) / np.max(np.abs(k_step.data))
    assert error <= 1e-2


@pytest.mark.slow
def test_k_step_completion_fills_a_gap():
    tess = build_tessellation(1)
    up = int(tess.nearest_vertex(np.array([0.0, 0.0, 1.0])))
    down = int(tess.nearest_vertex(np.array([0.0, 0.0, -1.0])))
    data = np.zeros((9, 9, 9, tess.n_vertices))
    data[4, 4, 2, up] = 1.0
    data[4, 4, 6, down] = 1.0
    U = OrientationField(data, 1.0, tess)
    evolution = DiffusionEvolution(DiffusionParams(d33=0.0, d44=0.005, a3=1.0), progress=False)
    for k in (2, 3):
        W = evolution.k_step(U, k / 4.0, k)
        voxel_max = W.data.max(axis=3)
        assert voxel_max[4, 4, 4] > 0.0
        assert voxel_max[4, 4, 4] >= 10.0 * np.median(voxel_max)


def test_perona_malik_with_huge_contrast_is_linear(random_field):
    linear = DiffusionEvolution(DiffusionParams(d33=1.0, d44=0.04, t=0.2), progress=False)
    adaptive = DiffusionEvolution(DiffusionParams(d33=1.0, d44=0.04, t=0.2, contrast=1e6), progress=False)
    a = linear.run_enhancement(random_field).data
    b = adaptive.run_perona_malik(random_field).data
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(a))


def test_perona_malik_needs_contrast(random_field):
    with pytest.raises(ValueError):
        DiffusionEvolution(DiffusionParams(), progress=False).run_perona_malik(random_field)


def test_paired_coefficients_follow_their_partners():
    params = DiffusionParams(d11=0.2, d44=0.03)
    assert (params.d22, params.d55) == (0.2, 0.03)


def test_perona_malik_blocks_flux_across_an_edge(tess1):
    data = np.zeros((4, 4, 8, tess1.n_vertices))
    data[:, :, :4] = 1.0
    U = OrientationField(data, 1.0, tess1)

    def transported(W):
        return float(np.sum(W.data[:, :, 4:] * tess1.measures))

    params = DiffusionParams(d33=1.0, d44=0.015, t=1.0)
    linear = transported(DiffusionEvolution(params, progress=False).run_enhancement(U))
    params = DiffusionParams(d33=1.0, d44=0.015, t=1.0, contrast=0.05)
    adaptive = transported(DiffusionEvolution(params, progress=False).run_perona_malik(U))
    assert linear > 0.1
    assert linear >= 5.0 * abs(adaptive)


def _half_turn_about_y(U):
    tessellation = U.tessellation
    image = tessellation.vertices * np.array([-1.0, 1.0, -1.0])
    permutation = tessellation.nearest_vertex(image)
    assert np.allclose(tessellation.vertices[permutation], image, atol=1e-9)
    return U.with_data(U.data[::-1, :, ::-1][..., permutation])


@pytest.mark.parametrize('d44, tolerance', [(0.0, 1e-10), (0.04, 0.02)])
def test_enhancement_commutes_with_a_half_turn(d44, tolerance):
    tessellation = build_tessellation(2)
    shape = (5, 5, 5)
    grid = np.stack(np.meshgrid(*(np.arange(s) for s in shape), indexing='ij'), axis=-1)
    spatial = np.exp(-np.sum((grid - np.array([1.5, 2.0, 2.5])) ** 2, axis=-1) / 4.0)
    axis = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])
    U = OrientationField(spatial[..., None] * (1.0 + (tessellation.vertices @ axis) ** 2), 1.0, tessellation)
    evolution = DiffusionEvolution(DiffusionParams(d33=1.0, d44=d44, t=0.2, dt=0.1), progress=False)
    rotated_first = evolution.run_enhancement(_half_turn_about_y(U)).data
    rotated_last = _half_turn_about_y(evolution.run_enhancement(U)).data
    assert np.max(np.abs(rotated_first - rotated_last)) <= tolerance * np.max(np.abs(rotated_last))
