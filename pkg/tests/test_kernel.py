import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queuemc.datasets import make_synthetic
from queuemc.errors import ClusterEvalError, InvalidGridError, ShapeMismatchError
from queuemc.kernel import (ProfileParams, abel_project, chi_square,
                            cluster_log_likelihood, convolve_beam, eval_profile,
                            evaluate, forward_abel, gaussian_beam_kernel,
                            hierarchical_log_prior, project_to_map,
                            split_position)

# ---------------------------------------------------------------- profile


def test_constant_profile():
    p = ProfileParams(theta=(1.0, 0.0, 0.0, 0.0), r_max=2.0)
    assert eval_profile(p, np.array([1.0])) == pytest.approx(1.0, abs=0)


def test_negative_polynomial_clamped_to_zero():
    p = ProfileParams(theta=(0.0, -1.0, 0.0, 0.0), r_max=1.0)
    r = np.linspace(0.01, 1.0, 25)
    assert np.all(eval_profile(p, r) == 0.0)


def test_linear_profile_hand_value():
    # p(r) = 1 - r/r_max at r = 0.25 r_max is 0.75
    p = ProfileParams(theta=(1.0, -1.0, 0.0, 0.0), r_max=4.0)
    assert eval_profile(p, np.array([1.0]))[0] == pytest.approx(0.75, rel=1e-15)


def test_profile_zero_beyond_support():
    p = ProfileParams(theta=(1.0, 1.0, 1.0, 1.0), r_max=1.0)
    assert np.all(eval_profile(p, np.array([1.0 + 1e-12, 5.0])) == 0.0)


def test_profile_rejects_negative_radius():
    p = ProfileParams(theta=(1.0,), r_max=1.0)
    with pytest.raises(ValueError):
        eval_profile(p, np.array([-0.1]))


# ---------------------------------------------------------------- Abel


def test_abel_zero_profile():
    p = ProfileParams(theta=(0.0, 0.0), r_max=1.0)
    y = np.linspace(0.0, 0.9, 10)
    assert np.all(forward_abel(p, y, n_quad=64) == 0.0)


def test_abel_constant_profile_closed_form():
    # p = 1 on [0, R] projects to 2 sqrt(R^2 - y^2).
    r_cap = 1.5
    p = ProfileParams(theta=(1.0, 0.0, 0.0, 0.0), r_max=r_cap)
    y = np.linspace(0.0, 0.99 * r_cap, 40)
    expected = 2.0 * np.sqrt(r_cap ** 2 - y ** 2)
    got = forward_abel(p, y, n_quad=1024)
    assert np.max(np.abs(got - expected)) < 1e-6
    assert got[0] == pytest.approx(2.0 * r_cap, abs=1e-9)


def test_abel_gaussian_analytic_pair():
    # exp(-r^2) projects to sqrt(pi) exp(-y^2); truncation at r=8 is negligible.
    y = np.array([0.0, 0.5, 1.0])
    got = abel_project(lambda r: np.exp(-r * r), 8.0, y, n_quad=1024)
    expected = math.sqrt(math.pi) * np.exp(-y * y)
    rel = np.abs(got - expected) / expected
    assert np.max(rel) < 1e-3


def test_abel_rejects_grid_at_or_beyond_support():
    p = ProfileParams(theta=(1.0,), r_max=1.0)
    with pytest.raises(InvalidGridError):
        forward_abel(p, np.array([0.0, 1.0]), n_quad=64)
    with pytest.raises(InvalidGridError):
        forward_abel(p, np.array([0.5, 0.4]), n_quad=64)
    with pytest.raises(InvalidGridError):
        forward_abel(p, np.array([-0.1, 0.4]), n_quad=64)


def test_abel_rejects_tiny_quadrature():
    p = ProfileParams(theta=(1.0,), r_max=1.0)
    with pytest.raises(ValueError):
        forward_abel(p, np.array([0.0, 0.5]), n_quad=8)


coeff = st.floats(min_value=0.0, max_value=2.0, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(t1=st.tuples(coeff, coeff, coeff), t2=st.tuples(coeff, coeff, coeff),
       a=st.floats(min_value=0.0, max_value=3.0),
       b=st.floats(min_value=0.0, max_value=3.0))
def test_abel_linearity_on_clamp_free_profiles(t1, t2, a, b):
    # Non-negative coefficients keep the clamp inactive, where the
    # transform is linear in the profile.
    y = np.linspace(0.0, 0.9, 12)
    p1 = ProfileParams(theta=t1, r_max=1.0)
    p2 = ProfileParams(theta=t2, r_max=1.0)
    combined = ProfileParams(theta=a * np.asarray(t1) + b * np.asarray(t2), r_max=1.0)
    f_comb = forward_abel(combined, y, n_quad=128)
    f_sum = a * forward_abel(p1, y, n_quad=128) + b * forward_abel(p2, y, n_quad=128)
    assert np.allclose(f_comb, f_sum, rtol=1e-12, atol=1e-12)


def test_abel_zero_beyond_profile_support():
    # p(r) = max(0, 1 - 2 r/r_max) vanishes for r >= r_max/2, so the
    # projection is exactly zero there too.
    p = ProfileParams(theta=(1.0, -2.0, 0.0, 0.0), r_max=1.0)
    y = np.array([0.5, 0.7, 0.95])
    assert np.all(forward_abel(p, y, n_quad=256) == 0.0)


# ---------------------------------------------------------------- projection


def test_project_constant_field_full_coverage():
    grid = np.linspace(0.0, 1.2, 30)
    values = np.ones_like(grid)
    image = project_to_map(grid, values, grid_size=16, pixel_size=0.1)
    # max rho = 0.1 * hypot(7.5, 7.5) ~ 1.06 < 1.2, fully covered
    assert np.allclose(image, 1.0, atol=0)


def test_project_zero_beyond_radial_grid():
    grid = np.linspace(0.0, 0.2, 10)
    values = np.ones_like(grid)
    image = project_to_map(grid, values, grid_size=16, pixel_size=0.1)
    center = (16 - 1) / 2.0
    idx = np.arange(16) - center
    rho = 0.1 * np.hypot(idx[:, None], idx[None, :])
    assert np.all(image[rho > 0.2] == 0.0)
    assert np.all(image[rho <= 0.2] == 1.0)


def test_project_point_symmetry():
    rng = np.random.default_rng(3)
    grid = np.linspace(0.0, 5.0, 40)
    values = rng.random(40)
    image = project_to_map(grid, values, grid_size=12, pixel_size=0.3)
    assert np.array_equal(image, image[::-1, ::-1])


def test_project_linear_field_hand_picked_pixels():
    slope = 3.0
    grid = np.linspace(0.0, 10.0, 51)
    values = slope * grid
    g, pixel = 8, 0.5
    image = project_to_map(grid, values, grid_size=g, pixel_size=pixel)
    c = (g - 1) / 2.0
    for i, j in [(0, 0), (3, 4), (7, 7), (2, 5), (4, 4)]:
        rho = pixel * math.hypot(i - c, j - c)
        assert image[i, j] == pytest.approx(slope * rho, rel=1e-12)


def test_project_requires_even_grid():
    with pytest.raises(ValueError):
        project_to_map(np.array([0.0, 1.0]), np.array([1.0, 1.0]),
                       grid_size=7, pixel_size=1.0)


# ---------------------------------------------------------------- convolution


def direct_convolve(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Spatial-domain oracle: explicit shift-and-add linear convolution,
    cropped to the same centered region as the FFT path."""
    g = img.shape[0]
    half = g // 2
    pad = g
    padded = np.zeros((g + 2 * pad, g + 2 * pad))
    padded[pad:pad + g, pad:pad + g] = img
    out = np.zeros((g, g))
    for u in range(g):
        for v in range(g):
            w = kern[u, v]
            r0 = pad + half - u
            c0 = pad + half - v
            out += w * padded[r0:r0 + g, c0:c0 + g]
    return out


def test_convolve_delta_kernel_is_identity():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((16, 16))
    out = convolve_beam(img, beam_fwhm=0.01, pixel_size=1.0)
    assert np.max(np.abs(out - img)) < 1e-6


def test_convolve_constant_map_near_delta_kernel():
    img = np.full((16, 16), 2.5)
    out = convolve_beam(img, beam_fwhm=0.2, pixel_size=1.0)
    assert np.max(np.abs(out - 2.5)) < 1e-10


def test_convolve_constant_map_interior_with_wide_kernel():
    # Zero padding starves edge pixels, so the constant is only preserved
    # away from the border: with fwhm 2 px an 8 px margin is ample.
    img = np.ones((32, 32))
    out = convolve_beam(img, beam_fwhm=2.0, pixel_size=1.0)
    interior = out[8:-8, 8:-8]
    assert np.max(np.abs(interior - 1.0)) < 1e-10
    assert out[0, 0] < 1.0  # edge deficit is real


def test_convolve_preserves_sum_of_compact_map():
    # A centrally supported map loses no mass to the crop.
    grid = np.linspace(0.0, 5.0, 30)
    values = np.maximum(0.0, 1.0 - grid / 5.0)
    img = project_to_map(grid, values, grid_size=32, pixel_size=1.0)
    out = convolve_beam(img, beam_fwhm=2.0, pixel_size=1.0)
    assert out.sum() == pytest.approx(img.sum(), rel=1e-8)


def test_beam_kernel_unit_sum_and_fwhm():
    kern = gaussian_beam_kernel(64, beam_fwhm=4.0, pixel_size=1.0)
    assert kern.sum() == pytest.approx(1.0, rel=1e-12)
    # Half maximum at half the FWHM from the center.
    center = kern[32, 32]
    assert kern[32, 34] == pytest.approx(center / 2.0, rel=1e-12)


@pytest.mark.parametrize("fwhm", [1.5, 3.0])
def test_convolve_matches_direct_oracle(fwhm):
    rng = np.random.default_rng(42)
    img = rng.standard_normal((16, 16))
    kern = gaussian_beam_kernel(16, beam_fwhm=fwhm, pixel_size=1.0)
    fft_out = convolve_beam(img, beam_fwhm=fwhm, pixel_size=1.0)
    direct = direct_convolve(img, kern)
    assert np.max(np.abs(fft_out - direct)) < 1e-10


# ---------------------------------------------------------------- chi-square


def test_chi_square_perfect_fit():
    obs = np.arange(16.0).reshape(4, 4)
    sigma = np.ones((4, 4))
    assert chi_square(obs, obs, sigma) == 0.0


def test_chi_square_single_pixel():
    assert chi_square(np.array([[1.0]]), np.array([[2.0]]), np.array([[1.0]])) == 1.0


def test_chi_square_matches_scalar_loop():
    rng = np.random.default_rng(7)
    model = rng.standard_normal((4, 4))
    obs = rng.standard_normal((4, 4))
    sigma = 0.5 + rng.random((4, 4))
    expected = 0.0
    for i in range(4):
        for j in range(4):
            expected += ((obs[i, j] - model[i, j]) / sigma[i, j]) ** 2
    assert chi_square(model, obs, sigma) == pytest.approx(expected, rel=1e-12)


def test_chi_square_scale_invariance():
    rng = np.random.default_rng(8)
    model = rng.standard_normal((6, 6))
    obs = rng.standard_normal((6, 6))
    sigma = 0.5 + rng.random((6, 6))
    base = chi_square(model, obs, sigma)
    scaled = chi_square(3.7 * model, 3.7 * obs, 3.7 * sigma)
    assert scaled == pytest.approx(base, rel=1e-12)


def test_chi_square_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        chi_square(np.zeros((2, 2)), np.zeros((3, 3)), np.ones((3, 3)))


# ---------------------------------------------------------------- evaluate


def test_evaluate_perfect_fit_zero_noise():
    datasets, truths = make_synthetic(1, grid_size=32, seed=5, noise_level=0.0)
    assert evaluate(truths, datasets) == 0.0


def test_evaluate_additive_over_clusters():
    datasets, truths = make_synthetic(2, grid_size=32, seed=6, noise_level=0.05)
    both = evaluate(truths, datasets)
    first = evaluate(truths[:1], datasets[:1])
    second = evaluate(truths[1:], datasets[1:])
    assert both == first + second  # fixed summation order, exact


def test_evaluate_attaches_cluster_id_on_failure():
    datasets, truths = make_synthetic(2, grid_size=32, seed=6)
    ref = datasets[1]
    # Radial grid touching r_max is a valid dataset but an invalid
    # projection grid, so this cluster fails mid-pipeline.
    grid = np.linspace(0.0, ref.r_max, ref.n_radial)
    broken = ref.__class__(
        cluster_id="broken", obs_map=ref.obs_map, sigma_map=ref.sigma_map,
        pixel_size=ref.pixel_size, beam_fwhm=ref.beam_fwhm, r_max=ref.r_max,
        radial_grid=grid)
    with pytest.raises(ClusterEvalError) as err:
        evaluate(truths, [datasets[0], broken])
    assert err.value.cluster_id == "broken"


def test_evaluate_shape_checks():
    datasets, truths = make_synthetic(1, grid_size=32, seed=6)
    with pytest.raises(ValueError):
        evaluate(truths[0], datasets)  # 1-d thetas
    with pytest.raises(ValueError):
        evaluate(truths, [])


def test_single_cluster_loglik_is_half_chi_square():
    datasets, truths = make_synthetic(1, grid_size=32, seed=9, noise_level=0.1)
    ll = cluster_log_likelihood(truths[0], datasets[0])
    assert ll <= 0.0
    assert evaluate(truths, datasets) == ll


def test_evaluate_200_clusters_runtime_reported():
    datasets, truths = make_synthetic(200, grid_size=128, n_radial=256, seed=11,
                                      noise_level=0.05)
    t0 = time.perf_counter()
    value = evaluate(truths, datasets, n_quad=512)
    elapsed = time.perf_counter() - t0
    print(f"\n200-cluster evaluation: {elapsed:.2f} s, log-likelihood {value:.1f}")
    assert math.isfinite(value)
    assert elapsed < 100.0


# ---------------------------------------------------------------- hierarchy


def test_split_position_layout():
    position = np.arange(8.0)
    thetas, hyper = split_position(position, n_clusters=2)
    assert thetas.shape == (2, 2)
    assert np.array_equal(thetas, [[0.0, 1.0], [2.0, 3.0]])
    assert np.array_equal(hyper.mu, [4.0, 5.0])
    assert np.array_equal(hyper.log_s, [6.0, 7.0])
    assert np.allclose(hyper.s, np.exp([6.0, 7.0]))


def test_hierarchical_prior_matches_scalar_formula():
    theta = np.array([[1.0, 2.0]])
    mu = np.array([0.5, 1.0])
    log_s = np.array([0.0, math.log(2.0)])
    position = np.concatenate([theta.ravel(), mu, log_s])
    expected = 0.0
    for c in range(1):
        for k in range(2):
            s = math.exp(log_s[k])
            expected += -((theta[c, k] - mu[k]) ** 2) / (2 * s * s) - log_s[k]
    expected += -0.5 * float(np.sum(log_s ** 2))
    assert hierarchical_log_prior(position, n_clusters=1) == pytest.approx(
        expected, rel=1e-14)


def test_hierarchical_prior_rejects_bad_length():
    with pytest.raises(ValueError):
        hierarchical_log_prior(np.zeros(7), n_clusters=2)
