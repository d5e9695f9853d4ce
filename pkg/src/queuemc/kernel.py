"""Galaxy-cluster likelihood pipeline.

The expensive model-vs-data evaluation at the heart of each sampler step,
in five stages per cluster: a clamped polynomial radial pressure profile,
a line-of-sight projection (forward Abel transform), interpolation of the
projected profile onto a square pixel grid, smoothing with the instrument
beam via FFT convolution, and a chi-square comparison against the observed
map. The per-cluster contributions are summed in list order so the total
is bit-reproducible across backends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ClusterEvalError, InvalidGridError, ShapeMismatchError

DEFAULT_N_QUAD = 512

_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class ProfileParams:
    """Coefficients of the radial profile p(r).

    p(r) = max(0, sum_k theta[k] * (r / r_max)**k) on [0, r_max] and 0
    beyond, so the profile is non-negative with compact support. theta has
    degree + 1 entries (default cubic).
    """

    theta: np.ndarray
    r_max: float

    def __post_init__(self) -> None:
        theta = np.atleast_1d(np.asarray(self.theta, dtype=np.float64))
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1 or theta.size == 0:
            raise ValueError("theta must be a non-empty vector")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")


def eval_profile(params: ProfileParams, radii: np.ndarray) -> np.ndarray:
    """Evaluate the clamped polynomial profile at the given radii.

    Horner evaluation with a fixed coefficient order keeps the arithmetic
    identical across platforms and call sites.
    """
    r = np.asarray(radii, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("radii must be non-negative")
    x = r / params.r_max
    acc = np.full_like(x, params.theta[-1])
    for k in range(params.theta.size - 2, -1, -1):
        acc = acc * x + params.theta[k]
    acc = np.maximum(acc, 0.0)
    return np.where(r <= params.r_max, acc, 0.0)


def abel_project(profile: Callable[[np.ndarray], np.ndarray], r_max: float,
                 y_grid: np.ndarray, n_quad: int) -> np.ndarray:
    """Forward Abel transform of an arbitrary radial function.

    Computes F(y) = 2 * integral_y^r_max profile(r) r dr / sqrt(r^2 - y^2).
    The substitution r = sqrt(y^2 + t^2) removes the inverse-square-root
    endpoint singularity exactly, leaving
    F(y) = 2 * integral_0^sqrt(r_max^2 - y^2) profile(sqrt(y^2 + t^2)) dt,
    which is evaluated with composite Simpson quadrature on n_quad
    intervals (forced even).

    Parameters
    ----------
    profile : callable mapping radii to values, vectorized.
    r_max : truncation radius of the integrand.
    y_grid : strictly increasing projected radii in [0, r_max).
    n_quad : number of Simpson intervals, at least 16.
    """
    y = np.asarray(y_grid, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise InvalidGridError("y_grid must be a non-empty vector")
    if np.any(np.diff(y) <= 0):
        raise InvalidGridError("y_grid must be strictly increasing")
    if y[0] < 0:
        raise InvalidGridError("y_grid must be non-negative")
    if y[-1] >= r_max:
        raise InvalidGridError(f"y_grid reaches {y[-1]}, beyond support r_max={r_max}")
    if n_quad < 16:
        raise ValueError("n_quad must be at least 16")
    n = n_quad + (n_quad % 2)

    t_upper = np.sqrt(r_max * r_max - y * y)
    # Nodes per y value: shape (len(y), n + 1).
    frac = np.linspace(0.0, 1.0, n + 1)
    t = t_upper[:, None] * frac[None, :]
    r = np.sqrt(y[:, None] ** 2 + t ** 2)
    # Guard rounding: t <= t_upper implies r <= r_max mathematically.
    np.minimum(r, r_max, out=r)
    f = profile(r)

    h = t_upper / n
    weights = np.ones(n + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    integral = (h / 3.0) * (f @ weights)
    return 2.0 * integral


def forward_abel(params: ProfileParams, y_grid: np.ndarray,
                 n_quad: int = DEFAULT_N_QUAD) -> np.ndarray:
    """Forward Abel transform of the polynomial profile on ``y_grid``."""
    return abel_project(lambda r: eval_profile(params, r), params.r_max, y_grid, n_quad)


def project_to_map(radial_grid: np.ndarray, values: np.ndarray,
                   grid_size: int, pixel_size: float) -> np.ndarray:
    """Expand a radial function to a square map by linear interpolation.

    Pixel (i, j) takes the value of the radial function at
    rho = pixel_size * sqrt((i - c)^2 + (j - c)^2) with c = (grid_size - 1) / 2.
    Radii beyond the last grid point map to 0; radii inside the first grid
    point clamp to the first value.
    """
    if grid_size % 2 != 0:
        raise ValueError("grid_size must be even")
    radial = np.asarray(radial_grid, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if radial.shape != vals.shape:
        raise ShapeMismatchError("radial_grid and values must have the same length")
    c = (grid_size - 1) / 2.0
    idx = np.arange(grid_size, dtype=np.float64) - c
    rho = pixel_size * np.sqrt(idx[:, None] ** 2 + idx[None, :] ** 2)
    return np.interp(rho, radial, vals, right=0.0)


def gaussian_beam_kernel(grid_size: int, beam_fwhm: float, pixel_size: float) -> np.ndarray:
    """Unit-sum 2D Gaussian kernel sampled on the map grid, centered at
    (grid_size/2, grid_size/2)."""
    if beam_fwhm <= 0:
        raise ValueError("beam_fwhm must be positive")
    sigma_pix = beam_fwhm * _FWHM_TO_SIGMA / pixel_size
    center = grid_size // 2
    idx = np.arange(grid_size, dtype=np.float64) - center
    d2 = idx[:, None] ** 2 + idx[None, :] ** 2
    kern = np.exp(-0.5 * d2 / (sigma_pix * sigma_pix))
    return kern / kern.sum()


def convolve_beam(image: np.ndarray, beam_fwhm: float, pixel_size: float) -> np.ndarray:
    """Smooth a map with the instrument beam.

    Linear (not circular) convolution with a unit-sum Gaussian kernel of
    the given FWHM: both operands are zero-padded to twice the map size,
    multiplied in Fourier space, and the centered region is cropped back
    out.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ShapeMismatchError("image must be a square matrix")
    g = img.shape[0]
    kern = gaussian_beam_kernel(g, beam_fwhm, pixel_size)
    size = 2 * g
    fa = np.fft.rfft2(img, s=(size, size))
    fb = np.fft.rfft2(kern, s=(size, size))
    full = np.fft.irfft2(fa * fb, s=(size, size))
    half = g // 2
    return full[half:half + g, half:half + g]


def chi_square(model: np.ndarray, obs_map: np.ndarray, sigma_map: np.ndarray) -> float:
    """Sum of squared noise-weighted residuals over all pixels."""
    model = np.asarray(model, dtype=np.float64)
    if model.shape != obs_map.shape or model.shape != sigma_map.shape:
        raise ShapeMismatchError(
            f"shape mismatch: model {model.shape}, obs {obs_map.shape}, sigma {sigma_map.shape}")
    resid = (obs_map - model) / sigma_map
    return float(np.sum(resid * resid))


def cluster_model_map(theta: np.ndarray, dataset, n_quad: int = DEFAULT_N_QUAD) -> np.ndarray:
    """Run stages one to four for a single cluster: profile, projection,
    map expansion, beam smoothing."""
    params = ProfileParams(theta=np.asarray(theta, dtype=np.float64), r_max=dataset.r_max)
    projected = forward_abel(params, dataset.radial_grid, n_quad=n_quad)
    image = project_to_map(dataset.radial_grid, projected,
                           dataset.grid_size, dataset.pixel_size)
    return convolve_beam(image, dataset.beam_fwhm, dataset.pixel_size)


def cluster_log_likelihood(theta: np.ndarray, dataset,
                           n_quad: int = DEFAULT_N_QUAD) -> float:
    """-chi^2 / 2 for one cluster."""
    model = cluster_model_map(theta, dataset, n_quad=n_quad)
    return -0.5 * chi_square(model, dataset.obs_map, dataset.sigma_map)


def evaluate(thetas: np.ndarray, datasets: Sequence, n_quad: int = DEFAULT_N_QUAD) -> float:
    """Joint data log-likelihood over all clusters.

    Parameters
    ----------
    thetas : array of shape (n_clusters, n_coefficients), one parameter row
        per cluster, matched to ``datasets`` by position.
    datasets : sequence of ClusterDataset.

    Cluster contributions are accumulated in list order; a failure inside
    one cluster raises :class:`ClusterEvalError` naming it.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2:
        raise ValueError("thetas must be a 2-d array (clusters x coefficients)")
    if len(datasets) < 1:
        raise ValueError("at least one cluster dataset is required")
    if thetas.shape[0] != len(datasets):
        raise ValueError(
            f"{thetas.shape[0]} parameter rows for {len(datasets)} datasets")
    total = 0.0
    for row, ds in zip(thetas, datasets):
        try:
            total += cluster_log_likelihood(row, ds, n_quad=n_quad)
        except Exception as exc:
            raise ClusterEvalError(ds.cluster_id, exc) from exc
    return total


@dataclass(frozen=True)
class HierarchicalParams:
    """Population-level location and log-scale for the per-cluster coefficients."""

    mu: np.ndarray
    log_s: np.ndarray

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        log_s = np.atleast_1d(np.asarray(self.log_s, dtype=np.float64))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_s", log_s)
        if mu.shape != log_s.shape:
            raise ValueError("mu and log_s must have the same length")

    @property
    def s(self) -> np.ndarray:
        return np.exp(self.log_s)


def split_position(position: np.ndarray, n_clusters: int) -> tuple[np.ndarray, HierarchicalParams]:
    """Split a flat sampler position into per-cluster rows and hyperparameters.

    Layout: n_clusters * k cluster coefficients, then k population means,
    then k population log-scales, where k divides the length accordingly.
    """
    position = np.asarray(position, dtype=np.float64)
    if position.size % (n_clusters + 2) != 0:
        raise ValueError(
            f"position length {position.size} does not factor as "
            f"(n_clusters + 2) * k with n_clusters={n_clusters}")
    k = position.size // (n_clusters + 2)
    thetas = position[: n_clusters * k].reshape(n_clusters, k)
    mu = position[n_clusters * k: (n_clusters + 1) * k]
    log_s = position[(n_clusters + 1) * k:]
    return thetas, HierarchicalParams(mu=mu, log_s=log_s)


def hierarchical_log_prior(position: np.ndarray, n_clusters: int) -> float:
    """Two-level Gaussian prior on a flat position vector.

    Per-cluster coefficients are Gaussian around the population mean with
    per-coefficient scale s = exp(log_s); the mean carries a flat prior and
    log_s a standard normal one. Normalization constants independent of the
    parameters are dropped.
    """
    thetas, hyper = split_position(position, n_clusters)
    s = hyper.s
    resid = (thetas - hyper.mu[None, :]) / s[None, :]
    level_two = -0.5 * float(np.sum(resid * resid)) - n_clusters * float(np.sum(hyper.log_s))
    hyper_prior = -0.5 * float(np.sum(hyper.log_s ** 2))
    return level_two + hyper_prior
