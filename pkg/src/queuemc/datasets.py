"""Cluster datasets: container format and synthetic generation.

A dataset bundle is the object-store payload every worker reads: per
cluster an observed map, a per-pixel noise map, beam and grid geometry,
and the radial grid the projected profile is evaluated on.

Binary container layout (little-endian): magic ``QMC1``, cluster count as
u32, then per cluster: id length u32 + UTF-8 id, grid size u32, radial
point count u32, pixel_size f64, beam_fwhm f64, r_max f64, radial grid
(f64 each), observed map then noise map (grid_size^2 f64, row-major).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernel
from .errors import WireFormatError

CONTAINER_MAGIC = b"QMC1"

_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")

# Population used by the synthetic generator: a decreasing cubic profile
# with unit central value, p(1) = 0 at the truncation radius.
DEFAULT_POPULATION_MEAN = (1.0, -0.5, -0.5, 0.0)
DEFAULT_POPULATION_STD = 0.05


@dataclass(frozen=True, eq=False)
class ClusterDataset:
    """Observed data and geometry for one cluster."""

    cluster_id: str
    obs_map: np.ndarray
    sigma_map: np.ndarray
    pixel_size: float
    beam_fwhm: float
    r_max: float
    radial_grid: np.ndarray

    def __post_init__(self) -> None:
        obs = np.asarray(self.obs_map, dtype=np.float64)
        sig = np.asarray(self.sigma_map, dtype=np.float64)
        radial = np.asarray(self.radial_grid, dtype=np.float64)
        object.__setattr__(self, "obs_map", obs)
        object.__setattr__(self, "sigma_map", sig)
        object.__setattr__(self, "radial_grid", radial)
        if obs.ndim != 2 or obs.shape[0] != obs.shape[1]:
            raise ValueError("obs_map must be square")
        if obs.shape[0] % 2 != 0:
            raise ValueError("grid size must be even")
        if sig.shape != obs.shape:
            raise ValueError("sigma_map must match obs_map shape")
        if not np.all(sig > 0):
            raise ValueError("sigma_map entries must be positive")
        if self.pixel_size <= 0 or self.beam_fwhm <= 0 or self.r_max <= 0:
            raise ValueError("pixel_size, beam_fwhm and r_max must be positive")
        if radial.ndim != 1 or radial.size < 2:
            raise ValueError("radial_grid must have at least two points")
        if np.any(np.diff(radial) <= 0):
            raise ValueError("radial_grid must be strictly increasing")
        if radial[0] < 0 or radial[-1] > self.r_max:
            raise ValueError("radial_grid must lie in [0, r_max]")

    @property
    def grid_size(self) -> int:
        return self.obs_map.shape[0]

    @property
    def n_radial(self) -> int:
        return self.radial_grid.size


def write_container(datasets: Sequence[ClusterDataset]) -> bytes:
    """Serialize datasets to the binary container format."""
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(_U32.pack(len(datasets)))
    for ds in datasets:
        ident = ds.cluster_id.encode("utf-8")
        buf.write(_U32.pack(len(ident)))
        buf.write(ident)
        buf.write(_U32.pack(ds.grid_size))
        buf.write(_U32.pack(ds.n_radial))
        buf.write(_F64.pack(ds.pixel_size))
        buf.write(_F64.pack(ds.beam_fwhm))
        buf.write(_F64.pack(ds.r_max))
        buf.write(np.ascontiguousarray(ds.radial_grid, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(ds.obs_map, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(ds.sigma_map, dtype="<f8").tobytes())
    return buf.getvalue()


def read_container(data: bytes) -> list[ClusterDataset]:
    """Parse a binary container back into datasets."""
    view = memoryview(data)
    if bytes(view[:4]) != CONTAINER_MAGIC:
        raise WireFormatError("bad container magic")
    off = 4
    try:
        (count,) = _U32.unpack_from(view, off)
        off += 4
        out: list[ClusterDataset] = []
        for _ in range(count):
            (id_len,) = _U32.unpack_from(view, off)
            off += 4
            ident = bytes(view[off:off + id_len]).decode("utf-8")
            off += id_len
            (grid,) = _U32.unpack_from(view, off)
            off += 4
            (n_radial,) = _U32.unpack_from(view, off)
            off += 4
            pixel_size, beam_fwhm, r_max = struct.unpack_from("<ddd", view, off)
            off += 24
            radial = np.frombuffer(view, dtype="<f8", count=n_radial, offset=off).copy()
            off += 8 * n_radial
            obs = np.frombuffer(view, dtype="<f8", count=grid * grid, offset=off)
            obs = obs.reshape(grid, grid).copy()
            off += 8 * grid * grid
            sig = np.frombuffer(view, dtype="<f8", count=grid * grid, offset=off)
            sig = sig.reshape(grid, grid).copy()
            off += 8 * grid * grid
            out.append(ClusterDataset(
                cluster_id=ident, obs_map=obs, sigma_map=sig,
                pixel_size=pixel_size, beam_fwhm=beam_fwhm, r_max=r_max,
                radial_grid=radial))
    except (struct.error, ValueError) as exc:
        raise WireFormatError(f"truncated or invalid container: {exc}") from exc
    if off != len(data):
        raise WireFormatError(f"{len(data) - off} trailing bytes after container")
    return out


def load_container(path) -> list[ClusterDataset]:
    with open(path, "rb") as fh:
        return read_container(fh.read())


def save_container(path, datasets: Sequence[ClusterDataset]) -> None:
    with open(path, "wb") as fh:
        fh.write(write_container(datasets))


def make_synthetic(n_clusters: int, grid_size: int = 64, seed: int = 0, *,
                   n_radial: int | None = None, noise_level: float = 0.05,
                   degree: int = 3, r_max: float = 1.0,
                   population_mean: Sequence[float] | None = None,
                   population_std: float = DEFAULT_POPULATION_STD,
                   n_quad: int = kernel.DEFAULT_N_QUAD,
                   ) -> tuple[list[ClusterDataset], np.ndarray]:
    """Generate clusters with known ground truth.

    Each cluster's true coefficient vector is drawn from a Gaussian
    population around a decreasing cubic profile; the observed map is the
    full forward pipeline at the truth plus Gaussian pixel noise with
    standard deviation ``noise_level`` times the peak model value
    (``noise_level=0`` gives noise-free maps with unit sigma).

    Returns the dataset list and the (n_clusters, degree + 1) truth matrix.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be at least 1")
    if grid_size % 2 != 0:
        raise ValueError("grid_size must be even")
    rng = np.random.default_rng(seed)
    n_coeff = degree + 1
    if population_mean is None:
        mean = np.zeros(n_coeff)
        base = np.asarray(DEFAULT_POPULATION_MEAN)
        mean[: min(n_coeff, base.size)] = base[: min(n_coeff, base.size)]
    else:
        mean = np.asarray(population_mean, dtype=np.float64)
        if mean.size != n_coeff:
            raise ValueError("population_mean length must equal degree + 1")

    # Map half-width 1.2 r_max leaves margin for the beam wings.
    pixel_size = 2.4 * r_max / grid_size
    beam_fwhm = 3.0 * pixel_size
    m = n_radial if n_radial is not None else 2 * grid_size
    radial_grid = np.linspace(0.0, 0.97 * r_max, m)

    truths = mean[None, :] + population_std * rng.standard_normal((n_clusters, n_coeff))
    datasets: list[ClusterDataset] = []
    for c in range(n_clusters):
        geometry = dict(pixel_size=pixel_size, beam_fwhm=beam_fwhm, r_max=r_max,
                        radial_grid=radial_grid)
        probe = _model_map(truths[c], grid_size, n_quad=n_quad, **geometry)
        peak = float(np.max(np.abs(probe)))
        if noise_level > 0 and peak > 0:
            sigma = np.full_like(probe, noise_level * peak)
            obs = probe + sigma * rng.standard_normal(probe.shape)
        else:
            sigma = np.ones_like(probe)
            obs = probe
        datasets.append(ClusterDataset(
            cluster_id=f"synth-{seed:04d}-{c:04d}", obs_map=obs, sigma_map=sigma,
            **geometry))
    return datasets, truths


def _model_map(theta, grid_size, *, pixel_size, beam_fwhm, r_max, radial_grid, n_quad):
    params = kernel.ProfileParams(theta=theta, r_max=r_max)
    projected = kernel.forward_abel(params, radial_grid, n_quad=n_quad)
    image = kernel.project_to_map(radial_grid, projected, grid_size, pixel_size)
    return kernel.convolve_beam(image, beam_fwhm, pixel_size)
