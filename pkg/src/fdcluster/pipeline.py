"""End-to-end orchestration and I/O for volumetric time-series clustering.

Ingests a volume of voxel time series, detrends and filters each series to
basis coefficients, z-scores the coefficient columns, sweeps trimmed
k-means over the candidate cluster counts, calibrates the selection rule
from the sweep, allocates every voxel, and exports label volumes, mean
functions, and slice images.

File formats (little-endian throughout):

* CIVT volume: magic ``CIVT``, u32 version=1, u32 nx, ny, nz, m,
  f64 t_lo, t_hi, then n*m float32 intensities, voxel-major with x
  fastest and time contiguous per voxel.
* CIVL labels: magic ``CIVL``, u32 version=1, u32 nx, ny, nz, u32 k,
  then n records of (u16 label, u8 trimmed).
* Volume CSV: header ``x,y,z,t1..tm``, one row per voxel.
* Label CSV: header ``x,y,z,label,trimmed`` in x-fastest order.
"""

from __future__ import annotations

import csv
import struct
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import (CoefSet, TimeGrid, design_matrix, detrend,
                    make_bspline_system, ols_fit)
from .mixtures import spherical_log_likelihood
from .selection import (SelectionTrace, SlopeEstimate, estimate_slope_ddse,
                        penalty_gmm_full, penalty_spherical, select_k)
from .tclust import ClusterFit, TrimSpec, allocate_all, trimmed_kmeans

_CIVT_MAGIC = b"CIVT"
_CIVL_MAGIC = b"CIVL"
_FORMAT_VERSION = 1

# 16 fixed colors; slice images index them by label mod 16, trimmed voxels
# render black.
PALETTE = np.array([
    (230, 159, 0), (86, 180, 233), (0, 158, 115), (240, 228, 66),
    (0, 114, 178), (213, 94, 0), (204, 121, 167), (153, 153, 153),
    (128, 0, 128), (60, 179, 113), (255, 99, 71), (70, 130, 180),
    (255, 215, 0), (139, 69, 19), (0, 206, 209), (255, 105, 180),
], dtype=np.uint8)


@dataclass
class VolumeSeries:
    """nx*ny*nz voxel time series on one shared grid, x-fastest order."""

    dims: tuple                # (nx, ny, nz)
    series: np.ndarray         # (n, m)
    grid: TimeGrid

    def __post_init__(self):
        nx, ny, nz = self.dims
        self.series = np.asarray(self.series, dtype=float)
        if self.series.ndim != 2:
            raise ValueError("series must be an n x m matrix")
        if self.series.shape[0] != nx * ny * nz:
            raise ValueError(
                f"dims {self.dims} declare {nx * ny * nz} voxels but "
                f"{self.series.shape[0]} series are present")
        if self.series.shape[1] != self.grid.m:
            raise ValueError("series length does not match the grid")
        if not np.all(np.isfinite(self.series)):
            raise ValueError("volume contains non-finite values")

    @property
    def n(self) -> int:
        return self.series.shape[0]

    @property
    def m(self) -> int:
        return self.series.shape[1]


@dataclass
class RunConfig:
    """Knobs for one end-to-end run; mirrored by the JSON config file."""

    d: int = 100
    lam: float = 1.0
    alpha: float = 0.0
    k_set: tuple = tuple(range(2, 51))
    restarts: int = 20
    max_iter: int = 20
    seed: int = 0
    detrend: bool = True
    normalize: bool = True
    penalty: str = "spherical"   # "spherical" or "full"

    def __post_init__(self):
        self.k_set = tuple(int(k) for k in self.k_set)
        if not self.k_set or any(k < 1 for k in self.k_set):
            raise ValueError("k_set must be a nonempty set of positive counts")
        if len(set(self.k_set)) != len(self.k_set):
            raise ValueError("k_set contains duplicates")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.d < 4 or self.restarts < 1 or self.max_iter < 1:
            raise ValueError("d, restarts, max_iter must be positive (d >= 4)")
        if self.penalty not in ("spherical", "full"):
            raise ValueError("penalty must be 'spherical' or 'full'")

    def penalty_fn(self):
        if self.penalty == "spherical":
            return lambda k: penalty_spherical(k, self.d)
        return lambda k: penalty_gmm_full(k, self.d)


@dataclass
class ClusterVolume:
    """Per-voxel cluster labels (1..k) and trim flags, x-fastest order."""

    dims: tuple
    labels: np.ndarray     # (n,) int in 1..k
    trimmed: np.ndarray    # (n,) bool
    k: int

    def __post_init__(self):
        nx, ny, nz = self.dims
        n = nx * ny * nz
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.trimmed = np.asarray(self.trimmed, dtype=bool)
        if self.labels.shape != (n,) or self.trimmed.shape != (n,):
            raise ValueError("labels/trimmed do not match the volume dims")
        if self.labels.min() < 1 or self.labels.max() > self.k:
            raise ValueError(f"labels must lie in 1..{self.k}")

    def validate(self) -> None:
        if self.labels.min() < 1 or self.labels.max() > self.k:
            raise ValueError(f"labels must lie in 1..{self.k}")

    def grid3d(self) -> np.ndarray:
        nx, ny, nz = self.dims
        return self.labels.reshape(nz, ny, nx)   # [z, y, x]


@dataclass
class MeanFunctions:
    """Cluster mean curves sampled on the grid, in original data units."""

    grid: TimeGrid
    values: np.ndarray       # (k, m)
    coef_means: np.ndarray   # (k, d) de-normalized coefficient means


@dataclass
class ColumnStats:
    """Per-column centering/scaling used to normalize a coefficient set."""

    means: np.ndarray
    sds: np.ndarray

    def denormalize_rows(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(rows, dtype=float) * self.sds + self.means


def normalize_columns(B: CoefSet) -> tuple[CoefSet, ColumnStats]:
    """Z-score each coefficient column (sample SD, ddof=1).

    Zero-variance columns are centered only and recorded with scale 1 so
    de-normalization is exact.
    """
    values = B.values
    if values.shape[0] < 2:
        raise ValueError("normalization needs at least two series")
    means = values.mean(axis=0)
    sds = values.std(axis=0, ddof=1)
    sds = np.where(sds == 0.0, 1.0, sds)
    normalized = (values - means) / sds
    stats = ColumnStats(means=means, sds=sds)
    return CoefSet(values=normalized, col_means=means, col_sds=sds), stats


# ---------------------------------------------------------------------------
# volume ingestion

def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ValueError("unexpected end of file")
    return data


def save_volume_civt(vol: VolumeSeries, path) -> None:
    nx, ny, nz = vol.dims
    with open(path, "wb") as fh:
        fh.write(_CIVT_MAGIC)
        fh.write(struct.pack("<5I", _FORMAT_VERSION, nx, ny, nz, vol.m))
        fh.write(struct.pack("<2d", vol.grid.t_lo, vol.grid.t_hi))
        fh.write(np.ascontiguousarray(vol.series, dtype="<f4").tobytes())


def _load_civt(path) -> VolumeSeries:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _CIVT_MAGIC:
            raise ValueError(f"{path} is not a CIVT volume")
        version, nx, ny, nz, m = struct.unpack("<5I", _read_exact(fh, 20))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported CIVT version {version}")
        t_lo, t_hi = struct.unpack("<2d", _read_exact(fh, 16))
        n = nx * ny * nz
        raw = _read_exact(fh, 4 * n * m)
        if fh.read(1):
            raise ValueError("trailing bytes after CIVT payload")
    series = np.frombuffer(raw, dtype="<f4").astype(float).reshape(n, m)
    grid = TimeGrid.uniform(t_lo, t_hi, m)
    return VolumeSeries(dims=(nx, ny, nz), series=series, grid=grid)


def _load_csv_volume(path) -> VolumeSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["x", "y", "z"]:
            raise ValueError(f"malformed volume CSV header in {path}")
        m = len(header) - 3
        if m < 1:
            raise ValueError("volume CSV has no time columns")
        coords = []
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != 3 + m:
                raise ValueError("volume CSV row width does not match header")
            coords.append((int(row[0]), int(row[1]), int(row[2])))
            rows.append([float(v) for v in row[3:]])
    if not rows:
        raise ValueError("volume CSV has no voxel rows")
    coords = np.asarray(coords, dtype=np.int64)
    if coords.min() < 0:
        raise ValueError("voxel coordinates must be nonnegative")
    nx, ny, nz = (int(coords[:, i].max()) + 1 for i in range(3))
    n = nx * ny * nz
    if len(rows) != n:
        raise ValueError(
            f"dims ({nx}, {ny}, {nz}) declare {n} voxels but {len(rows)} rows are present")
    series = np.empty((n, m))
    seen = np.zeros(n, dtype=bool)
    flat = coords[:, 0] + nx * (coords[:, 1] + ny * coords[:, 2])
    for idx, values in zip(flat, rows):
        if seen[idx]:
            raise ValueError("duplicate voxel coordinates in volume CSV")
        seen[idx] = True
        series[idx] = values
    grid = TimeGrid.uniform(1.0, float(max(m, 1)), m)
    return VolumeSeries(dims=(nx, ny, nz), series=series, grid=grid)


def load_volume(path, format: str) -> VolumeSeries:
    """Read a volume from ``civt`` binary or ``csv`` text."""
    if format == "civt":
        return _load_civt(path)
    if format == "csv":
        return _load_csv_volume(path)
    raise ValueError(f"unknown volume format {format!r}")


# ---------------------------------------------------------------------------
# exporters

def export_cluster_map(cv: ClusterVolume, csv_path, civl_path=None) -> None:
    """Write labels as CSV (x-fastest order) and optionally as CIVL binary."""
    cv.validate()
    nx, ny, nz = cv.dims
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "label", "trimmed"])
        i = 0
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    writer.writerow([x, y, z, int(cv.labels[i]), int(cv.trimmed[i])])
                    i += 1
    if civl_path is not None:
        save_labels_civl(cv, civl_path)


def save_labels_civl(cv: ClusterVolume, path) -> None:
    cv.validate()
    nx, ny, nz = cv.dims
    if cv.labels.max() > 0xFFFF:
        raise ValueError("labels exceed the u16 range of the CIVL format")
    records = np.empty(cv.labels.size, dtype=[("label", "<u2"), ("trimmed", "u1")])
    records["label"] = cv.labels
    records["trimmed"] = cv.trimmed
    with open(path, "wb") as fh:
        fh.write(_CIVL_MAGIC)
        fh.write(struct.pack("<5I", _FORMAT_VERSION, nx, ny, nz, cv.k))
        fh.write(records.tobytes())


def load_labels_civl(path) -> ClusterVolume:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _CIVL_MAGIC:
            raise ValueError(f"{path} is not a CIVL label volume")
        version, nx, ny, nz, k = struct.unpack("<5I", _read_exact(fh, 20))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported CIVL version {version}")
        n = nx * ny * nz
        raw = _read_exact(fh, 3 * n)
        if fh.read(1):
            raise ValueError("trailing bytes after CIVL payload")
    records = np.frombuffer(raw, dtype=[("label", "<u2"), ("trimmed", "u1")])
    return ClusterVolume(dims=(nx, ny, nz),
                         labels=records["label"].astype(np.int64),
                         trimmed=records["trimmed"].astype(bool), k=k)


def export_mean_functions(mf: MeanFunctions, path) -> None:
    """CSV of the mean curves: t, mu_1..mu_k sampled on the grid."""
    k = mf.values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"mu_{c + 1}" for c in range(k)])
        for j, t in enumerate(mf.grid.points):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in mf.values[:, j]])


def render_slice(cv: ClusterVolume, axis: str, index: int, path) -> None:
    """Write one slice as a binary PPM (P6), one pixel per voxel.

    z slices have x across and y down; y slices x across, z down;
    x slices y across, z down. Trimmed voxels are black.
    """
    grid = cv.grid3d()                         # [z, y, x]
    trimmed = cv.trimmed.reshape(grid.shape)
    nx, ny, nz = cv.dims
    sizes = {"x": nx, "y": ny, "z": nz}
    if axis not in sizes:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    if not 0 <= index < sizes[axis]:
        raise ValueError(f"index {index} outside axis {axis} of size {sizes[axis]}")
    if axis == "z":
        plane, mask = grid[index], trimmed[index]
    elif axis == "y":
        plane, mask = grid[:, index, :], trimmed[:, index, :]
    else:
        plane, mask = grid[:, :, index], trimmed[:, :, index]
    pixels = PALETTE[plane % 16]
    pixels[mask] = 0
    height, width = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# orchestration

@dataclass
class TwoStageResult:
    """Everything produced by one end-to-end run."""

    cluster_volume: ClusterVolume
    mean_functions: MeanFunctions
    trace: SelectionTrace
    slope: SlopeEstimate | None
    k_hat: int
    fits: dict                       # requested k -> ClusterFit (normalized space)
    stats: ColumnStats | None        # None when normalization was off


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def run_two_stage(vol: VolumeSeries, cfg: RunConfig) -> TwoStageResult:
    """Filter, sweep cluster counts, select k, and allocate every voxel.

    Degenerate volumes are handled conservatively: the trim level drops to
    zero whenever the retained count would fall below k, the cluster count
    is capped at n, and normalization is skipped when fewer than two
    series are present.

    Raises SlopeEstimationError (with the completed sweep attached as
    ``exc.trace``) when the loss-penalty slope is nonpositive.
    """
    Z = vol.series
    if cfg.detrend:
        Z = detrend(Z, vol.grid)
    system = make_bspline_system((vol.grid.t_lo, vol.grid.t_hi), cfg.d)
    design = design_matrix(system, vol.grid)
    coefs = CoefSet(ols_fit(design, Z))

    stats = None
    if cfg.normalize:
        if coefs.n < 2:
            warnings.warn("fewer than two series: skipping column normalization")
        else:
            coefs, stats = normalize_columns(coefs)

    n = coefs.n
    pen_fn = cfg.penalty_fn()
    k_seqs = np.random.SeedSequence(cfg.seed).spawn(len(cfg.k_set))
    trace = SelectionTrace(n_points=n)
    fits: dict[int, ClusterFit] = {}
    for k, seq in zip(sorted(cfg.k_set), k_seqs):
        k_eff = min(k, n)
        trim = TrimSpec(cfg.alpha)
        if trim.retained_count(n) < k_eff:
            trim = TrimSpec(0.0)
        t0 = time.perf_counter()
        fit = trimmed_kmeans(coefs.values, k_eff, trim,
                             restarts=cfg.restarts, max_iter=cfg.max_iter,
                             seed=_seed_int(seq), scale=cfg.lam)
        loglik = spherical_log_likelihood(coefs.values, fit.model)
        trace.add(k, loglik, pen_fn(k), time.perf_counter() - t0)
        fits[k] = fit

    slope = None
    if len(cfg.k_set) == 1:
        k_hat = trace.k_values[0]
    else:
        try:
            slope = estimate_slope_ddse(trace)
        except Exception as exc:
            exc.trace = trace
            raise
        k_hat = select_k(trace, slope.kappa)

    fit = fits[k_hat]
    labels = allocate_all(coefs.values, fit)
    cluster_volume = ClusterVolume(dims=vol.dims, labels=labels,
                                   trimmed=fit.trimmed, k=fit.k)
    coef_means = fit.model.means
    if stats is not None:
        coef_means = stats.denormalize_rows(coef_means)
    curves = coef_means @ design.matrix.T
    mean_functions = MeanFunctions(grid=vol.grid, values=curves,
                                   coef_means=coef_means)
    return TwoStageResult(cluster_volume=cluster_volume,
                          mean_functions=mean_functions, trace=trace,
                          slope=slope, k_hat=k_hat, fits=fits, stats=stats)
