"""Temporal modes, trace filtering and filter-width selection.

A filter is a unit-norm vector on the sampling grid, so the discrete inner
product of a vacuum trace with any filter has variance exactly 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import erfc, sqrt

import numpy as np

ORTHOGONALITY_THRESHOLD = 1e-3
CLIP_TOLERANCE = 1e-6
MIN_SCAN_TRACES = 10_000


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid ``t_i = i * dt`` (defaults: 250 MHz over 2.2 us)."""

    dt: float = 4e-9
    n_samples: int = 550

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ValueError(f"n_samples must be an integer >= 2, got {self.n_samples}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt


@dataclass(frozen=True, eq=False)
class TemporalMode:
    """Real amplitude envelope sampled on a grid, with unit discrete norm.

    ``center`` and ``sigma`` are set for Gaussian modes; ``sigma`` is the 1/e
    half-width of the amplitude.
    """

    grid: TimeGrid
    amplitudes: np.ndarray = field(repr=False)
    center: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=float)
        if a.shape != (self.grid.n_samples,):
            raise ValueError(f"mode has {a.size} samples, grid has {self.grid.n_samples}")
        norm = float(a @ a)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"mode must have unit norm, got {norm:.12g}")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def from_envelope(cls, grid: TimeGrid, envelope) -> "TemporalMode":
        a = np.asarray(envelope, dtype=float)
        n = np.sqrt(a @ a)
        if n == 0:
            raise ValueError("envelope is identically zero")
        return cls(grid, a / n)

    @property
    def intensity(self) -> np.ndarray:
        return self.amplitudes**2

    @property
    def intensity_half_width(self) -> float | None:
        """1/e half-width of |f(t)|^2, which is sigma / sqrt(2) for a Gaussian."""
        return None if self.sigma is None else self.sigma / sqrt(2.0)


@dataclass(frozen=True, eq=False)
class HomodyneTrace:
    grid: TimeGrid
    samples: np.ndarray = field(repr=False)
    trial_id: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (self.grid.n_samples,):
            raise ValueError(f"trace has {s.size} samples, grid has {self.grid.n_samples}")
        object.__setattr__(self, "samples", s)


def _outside_mass(grid: TimeGrid, center: float, sigma: float) -> float:
    # |a|^2 is a Gaussian of standard deviation sigma / 2
    lo = -0.5 * grid.dt
    hi = grid.duration - 0.5 * grid.dt
    s = sigma / 2.0
    return 0.5 * erfc((center - lo) / (s * sqrt(2))) + 0.5 * erfc((hi - center) / (s * sqrt(2)))


def gaussian_mode(grid: TimeGrid, center: float, sigma: float) -> TemporalMode:
    """Unit-norm Gaussian amplitude mode ``exp(-(t - center)^2 / sigma^2)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    clipped = _outside_mass(grid, center, sigma)
    if clipped > CLIP_TOLERANCE:
        raise ValueError(
            f"mode at {center:.4g} s with half-width {sigma:.4g} s leaves "
            f"{clipped:.3g} of its norm outside the {grid.duration:.4g} s grid"
        )
    t = grid.times
    a = np.exp(-((t - center) ** 2) / sigma**2)
    return TemporalMode(grid, a / np.sqrt(a @ a), center=float(center), sigma=float(sigma))


def mode_from_intensity_width(grid: TimeGrid, center: float, intensity_half_width: float) -> TemporalMode:
    """Gaussian mode whose intensity has the given 1/e half-width."""
    return gaussian_mode(grid, center, sqrt(2.0) * intensity_half_width)


def _check_grid(a: TimeGrid, b: TimeGrid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def mode_overlap(f: TemporalMode, g: TemporalMode) -> float:
    _check_grid(f.grid, g.grid)
    return float(f.amplitudes @ g.amplitudes)


def shifted_mode(f: TemporalMode, shift: float) -> TemporalMode:
    """``f`` delayed by ``shift`` seconds.

    Gaussian modes are regenerated at the new center; other modes must be
    shifted by a whole number of samples without wrapping.
    """
    if f.sigma is not None and f.center is not None:
        return gaussian_mode(f.grid, f.center + shift, f.sigma)
    k = shift / f.grid.dt
    if abs(k - round(k)) > 1e-9:
        raise ValueError("non-Gaussian modes can only be shifted by whole samples")
    k = int(round(k))
    a = np.zeros_like(f.amplitudes)
    if k >= 0:
        a[k:] = f.amplitudes[: a.size - k]
    else:
        a[:k] = f.amplitudes[-k:]
    return TemporalMode.from_envelope(f.grid, a)


def extract_quadrature(trace: HomodyneTrace, f: TemporalMode) -> float:
    """Quadrature of ``trace`` in mode ``f``: the inner product of samples and filter."""
    _check_grid(trace.grid, f.grid)
    return float(trace.samples @ f.amplitudes)


def extract_quadratures(traces, f: TemporalMode) -> np.ndarray:
    """Vectorized :func:`extract_quadrature` over a trace matrix or sequence."""
    data = _as_matrix(traces, f.grid)
    return data @ f.amplitudes


def vacuum_reference(trace, f: TemporalMode, shift: float):
    """Quadrature(s) in ``f`` delayed by ``shift``, a mode that only holds vacuum.

    ``trace`` may be a single :class:`HomodyneTrace` or a batch.

    Raises
    ------
    ValueError
        If the delayed filter overlaps ``f`` by 1e-3 or more.
    """
    g = shifted_mode(f, shift)
    ov = abs(mode_overlap(f, g))
    if ov >= ORTHOGONALITY_THRESHOLD:
        raise ValueError(f"shifted filter is not orthogonal to the signal filter (overlap {ov:.3g})")
    if isinstance(trace, HomodyneTrace):
        return extract_quadrature(trace, g)
    return extract_quadratures(trace, g)


def _as_matrix(traces, grid: TimeGrid) -> np.ndarray:
    if isinstance(traces, np.ndarray):
        data = traces
    else:
        traces = list(traces)
        for tr in traces:
            _check_grid(tr.grid, grid)
        data = np.array([tr.samples for tr in traces]) if traces else np.empty((0, grid.n_samples))
    if data.ndim != 2 or data.shape[1] != grid.n_samples:
        raise ValueError(f"expected traces with {grid.n_samples} samples, got shape {data.shape}")
    return data


@dataclass(frozen=True)
class FilterScan:
    """Variance of filtered quadratures per candidate width."""

    widths: np.ndarray
    variances: np.ndarray
    stderr: np.ndarray
    best: float
    n_traces: int


def filter_width_scan(traces, grid: TimeGrid, center: float, widths, n_sigma: float = 3.0,
                      min_traces: int = MIN_SCAN_TRACES) -> FilterScan:
    """Score each Gaussian filter width by the variance of its quadratures.

    For phase-averaged states Var(x) = 1/2 + (mean photon number seen by the
    filter), so the variance peaks at the best-matched width. ``traces`` may be
    a matrix, a sequence of traces, or an iterable of trace matrices (blocks).
    The selected width is the smallest one whose variance is within
    ``n_sigma`` paired standard errors of the maximum.
    """
    widths = np.asarray(sorted(set(float(w) for w in widths)))
    if widths.size == 0:
        raise ValueError("no candidate widths")
    if widths.size < 3:
        raise ValueError("need at least 3 candidate widths")
    filters = np.stack([gaussian_mode(grid, center, w).amplitudes for w in widths], axis=1)

    if isinstance(traces, np.ndarray) or (isinstance(traces, (list, tuple)) and traces
                                          and isinstance(traces[0], HomodyneTrace)):
        blocks = [_as_matrix(traces, grid)]
    else:
        blocks = (_as_matrix(b, grid) for b in traces)

    n = 0
    s1 = np.zeros(widths.size)
    s2 = np.zeros((widths.size, widths.size))  # sums of x_a^2 x_b^2, for paired errors
    s_sq = np.zeros(widths.size)
    for block in blocks:
        q = block @ filters
        q2 = q * q
        n += q.shape[0]
        s1 += q.sum(axis=0)
        s_sq += q2.sum(axis=0)
        s2 += q2.T @ q2
    if n == 0:
        raise ValueError("no traces to scan")
    if n < min_traces:
        raise ValueError(f"filter scan needs at least {min_traces} traces, got {n}")

    mean = s1 / n
    m2 = s_sq / n
    var = m2 - mean**2
    cov = s2 / n - np.outer(m2, m2)
    stderr = np.sqrt(np.maximum(np.diag(cov), 0) / n)
    k = int(np.argmax(var))
    diff_se = np.sqrt(np.maximum(cov[k, k] + np.diag(cov) - 2 * cov[k], 0) / n)
    ok = var >= var[k] - n_sigma * diff_se
    best = float(widths[np.flatnonzero(ok)[0]])
    return FilterScan(widths=widths, variances=var, stderr=stderr, best=best, n_traces=n)


def optimize_filter_width(traces, grid: TimeGrid, center: float, widths, **kwargs) -> float:
    """Width of the Gaussian filter that maximizes the filtered-quadrature variance."""
    return filter_width_scan(traces, grid, center, widths, **kwargs).best
