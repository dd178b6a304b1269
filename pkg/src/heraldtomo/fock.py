"""Fock-basis numerics for phase-averaged single-mode states.

Quadratures follow the convention where the vacuum has variance 1/2,
i.e. ``x = (a + a^dagger) / sqrt(2)``. Oscillator eigenfunctions, quadrature
densities, binomial loss, detector kernels and Wigner functions all share it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, pi, sqrt

import numpy as np
from scipy.special import eval_laguerre, roots_hermite
from scipy.stats import poisson

MAX_FOCK = 200
DEFAULT_CUTOFF = 10
KERNEL_TOL = 1e-8


@dataclass(frozen=True)
class DiagonalState:
    """Fock-diagonal density matrix, stored as populations p_0..p_cutoff."""

    populations: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.populations, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("populations must be a 1-D array with at least two entries")
        if not np.all(np.isfinite(p)):
            raise ValueError("populations must be finite")
        if np.any(p < 0):
            raise ValueError(f"populations must be non-negative, got min {p.min():.3g}")
        total = p.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"populations must sum to 1 (got {total:.15g})")
        p.setflags(write=False)
        object.__setattr__(self, "populations", p)

    @classmethod
    def from_populations(cls, populations, cutoff: int | None = None) -> "DiagonalState":
        """Normalize and zero-pad ``populations`` to ``cutoff`` (default: as given)."""
        p = np.asarray(populations, dtype=float)
        if cutoff is not None:
            if p.size > cutoff + 1 and np.any(p[cutoff + 1:] > 0):
                raise ValueError(f"populations above cutoff {cutoff} are non-zero")
            p = np.pad(p[: cutoff + 1], (0, max(0, cutoff + 1 - p.size)))
        total = p.sum()
        if total <= 0:
            raise ValueError("populations must have positive total weight")
        return cls(p / total)

    @classmethod
    def fock(cls, n: int, cutoff: int = DEFAULT_CUTOFF) -> "DiagonalState":
        if not 0 <= n <= cutoff:
            raise ValueError(f"Fock number {n} outside 0..{cutoff}")
        p = np.zeros(cutoff + 1)
        p[n] = 1.0
        return cls(p)

    @classmethod
    def vacuum(cls, cutoff: int = DEFAULT_CUTOFF) -> "DiagonalState":
        return cls.fock(0, cutoff)

    @property
    def cutoff(self) -> int:
        return self.populations.size - 1

    @property
    def mean_photon_number(self) -> float:
        return float(np.arange(self.populations.size) @ self.populations)

    def __getitem__(self, n: int) -> float:
        return float(self.populations[n])

    def __eq__(self, other):
        if not isinstance(other, DiagonalState):
            return NotImplemented
        return np.array_equal(self.populations, other.populations)

    def __hash__(self):
        return hash(self.populations.tobytes())

    def __repr__(self):
        shown = ", ".join(f"{v:.4g}" for v in self.populations[:4])
        tail = ", ..." if self.cutoff > 3 else ""
        return f"DiagonalState([{shown}{tail}], cutoff={self.cutoff})"


def poisson_state(mean: float, cutoff: int = DEFAULT_CUTOFF) -> DiagonalState:
    """Poisson populations truncated at ``cutoff`` and renormalized.

    A phase-averaged coherent state; used as the classical reference source.
    """
    if mean < 0:
        raise ValueError("mean must be non-negative")
    return DiagonalState.from_populations(poisson.pmf(np.arange(cutoff + 1), mean))


def fock_wavefunction(n: int, x):
    """Oscillator eigenfunction psi_n(x) for vacuum variance 1/2.

    Uses the normalized three-term recurrence, so no factorials appear and
    large ``n`` does not overflow. Accepts scalar or array ``x``.
    """
    return fock_wavefunctions(n, x)[n]


def fock_wavefunctions(n_max: int, x) -> np.ndarray:
    """Stack of psi_0..psi_{n_max} evaluated at ``x``; shape ``(n_max + 1,) + x.shape``."""
    if int(n_max) != n_max or n_max < 0:
        raise ValueError(f"Fock number must be a non-negative integer, got {n_max}")
    if n_max > MAX_FOCK:
        raise ValueError(f"Fock number {n_max} exceeds recurrence limit {MAX_FOCK}")
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = pi ** -0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = sqrt(2.0) * x * out[0]
    for k in range(1, n_max):
        out[k + 1] = sqrt(2.0 / (k + 1)) * x * out[k] - sqrt(k / (k + 1)) * out[k - 1]
    return out


def quadrature_pdf(state: DiagonalState, x):
    """Phase-averaged quadrature density sum_n p_n |psi_n(x)|^2."""
    psi = fock_wavefunctions(state.cutoff, x)
    return np.tensordot(state.populations, psi * psi, axes=1)


def loss_matrix(eta: float, cutoff: int) -> np.ndarray:
    """Binomial loss transfer matrix ``L[m, n] = C(n, m) eta^m (1 - eta)^(n - m)``."""
    if not 0 < eta <= 1:
        raise ValueError(f"efficiency must be in (0, 1], got {eta}")
    L = np.zeros((cutoff + 1, cutoff + 1))
    for n in range(cutoff + 1):
        for m in range(n + 1):
            L[m, n] = comb(n, m) * eta**m * (1.0 - eta) ** (n - m)
    return L


def apply_loss(state: DiagonalState, eta: float) -> DiagonalState:
    """Send ``state`` through a beamsplitter of transmission ``eta``."""
    if eta == 1:
        return state
    p = loss_matrix(eta, state.cutoff) @ state.populations
    return DiagonalState(p / p.sum())


@dataclass(frozen=True, eq=False)
class MeasurementKernel:
    """Tabulated detector response G_n(x) for each Fock state n.

    ``table[n, i]`` is the density of measuring ``grid[i]`` given ``|n>`` at the
    detector input, for an efficiency ``eta`` and additive Gaussian electronic
    noise of variance ``nu / 2``.
    """

    eta: float
    nu: float
    grid: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    @property
    def cutoff(self) -> int:
        return self.table.shape[0] - 1

    def covers(self, x) -> bool:
        x = np.asarray(x)
        return bool(x.size == 0 or (x.min() >= self.grid[0] and x.max() <= self.grid[-1]))

    def __call__(self, x) -> np.ndarray:
        """Linearly interpolated kernel at ``x``; shape ``(len(x), cutoff + 1)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.covers(x):
            raise ValueError(
                f"samples span [{x.min():.4g}, {x.max():.4g}], outside kernel grid "
                f"[{self.grid[0]:.4g}, {self.grid[-1]:.4g}]"
            )
        return np.stack([np.interp(x, self.grid, row) for row in self.table], axis=1)


def noisy_fock_density(n_max: int, eta: float, nu: float, x) -> np.ndarray:
    """Exact G_n(x) for n = 0..n_max, evaluated pointwise.

    Gaussian noise of variance nu/2 on a quadrature is equivalent to a loss of
    t = 1/(1 + nu) followed by a rescaling x -> x / sqrt(t), so
    G_n(x) = sqrt(t) * sum_m B(n -> m; eta * t) |psi_m(sqrt(t) x)|^2.
    """
    if not 0 < eta <= 1:
        raise ValueError(f"efficiency must be in (0, 1], got {eta}")
    if nu < 0:
        raise ValueError(f"noise fraction must be non-negative, got {nu}")
    t = 1.0 / (1.0 + nu)
    x = np.asarray(x, dtype=float)
    psi = fock_wavefunctions(n_max, sqrt(t) * x)
    dens = psi * psi
    L = loss_matrix(eta * t, n_max)
    return sqrt(t) * np.tensordot(L.T, dens, axes=1)


def default_grid(x_min: float = -8.0, x_max: float = 8.0, step: float = 0.01) -> np.ndarray:
    n = int(round((x_max - x_min) / step))
    return np.linspace(x_min, x_max, n + 1)


def measurement_kernel(eta: float, nu: float, cutoff: int = DEFAULT_CUTOFF, grid=None) -> MeasurementKernel:
    """Tabulate the loss- and noise-corrected measurement kernel on ``grid``.

    Raises
    ------
    ValueError
        If any row fails to integrate to 1 within 1e-8 on the grid (grid too
        coarse or too narrow for this cutoff).
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise ValueError("kernel grid must be a strictly increasing 1-D array")
    table = noisy_fock_density(cutoff, eta, nu, grid)
    norms = np.trapezoid(table, grid, axis=1)
    worst = int(np.argmax(np.abs(norms - 1.0)))
    if abs(norms[worst] - 1.0) > KERNEL_TOL:
        raise ValueError(
            f"kernel row n={worst} integrates to {norms[worst]:.12g} on the grid; "
            f"widen or refine the grid"
        )
    grid = grid.copy()
    grid.setflags(write=False)
    table.setflags(write=False)
    return MeasurementKernel(eta=float(eta), nu=float(nu), grid=grid, table=table)


def wigner(state: DiagonalState, x, p):
    """Wigner function of a phase-averaged state, normalized to unit integral.

    W_n(x, p) = (-1)^n / pi * L_n(2 s) * exp(-s) with s = x^2 + p^2.
    """
    x, p = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(p, dtype=float))
    s = x * x + p * p
    out = np.zeros(s.shape)
    for n, pn in enumerate(state.populations):
        if pn:
            out += pn * (-1) ** n * eval_laguerre(n, 2.0 * s)
    out *= np.exp(-s) / pi
    return out if out.ndim else float(out)


def wigner_origin(state: DiagonalState) -> float:
    """W(0, 0) = (1/pi) sum_n (-1)^n p_n."""
    signs = np.where(np.arange(state.cutoff + 1) % 2, -1.0, 1.0)
    return float(signs @ state.populations) / pi


def wigner_marginal(state: DiagonalState, x, nodes: int | None = None):
    """Integrate the Wigner function over p by Gauss-Hermite quadrature.

    W(x, p) is exp(-p^2) times a polynomial of degree 2 * cutoff in p, so a
    rule with more than ``cutoff + 1`` nodes is exact up to round-off.
    """
    nodes = nodes or 2 * state.cutoff + 8
    t, w = roots_hermite(nodes)
    x = np.asarray(x, dtype=float)
    xx = x[..., None]
    vals = wigner(state, xx, t) * np.exp(t * t)
    out = vals @ w
    return out if out.ndim else float(out)
