"""Maximum-likelihood reconstruction of Fock populations from quadrature samples.

For phase-averaged data the likelihood is that of a finite mixture with known
component densities G_n(x), so the iterative maximum-likelihood update reduces
to the EM update of the mixture weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fock import DEFAULT_CUTOFF, DiagonalState, MeasurementKernel, default_grid, measurement_kernel

MIN_SAMPLES = 100


@dataclass(frozen=True)
class ReconstructionSettings:
    """EM settings. ``eta=1, nu=0`` is the raw (uncorrected) reconstruction."""

    cutoff: int = DEFAULT_CUTOFF
    eta: float = 1.0
    nu: float = 0.0
    tol: float = 1e-10
    max_iter: int = 5000
    x_min: float = -8.0
    x_max: float = 8.0
    x_step: float = 0.01

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if not self.x_max > self.x_min or not self.x_step > 0:
            raise ValueError("invalid kernel grid")

    @property
    def corrected(self) -> bool:
        return self.eta < 1 or self.nu > 0

    def kernel(self) -> MeasurementKernel:
        return _kernel(self.eta, self.nu, self.cutoff, self.x_min, self.x_max, self.x_step)


@lru_cache(maxsize=16)
def _kernel(eta, nu, cutoff, x_min, x_max, x_step):
    return measurement_kernel(eta, nu, cutoff, default_grid(x_min, x_max, x_step))


@dataclass(frozen=True)
class ReconstructionResult:
    state: DiagonalState
    loglik: float
    iterations: int
    converged: bool
    history: np.ndarray = field(repr=False)
    errorbars: np.ndarray | None = None


def _check_samples(samples, kernel: MeasurementKernel) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"sample {bad[0]} is not finite ({x[bad[0]]})")
    if x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if np.all(x == x[0]):
        raise ValueError("all samples are identical")
    out = np.flatnonzero((x < kernel.grid[0]) | (x > kernel.grid[-1]))
    if out.size:
        raise ValueError(
            f"{out.size} samples lie outside the kernel grid [{kernel.grid[0]}, {kernel.grid[-1]}] "
            f"(first: index {out[0]}, x={x[out[0]]:.6g})"
        )
    return x


def loglikelihood(state: DiagonalState, samples, kernel: MeasurementKernel) -> float:
    """Average log-likelihood (1/J) sum_j log sum_n p_n G_n(x_j)."""
    x = np.asarray(samples, dtype=float).ravel()
    if state.cutoff > kernel.cutoff:
        raise ValueError(f"state cutoff {state.cutoff} exceeds kernel cutoff {kernel.cutoff}")
    G = kernel(x)[:, : state.cutoff + 1]
    P = G @ state.populations
    zero = np.flatnonzero(P <= 0)
    if zero.size:
        raise ValueError(f"sample {zero[0]} (x={x[zero[0]]:.6g}) has zero probability under the state")
    return float(np.mean(np.log(P)))


def _em_map(Gt, w, p):
    P = p @ Gt
    q = p * (Gt @ (w / P))
    return q / q.sum()


def _loglik(Gt, w, p) -> float:
    return float(w @ np.log(p @ Gt))


def _squarem_cycle(Gt, w, p, ll):
    """One safeguarded SQUAREM cycle; returns a point with loglik >= ``ll``.

    Two EM steps define the extrapolation direction. The step length is
    halved toward the plain two-step EM point until the extrapolated
    populations stay non-negative, then a stabilizing EM step follows. If the
    result scores below the plain EM point, the plain point is used.
    """
    p1 = _em_map(Gt, w, p)
    p2 = _em_map(Gt, w, p1)
    ll2 = _loglik(Gt, w, p2)
    r = p1 - p
    v = p2 - p1 - r
    vv = v @ v
    if vv == 0:
        return p2, ll2
    alpha = min(-np.sqrt((r @ r) / vv), -1.0)
    while alpha < -1.0:
        trial = p - 2 * alpha * r + alpha * alpha * v
        if np.all(trial > 0):
            break
        alpha = (alpha - 1.0) / 2 if alpha < -1.01 else -1.0
    if alpha == -1.0:
        return p2, ll2
    trial = _em_map(Gt, w, trial / trial.sum())
    llt = _loglik(Gt, w, trial)
    if llt >= ll2:
        return trial, llt
    return p2, ll2


def maxlik_diagonal(samples, settings: ReconstructionSettings | None = None, init=None,
                    weights=None, accelerate: bool = True) -> ReconstructionResult:
    """Maximum-likelihood populations for ``samples`` by EM.

    The EM update is ``p_n <- p_n * (1/J) sum_j G_n(x_j) / P(x_j)``, starting
    from the uniform distribution unless ``init`` is given. ``weights`` are
    optional per-sample multiplicities (used by the bootstrap).

    With ``accelerate`` each iteration is a safeguarded SQUAREM cycle built
    from EM steps, which never lowers the likelihood but converges far faster
    when high photon numbers are weakly constrained (the loss-corrected case).
    ``accelerate=False`` runs the plain EM update once per iteration.
    Stops when the relative change of the average log-likelihood drops
    below ``settings.tol`` or after ``settings.max_iter`` iterations.
    """
    settings = settings or ReconstructionSettings()
    kernel = settings.kernel()
    x = _check_samples(samples, kernel)
    Gt = np.ascontiguousarray(kernel(x).T)
    if weights is None:
        w = np.full(x.size, 1.0 / x.size)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()

    d = settings.cutoff + 1
    p = np.full(d, 1.0 / d) if init is None else np.array(init, dtype=float)
    return _run_em(Gt, w, p / p.sum(), settings, accelerate)


def _run_em(Gt, w, p, settings, accelerate) -> ReconstructionResult:
    ll = _loglik(Gt, w, p)
    history = [ll]
    converged = False
    it = 0
    while it < settings.max_iter:
        it += 1
        if accelerate:
            p, new = _squarem_cycle(Gt, w, p, ll)
        else:
            p = _em_map(Gt, w, p)
            new = _loglik(Gt, w, p)
        history.append(new)
        change = abs(new - ll) / max(abs(ll), 1e-300)
        ll = new
        if change < settings.tol:
            converged = True
            break
    return ReconstructionResult(
        state=DiagonalState(p),
        loglik=ll,
        iterations=it,
        converged=converged,
        history=np.array(history),
    )


def em_step(state: DiagonalState, samples, kernel: MeasurementKernel) -> DiagonalState:
    """A single EM update from ``state``."""
    G = kernel(np.asarray(samples, dtype=float))[:, : state.cutoff + 1]
    p = state.populations * (G.T @ (1.0 / (G @ state.populations))) / G.shape[0]
    return DiagonalState(p / p.sum())


def bootstrap_errors(samples, settings: ReconstructionSettings | None = None, n_resamples: int = 50,
                     seed: int = 0, start: DiagonalState | None = None) -> np.ndarray:
    """Standard deviation of each population over resampled reconstructions.

    Resamples are drawn with replacement and expressed as per-sample
    multiplicities. Each EM run starts from ``start`` (default: the fit to the
    full data), which only changes iteration counts because the maximizer is
    unique.
    """
    if n_resamples < 20:
        raise ValueError(f"need at least 20 bootstrap resamples, got {n_resamples}")
    settings = settings or ReconstructionSettings()
    x = _check_samples(samples, settings.kernel())
    if start is None:
        start = maxlik_diagonal(x, settings).state
    Gt = np.ascontiguousarray(settings.kernel()(x).T)
    rng = np.random.default_rng(seed)
    pops = []
    for _ in range(n_resamples):
        counts = np.bincount(rng.integers(0, x.size, x.size), minlength=x.size)
        res = _run_em(Gt, counts / x.size, start.populations.copy(), settings, accelerate=True)
        pops.append(res.state.populations)
    return np.std(np.array(pops), axis=0, ddof=1)


def reconstruct(samples, settings: ReconstructionSettings | None = None, n_resamples: int = 50,
                seed: int = 0) -> ReconstructionResult:
    """:func:`maxlik_diagonal` plus bootstrap error bars."""
    settings = settings or ReconstructionSettings()
    res = maxlik_diagonal(samples, settings)
    err = bootstrap_errors(samples, settings, n_resamples, seed, start=res.state) if n_resamples else None
    return ReconstructionResult(res.state, res.loglik, res.iterations, res.converged, res.history, err)
