"""Seeded generation of quadratures, homodyne traces and SPCM click records.

Random streams are split into fixed-size blocks of trials. Block ``b`` of a
given stream draws from ``SeedSequence(seed, spawn_key=(stream, b))`` and is
always generated in full, then truncated, so trial ``i`` depends only on
(seed, i): not on the requested count, nor on how many workers run the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from math import pi, sqrt

import numpy as np

from .counting import CLICK_BIN, ClickData
from .fock import DiagonalState, apply_loss, fock_wavefunction
from .temporal import HomodyneTrace, TemporalMode, TimeGrid

BLOCK_SIZE = 10_000
WORKERS_ENV = "HERALDTOMO_WORKERS"

_STREAMS = {"quadratures": 1, "traces": 2, "clicks": 3, "herald": 4, "decay": 5}


@dataclass(frozen=True)
class DetectionChain:
    """Efficiencies and noise of the homodyne and photon-counting paths."""

    eta_hd: float = 0.82
    eta_m: float = 0.965
    eta_q: float = 0.91
    nu: float = 0.01
    eta_c: float = 0.37

    def __post_init__(self):
        for name in ("eta_hd", "eta_m", "eta_q", "eta_c"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")

    @classmethod
    def ideal(cls) -> "DetectionChain":
        return cls(1.0, 1.0, 1.0, 0.0, 1.0)

    @property
    def eta_det(self) -> float:
        # visibility enters squared: field overlap -> intensity efficiency
        return self.eta_hd * self.eta_m**2 * self.eta_q


@dataclass(frozen=True)
class SourceModel:
    state: DiagonalState
    mode: TemporalMode
    herald_rate: float = 1e-3

    def __post_init__(self):
        if not 0 < self.herald_rate <= 1:
            raise ValueError(f"herald_rate must be in (0, 1], got {self.herald_rate}")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def block_rng(seed: int, stream: str, block: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[stream], block)))


def _run_blocks(fn, count: int, seed: int, stream: str, workers: int | None = None,
                full: bool = True) -> list:
    """Call ``fn(rng, n, keep)`` for each block; results ordered by block index.

    With ``full`` every block draws ``BLOCK_SIZE`` trials and ``fn`` keeps the
    first ``keep``; otherwise ``n == keep`` (for aggregate counts).
    """
    sizes = [min(BLOCK_SIZE, count - start) for start in range(0, count, BLOCK_SIZE)]
    jobs = [(block_rng(seed, stream, b), BLOCK_SIZE if full else k, k) for b, k in enumerate(sizes)]
    workers = workers or worker_count()
    if workers == 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


@lru_cache(maxsize=None)
def envelope_constant(n: int) -> float:
    """Bound M_n with |psi_n(x)|^2 <= M_n * N(x; 0, n + 1/2) for all x.

    Found as the maximum of the ratio on a dense grid past the last lobe, with
    a 0.1% margin (the ratio is smooth, so grid error is far below that).
    """
    s2 = n + 0.5
    x = np.linspace(0.0, sqrt(2 * n + 1) + 8.0, 200_001)
    ratio = fock_wavefunction(n, x) ** 2 * np.sqrt(2 * pi * s2) * np.exp(x * x / (2 * s2))
    return float(ratio.max()) * (1.0 if n == 0 else 1.001)


def _sample_fock_quadratures(ns: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw x ~ |psi_n(x)|^2 for each n in ``ns`` by Gaussian-proposal rejection."""
    out = np.empty(ns.size)
    for n in np.unique(ns):
        idx = np.flatnonzero(ns == n)
        sd = sqrt(n + 0.5)
        if n == 0:
            out[idx] = rng.normal(0.0, sd, idx.size)
            continue
        m = envelope_constant(int(n))
        got = np.empty(0)
        while got.size < idx.size:
            need = idx.size - got.size
            batch = int(need * m * 1.1) + 16
            x = rng.normal(0.0, sd, batch)
            target = fock_wavefunction(int(n), x) ** 2
            proposal = np.exp(-x * x / (2 * sd * sd)) / (sd * sqrt(2 * pi))
            u = rng.random(batch)
            got = np.concatenate([got, x[u * m * proposal <= target]])
        out[idx] = got[: idx.size]
    return out


def _fock_numbers(state: DiagonalState, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(state.cutoff + 1, size=n, p=state.populations)


def sample_quadratures(state: DiagonalState, chain: DetectionChain, count: int, seed: int) -> np.ndarray:
    """i.i.d. homodyne outcomes for ``state`` seen through ``chain``.

    The state is degraded by ``chain.eta_det``, a Fock number is drawn per
    trial, its quadrature is sampled exactly, and electronic noise of variance
    ``nu / 2`` is added.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lossy = apply_loss(state, chain.eta_det)
    noise_sd = sqrt(chain.nu / 2)

    def block(rng, n, keep):
        x = _sample_fock_quadratures(_fock_numbers(lossy, n, rng), rng)
        if noise_sd:
            x += rng.normal(0.0, noise_sd, n)
        return x[:keep]

    return np.concatenate(_run_blocks(block, count, seed, "quadratures"))


def synth_traces(source: SourceModel, chain: DetectionChain, grid: TimeGrid, count: int, seed: int) -> np.ndarray:
    """Photocurrent records, one row per heralded trial.

    White per-sample vacuum noise (variance 1/2) gives every unit-norm filter
    a vacuum quadrature; its component along the signal mode is replaced by a
    quadrature drawn from the loss-degraded source state. Per-sample
    electronic noise has variance nu/2.
    """
    if source.mode.grid != grid:
        raise ValueError(f"source mode grid {source.mode.grid} does not match trace grid {grid}")
    if count < 1:
        raise ValueError("count must be >= 1")
    phi = source.mode.amplitudes
    lossy = apply_loss(source.state, chain.eta_det)
    noise_sd = sqrt(chain.nu / 2)

    def block(rng, n, keep):
        # per-trial draws come from row-ordered arrays so truncation keeps a prefix
        xs = _sample_fock_quadratures(_fock_numbers(lossy, n, rng), rng)[:keep]
        h = rng.normal(0.0, sqrt(0.5), (n, grid.n_samples))[:keep]
        # row-wise reduction: BLAS matvec rounding can depend on the row count
        h += np.outer(xs - (h * phi).sum(axis=1), phi)
        if noise_sd:
            h += rng.normal(0.0, noise_sd, (n, grid.n_samples))[:keep]
        return h

    return np.concatenate(_run_blocks(block, count, seed, "traces"))


def synth_trace(source: SourceModel, chain: DetectionChain, grid: TimeGrid, seed: int) -> HomodyneTrace:
    """Single trace; identical to row 0 of :func:`synth_traces` with the same seed."""
    return HomodyneTrace(grid, synth_traces(source, chain, grid, 1, seed)[0], trial_id=0)


def sample_clicks(source: SourceModel, chain: DetectionChain, trials: int, seed: int) -> ClickData:
    """SPCM2/SPCM3 records for ``trials`` heralded read pulses.

    Each photon survives with probability ``eta_c``, goes to either detector
    with probability 1/2, and arrives at a time drawn from the mode intensity
    (uniform within a grid sample), recorded as a 10 ns bin index.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = source.mode.grid
    intensity = source.mode.intensity
    cdf = np.cumsum(intensity)
    cdf /= cdf[-1]

    def arrival_bins(rng, k):
        i = np.minimum(np.searchsorted(cdf, rng.random(k), side="right"), cdf.size - 1)
        t = (i + rng.random(k) - 0.5) * grid.dt
        return np.maximum(np.floor(t / CLICK_BIN), 0).astype(np.int64)

    def block(rng, n, keep):
        photons = _fock_numbers(source.state, n, rng)
        detected = rng.binomial(photons, chain.eta_c)
        n2 = rng.binomial(detected, 0.5)
        n3 = detected - n2
        t2 = arrival_bins(rng, int(n2.sum()))
        t3 = arrival_bins(rng, int(n3.sum()))
        n2, n3 = n2[:keep], n3[:keep]
        return n2, n3, t2[: n2.sum()], t3[: n3.sum()]

    parts = _run_blocks(block, trials, seed, "clicks")
    n2 = np.concatenate([p[0] for p in parts])
    n3 = np.concatenate([p[1] for p in parts])
    t2 = np.concatenate([p[2] for p in parts])
    t3 = np.concatenate([p[3] for p in parts])
    return ClickData(np.arange(trials), n2, n3, t2, t3)


def heralded_trials(write_pulses: int, herald_rate: float, seed: int) -> int:
    """Number of write pulses whose write photon is detected (Bernoulli per pulse)."""
    if write_pulses < 0:
        raise ValueError("write_pulses must be non-negative")
    draws = _run_blocks(lambda rng, n, keep: int(rng.binomial(n, herald_rate)), write_pulses, seed, "herald",
                        full=False)
    return int(sum(draws))


def decay_curve(delays, eta0: float, tau: float, noise: float, seed: int):
    """Synthetic retrieval efficiency vs storage time with Gaussian read-out noise."""
    delays = np.asarray(delays, dtype=float)
    clean = eta0 * np.exp(-((delays / tau) ** 2))
    if noise == 0:
        return clean
    return clean + block_rng(seed, "decay", 0).normal(0.0, noise, delays.size)
