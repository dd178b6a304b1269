"""Photon-counting statistics: g2 from SPCM records, analytic g2, arrival histograms."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
from scipy.optimize import curve_fit

from .fock import DiagonalState

CLICK_BIN = 10e-9
DEFAULT_TAUS = tuple(range(-5, 6))


@dataclass(frozen=True)
class ClickRecord:
    trial_id: int
    n2: int
    n3: int
    times2: tuple = ()
    times3: tuple = ()

    def __post_init__(self):
        if self.n2 < 0 or self.n3 < 0:
            raise ValueError("click counts must be non-negative")
        if len(self.times2) != self.n2 or len(self.times3) != self.n3:
            raise ValueError(f"trial {self.trial_id}: number of arrival bins does not match counts")


@dataclass(frozen=True, eq=False)
class ClickData:
    """Columnar store of click records.

    Arrival bins of all trials are concatenated in trial order; trial ``i``
    owns ``times2[off2[i]:off2[i] + n2[i]]``.
    """

    trial_id: np.ndarray
    n2: np.ndarray
    n3: np.ndarray
    times2: np.ndarray = field(repr=False)
    times3: np.ndarray = field(repr=False)

    def __post_init__(self):
        arrs = {k: np.asarray(getattr(self, k), dtype=np.int64) for k in ("trial_id", "n2", "n3", "times2", "times3")}
        for k, v in arrs.items():
            object.__setattr__(self, k, v)
        if not (arrs["trial_id"].shape == arrs["n2"].shape == arrs["n3"].shape):
            raise ValueError("trial_id, n2 and n3 must have equal lengths")
        if np.any(arrs["n2"] < 0) or np.any(arrs["n3"] < 0):
            raise ValueError("click counts must be non-negative")
        if arrs["n2"].sum() != arrs["times2"].size or arrs["n3"].sum() != arrs["times3"].size:
            raise ValueError("number of arrival bins does not match click counts")

    @classmethod
    def from_records(cls, records) -> "ClickData":
        records = list(records)
        return cls(
            [r.trial_id for r in records],
            [r.n2 for r in records],
            [r.n3 for r in records],
            [t for r in records for t in r.times2],
            [t for r in records for t in r.times3],
        )

    def __len__(self):
        return self.n2.size

    def _offsets(self, counts):
        return np.concatenate([[0], np.cumsum(counts)])

    def __getitem__(self, i: int) -> ClickRecord:
        o2 = int(self.n2[:i].sum())
        o3 = int(self.n3[:i].sum())
        return ClickRecord(
            int(self.trial_id[i]), int(self.n2[i]), int(self.n3[i]),
            tuple(int(t) for t in self.times2[o2:o2 + self.n2[i]]),
            tuple(int(t) for t in self.times3[o3:o3 + self.n3[i]]),
        )

    def __iter__(self):
        o2 = self._offsets(self.n2)
        o3 = self._offsets(self.n3)
        for i in range(len(self)):
            yield ClickRecord(
                int(self.trial_id[i]), int(self.n2[i]), int(self.n3[i]),
                tuple(int(t) for t in self.times2[o2[i]:o2[i + 1]]),
                tuple(int(t) for t in self.times3[o3[i]:o3[i + 1]]),
            )

    def swapped(self) -> "ClickData":
        """Same data with the SPCM2 and SPCM3 labels exchanged."""
        return ClickData(self.trial_id, self.n3, self.n2, self.times3, self.times2)


def _as_click_data(records) -> ClickData:
    return records if isinstance(records, ClickData) else ClickData.from_records(records)


@dataclass(frozen=True)
class G2Estimate:
    tau: int
    value: float
    stderr: float


def _category_bootstrap(cols: np.ndarray, stat, n_boot: int, rng: np.random.Generator) -> float:
    """Bootstrap over rows of small-integer ``cols`` by resampling category counts.

    Resampling rows with replacement is the same as drawing multinomial counts
    over the distinct rows, which keeps 10^7 trials cheap.
    """
    base = int(cols.max()) + 1
    code = np.zeros(cols.shape[0], dtype=np.int64)
    for j in range(cols.shape[1]):
        code = code * base + cols[:, j]
    ucode, counts = np.unique(code, return_counts=True)
    cats = np.empty((ucode.size, cols.shape[1]), dtype=np.int64)
    for j in range(cols.shape[1] - 1, -1, -1):
        cats[:, j] = ucode % base
        ucode = ucode // base
    n = counts.sum()
    draws = rng.multinomial(n, counts / n, size=n_boot)
    vals = np.array([stat(cats, w) for w in draws])
    vals = vals[np.isfinite(vals)]
    return float(vals.std(ddof=1)) if vals.size > 1 else float("nan")


def g2_from_counts(records, tau: int = 0, n_boot: int = 1000, seed: int = 0) -> G2Estimate:
    """<n2(i) n3(i + tau)> / (<n2> <n3>), with tau counted in heralded trials."""
    data = _as_click_data(records)
    n = len(data)
    if n < 2:
        raise ValueError("need at least 2 records")
    if abs(tau) >= n:
        raise ValueError(f"|tau| = {abs(tau)} must be smaller than the record count {n}")
    n2 = data.n2.astype(float)
    n3 = data.n3.astype(float)
    m2, m3 = n2.mean(), n3.mean()
    if m2 == 0 or m3 == 0:
        raise ValueError("g2 undefined: a detector recorded no clicks")
    if tau >= 0:
        a, b = data.n2[: n - tau], data.n3[tau:]
    else:
        a, b = data.n2[-tau:], data.n3[: n + tau]
    value = float(np.mean(a * b.astype(float)) / (m2 * m3))

    if n_boot:
        cols = np.stack([a, b], axis=1) if tau == 0 else np.stack(
            [a, b, data.n3[: a.size] if tau >= 0 else data.n3[-tau:]], axis=1)

        def stat(c, w):
            tot = w.sum()
            num = (w * c[:, 0] * c[:, 1]).sum() / tot
            d2 = (w * c[:, 0]).sum() / tot
            d3 = (w * c[:, -1]).sum() / tot
            return num / (d2 * d3) if d2 > 0 and d3 > 0 else np.nan

        stderr = _category_bootstrap(cols, stat, n_boot, np.random.default_rng(seed))
    else:
        stderr = float("nan")
    return G2Estimate(tau=int(tau), value=value, stderr=stderr)


def g2_table(records, taus=DEFAULT_TAUS, n_boot: int = 1000, seed: int = 0) -> list[G2Estimate]:
    data = _as_click_data(records)
    return [g2_from_counts(data, t, n_boot=n_boot, seed=seed) for t in taus]


def g2_theory(state: DiagonalState) -> float:
    """Normalized second factorial moment sum n(n-1) p_n / nbar^2."""
    n = np.arange(state.cutoff + 1)
    nbar = float(n @ state.populations)
    if nbar == 0:
        raise ValueError("g2 undefined for the vacuum")
    return float((n * (n - 1)) @ state.populations) / nbar**2


def two_photon_for_g2(p1: float, g2: float) -> float:
    """Two-photon population p2 giving ``g2`` when the single-photon population is ``p1``.

    Solves 2 p2 = g2 (p1 + 2 p2)^2 for its small root.
    """
    a, b, c = 4 * g2, 4 * g2 * p1 - 2, g2 * p1 * p1
    disc = b * b - 4 * a * c
    if g2 <= 0:
        return 0.0
    if disc < 0:
        raise ValueError(f"no two-photon population reaches g2={g2} with p1={p1}")
    return (-b - sqrt(disc)) / (2 * a)


def arrival_histogram(records, which: str = "both", n_bins: int | None = None):
    """Counts per 10 ns arrival bin for SPCM ``"2"``, ``"3"`` or ``"both"``.

    Returns ``(edges, counts)`` with edges in seconds at multiples of 10 ns.
    """
    data = _as_click_data(records)
    if which == "2":
        bins = data.times2
    elif which == "3":
        bins = data.times3
    elif which == "both":
        bins = np.concatenate([data.times2, data.times3])
    else:
        raise ValueError(f"detector selector must be '2', '3' or 'both', got {which!r}")
    if n_bins is None:
        n_bins = int(bins.max()) + 1 if bins.size else 1
    if bins.size and bins.max() >= n_bins:
        raise ValueError(f"arrival bin {bins.max()} beyond histogram range {n_bins}")
    counts = np.bincount(bins, minlength=n_bins)
    edges = np.arange(n_bins + 1) * CLICK_BIN
    return edges, counts


def fit_arrival_width(edges, counts) -> tuple[float, float]:
    """Fit ``A exp(-(t - t0)^2 / w^2)`` to a histogram; returns ``(t0, w)``.

    ``w`` is the 1/e half-width of the intensity profile.
    """
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if counts.sum() <= 0:
        raise ValueError("empty histogram")
    t = 0.5 * (edges[:-1] + edges[1:])
    mu = (t * counts).sum() / counts.sum()
    sd = sqrt(((t - mu) ** 2 * counts).sum() / counts.sum())
    scale = 1e-9

    def model(tt, amp, t0, w):
        return amp * np.exp(-((tt - t0) ** 2) / w**2)

    sigma = np.sqrt(np.maximum(counts, 1.0))
    popt, _ = curve_fit(model, t / scale, counts, p0=(counts.max(), mu / scale, sqrt(2) * sd / scale),
                        sigma=sigma, maxfev=10_000)
    return popt[1] * scale, abs(popt[2]) * scale
