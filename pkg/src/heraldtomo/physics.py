"""Closed-form physics of the atom-cavity memory and the detection efficiency budget."""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np

# CODATA 2018
BOLTZMANN = 1.380649e-23  # J/K, exact
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
RB87_MASS_U = 86.909180
RB87_MASS = RB87_MASS_U * ATOMIC_MASS_UNIT
D1_WAVELENGTH = 795e-9


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CavityParams:
    N: float
    g: float
    kappa: float
    gamma: float

    def __post_init__(self):
        for name in ("N", "g", "kappa", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class AtomParams:
    mass: float = RB87_MASS
    temperature: float = 50e-6
    wavelength: float = D1_WAVELENGTH

    def __post_init__(self):
        for name in ("mass", "temperature", "wavelength"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def cooperativity(params: CavityParams) -> float:
    return params.N * params.g**2 / (params.kappa * params.gamma)


def eta_max(C: float) -> float:
    """Retrieval efficiency limit C / (1 + C) set by the cavity cooperativity."""
    if C < 0:
        raise ValueError("cooperativity must be non-negative")
    return C / (1.0 + C)


def doppler_time(params: AtomParams) -> float:
    """Gaussian dephasing time sqrt(m / kB T) / 2k of a counter-propagating spin wave."""
    k = 2 * pi / params.wavelength
    return sqrt(params.mass / (BOLTZMANN * params.temperature)) / (2 * k)


def dephasing_contrast(params: AtomParams, delays, n_atoms: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """Monte-Carlo retrieval contrast |<exp(i 2k v t)>|^2 over thermal velocities."""
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, sqrt(BOLTZMANN * params.temperature / params.mass), n_atoms)
    q = 2 * (2 * pi / params.wavelength)
    out = []
    for t in np.atleast_1d(np.asarray(delays, dtype=float)):
        phase = q * v * t
        out.append(np.mean(np.cos(phase)) ** 2 + np.mean(np.sin(phase)) ** 2)
    return np.array(out)


@dataclass(frozen=True)
class DecayCurve:
    delays: np.ndarray
    efficiencies: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        e = np.asarray(self.efficiencies, dtype=float)
        if d.shape != e.shape or d.ndim != 1:
            raise ValueError("delays and efficiencies must be 1-D arrays of equal length")
        if np.any(np.diff(d) <= 0):
            raise ValueError("delays must be strictly increasing")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "efficiencies", e)
        if self.errors is not None:
            s = np.asarray(self.errors, dtype=float)
            if s.shape != d.shape or np.any(s <= 0):
                raise ValueError("errors must be positive and match delays")
            object.__setattr__(self, "errors", s)


@dataclass(frozen=True)
class DecayFit:
    eta0: float
    tau: float
    residual: float
    ill_conditioned: bool
    iterations: int


def fit_gaussian_decay(curve: DecayCurve, max_iter: int = 100) -> DecayFit:
    """Least-squares fit of ``eta0 * exp(-(t / tau)^2)``.

    The fit runs in (eta0, r = 1/tau^2) so a flat curve stays finite (r -> 0).
    Start from a straight-line fit of log(eta) against t^2, then refine with
    Levenberg-Marquardt damped Gauss-Newton. A fitted ``tau`` longer than the
    largest delay (or no decay at all) is flagged ill-conditioned.
    """
    t, y = curve.delays, curve.efficiencies
    if t.size < 3:
        raise ValueError("need at least 3 points")
    w = np.ones_like(y) if curve.errors is None else 1.0 / curve.errors
    scale = float(t.max()) if t.max() > 0 else 1.0
    s = (t / scale) ** 2

    pos = y > 0
    if pos.sum() >= 2:
        slope, intercept = np.polyfit(s[pos], np.log(y[pos]), 1, w=(w * y)[pos])
        theta = np.array([np.exp(intercept), -slope])
    else:
        theta = np.array([max(y.max(), 1e-12), 1.0])

    def resid(th):
        return w * (th[0] * np.exp(-th[1] * s) - y)

    lam = 1e-3
    r = resid(theta)
    cost = r @ r
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        e = np.exp(-theta[1] * s)
        J = np.stack([w * e, -w * theta[0] * s * e], axis=1)
        A = J.T @ J
        g = J.T @ r
        step_taken = False
        while lam < 1e12:
            step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-300), -g)
            trial = theta + step
            rt = resid(trial)
            ct = rt @ rt
            if ct <= cost:
                theta, r, lam = trial, rt, max(lam / 10, 1e-12)
                small = np.all(np.abs(step) <= 1e-12 * (np.abs(theta) + 1e-12)) or cost - ct <= 1e-15 * cost
                cost = ct
                step_taken = True
                break
            lam *= 10
        if not step_taken or small:
            converged = True
            break
    if not converged:
        raise FitError(
            f"decay fit did not converge in {max_iter} iterations "
            f"(eta0={theta[0]:.6g}, rate={theta[1]:.6g}, cost={cost:.6g})"
        )
    rate = theta[1] / scale**2
    tau = 1.0 / sqrt(rate) if rate > 0 else float("inf")
    model = theta[0] * np.exp(-rate * t**2)
    residual = float(np.sqrt(np.mean((model - y) ** 2)))
    return DecayFit(
        eta0=float(theta[0]),
        tau=tau,
        residual=residual,
        ill_conditioned=bool(tau > t.max()),
        iterations=it,
    )


def efficiency_budget(chain) -> tuple[float, dict]:
    """Homodyne efficiency eta_hd * eta_m^2 * eta_q and its factors."""
    factors = {
        "optical transmission (eta_hd)": chain.eta_hd,
        "mode matching (eta_m^2)": chain.eta_m**2,
        "photodiode quantum efficiency (eta_q)": chain.eta_q,
    }
    return float(np.prod(list(factors.values()))), factors
