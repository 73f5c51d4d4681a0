"""Crossing-time windows: relaxation-rate profiles, integrated weights and the P_LZ minimum."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import neqb
from .model import BathParams, ModelParams, gap
from .neqb import relaxation_rate

# integration range in units of omega_c, measured in the bias epsilon = v t
EPS_CUTOFF = 60.0


class NoInteriorMinimum(ValueError):
    """The probability has no interior minimum on the supplied v-grid."""

    def __init__(self, message: str, v_grid, probabilities):
        super().__init__(message)
        self.v_grid = np.asarray(v_grid)
        self.probabilities = np.asarray(probabilities)


def _rate_in_bias(p: ModelParams, b: BathParams):
    return lambda eps: float(relaxation_rate(p, b, eps / p.sweep_speed))


def _integrate_rate(p: ModelParams, b: BathParams, lo: float, hi: float, epsrel: float) -> float:
    """Integral of Gamma_1 over the bias range [lo, hi] (i.e. v * int dt Gamma_1)."""
    f = _rate_in_bias(p, b)
    # peaks sit at gaps of a few omega_c; give QUADPACK the scale
    pts = [x for x in (-3 * b.omega_c, -b.omega_c, 0.0, b.omega_c, 3 * b.omega_c) if lo < x < hi]
    val, err = integrate.quad(f, lo, hi, points=pts or None, epsrel=epsrel, epsabs=0.0, limit=1000)
    if err > 10 * epsrel * abs(val) and err > 1e-300:
        raise RuntimeError(f"relaxation-rate quadrature failed (error estimate {err:.3e})")
    return val


def xi_weight(p: ModelParams, b: BathParams, epsrel: float = 1e-6) -> float:
    """Normalized integrated relaxation weight ``(2 v / (gamma delta**2)) int dt Gamma_1``.

    The normalization removes the trivial dependence on sweep speed and
    coupling strength. Only zero temperature is supported.
    """
    if b.temperature != 0:
        raise ValueError("integrated relaxation weights are defined at zero temperature only")
    if b.gamma == 0:
        raise ValueError("gamma must be positive to normalize the relaxation weight")
    cut = EPS_CUTOFF * b.omega_c
    core = _integrate_rate(p, b, -cut, cut, epsrel)
    f = _rate_in_bias(p, b)
    tail = integrate.quad(f, cut, np.inf)[0] + integrate.quad(f, -np.inf, -cut)[0]
    if tail > epsrel * core:
        raise RuntimeError(f"relaxation weight tail {tail:.3e} beyond |eps| = {cut:g} is not negligible")
    return 2.0 * (core + tail) / (b.gamma * p.delta**2)


@dataclass
class WindowProfile:
    """Relaxation rate sampled across the sweep, in units of ``gamma * delta``."""

    t: np.ndarray
    gamma1: np.ndarray
    peaks: np.ndarray
    peak_gaps: np.ndarray
    half_width: float


def _refine_peak(f, lo: float, hi: float) -> float:
    res = optimize.minimize_scalar(lambda x: -f(x), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10 * max(1.0, abs(hi - lo))})
    return float(res.x)


def window_profile(p: ModelParams, b: BathParams, t_grid) -> WindowProfile:
    """Sample ``Gamma_1(t)`` on ``t_grid`` and locate its peaks and window width.

    Peaks are the sampled local maxima refined by bounded minimization;
    ``half_width`` is the smallest ``tau`` with 99 % of the total relaxation
    weight inside ``|t| < tau``.
    """
    t = np.asarray(t_grid, dtype=float)
    if b.gamma == 0:
        raise ValueError("gamma must be positive for a relaxation profile")
    scale = b.gamma * p.delta
    rate = np.asarray(relaxation_rate(p, b, t), dtype=float)
    f = lambda x: float(relaxation_rate(p, b, x))
    peaks = []
    for i in range(len(t)):
        left = rate[i - 1] if i > 0 else -np.inf
        right = rate[i + 1] if i < len(t) - 1 else -np.inf
        if rate[i] > left and rate[i] >= right:
            if 0 < i < len(t) - 1:
                peaks.append(_refine_peak(f, t[i - 1], t[i + 1]))
            else:
                peaks.append(float(t[i]))
    peaks = np.array(peaks)

    cut = EPS_CUTOFF * b.omega_c / p.sweep_speed
    total = _integrate_rate(p, b, -cut * p.sweep_speed, cut * p.sweep_speed, 1e-8)

    def inside(tau):
        return _integrate_rate(p, b, -tau * p.sweep_speed, tau * p.sweep_speed, 1e-8) - 0.99 * total

    half_width = optimize.brentq(inside, 0.0, cut, xtol=1e-8 * cut)
    return WindowProfile(t=t, gamma1=rate / scale, peaks=peaks,
                         peak_gaps=np.asarray(gap(p, peaks), dtype=float) if peaks.size else peaks,
                         half_width=float(half_width))


Engine = Callable[[ModelParams, BathParams], float]


def neqb_lz_probability(p: ModelParams, b: BathParams) -> float:
    """P_LZ from the Bloch equations with the default ``t_max`` controller."""
    return neqb.run_converged(p, b, neqb.GROUND, t_max_cap=4.0e5).probability


@dataclass
class VMinResult:
    v_min: float
    probability: float
    v_grid: np.ndarray
    grid_probabilities: np.ndarray
    n_evaluations: int


def find_v_min(v_grid, b: BathParams, *, theta: float = 0.0, delta: float = 1.0,
               engine: Engine = neqb_lz_probability, rel_tol: float = 1e-2) -> VMinResult:
    """Locate the dissipation-induced minimum of ``P(v)``.

    Scans ``v_grid`` and refines the bracket around the smallest value by
    golden-section search to relative precision ``rel_tol`` in ``v``.
    Raises ``NoInteriorMinimum`` if the smallest grid value sits on the
    boundary of the grid.
    """
    v_grid = np.asarray(sorted(v_grid), dtype=float)
    if v_grid.size < 3:
        raise ValueError("need at least three sweep speeds to bracket a minimum")
    cache: dict[float, float] = {}

    def prob(v):
        v = float(v)
        if v not in cache:
            cache[v] = engine(ModelParams(delta=delta, sweep_speed=v, theta=theta), b)
        return cache[v]

    probs = np.array([prob(v) for v in v_grid])
    i = int(np.argmin(probs))
    if i == 0 or i == v_grid.size - 1:
        raise NoInteriorMinimum(f"minimum of P(v) lies on the grid boundary v={v_grid[i]:g}", v_grid, probs)
    # golden section in log v: relative precision in v
    res = optimize.minimize_scalar(lambda x: prob(math.exp(x)),
                                   bracket=(math.log(v_grid[i - 1]), math.log(v_grid[i]), math.log(v_grid[i + 1])),
                                   method="golden", options={"xtol": rel_tol / abs(math.log(v_grid[i]) or 1.0)})
    v_best = math.exp(res.x)
    best = prob(v_best)
    if probs[i] < best:
        v_best, best = float(v_grid[i]), float(probs[i])
    return VMinResult(v_min=v_best, probability=best, v_grid=v_grid, grid_probabilities=probs,
                      n_evaluations=len(cache))
