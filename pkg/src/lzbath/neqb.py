"""Weak-coupling engine: non-equilibrium Bloch equations in the adiabatic frame.

The reduced density is ``rho = (1 - r . tau) / 2`` with ``tau`` the Pauli
matrices of the instantaneous eigenbasis, so ``r = (1, 0, 0)`` is the
adiabatic ground state and ``r = (-1, 0, 0)`` the excited one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _bloch_kernel
from .model import BathParams, ModelParams, cos_phi, gap, mixing_angle_rate, sin_phi, spectral_density

log = logging.getLogger(__name__)

GROUND = "ground"
EXCITED = "excited"
INITIAL_STATES = (GROUND, EXCITED)


class IntegrationError(RuntimeError):
    """The adaptive integrator failed (step-size underflow or step budget)."""


@dataclass(frozen=True)
class BlochState:
    t: float
    r_x: float
    r_y: float
    r_z: float

    @classmethod
    def from_array(cls, t: float, r) -> "BlochState":
        return cls(float(t), float(r[0]), float(r[1]), float(r[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.r_x, self.r_y, self.r_z])

    @property
    def norm(self) -> float:
        return math.sqrt(self.r_x**2 + self.r_y**2 + self.r_z**2)


@dataclass(frozen=True)
class RateSet:
    gamma1: float
    gamma2: float
    gamma_d: float
    a_theta: float
    b_theta: float
    r_x_st: float


def amplitudes(p: ModelParams, t):
    """Transverse and longitudinal projections of the bath coupling.

    ``A = cos(phi) cos(theta) - sin(phi) sin(theta)`` drives relaxation,
    ``B = sin(phi) cos(theta) + cos(phi) sin(theta)`` pure dephasing.
    """
    u, w = cos_phi(p, t), sin_phi(p, t)
    ct, st = math.cos(p.theta), math.sin(p.theta)
    return u * ct - w * st, w * ct + u * st


def _coth(b: BathParams, e):
    if b.temperature == 0:
        return np.ones_like(e)
    with np.errstate(over="ignore"):  # e / 2T -> inf is fine, tanh saturates
        return 1.0 / np.tanh(e / (2.0 * b.temperature))


def thermal_target(p: ModelParams, b: BathParams, t):
    """Equilibrium value ``r_x^st = tanh(E / 2T)`` (1 at zero temperature)."""
    e = gap(p, t)
    if b.temperature == 0:
        return np.ones_like(e)
    with np.errstate(over="ignore"):
        return np.tanh(e / (2.0 * b.temperature))


def relaxation_rate(p: ModelParams, b: BathParams, t):
    """``Gamma_1(t) = A(t)**2 (pi/2) G(E(t)) coth(E(t) / 2T)``."""
    e = gap(p, t)
    a, _ = amplitudes(p, t)
    return a * a * 0.5 * math.pi * spectral_density(b, p.delta, e) * _coth(b, e)


def dephasing_rate(p: ModelParams, b: BathParams, t):
    """Markovian pure dephasing: ``B(t)**2 gamma T`` for an Ohmic bath, zero otherwise."""
    _, bb = amplitudes(p, t)
    if not b.is_ohmic:
        return np.zeros_like(np.asarray(bb, dtype=float)) if np.ndim(bb) else 0.0
    return bb * bb * b.gamma * b.temperature


def rates(p: ModelParams, b: BathParams, t: float) -> RateSet:
    a, bb = amplitudes(p, t)
    g1 = float(relaxation_rate(p, b, t))
    gd = float(dephasing_rate(p, b, t))
    return RateSet(gamma1=g1, gamma2=0.5 * g1 + gd, gamma_d=gd, a_theta=float(a),
                   b_theta=float(bb), r_x_st=float(thermal_target(p, b, t)))


def bloch_rhs(p: ModelParams, b: BathParams, t: float, r) -> np.ndarray:
    """Right-hand side of the Bloch equations for ``r = (r_x, r_y, r_z)``."""
    if isinstance(r, BlochState):
        r = r.as_array()
    rx, ry, rz = r
    phidot = float(mixing_angle_rate(p, t))
    e = float(gap(p, t))
    rs = rates(p, b, t)
    return np.array([
        phidot * rz - rs.gamma1 * (rx - rs.r_x_st),
        -rs.gamma2 * ry - e * rz,
        e * ry - rs.gamma2 * rz - phidot * rx,
    ])


def _kernel_params(p: ModelParams, b: BathParams) -> np.ndarray:
    return np.array([p.delta, p.sweep_speed, p.theta, float(b.s), b.gamma, b.omega_c, b.temperature])


def _initial_vector(initial: str) -> np.ndarray:
    if initial == GROUND:
        return np.array([1.0, 0.0, 0.0])
    if initial == EXCITED:
        return np.array([-1.0, 0.0, 0.0])
    raise ValueError(f"initial must be one of {INITIAL_STATES}, got {initial!r}")


def final_probability(initial: str, r_x: float) -> float:
    """Probability to end in the state the protocol started in."""
    return 0.5 * (1.0 + r_x) if initial == GROUND else 0.5 * (1.0 - r_x)


@dataclass
class Trajectory:
    """Result of one protocol run from ``-t_max/2`` to ``+t_max/2``."""

    initial: str
    t_max: float
    probability: float
    times: np.ndarray
    states: np.ndarray
    max_norm: float
    n_steps: int

    def bloch_states(self) -> list[BlochState]:
        return [BlochState.from_array(t, r) for t, r in zip(self.times, self.states)]


def run_protocol(p: ModelParams, b: BathParams, initial: str = GROUND, t_max: float = 200.0,
                 rtol: float = 1e-8, atol: float = 1e-10, n_samples: int = 201,
                 max_steps: int = 200_000_000) -> Trajectory:
    """Integrate the Bloch equations across the sweep and read the final occupation.

    Parameters
    ----------
    initial : {"ground", "excited"}
        Adiabatic state occupied at ``-t_max/2``.
    t_max : float
        Protocol length; the drive runs from ``-t_max/2`` to ``+t_max/2``.
    rtol, atol : float
        Local error tolerances of the Dormand-Prince 5(4) pair.
    n_samples : int
        Number of equally spaced output times (endpoints included).

    Returns
    -------
    Trajectory
        ``probability`` is ``(1 + r_x)/2`` for a ground start (P_LZ) and
        ``(1 - r_x)/2`` for an excited start (P_ES), read in the
        instantaneous eigenbasis at ``+t_max/2``.
    """
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    y0 = _initial_vector(initial)
    times = np.linspace(-0.5 * t_max, 0.5 * t_max, max(int(n_samples), 2))
    samples, max_norm, n_steps, status, t_fail = _bloch_kernel.integrate(
        y0, times, _kernel_params(p, b), rtol, atol, max_steps)
    if status == _bloch_kernel.STATUS_STEP_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_fail:.6g}")
    if status == _bloch_kernel.STATUS_MAX_STEPS:
        raise IntegrationError(f"step budget of {max_steps} exhausted at t={t_fail:.6g}")
    return Trajectory(initial=initial, t_max=float(t_max),
                      probability=final_probability(initial, samples[-1, 0]),
                      times=times, states=samples, max_norm=float(max_norm), n_steps=int(n_steps))


def residual_relaxation(p: ModelParams, b: BathParams, t_max: float) -> float:
    """Integrated relaxation rate outside the window ``|t| < t_max/2``."""
    if b.gamma == 0:
        return 0.0
    half = 0.5 * t_max
    # exp(-E/omega_c) makes everything beyond 60 omega_c negligible
    upper = half + 60.0 * b.omega_c / p.sweep_speed
    total = 0.0
    for sign in (1.0, -1.0):
        total += integrate.quad(lambda t: float(relaxation_rate(p, b, sign * t)), half, upper, limit=500)[0]
    return total


@dataclass
class ConvergedRun:
    """Protocol result accepted by the ``t_max`` doubling controller."""

    probability: float
    t_max: float
    converged: bool
    trajectory: Trajectory
    history: list[tuple[float, float]] = field(default_factory=list)
    residual_rate: float = 0.0


def run_converged(p: ModelParams, b: BathParams, initial: str = GROUND, *, t_max_start: float = 50.0,
                  prob_tol: float = 1e-4, rate_tol: float = 1e-6, t_max_cap: float = 1.0e5,
                  rtol: float = 1e-8, n_samples: int = 201) -> ConvergedRun:
    """Run the protocol, doubling ``t_max`` until the result is converged.

    Accepts ``t_max`` once doubling changes the probability by less than
    ``prob_tol`` and the relaxation weight left outside the window is below
    ``rate_tol``. Past ``t_max_cap`` the last run is returned flagged
    ``converged=False``.
    """
    t_max = float(t_max_start)
    prev = run_protocol(p, b, initial, t_max, rtol=rtol, n_samples=n_samples)
    history = [(t_max, prev.probability)]
    while True:
        residual = residual_relaxation(p, b, t_max)
        nxt_t = 2.0 * t_max
        if nxt_t > t_max_cap:
            log.warning("t_max controller hit cap %.3g (v=%g, initial=%s)", t_max_cap, p.sweep_speed, initial)
            return ConvergedRun(prev.probability, t_max, False, prev, history, residual)
        nxt = run_protocol(p, b, initial, nxt_t, rtol=rtol, n_samples=n_samples)
        history.append((nxt_t, nxt.probability))
        if abs(nxt.probability - prev.probability) < prob_tol and residual < rate_tol:
            return ConvergedRun(prev.probability, t_max, True, prev, history, residual)
        prev, t_max = nxt, nxt_t
