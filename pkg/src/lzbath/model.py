"""Driven two-state system, bosonic bath spectrum and closed-form references.

Units: hbar = k_B = 1 and energies are measured in the tunnel coupling
``delta`` (conventionally 1), so times are in ``1/delta`` and sweep speeds
in ``delta**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

# Upper frequency limit of the bath quadratures, in units of omega_c.
CUTOFF_MULTIPLE = 50.0
TAIL_TOLERANCE = 1e-12


class QuadratureError(RuntimeError):
    """An adaptive quadrature did not reach its requested tolerance."""

    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class ModelParams:
    """Tunnel coupling, sweep speed and system-bath coupling angle."""

    delta: float = 1.0
    sweep_speed: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.sweep_speed > 0:
            raise ValueError(f"sweep_speed must be positive, got {self.sweep_speed}")
        if not -math.pi / 2 < self.theta <= math.pi / 2:
            raise ValueError(f"theta must lie in (-pi/2, pi/2], got {self.theta}")


@dataclass(frozen=True)
class BathParams:
    """Spectral exponent, coupling, cut-off and temperature of the bath.

    ``temperature == 0`` stands for beta = infinity; it is handled by
    branching (coth -> 1), never by evaluating coth at infinity.
    """

    s: float = 3.0
    gamma: float = 0.0
    omega_c: float = 5.0
    temperature: float = 0.0

    def __post_init__(self):
        if not self.s >= 1:
            raise ValueError(f"spectral exponent s must be >= 1, got {self.s}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.omega_c > 0:
            raise ValueError(f"omega_c must be positive, got {self.omega_c}")
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")

    @property
    def is_ohmic(self) -> bool:
        return self.s == 1


def bias(p: ModelParams, t):
    """Linear drive ``epsilon(t) = v t``."""
    return p.sweep_speed * np.asarray(t, dtype=float)


def hamiltonian(p: ModelParams, t: float) -> np.ndarray:
    """System Hamiltonian in the diabatic (sigma_z) basis."""
    return 0.5 * p.delta * SIGMA_X + 0.5 * p.sweep_speed * t * SIGMA_Z


def gap(p: ModelParams, t):
    """Instantaneous level splitting ``E(t) = sqrt(delta**2 + (v t)**2)``."""
    return np.hypot(p.delta, bias(p, t))


def mixing_angle(p: ModelParams, t):
    """``phi(t) = arctan(epsilon(t) / delta)``."""
    return np.arctan(bias(p, t) / p.delta)


def mixing_angle_rate(p: ModelParams, t):
    """Analytic time derivative of the mixing angle, ``v delta / E(t)**2``."""
    return p.sweep_speed * p.delta / gap(p, t) ** 2


def cos_phi(p: ModelParams, t):
    return p.delta / gap(p, t)


def sin_phi(p: ModelParams, t):
    return bias(p, t) / gap(p, t)


def thermal_factor(temperature: float, omega):
    """``coth(omega / 2T)``, equal to 1 at zero temperature."""
    omega = np.asarray(omega, dtype=float)
    if temperature == 0:
        return np.ones_like(omega)
    return 1.0 / np.tanh(omega / (2.0 * temperature))


def spectral_density(b: BathParams, delta: float, omega):
    """Bath spectral function ``gamma delta**(1-s) omega**s exp(-omega/omega_c) / pi``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0 only")
    out = b.gamma * delta ** (1.0 - b.s) / math.pi * omega**b.s * np.exp(-omega / b.omega_c)
    return out if out.ndim else float(out)


def _noise_density(b: BathParams, delta: float, omega):
    """``G(omega) coth(omega/2T)`` with its finite limit at omega = 0."""
    omega = np.asarray(omega, dtype=float)
    if b.temperature == 0:
        return spectral_density(b, delta, omega)
    pref = b.gamma * delta ** (1.0 - b.s) / math.pi
    with np.errstate(all="ignore"):
        x = omega / (2.0 * b.temperature)
        # near 0 use omega**s coth(x) = 2T omega**(s-1) * x coth(x) with x coth x -> 1
        small = 2.0 * b.temperature * omega ** (b.s - 1.0) * (1.0 + x * x / 3.0)
        out = np.where(x > 1e-8, omega**b.s / np.tanh(x), small)
    out = pref * out * np.exp(-omega / b.omega_c)
    return out if out.ndim else float(out)


def _quad(func, a, b, *, epsrel, what, **kw):
    val, err = integrate.quad(func, a, b, epsrel=epsrel, epsabs=0.0, limit=2000, full_output=1, **kw)[:2]
    scale = max(abs(val), 1e-300)
    if err > max(10 * epsrel * scale, 1e-14):
        raise QuadratureError(f"quadrature for {what} did not converge", err)
    return val


def _tail_bound(b: BathParams, delta: float, weight) -> float:
    """Absolute bound of an integrand tail beyond the cut-off multiple."""
    upper = CUTOFF_MULTIPLE * b.omega_c
    return integrate.quad(lambda w: _noise_density(b, delta, w) * weight(w), upper, np.inf, limit=200)[0]


def bath_correlation(b: BathParams, delta: float, t: float, epsrel: float = 1e-8) -> complex:
    """Bath autocorrelation ``C(t) = <B(t) B(0)>``.

    ``C(t) = int_0^inf G(w) [coth(w/2T) cos(w t) - i sin(w t)] dw``, evaluated
    by adaptive (QAWO) quadrature up to ``50 omega_c``; the tail beyond is
    bounded and added only when it exceeds ``1e-12``.
    """
    if b.gamma == 0:
        return 0j
    upper = CUTOFF_MULTIPLE * b.omega_c
    t = float(t)
    if t == 0.0:
        re = _quad(lambda w: _noise_density(b, delta, w), 0.0, upper, epsrel=epsrel, what="C(0)")
        im = 0.0
    else:
        re = _quad(lambda w: _noise_density(b, delta, w), 0.0, upper, epsrel=epsrel,
                   what=f"Re C({t})", weight="cos", wvar=t)
        im = -_quad(lambda w: spectral_density(b, delta, w), 0.0, upper, epsrel=epsrel,
                    what=f"Im C({t})", weight="sin", wvar=t)
    if _tail_bound(b, delta, lambda w: 1.0) > TAIL_TOLERANCE:
        re += integrate.quad(lambda w: _noise_density(b, delta, w), upper, np.inf,
                             weight="cos", wvar=t)[0] if t else integrate.quad(
                                 lambda w: _noise_density(b, delta, w), upper, np.inf)[0]
        if t:
            im -= integrate.quad(lambda w: spectral_density(b, delta, w), upper, np.inf,
                                 weight="sin", wvar=t)[0]
    return complex(re, im)


def _one_minus_cos(x):
    return 2.0 * np.sin(0.5 * x) ** 2


def _sin_minus_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = x * x
    series = -x * xs / 6.0 * (1.0 - xs / 20.0 * (1.0 - xs / 42.0))
    return np.where(small, series, np.sin(x) - x)


def lineshape(b: BathParams, delta: float, t: float, epsrel: float = 1e-10) -> complex:
    """Twice-integrated correlation ``g(t) = int_0^t dt' int_0^t' C(t'') dt''``.

    Double integrals of ``C`` over rectangles and triangles of the time plane
    reduce to differences of ``g`` at the corner separations.
    """
    if b.gamma == 0 or t == 0:
        return 0j
    t = float(t)
    upper = CUTOFF_MULTIPLE * b.omega_c
    # split at oscillation scale so QUADPACK resolves every period
    points = None
    n_osc = upper * abs(t) / (2 * math.pi)
    if n_osc > 20:
        points = np.linspace(0.0, upper, int(min(n_osc / 10, 500)) + 2)[1:-1]
    re = _quad(lambda w: _noise_density(b, delta, w) * _one_minus_cos(w * t) / (w * w) if w > 0
               else _noise_density(b, delta, 0.0) * 0.5 * t * t,
               0.0, upper, epsrel=epsrel, what=f"Re g({t})", points=points)
    im = _quad(lambda w: spectral_density(b, delta, w) * float(_sin_minus_x(w * t)) / (w * w) if w > 0
               else 0.0,
               0.0, upper, epsrel=epsrel, what=f"Im g({t})", points=points)
    tail = _tail_bound(b, delta, lambda w: 2.0 / (w * w) + abs(t) / w)
    if tail > TAIL_TOLERANCE:
        re += integrate.quad(lambda w: _noise_density(b, delta, w) * _one_minus_cos(w * t) / (w * w),
                             upper, np.inf, limit=500)[0]
        im += integrate.quad(lambda w: spectral_density(b, delta, w) * float(_sin_minus_x(w * t)) / (w * w),
                             upper, np.inf, limit=500)[0]
    return complex(re, im)


def coherent_probability(p: ModelParams) -> float:
    """Landau-Zener adiabatic survival without environment, ``1 - exp(-pi delta**2 / 2v)``."""
    return -math.expm1(-math.pi * p.delta**2 / (2.0 * p.sweep_speed))


def eigenstates(p: ModelParams, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous (ground, excited) eigenvectors of ``H_S(t)`` in the diabatic basis."""
    # H = (E/2)(cos phi sigma_x + sin phi sigma_z); closed form avoids eigh's sign freedom
    phi = float(mixing_angle(p, t))
    a = 0.5 * (phi + 0.5 * math.pi)
    excited = np.array([math.sin(a), math.cos(a)], dtype=complex)
    ground = np.array([math.cos(a), -math.sin(a)], dtype=complex)
    return ground, excited


def check_density_matrix(rho: np.ndarray, *, trace_tol: float = 1e-10,
                         herm_tol: float = 1e-12, eig_tol: float = 1e-8) -> None:
    """Raise ``ValueError`` unless ``rho`` is a valid 2x2 density matrix."""
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise ValueError(f"density matrix must be 2x2, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace {np.trace(rho).real:.12g} != 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -eig_tol:
        raise ValueError("density matrix has negative eigenvalues")
