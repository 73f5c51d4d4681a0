"""Compiled Dormand-Prince 5(4) integrator for the adiabatic-frame Bloch equations.

The parameter vector ``par`` is ``(delta, v, theta, s, gamma, omega_c, T)``.
"""

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40


@njit(cache=True)
def rates(t, par):
    """Return (phi', E, Gamma_1, Gamma_2, r_x^st) at time t."""
    delta, v, theta, s, gamma, omega_c, temp = par[0], par[1], par[2], par[3], par[4], par[5], par[6]
    eps = v * t
    e = math.hypot(delta, eps)
    phidot = v * delta / (e * e)
    a = (delta * math.cos(theta) - eps * math.sin(theta)) / e
    if s == 3.0:
        es = e * e * e / (delta * delta)
    elif s == 1.0:
        es = e
    else:
        es = delta ** (1.0 - s) * e**s
    g = gamma / math.pi * es * math.exp(-e / omega_c)
    if temp == 0.0:
        coth = 1.0
        rx_st = 1.0
    else:
        th = math.tanh(e / (2.0 * temp))
        coth = 1.0 / th
        rx_st = th
    g1 = a * a * 0.5 * math.pi * g * coth
    gd = 0.0
    if s == 1.0:
        bb = (eps * math.cos(theta) + delta * math.sin(theta)) / e
        gd = bb * bb * gamma * temp
    return phidot, e, g1, 0.5 * g1 + gd, rx_st


@njit(cache=True)
def rhs(t, y, par, out):
    phidot, e, g1, g2, rx_st = rates(t, par)
    out[0] = phidot * y[2] - g1 * (y[0] - rx_st)
    out[1] = -g2 * y[1] - e * y[2]
    out[2] = e * y[1] - g2 * y[2] - phidot * y[0]


@njit(cache=True)
def _error_norm(err, y, ynew, rtol, atol):
    acc = 0.0
    for i in range(3):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        acc += (err[i] / sc) ** 2
    return math.sqrt(acc / 3.0)


@njit(cache=True)
def integrate(y0, sample_times, par, rtol, atol, max_steps):
    """Integrate from ``sample_times[0]`` through every later sample time.

    Returns ``(samples, max_norm, n_steps, status, t_fail)`` where ``samples``
    has one row per sample time.
    """
    n_samp = sample_times.shape[0]
    samples = np.empty((n_samp, 3))
    y = y0.copy()
    samples[0, :] = y
    t = sample_times[0]
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    k5 = np.empty(3)
    k6 = np.empty(3)
    k7 = np.empty(3)
    tmp = np.empty(3)
    ynew = np.empty(3)
    err = np.empty(3)
    rhs(t, y, par, k1)
    # initial step from the local rotation frequency
    h = 0.01 / (abs(k1[0]) + abs(k1[1]) + abs(k1[2]) + 1e-3)
    max_norm = math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
    n_steps = 0
    for j in range(1, n_samp):
        t_end = sample_times[j]
        while t < t_end:
            if n_steps >= max_steps:
                return samples, max_norm, n_steps, STATUS_MAX_STEPS, t
            hs = h
            last = False
            if t + hs >= t_end:
                hs = t_end - t
                last = True
            if hs <= 1e-14 * max(1.0, abs(t)) and not last:
                return samples, max_norm, n_steps, STATUS_STEP_UNDERFLOW, t
            for i in range(3):
                tmp[i] = y[i] + hs * A21 * k1[i]
            rhs(t + C2 * hs, tmp, par, k2)
            for i in range(3):
                tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i])
            rhs(t + C3 * hs, tmp, par, k3)
            for i in range(3):
                tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
            rhs(t + C4 * hs, tmp, par, k4)
            for i in range(3):
                tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
            rhs(t + C5 * hs, tmp, par, k5)
            for i in range(3):
                tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
            rhs(t + hs, tmp, par, k6)
            for i in range(3):
                ynew[i] = y[i] + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
            rhs(t + hs, ynew, par, k7)
            for i in range(3):
                err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            en = _error_norm(err, y, ynew, rtol, atol)
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            if en <= 1.0:
                t = t_end if last else t + hs
                for i in range(3):
                    y[i] = ynew[i]
                    k1[i] = k7[i]
                nrm = math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
                if nrm > max_norm:
                    max_norm = nrm
                n_steps += 1
                # a clipped final step says nothing about the next proposal
                if not last:
                    h = hs * fac
            else:
                h = hs * fac
        samples[j, :] = y
    return samples, max_norm, n_steps, STATUS_OK, t
