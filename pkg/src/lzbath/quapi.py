"""Quasi-adiabatic path integral with a memory-truncated influence functional.

Path variables are the eigenvalues ``+-1/2`` of the coupling operator
``O = (sigma_z cos(theta) + sigma_x sin(theta)) / 2``. A forward/backward
pair ``(s+, s-)`` is packed into one index ``alpha = 2 i + j`` where ``i``
(``j``) labels the forward (backward) eigenvalue, eigenvalue ``+1/2`` first.

Grid point ``k`` sits at ``t_k = t_0 + k dt``. With the symmetric Trotter
splitting each interior grid point carries the bath interaction over
``[t_k - dt/2, t_k + dt/2]``; the first and last grid points carry half
that interval. The influence coefficients are the double integrals of the
bath correlation over these intervals.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import neqb
from .model import BathParams, ModelParams, eigenstates, gap, lineshape

log = logging.getLogger(__name__)

K_MAX_CAP = 12
DEFAULT_MEMORY_BUDGET = 2 * 1024**3  # bytes
# live arrays of 4**(k_max+1) complex entries during one step
_ARRAYS_PER_STEP = 6

_SPLUS = np.array([0.5, 0.5, -0.5, -0.5])
_SMINUS = np.array([0.5, -0.5, 0.5, -0.5])
_DS = _SPLUS - _SMINUS


class MemoryBudgetError(ValueError):
    """The augmented tensor would not fit the configured memory budget."""


class NumericalBlowUp(FloatingPointError):
    """Non-finite entries appeared in the augmented density tensor."""

    def __init__(self, slice_index: int):
        super().__init__(f"non-finite augmented density at slice {slice_index}")
        self.slice_index = slice_index


class ConvergenceFailure(RuntimeError):
    """The convergence scan could not stabilize within its budget."""

    def __init__(self, message: str, report: "ConvergenceReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ConvergenceParams:
    """Trotter slice, memory length and protocol window of a QUAPI run."""

    dt: float
    k_max: int
    t_max: float
    tol_p: float = 1e-2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 1 <= self.k_max <= K_MAX_CAP:
            raise ValueError(f"k_max must be in [1, {K_MAX_CAP}], got {self.k_max}")
        ratio = self.t_max / self.dt
        n = round(ratio)
        if abs(ratio - n) > 1e-9 * max(1.0, ratio) or n % 2:
            raise ValueError(f"t_max/dt must be an even integer, got {ratio:.12g}")
        if n < 2 * self.k_max:
            raise ValueError(f"t_max/dt = {n} must be at least 2*k_max = {2 * self.k_max}")
        if not self.tol_p > 0:
            raise ValueError(f"tol_p must be positive, got {self.tol_p}")

    @property
    def n_slices(self) -> int:
        return int(round(self.t_max / self.dt))

    @classmethod
    def snapped(cls, dt: float, k_max: int, t_max: float, tol_p: float = 1e-2) -> "ConvergenceParams":
        """Round ``t_max`` up to an even number of slices (at least ``2 k_max``)."""
        n = max(2 * math.ceil(t_max / (2 * dt) - 1e-9), 2 * k_max)
        n += n % 2
        return cls(dt=dt, k_max=k_max, t_max=n * dt, tol_p=tol_p)


def tensor_bytes(k_max: int) -> int:
    return _ARRAYS_PER_STEP * 16 * 4 ** (k_max + 1)


def check_memory(k_max: int, budget: int = DEFAULT_MEMORY_BUDGET) -> None:
    need = tensor_bytes(k_max)
    if need > budget:
        raise MemoryBudgetError(f"k_max={k_max} needs ~{need / 2**20:.0f} MiB, budget is {budget / 2**20:.0f} MiB")


# --- influence coefficients -------------------------------------------------

@dataclass
class InfluenceKernel:
    """Discretized influence coefficients for slice width ``dt``.

    ``g_half[m]`` holds the lineshape function at ``m dt / 2``; every
    coefficient is a signed sum of four of these values.
    """

    dt: float
    k_max: int
    g_half: np.ndarray
    model: ModelParams
    bath: BathParams

    @staticmethod
    def interval(k: int, n_last: int) -> tuple[int, int]:
        """Bath interval of grid point ``k`` in half-slice units from ``t_0``."""
        if k == 0:
            return (0, 0) if n_last == 0 else (0, 1)
        if k == n_last:
            return 2 * k - 1, 2 * k
        return 2 * k - 1, 2 * k + 1

    def pair(self, k: int, kp: int, n_last: int) -> complex:
        """Coefficient coupling point ``k`` to an earlier point ``kp``."""
        if not k > kp >= 0:
            raise ValueError("pair coefficients need k > kp >= 0")
        a, b = self.interval(k, n_last)
        c, d = self.interval(kp, n_last)
        g = self.g_half
        return g[b - c] - g[b - d] - g[a - c] + g[a - d]

    def self_term(self, k: int, n_last: int) -> complex:
        a, b = self.interval(k, n_last)
        return self.g_half[b - a]

    @property
    def eta(self) -> np.ndarray:
        """Interior coefficients for separations ``0 .. k_max``."""
        far = 10 * (self.k_max + 2)
        out = [self.self_term(far, 10 * far)]
        out += [self.pair(far, far - d, 10 * far) for d in range(1, self.k_max + 1)]
        return np.array(out)

    @property
    def eta_first(self) -> np.ndarray:
        """Coefficients coupling an interior point to the first grid point (index = separation)."""
        out = [self.self_term(0, 10 * self.k_max + 10)]
        out += [self.pair(d, 0, 10 * self.k_max + 10) for d in range(1, self.k_max + 1)]
        return np.array(out)

    @property
    def eta_last(self) -> np.ndarray:
        """Coefficients coupling the last grid point to interior points (index = separation)."""
        n = 10 * (self.k_max + 2)
        out = [self.self_term(n, n)]
        out += [self.pair(n, n - d, n) for d in range(1, self.k_max + 1)]
        return np.array(out)


def build_kernel(p: ModelParams, b: BathParams, cp: ConvergenceParams | None = None, *,
                 dt: float | None = None, k_max: int | None = None) -> InfluenceKernel:
    """Tabulate the influence coefficients for ``cp.dt`` and memory ``cp.k_max``.

    Either pass ``cp`` or the pair ``dt``/``k_max``; the latter allows
    windows that are not full protocol runs (such as untruncated test
    instances).
    """
    if cp is not None:
        dt, k_max = cp.dt, cp.k_max
    if dt is None or k_max is None:
        raise ValueError("need ConvergenceParams or explicit dt and k_max")
    m = np.arange(2 * k_max + 3)
    try:
        g_half = np.array([lineshape(b, p.delta, 0.5 * dt * mm) for mm in m])
    except Exception as exc:  # QuadratureError carries the error estimate
        raise type(exc)(f"building influence kernel (dt={dt}, k_max={k_max}): {exc}") from exc
    return InfluenceKernel(dt=float(dt), k_max=int(k_max), g_half=g_half, model=p, bath=b)


def _self_factor(eta: complex) -> np.ndarray:
    return np.exp(-_DS * (eta * _SPLUS - np.conj(eta) * _SMINUS))


def _pair_factor(eta: complex) -> np.ndarray:
    """Factor indexed ``[alpha_k, alpha_kp]``."""
    return np.exp(-_DS[:, None] * (eta * _SPLUS[None, :] - np.conj(eta) * _SMINUS[None, :]))


def _influence_tensor(kernel: InfluenceKernel, k: int, depth: int, n_last: int) -> np.ndarray:
    """Influence weights of point ``k`` with itself and its ``depth`` predecessors.

    Axis 0 is ``alpha_k``, axis ``d`` is ``alpha_{k-d}``; predecessors before
    the first grid point are padding axes carrying weight 1.
    """
    shape = [4] + [1] * depth
    tens = _self_factor(kernel.self_term(k, n_last)).reshape(shape)
    for d in range(1, depth + 1):
        kp = k - d
        if kp < 0:
            break
        sh = [4] + [1] * depth
        sh[d] = 4
        tens = tens * _pair_factor(kernel.pair(k, kp, n_last)).reshape(sh)
    return np.broadcast_to(tens, (4,) * (depth + 1)).reshape(-1)


# --- system propagator -------------------------------------------------------

def coupling_basis(theta: float) -> np.ndarray:
    """Columns are the eigenvectors of ``O`` for eigenvalues ``+1/2`` and ``-1/2``."""
    c, s = math.cos(0.5 * theta), math.sin(0.5 * theta)
    return np.array([[c, -s], [s, c]])


def slice_unitary(p: ModelParams, t_mid: float, dt: float) -> np.ndarray:
    """``exp(-i H_S(t_mid) dt)`` in the diabatic basis (closed form for 2x2)."""
    e = float(gap(p, t_mid))
    eps = p.sweep_speed * t_mid
    c, s = math.cos(0.5 * e * dt), math.sin(0.5 * e * dt)
    return np.array([[c - 1j * s * eps / e, -1j * s * p.delta / e],
                     [-1j * s * p.delta / e, c + 1j * s * eps / e]])


def short_time_propagator(p: ModelParams, t_k: float, dt: float) -> np.ndarray:
    """Superoperator slice ``U (x) U*`` from ``t_k`` to ``t_k + dt`` in the coupling eigenbasis.

    Indexed ``[alpha', alpha]`` with the packing of this module.
    """
    v = coupling_basis(p.theta)
    u = v.T @ slice_unitary(p, t_k + 0.5 * dt, dt) @ v
    return np.kron(u, u.conj())


# --- propagation ---------------------------------------------------------------

@dataclass
class QuapiTrajectory:
    """Reduced density matrices (diabatic basis) at the recorded grid points."""

    times: np.ndarray
    rho: np.ndarray
    probability: float | None = None
    initial: str | None = None
    params: ConvergenceParams | None = None
    wall_time: float = 0.0

    @property
    def traces(self) -> np.ndarray:
        return np.real(np.trace(self.rho, axis1=1, axis2=2))

    @property
    def populations(self) -> np.ndarray:
        """Diabatic populations ``(<up|rho|up>, <down|rho|down>)`` per recorded point."""
        return np.real(np.stack([self.rho[:, 0, 0], self.rho[:, 1, 1]], axis=1))


def _to_coupling_basis(rho: np.ndarray, theta: float) -> np.ndarray:
    v = coupling_basis(theta)
    return v.T @ rho @ v


def _from_coupling_basis(rho: np.ndarray, theta: float) -> np.ndarray:
    v = coupling_basis(theta)
    return v @ rho @ v.T


def propagate_window(p: ModelParams, b: BathParams, *, dt: float, k_max: int, t_start: float,
                     n_slices: int, rho0: np.ndarray, kernel: InfluenceKernel | None = None,
                     record_every: int = 1, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> QuapiTrajectory:
    """Propagate ``rho0`` (diabatic basis) over ``n_slices`` slices from ``t_start``.

    The memory depth is ``min(k_max, n_slices)``; with ``k_max >= n_slices``
    the influence functional is kept in full. ``record_every=0`` records
    only the first and last points.
    """
    depth = min(int(k_max), int(n_slices))
    check_memory(depth, memory_budget)
    if kernel is None or kernel.k_max < depth or kernel.dt != dt:
        kernel = build_kernel(p, b, dt=dt, k_max=max(depth, 1))
    n = int(n_slices)
    rho_c = _to_coupling_basis(np.asarray(rho0, dtype=complex), p.theta)
    aug = np.zeros((4, 4**depth), dtype=complex)
    aug[:, 0] = rho_c.reshape(-1)
    aug = aug.reshape(-1)

    interior_cache: np.ndarray | None = None
    endpoint_cache: np.ndarray | None = None

    def interior(k):
        nonlocal interior_cache
        if k > depth:
            if interior_cache is None:
                interior_cache = _influence_tensor(kernel, k, depth, n + 1)
            return interior_cache
        return _influence_tensor(kernel, k, depth, n + 1)

    def endpoint(k):
        nonlocal endpoint_cache
        if k > depth:
            if endpoint_cache is None:
                endpoint_cache = _influence_tensor(kernel, k, depth, k)
            return endpoint_cache
        return _influence_tensor(kernel, k, depth, k)

    def readout(k):
        vec = (aug * endpoint(k)).reshape(4, -1).sum(axis=1)
        if not np.all(np.isfinite(vec)):
            raise NumericalBlowUp(k)
        return _from_coupling_basis(vec.reshape(2, 2), p.theta)

    times, rhos = [], []
    for k in range(n):
        if k == 0 or (record_every and k % record_every == 0):
            times.append(t_start + k * dt)
            rhos.append(readout(k))
        aug = (aug * interior(k)).reshape(-1, 4).sum(axis=1)
        sup = short_time_propagator(p, t_start + k * dt, dt)
        aug = (sup[:, :, None] * aug.reshape(4, -1)[None, :, :]).reshape(-1)
        if not record_every and k % 64 == 63 and not np.isfinite(aug.sum()):
            raise NumericalBlowUp(k + 1)
    times.append(t_start + n * dt)
    rhos.append(readout(n))
    return QuapiTrajectory(times=np.array(times), rho=np.array(rhos))


def initial_density(p: ModelParams, t: float, initial: str) -> np.ndarray:
    ground, excited = eigenstates(p, t)
    psi = ground if initial == neqb.GROUND else excited
    return np.outer(psi, psi.conj())


def propagate(p: ModelParams, b: BathParams, cp: ConvergenceParams, initial: str = neqb.GROUND, *,
              kernel: InfluenceKernel | None = None, record_every: int = 1,
              memory_budget: int = DEFAULT_MEMORY_BUDGET) -> QuapiTrajectory:
    """Run the sweep from ``-t_max/2`` to ``+t_max/2`` and read the final occupation.

    The system starts in the exact instantaneous eigenstate selected by
    ``initial``; the returned ``probability`` is the projection onto the
    same instantaneous eigenstate (ground or excited) at ``+t_max/2``.
    """
    if initial not in neqb.INITIAL_STATES:
        raise ValueError(f"initial must be one of {neqb.INITIAL_STATES}, got {initial!r}")
    check_memory(cp.k_max, memory_budget)
    t0 = time.perf_counter()
    half = 0.5 * cp.t_max
    traj = propagate_window(p, b, dt=cp.dt, k_max=cp.k_max, t_start=-half, n_slices=cp.n_slices,
                            rho0=initial_density(p, -half, initial), kernel=kernel,
                            record_every=record_every, memory_budget=memory_budget)
    ground, excited = eigenstates(p, half)
    psi = ground if initial == neqb.GROUND else excited
    traj.probability = float(np.real(psi.conj() @ traj.rho[-1] @ psi))
    traj.initial = initial
    traj.params = cp
    traj.wall_time = time.perf_counter() - t0
    return traj


# --- convergence scan ----------------------------------------------------------

@dataclass
class ScanRow:
    stage: str
    dt: float
    k_max: int
    t_max: float
    probability: float
    change: float | None
    wall_time: float


@dataclass
class ConvergenceReport:
    rows: list[ScanRow] = field(default_factory=list)
    accepted: ConvergenceParams | None = None
    probability: float | None = None
    converged: bool = False
    reason: str = ""

    def stage(self, name: str) -> list[ScanRow]:
        return [r for r in self.rows if r.stage == name]


def converge(p: ModelParams, b: BathParams, initial: str = neqb.GROUND, tol_p: float = 1e-2, *,
             dt_start: float = 0.1, max_halvings: int = 3, k_max_cap: int = 10,
             t_max_start: float = 50.0, t_max_cap: float = 3200.0, t_max_k_max: int = 4,
             memory_budget: int = DEFAULT_MEMORY_BUDGET, raise_on_failure: bool = True):
    """Scan ``t_max``, memory length and slice width until the probability is stable.

    Stages, each accepting once one refinement changes ``P`` by less than
    ``tol_p / 2``:

    1. ``t_max`` doubling from ``t_max_start`` at ``(dt_start, t_max_k_max)``;
    2. for each slice width in the halving schedule from ``dt_start``,
       ``k_max`` is increased until stable, starting from 1 at ``dt_start``
       and otherwise from the memory time accepted at the coarser width;
    3. slice widths are halved until the stabilized values agree.

    The accepted parameters are those of the coarser member of the final
    stable pair. Returns ``(probability, ConvergenceParams, ConvergenceReport)``.
    """
    if tol_p < 1e-3:
        raise ValueError("tol_p below 1e-3 is outside desk-scale convergence")
    k_max_cap = min(int(k_max_cap), K_MAX_CAP)
    check_memory(k_max_cap, memory_budget)
    report = ConvergenceReport()
    half_tol = 0.5 * tol_p

    def run(stage, dt, k_max, t_max):
        cp = ConvergenceParams.snapped(dt, k_max, t_max, tol_p)
        kern = kernels.get((dt, k_max))
        if kern is None:
            kern = kernels[(dt, k_max)] = build_kernel(p, b, dt=dt, k_max=k_max)
        tr = propagate(p, b, cp, initial, kernel=kern, record_every=0, memory_budget=memory_budget)
        prev = [r for r in report.rows if r.stage == stage]
        change = abs(tr.probability - prev[-1].probability) if prev else None
        report.rows.append(ScanRow(stage, cp.dt, cp.k_max, cp.t_max, tr.probability, change, tr.wall_time))
        log.info("%s dt=%g k_max=%d t_max=%g P=%.6f", stage, cp.dt, cp.k_max, cp.t_max, tr.probability)
        return cp, tr.probability

    def fail(reason):
        report.reason = reason
        if raise_on_failure:
            raise ConvergenceFailure(reason, report)
        return None, None, report

    kernels: dict = {}

    # 1. protocol window
    k_t = min(t_max_k_max, k_max_cap)
    t_max = t_max_start
    prev_p = None
    while True:
        cp, prob = run("t_max", dt_start, k_t, t_max)
        if prev_p is not None and abs(prob - prev_p) < half_tol:
            t_max = 0.5 * cp.t_max
            break
        prev_p = prob
        t_max = 2.0 * cp.t_max
        if t_max > t_max_cap:
            return fail(f"t_max did not stabilize below cap {t_max_cap}")

    # 2./3. memory length within slice-width halving
    dt = dt_start
    prev_dt: tuple[ConvergenceParams, float] | None = None
    for _ in range(max_halvings + 1):
        stage = f"k_max@dt={dt:g}"
        stable = None
        prev_k: tuple[ConvergenceParams, float] | None = None
        # keep the memory time already resolved at the coarser slice width
        k_start = 1 if prev_dt is None else max(1, round(prev_dt[0].k_max * prev_dt[0].dt / dt))
        if k_start >= k_max_cap:
            return fail(f"memory time {prev_dt[0].k_max * prev_dt[0].dt:g} needs k_max > {k_max_cap} at dt={dt:g}")
        for k in range(k_start, k_max_cap + 1):
            if 2 * k > round(t_max / dt):
                break
            cp, prob = run(stage, dt, k, t_max)
            if prev_k is not None and abs(prob - prev_k[1]) < half_tol:
                stable = prev_k
                break
            prev_k = (cp, prob)
        if stable is None:
            return fail(f"memory length did not stabilize up to k_max={k_max_cap} at dt={dt:g}")
        report.rows.append(ScanRow("dt", stable[0].dt, stable[0].k_max, stable[0].t_max, stable[1],
                                   abs(stable[1] - prev_dt[1]) if prev_dt else None, 0.0))
        if prev_dt is not None and abs(stable[1] - prev_dt[1]) < half_tol:
            report.accepted, report.probability, report.converged = prev_dt[0], prev_dt[1], True
            return prev_dt[1], prev_dt[0], report
        prev_dt = stable
        dt = 0.5 * dt
    return fail(f"slice width did not stabilize after {max_halvings} halvings")
