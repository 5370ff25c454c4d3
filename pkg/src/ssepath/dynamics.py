"""Time integrators: classical Langevin, renormalized real-noise SSE, coherent
Schrodinger evolution and the frozen-moment Gaussian centroid SDE.

Every stochastic step takes an explicit standard-normal draw ``xi`` so that it
is a pure function; loops over many steps live in :func:`propagate` and the
compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import NormGuardError
from .fock import WELL_C2, WELL_C4, OperatorBundle
from .rng import seed_info


def barrier_height(c4: float = WELL_C4, c2: float = WELL_C2) -> float:
    return c2 * c2 / (4 * c4)


def well_minimum(c4: float = WELL_C4, c2: float = WELL_C2) -> float:
    """Positive minimum of c4 x^4 - c2 x^2."""
    return math.sqrt(c2 / (2 * c4))


def potential(x, c4: float = WELL_C4, c2: float = WELL_C2):
    return c4 * x ** 4 - c2 * x ** 2


def potential_grad(x, c4: float = WELL_C4, c2: float = WELL_C2):
    return 4 * c4 * x ** 3 - 2 * c2 * x


@dataclass(frozen=True)
class SimParams:
    gamma: float = 0.25
    T: float = 0.30625
    dt: float = 1e-3
    c4: float = WELL_C4
    c2: float = WELL_C2
    mass: float = 1.0
    kB: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.T > 0:
            raise ValueError("T must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    @property
    def kT(self) -> float:
        return self.kB * self.T

    @property
    def barrier(self) -> float:
        return barrier_height(self.c4, self.c2)

    @property
    def T_B(self) -> float:
        return self.kT / self.barrier

    @classmethod
    def from_barrier_temperature(cls, T_B: float, **kw) -> "SimParams":
        c4 = kw.get("c4", WELL_C4)
        c2 = kw.get("c2", WELL_C2)
        kB = kw.get("kB", 1.0)
        return cls(T=T_B * barrier_height(c4, c2) / kB, **kw)


class ClassicalState(NamedTuple):
    x: float
    p: float


@dataclass(frozen=True)
class GaussianMoments:
    mean_x: float
    mean_p: float
    var_x: float
    var_p: float

    def __post_init__(self):
        if not (self.var_x > 0 and self.var_p > 0):
            raise ValueError("variances must be positive")

    def uncertainty_ok(self, hbar: float = 1.0) -> bool:
        return self.var_x * self.var_p >= hbar * hbar / 4 - 1e-9


@dataclass
class Trajectory:
    """Uniformly time-stepped sequence of slices.

    ``slices`` is ``(n, 2)`` float (x, p) for classical paths, ``(n, dim)``
    complex for quantum paths and ``(n, 4)`` float (mean_x, mean_p, var_x,
    var_p) for Gaussian-moment paths. ``op`` caches the order parameter per
    slice.
    """

    dt: float
    kind: str
    slices: np.ndarray
    seed_info: dict = field(default_factory=dict)
    op: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("classical", "quantum", "gaussian"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if len(self.slices) < 2:
            raise ValueError("a trajectory needs at least two slices")

    def __len__(self) -> int:
        return len(self.slices)

    @property
    def duration(self) -> float:
        return (len(self.slices) - 1) * self.dt


# -- classical -----------------------------------------------------------------

def langevin_step(s: ClassicalState, params: SimParams, xi: float) -> ClassicalState:
    """One Euler-Maruyama step; both components advance from the pre-step state."""
    m, g, dt = params.mass, params.gamma, params.dt
    x_new = s.x + s.p / m * dt
    p_new = (s.p - (potential_grad(s.x, params.c4, params.c2) + 2 * g * s.p) * dt
             + 2 * math.sqrt(g * m * params.kT) * xi * math.sqrt(dt))
    return ClassicalState(x_new, p_new)


def langevin_energy(s: ClassicalState, params: SimParams) -> float:
    return s.p ** 2 / (2 * params.mass) + potential(s.x, params.c4, params.c2)


# -- stochastic Schrodinger equation ------------------------------------------------

def sse_drift(psi: np.ndarray, ops: OperatorBundle) -> np.ndarray:
    lpsi = ops.L @ psi
    ell = np.vdot(psi, lpsi)
    return (ops.drift_op @ psi + np.conj(ell) * lpsi - 0.5 * abs(ell) ** 2 * psi) / ops.hbar


def sse_diffusion(psi: np.ndarray, ops: OperatorBundle) -> np.ndarray:
    lpsi = ops.L @ psi
    return (lpsi - np.vdot(psi, lpsi) * psi) / math.sqrt(ops.hbar)


def sse_euler_raw(psi: np.ndarray, ops: OperatorBundle, dt: float, xi: float) -> np.ndarray:
    """Euler increment before renormalization."""
    return psi + sse_drift(psi, ops) * dt + sse_diffusion(psi, ops) * xi * math.sqrt(dt)


def sse_euler_step(psi: np.ndarray, ops: OperatorBundle, dt: float, xi: float,
                   guard: float = 0.1) -> np.ndarray:
    raw = sse_euler_raw(psi, ops, dt, xi)
    nrm = np.linalg.norm(raw)
    if abs(nrm - 1) > guard:
        raise NormGuardError(f"norm {nrm:.4f} deviates from 1 by more than {guard}")
    return raw / nrm


def coherent_propagate(psi0: np.ndarray, H: np.ndarray, t: float, dt: float,
                       hbar: float = 1.0) -> Trajectory:
    """Deterministic evolution by repeated application of exp(-i H dt / hbar)."""
    if not t > 0:
        raise ValueError("t must be > 0")
    n = max(1, int(round(t / dt)))
    u = expm(-1j * H * dt / hbar)
    out = np.empty((n + 1, len(psi0)), complex)
    out[0] = psi0
    for k in range(n):
        out[k + 1] = u @ out[k]
    return Trajectory(dt=dt, kind="quantum", slices=out,
                      seed_info={"deterministic": True})


# -- Gaussian centroid ---------------------------------------------------------------

def gaussian_noise_amplitudes(var_x: float, var_p: float, params: SimParams):
    """(position, momentum) noise amplitudes of the centroid SDE."""
    m, g, kT, hbar = params.mass, params.gamma, params.kT, params.hbar
    radicand = 4 * g * m * kT * (1 - 4 * var_p * var_x / hbar ** 2)
    if radicand < 0:
        raise ValueError(
            "momentum-noise radicand is negative: moments outside the validity domain")
    amp_p = math.sqrt(radicand)
    amp_x = -(math.sqrt(hbar ** 2 * g / (4 * m * kT)) - 4 * var_x * math.sqrt(m * kT * g) / hbar)
    return amp_x, amp_p


def gaussian_centroid_step(g: GaussianMoments, params: SimParams, xi: float) -> GaussianMoments:
    """Advance the centroid with variances frozen at their input values."""
    amp_x, amp_p = gaussian_noise_amplitudes(g.var_x, g.var_p, params)
    dt = params.dt
    dw = xi * math.sqrt(dt)
    mx = g.mean_x + g.mean_p / params.mass * dt + amp_x * dw
    mp = (g.mean_p - (potential_grad(g.mean_x, params.c4, params.c2)
                      + 2 * params.gamma * g.mean_p) * dt + amp_p * dw)
    return GaussianMoments(mx, mp, g.var_x, g.var_p)


# -- order parameter and propagation -------------------------------------------------

def order_parameter(slice_, X: np.ndarray | None = None) -> float:
    """x for classical slices, <X> for quantum states, mean_x for moments."""
    if isinstance(slice_, GaussianMoments):
        return slice_.mean_x
    if isinstance(slice_, ClassicalState):
        return slice_.x
    arr = np.asarray(slice_)
    if np.iscomplexobj(arr):
        if X is None:
            raise ValueError("quantum order parameter needs the position matrix")
        return float(np.vdot(arr, X @ arr).real)
    return float(arr[0])


def quantum_order_parameters(states: np.ndarray, X: np.ndarray) -> np.ndarray:
    """<X> for each row of ``states``."""
    return np.einsum("ij,ij->i", states.conj(), states @ X.T).real


def propagate(initial, params: SimParams, n_steps: int, rng,
              ops: OperatorBundle | None = None, guard: float = 0.1,
              noise: np.ndarray | None = None) -> Trajectory:
    """Fixed-length trajectory of ``n_steps + 1`` slices.

    ``initial`` picks the dynamics: :class:`ClassicalState`, a complex state
    vector (requires ``ops``) or :class:`GaussianMoments`. ``noise`` overrides
    the draws from ``rng``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    xi = rng.standard_normal(n_steps) if noise is None else np.asarray(noise, float)
    info = seed_info(rng) if noise is None else {"tag": "explicit-noise"}
    if isinstance(initial, ClassicalState):
        out = np.empty((n_steps + 1, 2))
        _kernels.classical_integrate(float(initial.x), float(initial.p), params.mass,
                                     params.gamma, params.kT, params.c4, params.c2,
                                     params.dt, xi, -np.inf, np.inf, out)
        return Trajectory(params.dt, "classical", out, info, op=out[:, 0].copy())
    if isinstance(initial, GaussianMoments):
        out = np.empty((n_steps + 1, 4))
        g = initial
        out[0] = (g.mean_x, g.mean_p, g.var_x, g.var_p)
        for k in range(n_steps):
            g = gaussian_centroid_step(g, params, xi[k])
            out[k + 1] = (g.mean_x, g.mean_p, g.var_x, g.var_p)
        return Trajectory(params.dt, "gaussian", out, info, op=out[:, 0].copy())
    if ops is None:
        raise ValueError("quantum propagation needs an operator bundle")
    psi0 = np.asarray(initial, complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    states, xs, status, _ = sse_run(psi0, ops, params.dt, xi, guard=guard)
    if status == _kernels.NORM_GUARD:
        raise NormGuardError(f"norm guard {guard} exceeded at step {len(states) - 1}")
    return Trajectory(params.dt, "quantum", states, info, op=xs)


class CompiledOps:
    """CSR copies of the bundle matrices in the layout the kernels expect."""

    def __init__(self, ops: OperatorBundle):
        self.drift = _kernels.to_csr(ops.drift_op)
        self.L = _kernels.to_csr(ops.L)
        self.X = _kernels.to_csr(ops.X)


def compiled(ops: OperatorBundle) -> CompiledOps:
    c = getattr(ops, "_compiled", None)
    if c is None:
        c = CompiledOps(ops)
        ops._compiled = c
    return c


def sse_run(psi0: np.ndarray, ops: OperatorBundle, dt: float, noise: np.ndarray,
            lo: float = -np.inf, hi: float = np.inf, guard: float = 0.1):
    """Integrate with the compiled kernel.

    Returns ``(states, order_parameters, status, max_norm_deviation)``; the
    arrays are trimmed to the slices actually produced.
    """
    c = compiled(ops)
    n = len(noise)
    out = np.empty((n + 1, len(psi0)), complex)
    xs = np.empty(n + 1)
    steps, status, maxdev = _kernels.sse_integrate(
        np.ascontiguousarray(psi0, complex), *c.drift, *c.L, *c.X, ops.hbar, dt,
        np.ascontiguousarray(noise, float), lo, hi, guard, out, xs)
    return out[:steps + 1], xs[:steps + 1], status, maxdev
