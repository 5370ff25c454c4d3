"""Step and path log-densities, Lindblad generator, stationary and Gibbs states.

Densities are kept in log space with the common (2 pi dt)^(-1/2) prefactor
dropped; only ratios enter the Metropolis rules.

Vectorization of density matrices is row-stacking (``rho.reshape(-1)``), for
which vec(A rho B) = (A kron B^T) vec(rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .dynamics import (ClassicalState, SimParams, compiled, potential, potential_grad,
                       sse_diffusion, sse_drift)
from .errors import DegenerateDiffusionError, StationaryStateError
from .fock import OperatorBundle

DIFFUSION_FLOOR = 1e-14


@dataclass
class StationaryState:
    rho: np.ndarray
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]


# -- single steps ---------------------------------------------------------------------

def classical_step_log_prob(s0: ClassicalState, s1: ClassicalState, params: SimParams) -> float:
    if not params.gamma > 0:
        raise ValueError("classical step density needs gamma > 0")
    dt = params.dt
    r = s1.p - s0.p + dt * (potential_grad(s0.x, params.c4, params.c2) + 2 * params.gamma * s0.p)
    return -r * r / (8 * params.mass * params.gamma * params.kT * dt)


def classical_step_log_probs(slices: np.ndarray, params: SimParams,
                             backward: bool = False) -> np.ndarray:
    """Per-step log-densities along an (n, 2) array of (x, p).

    ``backward`` evaluates the reverse kernel: the forward density of the
    time-reversed pair (x[i+1], -p[i+1]) -> (x[i], -p[i]).
    """
    x, p = slices[:, 0], slices[:, 1]
    dt, g = params.dt, params.gamma
    if backward:
        x0, p0, p1 = x[1:], -p[1:], -p[:-1]
    else:
        x0, p0, p1 = x[:-1], p[:-1], p[1:]
    r = p1 - p0 + dt * (potential_grad(x0, params.c4, params.c2) + 2 * g * p0)
    return -r * r / (8 * params.mass * g * params.kT * dt)


def _sse_log_prob(psi0, psi1, ops: OperatorBundle, dt: float, factor: float) -> float:
    psi0 = psi0 / np.linalg.norm(psi0)
    sig = sse_diffusion(psi0, ops)
    ss = np.vdot(sig, sig).real
    if ss < DIFFUSION_FLOOR:
        raise DegenerateDiffusionError(f"|sigma|^2 = {ss:.3e} below {DIFFUSION_FLOOR}")
    proj = np.vdot(sig, psi1 - psi0 - sse_drift(psi0, ops) * dt)
    return -abs(proj) ** 2 / (factor * dt * ss * ss)


def sse_step_log_prob(psi0: np.ndarray, psi1: np.ndarray, ops: OperatorBundle, dt: float) -> float:
    """Real-noise SSE step log-density; the residual is projected on sigma(psi0)."""
    return _sse_log_prob(psi0, psi1, ops, dt, 2.0)


def qsd_step_log_prob(psi0: np.ndarray, psi1: np.ndarray, ops: OperatorBundle, dt: float) -> float:
    """Complex-noise (quantum state diffusion) variant."""
    return _sse_log_prob(psi0, psi1, ops, dt, 4.0)


def backward_step_log_prob(s1, s0, model, dt: float | None = None) -> float:
    """Reverse-kernel log-density of s1 -> s0: forward density of the
    time-reversed pair. ``model`` is a :class:`SimParams` (classical) or an
    :class:`OperatorBundle` (quantum, needs ``dt``)."""
    if isinstance(model, SimParams):
        return classical_step_log_prob(ClassicalState(s1[0], -s1[1]),
                                       ClassicalState(s0[0], -s0[1]), model)
    return sse_step_log_prob(np.conj(s1), np.conj(s0), model, dt)


def sse_step_log_probs(states: np.ndarray, ops: OperatorBundle, dt: float,
                       backward: bool = False, complex_noise: bool = False) -> np.ndarray:
    """Compiled per-step log-densities; NaN marks degenerate diffusion."""
    c = compiled(ops)
    return _kernels.sse_pair_logprobs(np.ascontiguousarray(states, complex), *c.drift, *c.L,
                                      ops.hbar, dt, bool(backward),
                                      4.0 if complex_noise else 2.0, DIFFUSION_FLOOR)


def step_amplitude_phase(psi0: np.ndarray, ops: OperatorBundle, dt: float, xi: float = 0.0,
                         exact: bool = False) -> float:
    """Phase accumulated over one Euler step (diagnostic only).

    The default is the small-step form Im(psi^dag u) dt, the phase of
    <psi0|psi1>. ``exact`` evaluates the argument of
    1 + psi^dag u dt + psi^dag sigma dW instead; since psi^dag sigma = 0 the
    noise draw drops out of both.
    """
    psi0 = psi0 / np.linalg.norm(psi0)
    upsi = np.vdot(psi0, sse_drift(psi0, ops))
    if not exact:
        return float(upsi.imag * dt)
    z = 1 + upsi * dt + np.vdot(psi0, sse_diffusion(psi0, ops)) * xi * math.sqrt(dt)
    return float(math.atan2(z.imag, z.real))


# -- whole paths ------------------------------------------------------------------------

def step_log_probs(traj, model, backward: bool = False) -> np.ndarray:
    if traj.kind == "classical":
        return classical_step_log_probs(traj.slices, model, backward)
    if traj.kind == "quantum":
        return sse_step_log_probs(traj.slices, model, traj.dt, backward)
    raise ValueError(f"no step density for {traj.kind!r} trajectories")


def path_log_prob(traj, model) -> float:
    """Sum of per-step log-densities (stationary weight of slice 0 excluded)."""
    lp = step_log_probs(traj, model)
    if np.isnan(lp).any():
        raise DegenerateDiffusionError("degenerate diffusion along the path")
    return float(lp.sum())


# -- master equation ----------------------------------------------------------------------

def lindblad_rhs(rho: np.ndarray, ops: OperatorBundle) -> np.ndarray:
    """Generator applied directly: -i/hbar [H_g, rho] + (L rho L^dag - {L^dag L, rho}/2)/hbar."""
    L, Ld = ops.L, ops.L.conj().T
    comm = ops.H_gamma @ rho - rho @ ops.H_gamma
    diss = L @ rho @ Ld - 0.5 * (ops.LdL @ rho + rho @ ops.LdL)
    return (-1j * comm + diss) / ops.hbar


def lindblad_superoperator(ops: OperatorBundle, sparse: bool = False):
    """Matrix of the generator acting on row-stacked density matrices."""
    kron = sp.kron if sparse else np.kron
    n = ops.dim
    eye = sp.identity(n, dtype=complex, format="csr") if sparse else np.eye(n, dtype=complex)
    H, L, K = ops.H_gamma, ops.L, ops.LdL
    if sparse:
        H, L, K = (sp.csr_matrix(np.where(abs(a) > 0, a, 0)) for a in (H, L, K))
        Lbar = L.conj()
    else:
        Lbar = L.conj()
    s = (-1j * (kron(H, eye) - kron(eye, H.T))
         + kron(L, Lbar) - 0.5 * kron(K, eye) - 0.5 * kron(eye, K.T)) / ops.hbar
    return s.tocsc() if sparse else s


def evolve_density_rk4(rho0: np.ndarray, ops: OperatorBundle, t: float, dt: float) -> np.ndarray:
    """Fixed-step fourth-order Runge-Kutta on the density matrix."""
    n = max(1, int(round(t / dt)))
    h = t / n
    rho = np.array(rho0, complex)
    for _ in range(n):
        k1 = lindblad_rhs(rho, ops)
        k2 = lindblad_rhs(rho + 0.5 * h * k1, ops)
        k3 = lindblad_rhs(rho + 0.5 * h * k2, ops)
        k4 = lindblad_rhs(rho + h * k3, ops)
        rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def _finish_null_vector(v: np.ndarray, superop, n: int, meta: dict) -> StationaryState:
    rho = v.reshape(n, n)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if tr == 0:
        raise StationaryStateError("null vector has zero trace")
    rho = rho / tr
    vec = rho.reshape(-1)
    residual = float(np.linalg.norm(superop @ vec))
    if sp.issparse(superop):
        snorm = float(spla.norm(superop))
    else:
        snorm = float(np.linalg.norm(superop))
    meta = dict(meta, superop_norm=snorm)
    if residual > 1e-8 * snorm:
        raise StationaryStateError(f"residual {residual:.3e} exceeds 1e-8 * |S| = {1e-8 * snorm:.3e}")
    lmin = float(np.linalg.eigvalsh(rho).min())
    meta["min_eigenvalue"] = lmin
    if lmin < -1e-6:
        raise StationaryStateError(f"stationary state has eigenvalue {lmin:.3e}; basis too small")
    return StationaryState(rho=rho, residual=residual, meta=meta)


def stationary_state(superop, method: str | None = None, iterations: int = 6) -> StationaryState:
    """Unit-trace Hermitian null vector of the generator.

    Dense generators use the right singular vector of the smallest singular
    value. Sparse generators use inverse iteration with a sparse LU of the
    slightly shifted generator, which converges to the same vector.
    """
    n2 = superop.shape[0]
    n = int(round(math.sqrt(n2)))
    if method is None:
        method = "inverse" if sp.issparse(superop) else "svd"
    if method == "svd":
        dense = superop.toarray() if sp.issparse(superop) else superop
        _, svals, vh = np.linalg.svd(dense)
        v = vh[-1].conj()
        meta = {"method": "svd", "smallest_singular_values": svals[-2:].tolist()}
        return _finish_null_vector(v, dense, n, meta)
    if method != "inverse":
        raise ValueError(f"unknown method {method!r}")
    s = sp.csc_matrix(superop)
    shift = 1e-12 * float(spla.norm(s))
    lu = spla.splu((s - shift * sp.identity(n2, format="csc")).tocsc())
    v = np.eye(n, dtype=complex).reshape(-1) / n
    for _ in range(iterations):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
    return _finish_null_vector(v, s, n, {"method": "inverse", "iterations": iterations})


def gibbs_state(H: np.ndarray, T: float, kB: float = 1.0) -> StationaryState:
    if not T > 0:
        raise ValueError("T must be > 0")
    e, v = np.linalg.eigh(H)
    w = np.exp(-(e - e[0]) / (kB * T))
    w /= w.sum()
    rho = (v * w) @ v.conj().T
    return StationaryState(rho=rho, residual=0.0, meta={"kind": "gibbs", "T": T})


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    e, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    return (v * np.sqrt(np.clip(e, 0, None))) @ v.conj().T


def fidelity(rho, sigma) -> float:
    """(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 clipped to [0, 1 + 1e-9]."""
    r = rho.rho if isinstance(rho, StationaryState) else np.asarray(rho)
    s = sigma.rho if isinstance(sigma, StationaryState) else np.asarray(sigma)
    sr = _psd_sqrt(r)
    m = sr @ s @ sr
    e = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    f = float(np.sqrt(np.clip(e, 0, None)).sum() ** 2)
    return min(max(f, 0.0), 1 + 1e-9)


# -- stationary weights ---------------------------------------------------------------------

def stationary_weight(slice_, st) -> float:
    """Log stationary weight of a slice.

    Classical: -H(x, p)/kB T with ``st`` a :class:`SimParams`. Quantum: the
    overlap log <psi|rho_st|psi> with ``st`` a :class:`StationaryState`; this
    overlap is a modelling choice for evaluating a density matrix on a pure
    state.
    """
    if isinstance(st, SimParams):
        x, p = float(slice_[0]), float(slice_[1])
        return -(p * p / (2 * st.mass) + potential(x, st.c4, st.c2)) / st.kT
    psi = np.asarray(slice_, complex)
    psi = psi / np.linalg.norm(psi)
    w = float(np.vdot(psi, st.rho @ psi).real)
    if w < 1e-300:
        raise StationaryStateError(f"quantum stationary weight {w:.3e} is not positive")
    return math.log(w)
