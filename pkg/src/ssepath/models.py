"""Uniform access to classical and SSE dynamics for the path samplers.

Both models expose the same small surface: integrate a slice until the order
parameter leaves an interval, per-step forward/backward log-densities,
stationary log-weights, the momentum kick, and slice-wise time reversal and
parity. Slices are rows of a 2-D array: (x, p) pairs or complex state vectors.
"""

from __future__ import annotations

import numpy as np

from . import _kernels, fock
from .dynamics import SimParams, quantum_order_parameters, sse_run, well_minimum
from .errors import NormGuardError
from .pathprob import (StationaryState, classical_step_log_probs, sse_step_log_probs,
                       stationary_weight)

CHUNK = 4096


class ClassicalModel:
    kind = "classical"

    def __init__(self, params: SimParams):
        self.params = params

    @property
    def dt(self) -> float:
        return self.params.dt

    def order_parameters(self, slices: np.ndarray) -> np.ndarray:
        return np.asarray(slices)[:, 0].copy()

    def order_parameter(self, slice_) -> float:
        return float(slice_[0])

    def well_state(self, side: int = -1) -> np.ndarray:
        return np.array([side * well_minimum(self.params.c4, self.params.c2), 0.0])

    def _run(self, start, noise, lo, hi):
        pr = self.params
        out = np.empty((len(noise) + 1, 2))
        steps, status = _kernels.classical_integrate(
            float(start[0]), float(start[1]), pr.mass, pr.gamma, pr.kT, pr.c4, pr.c2,
            pr.dt, noise, lo, hi, out)
        return out[:steps + 1], out[:steps + 1, 0], status

    def step_log_probs(self, slices, backward: bool = False) -> np.ndarray:
        return classical_step_log_probs(slices, self.params, backward)

    def stationary_log_weight(self, slice_) -> float:
        return stationary_weight(slice_, self.params)

    def kick(self, slice_, dp: float) -> np.ndarray:
        return np.array([slice_[0], slice_[1] + dp])

    def time_reverse(self, slices: np.ndarray) -> np.ndarray:
        out = np.array(slices, copy=True)
        out[..., 1] = -out[..., 1]
        return out

    def parity(self, slices: np.ndarray) -> np.ndarray:
        return -np.asarray(slices)

    def integrate(self, start, lo: float = -np.inf, hi: float = np.inf,
                  max_steps: int | None = None, rng=None, noise=None):
        return _integrate(self, start, lo, hi, max_steps, rng, noise)


class QuantumModel:
    kind = "quantum"

    def __init__(self, ops: fock.OperatorBundle, dt: float,
                 stationary: StationaryState | None = None, guard: float = 0.1):
        self.ops = ops
        self._dt = dt
        self.stationary = stationary
        self.guard = guard

    @property
    def dt(self) -> float:
        return self._dt

    @property
    def cfg(self) -> fock.BasisConfig:
        return self.ops.cfg

    def order_parameters(self, slices: np.ndarray) -> np.ndarray:
        return quantum_order_parameters(np.asarray(slices), self.ops.X)

    def order_parameter(self, slice_) -> float:
        return float(np.vdot(slice_, self.ops.X @ slice_).real)

    def well_state(self, side: int = -1, c4: float = fock.WELL_C4,
                   c2: float = fock.WELL_C2) -> np.ndarray:
        return fock.coherent_state(self.cfg, side * well_minimum(c4, c2))

    def _run(self, start, noise, lo, hi):
        states, xs, status, _ = sse_run(np.asarray(start, complex), self.ops, self.dt,
                                        noise, lo, hi, self.guard)
        if status == _kernels.NORM_GUARD:
            raise NormGuardError(f"SSE norm guard {self.guard} exceeded; reduce dt")
        if len(states) < len(noise) + 1:
            states, xs = states.copy(), xs.copy()
        return states, xs, status

    def step_log_probs(self, slices, backward: bool = False) -> np.ndarray:
        return sse_step_log_probs(slices, self.ops, self.dt, backward)

    def stationary_log_weight(self, slice_) -> float:
        if self.stationary is None:
            raise ValueError("quantum model has no stationary state attached")
        return stationary_weight(slice_, self.stationary)

    def kick(self, slice_, dp: float) -> np.ndarray:
        return fock.apply_kick(np.asarray(slice_, complex), self.cfg, dp)

    def time_reverse(self, slices: np.ndarray) -> np.ndarray:
        return np.conj(slices)

    def parity(self, slices: np.ndarray) -> np.ndarray:
        return fock.parity_apply(slices)

    def integrate(self, start, lo: float = -np.inf, hi: float = np.inf,
                  max_steps: int | None = None, rng=None, noise=None):
        return _integrate(self, start, lo, hi, max_steps, rng, noise)


def _integrate(model, start, lo, hi, max_steps, rng, noise):
    """Integrate from ``start`` until the order parameter is <= lo or >= hi.

    With explicit ``noise`` exactly those draws are used. Otherwise draws come
    from ``rng`` in chunks until termination or ``max_steps``. Returns
    ``(slices, order_parameters, terminated)``.
    """
    if noise is not None:
        noise = np.ascontiguousarray(noise, float)
        if len(noise) == 0:
            s = np.asarray(start)[None, :].copy()
            return s, model.order_parameters(s), False
        slices, ops_, status = model._run(start, noise, lo, hi)
        return slices, ops_, status == _kernels.TERMINATED
    if max_steps is None:
        raise ValueError("max_steps is required when drawing noise from rng")
    pieces, oppieces = [], []
    cur = np.asarray(start)
    done = 0
    chunk = CHUNK
    while done < max_steps:
        n = min(chunk, max_steps - done)
        slices, ops_, status = model._run(cur, rng.standard_normal(n), lo, hi)
        pieces.append(slices if not pieces else slices[1:])
        oppieces.append(ops_ if not oppieces else ops_[1:])
        done += len(slices) - 1
        if status == _kernels.TERMINATED:
            return np.concatenate(pieces), np.concatenate(oppieces), True
        cur = slices[-1]
        chunk = min(chunk * 2, 1 << 16)
    return np.concatenate(pieces), np.concatenate(oppieces), False


def quantum_model(params: SimParams, cfg: fock.BasisConfig | None = None,
                  with_stationary: bool = True, guard: float = 0.1) -> QuantumModel:
    """Operators for ``params`` in basis ``cfg`` plus the Lindblad stationary state."""
    from .pathprob import lindblad_superoperator, stationary_state

    cfg = cfg or fock.BasisConfig(mass=params.mass, hbar=params.hbar, kB=params.kB)
    ops = fock.build_operators(cfg, params.gamma, params.T, params.c4, params.c2)
    st = stationary_state(lindblad_superoperator(ops, sparse=True)) if with_stationary else None
    return QuantumModel(ops, params.dt, st, guard)


def make_model(params: SimParams, kind: str = "classical", cfg: fock.BasisConfig | None = None):
    if kind == "classical":
        return ClassicalModel(params)
    if kind in ("sse", "quantum"):
        return quantum_model(params, cfg)
    raise ValueError(f"unsupported model kind {kind!r}")
