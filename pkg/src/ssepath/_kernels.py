"""Compiled inner loops. Readable single-step versions live in dynamics/pathprob;
these kernels must agree with them to rounding (checked in the tests)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit

EXHAUSTED, TERMINATED, NORM_GUARD = 0, 1, 2


def to_csr(a: np.ndarray, tol: float = 0.0):
    """CSR triple (data, indices, indptr) of a dense complex matrix."""
    m = np.where(np.abs(a) > tol, a, 0)
    s = sp.csr_matrix(m)
    return (s.data.astype(np.complex128), s.indices.astype(np.int64),
            s.indptr.astype(np.int64))


@njit(cache=True)
def csr_matvec(data, ind, ptr, v, out):
    for r in range(ptr.size - 1):
        acc = 0j
        for k in range(ptr[r], ptr[r + 1]):
            acc += data[k] * v[ind[k]]
        out[r] = acc


@njit(cache=True)
def _dv(x, c4, c2):
    return 4.0 * c4 * x * x * x - 2.0 * c2 * x


@njit(cache=True)
def classical_integrate(x0, p0, m, gamma, kT, c4, c2, dt, noise, lo, hi, out):
    """Euler-Maruyama Langevin steps; stops when x <= lo or x >= hi."""
    amp = 2.0 * np.sqrt(gamma * m * kT) * np.sqrt(dt)
    x = x0
    p = p0
    out[0, 0] = x
    out[0, 1] = p
    for k in range(noise.size):
        xn = x + p / m * dt
        p = p - (_dv(x, c4, c2) + 2.0 * gamma * p) * dt + amp * noise[k]
        x = xn
        out[k + 1, 0] = x
        out[k + 1, 1] = p
        if x <= lo or x >= hi:
            return k + 1, TERMINATED
    return noise.size, EXHAUSTED


@njit(cache=True)
def sse_integrate(psi0, md, mi, mp, ld, li, lp, xd, xi, xp, hbar, dt, noise,
                  lo, hi, guard, out, out_x):
    """Renormalized real-noise SSE Euler steps; stops when <X> leaves (lo, hi).

    Returns (steps, status, max |norm - 1| before renormalization).
    """
    d = psi0.size
    psi = psi0.copy()
    mpsi = np.empty(d, np.complex128)
    lpsi = np.empty(d, np.complex128)
    xpsi = np.empty(d, np.complex128)
    sq = np.sqrt(dt)
    rh = 1.0 / hbar
    srh = 1.0 / np.sqrt(hbar)
    out[0, :] = psi
    csr_matvec(xd, xi, xp, psi, xpsi)
    out_x[0] = np.vdot(psi, xpsi).real
    maxdev = 0.0
    for k in range(noise.size):
        csr_matvec(md, mi, mp, psi, mpsi)
        csr_matvec(ld, li, lp, psi, lpsi)
        ell = np.vdot(psi, lpsi)
        c = np.conj(ell)
        half = 0.5 * (ell.real * ell.real + ell.imag * ell.imag)
        w = noise[k] * sq
        for j in range(d):
            drift = (mpsi[j] + c * lpsi[j] - half * psi[j]) * rh
            sig = (lpsi[j] - ell * psi[j]) * srh
            psi[j] = psi[j] + drift * dt + sig * w
        nrm = np.sqrt(np.vdot(psi, psi).real)
        dev = abs(nrm - 1.0)
        if dev > maxdev:
            maxdev = dev
        if dev > guard:
            return k, NORM_GUARD, maxdev
        for j in range(d):
            psi[j] = psi[j] / nrm
        out[k + 1, :] = psi
        csr_matvec(xd, xi, xp, psi, xpsi)
        xv = np.vdot(psi, xpsi).real
        out_x[k + 1] = xv
        if xv <= lo or xv >= hi:
            return k + 1, TERMINATED, maxdev
    return noise.size, EXHAUSTED, maxdev


@njit(cache=True)
def sse_pair_logprobs(states, md, mi, mp, ld, li, lp, hbar, dt, backward, factor,
                      floor):
    """Step log-densities between consecutive slices.

    Forward: start = states[i], end = states[i+1].
    Backward: start = conj(states[i+1]), end = conj(states[i]).
    ``factor`` is 2 for real noise and 4 for complex (QSD) noise. Entries whose
    diffusion norm falls below ``floor`` are NaN.
    """
    n, d = states.shape
    res = np.empty(n - 1)
    a = np.empty(d, np.complex128)
    b = np.empty(d, np.complex128)
    mpsi = np.empty(d, np.complex128)
    lpsi = np.empty(d, np.complex128)
    rh = 1.0 / hbar
    srh = 1.0 / np.sqrt(hbar)
    for i in range(n - 1):
        if backward:
            for j in range(d):
                a[j] = np.conj(states[i + 1, j])
                b[j] = np.conj(states[i, j])
        else:
            for j in range(d):
                a[j] = states[i, j]
                b[j] = states[i + 1, j]
        nrm = np.sqrt(np.vdot(a, a).real)
        for j in range(d):
            a[j] = a[j] / nrm
        csr_matvec(md, mi, mp, a, mpsi)
        csr_matvec(ld, li, lp, a, lpsi)
        ell = np.vdot(a, lpsi)
        c = np.conj(ell)
        half = 0.5 * (ell.real * ell.real + ell.imag * ell.imag)
        proj = 0j
        ss = 0.0
        for j in range(d):
            drift = (mpsi[j] + c * lpsi[j] - half * a[j]) * rh
            sig = (lpsi[j] - ell * a[j]) * srh
            r = b[j] - a[j] - drift * dt
            proj += np.conj(sig) * r
            ss += sig.real * sig.real + sig.imag * sig.imag
        if ss < floor:
            res[i] = np.nan
        else:
            res[i] = -(proj.real * proj.real + proj.imag * proj.imag) / (
                factor * dt * ss * ss)
    return res
