"""Truncated Fock-basis operators for a particle in a one-dimensional potential.

All operators are dense complex ``numpy`` arrays of shape ``(dim, dim)`` and
states are complex vectors of length ``dim``. Products of unbounded operators
(powers of X and P) are formed in a basis enlarged by ``pad`` levels and
truncated afterwards, so the highest retained levels are not corrupted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

WELL_C4 = 0.01
WELL_C2 = 0.35
# curvature of c4 x^4 - c2 x^2 at its minima is 4 c2
DEFAULT_OSC_FREQ = math.sqrt(4 * WELL_C2)


@dataclass(frozen=True)
class BasisConfig:
    """Basis truncation and physical constants (reduced units m = hbar = kB = 1).

    ``kick_form`` selects the momentum-kick operator: ``"unitary"`` builds
    exp(i dp X / hbar), ``"exponential"`` builds exp(dp X) and renormalizes
    the kicked state.
    """

    dim: int = 60
    mass: float = 1.0
    hbar: float = 1.0
    kB: float = 1.0
    osc_freq: float = DEFAULT_OSC_FREQ
    pad: int = 8
    kick_form: str = "unitary"

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        for name in ("mass", "hbar", "kB", "osc_freq"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.pad < 0:
            raise ValueError("pad must be non-negative")
        if self.kick_form not in ("unitary", "exponential"):
            raise ValueError(f"unknown kick_form {self.kick_form!r}")

    @property
    def x_scale(self) -> float:
        """Oscillator length sqrt(hbar / (m omega))."""
        return math.sqrt(self.hbar / (self.mass * self.osc_freq))


def build_ladder(cfg: BasisConfig, size: int | None = None):
    """Lowering and raising operators ``(a, a_dag)`` with a|n> = sqrt(n)|n-1>."""
    n = cfg.dim if size is None else size
    a = np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)
    return a, a.conj().T


def _xp(cfg: BasisConfig, size: int):
    a, ad = build_ladder(cfg, size)
    x = math.sqrt(cfg.hbar / (2 * cfg.mass * cfg.osc_freq)) * (a + ad)
    p = 1j * math.sqrt(cfg.mass * cfg.hbar * cfg.osc_freq / 2) * (ad - a)
    return x, p


def build_position_momentum(cfg: BasisConfig):
    """Position and momentum matrices ``(X, P)``; both Hermitian."""
    return _xp(cfg, cfg.dim)


def build_potential(cfg: BasisConfig, c4: float, c2: float) -> np.ndarray:
    """Matrix of V = c4 X^4 - c2 X^2, formed in the padded basis."""
    if not (c4 > 0 and c2 > 0):
        raise ValueError("c4 and c2 must be positive")
    n = cfg.dim
    x, _ = _xp(cfg, n + cfg.pad)
    x2 = x @ x
    v = c4 * (x2 @ x2) - c2 * x2
    return _hermitize(v[:n, :n])


def build_hamiltonians(cfg: BasisConfig, V: np.ndarray, gamma: float):
    """Return ``(H, H_gamma)`` with H_gamma = H + (gamma/2)(XP + PX)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    n = cfg.dim
    x, p = _xp(cfg, n + cfg.pad)
    kinetic = (p @ p)[:n, :n] / (2 * cfg.mass)
    h = _hermitize(kinetic + V)
    if gamma == 0:
        return h, h.copy()
    sym = (x @ p + p @ x)[:n, :n]
    return h, _hermitize(h + 0.5 * gamma * sym)


def build_lindblad_operator(cfg: BasisConfig, gamma: float, T: float) -> np.ndarray:
    """Bath jump operator sqrt(4 gamma m kB T / hbar) X + i sqrt(gamma hbar / (4 m kB T)) P."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0; use coherent propagation for gamma = 0")
    if not T > 0:
        raise ValueError("T must be > 0")
    x, p = build_position_momentum(cfg)
    cx, cp = lindblad_coefficients(cfg, gamma, T)
    return cx * x + 1j * cp * p


def lindblad_coefficients(cfg: BasisConfig, gamma: float, T: float):
    """Real coefficients (of X, of iP) in the jump operator."""
    mkt = cfg.mass * cfg.kB * T
    return (math.sqrt(4 * gamma * mkt / cfg.hbar),
            math.sqrt(gamma * cfg.hbar / (4 * mkt)))


def momentum_displacement(cfg: BasisConfig, dp: float) -> np.ndarray:
    """Kick operator. Unitary form shifts <P> by ``dp``; the exponential form
    is non-unitary and callers must renormalize (see :func:`apply_kick`)."""
    if not np.isfinite(dp):
        raise ValueError("dp must be finite")
    n = cfg.dim
    if dp == 0:
        return np.eye(n, dtype=complex)
    x, _ = _xp(cfg, n + cfg.pad)
    gen = 1j * dp * x / cfg.hbar if cfg.kick_form == "unitary" else dp * x
    return expm(gen)[:n, :n]


def apply_kick(psi: np.ndarray, cfg: BasisConfig, dp: float) -> np.ndarray:
    if dp == 0:
        return psi.copy()
    out = momentum_displacement(cfg, dp) @ psi
    return out / np.linalg.norm(out)


def parity_apply(psi: np.ndarray) -> np.ndarray:
    """Multiply amplitude n by (-1)^n."""
    out = np.array(psi, dtype=complex, copy=True)
    out[..., 1::2] *= -1
    return out


def time_reverse_state(psi: np.ndarray) -> np.ndarray:
    return np.conj(psi)


def expectation(op: np.ndarray, psi: np.ndarray) -> complex:
    return np.vdot(psi, op @ psi)


def coherent_state(cfg: BasisConfig, x0: float, p0: float = 0.0) -> np.ndarray:
    """Displaced ground state of the reference oscillator centred at (x0, p0)."""
    s = cfg.x_scale
    alpha = (x0 / s + 1j * p0 * s / cfg.hbar) / math.sqrt(2)
    n = np.arange(cfg.dim)
    if alpha == 0:
        psi = np.zeros(cfg.dim, complex)
        psi[0] = 1.0
        return psi
    # log-space amplitudes avoid overflow of alpha^n / sqrt(n!)
    logmag = -abs(alpha) ** 2 / 2 + n * math.log(abs(alpha)) - 0.5 * np.array(
        [math.lgamma(k + 1) for k in n])
    psi = np.exp(logmag) * np.exp(1j * n * np.angle(alpha))
    return psi / np.linalg.norm(psi)


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


@dataclass
class OperatorBundle:
    """Everything the stochastic dynamics needs for one (gamma, T) point.

    ``LdL`` is the truncated product L^dag L, so the Lindblad generator built
    from this bundle is exactly trace preserving and the SSE drift exactly
    balances its diffusion in norm.
    """

    cfg: BasisConfig
    H: np.ndarray
    H_gamma: np.ndarray
    L: np.ndarray
    X: np.ndarray
    P: np.ndarray
    gamma: float
    T: float
    LdL: np.ndarray = field(init=False)
    drift_op: np.ndarray = field(init=False)

    def __post_init__(self):
        self.LdL = self.L.conj().T @ self.L
        self.drift_op = -1j * self.H_gamma - 0.5 * self.LdL

    @property
    def hbar(self) -> float:
        return self.cfg.hbar

    @property
    def dim(self) -> int:
        return self.cfg.dim


def build_operators(cfg: BasisConfig, gamma: float, T: float,
                    c4: float = WELL_C4, c2: float = WELL_C2,
                    L: np.ndarray | None = None) -> OperatorBundle:
    """Assemble the operator bundle for the quartic double well.

    ``L`` overrides the bath jump operator (used for toy systems in tests).
    """
    V = build_potential(cfg, c4, c2)
    H, Hg = build_hamiltonians(cfg, V, gamma)
    X, P = build_position_momentum(cfg)
    if L is None:
        L = build_lindblad_operator(cfg, gamma, T)
    return OperatorBundle(cfg=cfg, H=H, H_gamma=Hg, L=L, X=X, P=P, gamma=gamma, T=T)


def convergence_check(observable, cfg: BasisConfig, extra: int = 20) -> float:
    """Absolute drift of ``observable(cfg)`` between ``dim`` and ``dim + extra``."""
    return abs(observable(replace(cfg, dim=cfg.dim + extra)) - observable(cfg))
