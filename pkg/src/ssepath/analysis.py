"""Post-processing: Wigner functions, histograms, brute-force first-passage
rates and Arrhenius fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .dynamics import barrier_height
from .fock import BasisConfig
from .tis import RateEstimate
from .tps import StateRegions


@dataclass(frozen=True)
class PhaseGrid:
    x_min: float = -8.0
    x_max: float = 8.0
    p_min: float = -5.0
    p_max: float = 5.0
    nx: int = 161
    np: int = 101

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.p_min < self.p_max):
            raise ValueError("grid bounds must satisfy min < max")
        if self.nx < 2 or self.np < 2:
            raise ValueError("grid needs at least two points per axis")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def ps(self) -> np.ndarray:
        return np.linspace(self.p_min, self.p_max, self.np)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / (self.np - 1)

    def edges(self):
        """Bin edges centred on the grid points."""
        xe = np.linspace(self.x_min - self.dx / 2, self.x_max + self.dx / 2, self.nx + 1)
        pe = np.linspace(self.p_min - self.dp / 2, self.p_max + self.dp / 2, self.np + 1)
        return xe, pe


@dataclass
class WignerField:
    grid: PhaseGrid
    values: np.ndarray

    def total(self) -> float:
        return float(self.values.sum() * self.grid.dx * self.grid.dp)

    def save(self, path):
        g = self.grid
        meta = {"grid": {"x_min": g.x_min, "x_max": g.x_max, "p_min": g.p_min,
                         "p_max": g.p_max, "nx": g.nx, "np": g.np},
                "normalization": self.total()}
        return io.write_array(path, self.values, meta)


# -- Hermite functions -------------------------------------------------------------------------

def hermite_functions(n_max: int, xi: np.ndarray) -> np.ndarray:
    """Normalized Hermite functions h_0..h_{n_max-1} at ``xi`` (unit scale).

    Uses the three-term recurrence on the normalized functions, which stays
    finite for large n where raw Hermite polynomials overflow.
    """
    xi = np.asarray(xi, float)
    out = np.empty((n_max,) + xi.shape)
    out[0] = math.pi ** -0.25 * np.exp(-xi * xi / 2)
    if n_max > 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for n in range(1, n_max - 1):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * xi * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def position_wavefunction(psi: np.ndarray, cfg: BasisConfig, x) -> np.ndarray:
    s = cfg.x_scale
    h = hermite_functions(len(psi), np.asarray(x, float) / s)
    return np.tensordot(psi, h, axes=(0, 0)) / math.sqrt(s)


def momentum_wavefunction(psi: np.ndarray, cfg: BasisConfig, p) -> np.ndarray:
    ps = cfg.hbar / cfg.x_scale
    phase = (-1j) ** np.arange(len(psi))
    h = hermite_functions(len(psi), np.asarray(p, float) / ps)
    return np.tensordot(psi * phase, h, axes=(0, 0)) / math.sqrt(ps)


def _mass_inside(fn, lo, hi):
    u = np.linspace(lo, hi, 4001)
    return float(np.trapezoid(np.abs(fn(u)) ** 2, u))


def wigner_transform(psi: np.ndarray, cfg: BasisConfig, grid: PhaseGrid,
                     max_outside: float = 0.01) -> WignerField:
    """W(x, p) = (1/(pi hbar)) int psi*(x+y) psi(x-y) exp(2ipy/hbar) dy on ``grid``."""
    psi = np.asarray(psi, complex)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-6:
        raise ValueError(f"state norm {nrm:.8f} is not 1")
    inside_x = _mass_inside(lambda u: position_wavefunction(psi, cfg, u),
                            grid.x_min, grid.x_max)
    inside_p = _mass_inside(lambda u: momentum_wavefunction(psi, cfg, u),
                            grid.p_min, grid.p_max)
    if 1 - inside_x > max_outside or 1 - inside_p > max_outside:
        raise ValueError(f"state mass outside the grid: x {1 - inside_x:.3g}, "
                         f"p {1 - inside_p:.3g}")
    half = (grid.x_max - grid.x_min) / 2 + 4 * cfg.x_scale
    hy = min(cfg.x_scale / 10, math.pi * cfg.hbar / (8 * max(abs(grid.p_min), abs(grid.p_max))))
    ny = int(math.ceil(half / hy))
    y = np.arange(-ny, ny + 1) * hy
    xs = grid.xs
    f_plus = position_wavefunction(psi, cfg, xs[:, None] + y[None, :])
    f_minus = position_wavefunction(psi, cfg, xs[:, None] - y[None, :])
    integrand = np.conj(f_plus) * f_minus
    kernel = np.exp(2j * np.outer(y, grid.ps) / cfg.hbar)
    w = (integrand @ kernel).real * hy / (math.pi * cfg.hbar)
    return WignerField(grid, w)


# -- first-passage rates ---------------------------------------------------------------------

@dataclass
class PassageTimes:
    times: np.ndarray
    censored: int
    cutoff: float

    @property
    def n(self) -> int:
        return len(self.times) + self.censored

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n if self.n else 1.0


def passage_rate(pt: PassageTimes, method: str = "mfpt", config: dict | None = None,
                 max_censored: float = 0.5) -> RateEstimate:
    """1/mean(first-passage time) over uncensored trajectories.

    Above ``max_censored`` only the bound k < 1/cutoff is reported.
    """
    kc = 1.0 / pt.cutoff
    cfg = dict(config or {})
    cfg.update(censored_fraction=pt.censored_fraction, cutoff=pt.cutoff, n=pt.n)
    t = np.sort(np.asarray(pt.times, float))
    if len(t) == 0 or pt.censored_fraction > max_censored:
        return RateEstimate(float("nan"), np.array([]), kc, float("nan"), method, cfg,
                            bound_only=True)
    mean = float(t.mean())
    rate = 1.0 / mean
    se = rate * (t.std(ddof=1) / math.sqrt(len(t)) / mean if len(t) > 1 else 1.0)
    return RateEstimate(float("nan"), np.array([]), rate, se, method, cfg)


def first_passage_times(model, regions: StateRegions, cutoff_time: float,
                        n_trajectories: int, rng, start=None) -> PassageTimes:
    if n_trajectories < 10:
        raise ValueError("need at least 10 trajectories")
    cap = int(round(cutoff_time / model.dt))
    start = model.well_state(-1) if start is None else start
    times, censored = [], 0
    for _ in range(n_trajectories):
        _, op, hit = model.integrate(start, hi=regions.b_min, max_steps=cap, rng=rng)
        if hit:
            times.append((len(op) - 1) * model.dt)
        else:
            censored += 1
    return PassageTimes(np.array(times), censored, cutoff_time)


def mfpt_rate(model, regions: StateRegions, cutoff_time: float, n_trajectories: int,
              rng, start=None) -> RateEstimate:
    pt = first_passage_times(model, regions, cutoff_time, n_trajectories, rng, start)
    return passage_rate(pt)


# -- Arrhenius -----------------------------------------------------------------------------------

@dataclass
class ArrheniusFit:
    slope: float
    intercept: float
    residuals: np.ndarray
    slope_stderr: float
    constrained_slope: float
    constrained_intercept: float
    constrained_residuals: np.ndarray
    inv_T: np.ndarray = field(repr=False, default=None)
    log_k: np.ndarray = field(repr=False, default=None)


def arrhenius_fit(T, k, barrier: float | None = None, log_k_err=None) -> ArrheniusFit:
    """Least-squares fit of ln k against 1/T, plus a fit with slope -barrier.

    ``log_k_err`` (standard errors of ln k) switches both fits to weighted
    least squares.
    """
    T = np.asarray(T, float)
    k = np.asarray(k, float)
    if len(T) < 3:
        raise ValueError("need at least three points")
    if np.any(k <= 0):
        raise ValueError("rates must be positive")
    if np.ptp(T) == 0:
        raise ValueError("singular design: all temperatures equal")
    barrier = barrier_height() if barrier is None else barrier
    u, y = 1.0 / T, np.log(k)
    w = np.ones_like(u) if log_k_err is None else 1.0 / np.asarray(log_k_err, float) ** 2
    A = np.column_stack([u, np.ones_like(u)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    res = y - A @ coef
    dof = max(len(u) - 2, 1)
    cov = np.linalg.inv((A * w[:, None]).T @ A)
    scale = float(np.sum(w * res ** 2) / dof) if log_k_err is None else 1.0
    slope_se = math.sqrt(cov[0, 0] * scale)
    c_int = float(np.sum(w * (y + barrier * u)) / np.sum(w))
    c_res = y - (-barrier * u + c_int)
    return ArrheniusFit(float(coef[0]), float(coef[1]), res, slope_se, -barrier, c_int, c_res,
                        u, y)


# -- histograms -------------------------------------------------------------------------------

def transition_durations(op_paths, regions: StateRegions, dt: float) -> np.ndarray:
    """Last exit from A to first entry to B, per path (paths that never reach B
    after leaving A are skipped)."""
    out = []
    for op in op_paths:
        op = np.asarray(op)
        in_b = np.flatnonzero(op >= regions.b_min)
        if len(in_b) == 0:
            continue
        jb = in_b[0]
        in_a = np.flatnonzero(op[:jb] <= regions.a_max)
        if len(in_a) == 0:
            continue
        out.append((jb - in_a[-1]) * dt)
    return np.asarray(out, float)


def path_length_histogram(op_paths, regions: StateRegions, dt: float, bins=30):
    """Normalized density of transition-path durations: ``(edges, density, durations)``."""
    d = transition_durations(op_paths, regions, dt)
    if len(d) == 0:
        raise ValueError("no transition paths")
    dens, edges = np.histogram(d, bins=bins, density=True)
    return edges, dens, d


def phase_space_histogram(paths, grid: PhaseGrid, mode: str = "centers", model=None,
                          stride: int = 1) -> np.ndarray:
    """Unit-mass (nx, np) histogram over slices of ``paths``.

    ``centers`` bins (x, p) or (<X>, <P>); ``wigner_sum`` accumulates Wigner
    fields of quantum slices (every ``stride``-th).
    """
    xe, pe = grid.edges()
    if mode == "centers":
        pts = []
        for sl in paths:
            sl = np.atleast_2d(np.asarray(sl))
            if np.iscomplexobj(sl):
                if model is None:
                    raise ValueError("quantum centers need the model for <X>, <P>")
                X, P = model.ops.X, model.ops.P
                xs = np.einsum("ij,ij->i", sl.conj(), sl @ X.T).real
                ps = np.einsum("ij,ij->i", sl.conj(), sl @ P.T).real
                pts.append(np.column_stack([xs, ps]))
            else:
                pts.append(sl[:, :2])
        pts = np.concatenate(pts)[::stride]
        h = np.histogram2d(pts[:, 0], pts[:, 1], bins=[xe, pe])[0]
    elif mode == "wigner_sum":
        if model is None:
            raise ValueError("wigner_sum needs the quantum model")
        h = np.zeros((grid.nx, grid.np))
        for sl in paths:
            for psi in np.atleast_2d(sl)[::stride]:
                h += wigner_transform(psi / np.linalg.norm(psi), model.cfg, grid).values
    else:
        raise ValueError(f"unknown mode {mode!r}")
    tot = h.sum()
    return h / tot if tot != 0 else h


def momentum_asymmetry(hist: np.ndarray, grid: PhaseGrid, n_samples: int):
    """(mass at p > 0) - (mass at p < 0) and its binomial standard error."""
    ps = grid.ps
    a = float(hist[:, ps > 0].sum() - hist[:, ps < 0].sum())
    return a, math.sqrt(max(1 - a * a, 1e-12) / max(n_samples, 1))


@dataclass
class FlipTest:
    distance: float
    null_mean: float
    null_std: float
    p_value: float

    @property
    def z(self) -> float:
        return (self.distance - self.null_mean) / max(self.null_std, 1e-300)


def momentum_flip_test(centers, grid: PhaseGrid, rng, n_perm: int = 500) -> FlipTest:
    """Randomization test of p -> -p symmetry of a phase-space histogram.

    ``centers`` holds one ``(n_i, 2)`` array of (x, p) per independent path.
    The statistic is the total-variation distance between the pooled
    histogram and its momentum mirror; the null flips the sign of p for
    whole paths at random, which keeps within-path correlations intact.
    """
    centers = [np.asarray(c, float) for c in centers]
    if len(centers) < 2:
        raise ValueError("need at least two paths")
    if grid.p_min != -grid.p_max:
        raise ValueError("grid must be symmetric in p")
    xe, pe = grid.edges()

    def distance(signs):
        pts = np.concatenate([c * (1.0, s) for c, s in zip(centers, signs)])
        h, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[xe, pe])
        h /= h.sum()
        return 0.5 * float(np.abs(h - h[:, ::-1]).sum())

    d0 = distance(np.ones(len(centers)))
    null = np.array([distance(rng.choice([-1.0, 1.0], len(centers))) for _ in range(n_perm)])
    return FlipTest(d0, float(null.mean()), float(null.std(ddof=1)),
                    float((1 + np.sum(null >= d0)) / (n_perm + 1)))


# -- coherent tunneling ------------------------------------------------------------------------

def right_well_population(states: np.ndarray, cfg: BasisConfig, x_max: float = 12.0,
                          n: int = 2001) -> np.ndarray:
    """Probability of x > 0 for each state row."""
    u = np.linspace(0.0, x_max, n)
    f = position_wavefunction(np.atleast_2d(states).T, cfg, u)
    return np.trapezoid(np.abs(f) ** 2, u, axis=-1)


def transfer_time(times: np.ndarray, pop: np.ndarray, level: float = 0.9) -> float:
    """Time of the first full population maximum.

    Fits a quadratic over the first lobe above ``level * max``; the fit
    averages over fast ripples from weakly populated higher doublets.
    """
    times, pop = np.asarray(times, float), np.asarray(pop, float)
    top = pop.max()
    above = pop >= level * top
    j0 = int(np.flatnonzero(above)[0])
    # the lobe ends once pop falls clearly below the level (hysteresis for ripples)
    low = np.flatnonzero(pop[j0:] < (level - 0.1) * top)
    end = j0 + int(low[0]) if len(low) else len(pop)
    j1 = j0 + int(np.flatnonzero(above[j0:end])[-1])
    if j1 - j0 < 2:
        return float(times[j0 + int(np.argmax(pop[j0:j1 + 1]))])
    t = times[j0:j1 + 1]
    c = np.polyfit(t - t.mean(), pop[j0:j1 + 1], 2)
    if c[0] >= 0:
        return float(t[int(np.argmax(pop[j0:j1 + 1]))])
    return float(t.mean() - c[1] / (2 * c[0]))


def tunneling_splitting(H: np.ndarray) -> float:
    """Gap between the two lowest eigenvalues."""
    w = np.linalg.eigvalsh(H)
    return float(w[1] - w[0])
