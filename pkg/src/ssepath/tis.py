"""Transition interface sampling.

Paths in ensemble ``i`` start in the A core (order parameter <= a_core),
cross interface lambda_i and stop at the first return to the core or the
first arrival in B. The rate is the effective flux through lambda_0 times
the product of conditional crossing probabilities.

Counting an effective crossing only after a core visit matches the path
ensemble's start condition, so flux and probabilities refer to the same
events.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .errors import SamplingError
from .tps import PathSample, StateRegions, shoot_acceptance_log_ratio

CORE_OFFSET = 0.5


@dataclass(frozen=True)
class TisConfig:
    a_core_offset: float = CORE_OFFSET
    max_path_time: float = 200.0
    dp_width: float = 0.5
    n_moves: int = 1000
    pilot_moves: int = 300
    target: float = 0.4
    min_spacing: float = 0.05
    min_crossings: int = 100
    n_blocks: int = 10
    max_flux_time: float = 1e7
    max_interfaces: int = 40


@dataclass(frozen=True)
class InterfaceSet:
    lambdas: tuple

    def __post_init__(self):
        lam = np.asarray(self.lambdas, float)
        if len(lam) < 2 or np.any(np.diff(lam) <= 0):
            raise ValueError("interfaces must be strictly increasing with at least two entries")

    def check(self, regions: StateRegions) -> None:
        if self.lambdas[0] != regions.a_max or self.lambdas[-1] != regions.b_min:
            raise ValueError("interfaces must start at a_max and end at b_min")

    def __len__(self):
        return len(self.lambdas)

    def __getitem__(self, i):
        return self.lambdas[i]


@dataclass
class FluxEstimate:
    flux: float
    stderr: float
    n_crossings: int
    sim_time: float
    block_fluxes: np.ndarray


@dataclass
class CrossingEntry:
    index: int
    lam: float
    lam_next: float
    trials: int
    successes: int
    estimate: float
    stderr: float
    tau: float
    acceptance: float
    cap_hits: int
    maxima: np.ndarray = field(repr=False, default=None)
    lengths: np.ndarray = field(repr=False, default=None)


@dataclass
class CrossingStats:
    entries: list

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([e.estimate for e in self.entries])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.entries])

    def cumulative(self) -> np.ndarray:
        """(lambda, log cumulative crossing probability) rows."""
        rows = [(self.entries[0].lam, 0.0)]
        acc = 0.0
        for e in self.entries:
            acc += math.log(e.estimate) if e.estimate > 0 else -math.inf
            rows.append((e.lam_next, acc))
        return np.array(rows)

    def write_csv(self, path):
        cols = ["index", "lambda", "lambda_next", "trials", "successes", "estimate",
                "stderr", "tau", "acceptance", "cap_hits"]
        return io.write_csv(path, cols, ([e.index, e.lam, e.lam_next, e.trials, e.successes,
                                          e.estimate, e.stderr, e.tau, e.acceptance,
                                          e.cap_hits] for e in self.entries))

    def write_histogram_csv(self, path):
        return io.write_csv(path, ["lambda", "log_crossing_probability"], self.cumulative())


@dataclass
class RateEstimate:
    flux0: float
    crossing_probs: np.ndarray
    rate: float
    stderr: float
    method: str
    config: dict = field(default_factory=dict)
    flux_stderr: float = float("nan")
    bound_only: bool = False

    def write_csv(self, path):
        rows = [["flux0", self.flux0, self.flux_stderr]]
        rows += [[f"P{i}", p, ""] for i, p in enumerate(self.crossing_probs)]
        rows += [["rate", self.rate, self.stderr], ["method", self.method, ""],
                 ["bound_only", int(self.bound_only), ""]]
        return io.write_csv(path, ["quantity", "value", "stderr"], rows)


# -- helpers -------------------------------------------------------------------------------

def a_core(regions: StateRegions, cfg: TisConfig) -> float:
    return regions.a_max - cfg.a_core_offset


def integrated_autocorr(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 1.0
    d = x - x.mean()
    f = np.fft.rfft(d, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for m in range(1, n):
        tau += 2 * acf[m]
        if m >= c * tau:
            break
    return max(1.0, float(tau))


def binomial_estimate(flags: np.ndarray):
    """(p, stderr, tau) with stderr from the effective sample size n/tau."""
    flags = np.asarray(flags, float)
    n = len(flags)
    p = float(flags.mean())
    tau = integrated_autocorr(flags)
    neff = max(n / tau, 1.0)
    var = max(p * (1 - p), 1.0 / (n + 1)) / neff
    return p, math.sqrt(var), tau


# -- flux ----------------------------------------------------------------------------------

def first_interface_flux(model, regions: StateRegions, rng, cfg: TisConfig = TisConfig(),
                         chunk: int = 1 << 16) -> FluxEstimate:
    """Effective outward crossings of lambda_0 = a_max per unit time.

    A crossing counts only if the trajectory visited the core since the last
    count. Reaching B restarts the trajectory at the A well minimum; time
    spent after the B arrival is not counted.
    """
    lam0, core, dt = regions.a_max, a_core(regions, cfg), model.dt
    cur = model.well_state(-1)
    armed = True
    t_total = 0.0
    times = []
    max_steps = int(cfg.max_flux_time / dt)
    steps = 0
    while len(times) < cfg.min_crossings and steps < max_steps:
        slices, op, _ = model.integrate(cur, hi=regions.b_min, max_steps=chunk, rng=rng)
        n = len(op) - 1
        lab = np.where(op <= core, 0, np.where(op > lam0, 2, 1))
        change = np.flatnonzero(lab[1:] != lab[:-1]) + 1
        for j in change:
            if lab[j] == 0:
                armed = True
            elif lab[j] == 2 and armed and lab[j - 1] != 2:
                times.append(t_total + j * dt)
                armed = False
        t_total += n * dt
        steps += n
        if op[-1] >= regions.b_min:
            cur, armed = model.well_state(-1), True
        else:
            cur = slices[-1]
    if len(times) < cfg.min_crossings:
        raise SamplingError(f"only {len(times)} effective crossings in {t_total:.4g} time units")
    nb = cfg.n_blocks
    blocks = np.histogram(times, bins=nb, range=(0.0, t_total))[0] / (t_total / nb)
    flux = len(times) / t_total
    return FluxEstimate(flux, float(blocks.std(ddof=1) / math.sqrt(nb)), len(times),
                        t_total, blocks)


# -- path ensembles ------------------------------------------------------------------------

def valid_tis_path(op: np.ndarray, lam: float, regions: StateRegions, core: float) -> bool:
    """Starts in the core, crosses ``lam``, ends at the first core or B visit."""
    if len(op) < 2 or op[0] > core:
        return False
    if not (op[-1] <= core or op[-1] >= regions.b_min):
        return False
    inner = op[1:-1]
    if np.any(inner <= core) or np.any(inner >= regions.b_min):
        return False
    return bool(op.max() >= lam)


def seed_tis_path(model, regions: StateRegions, lam: float, rng, cfg: TisConfig = TisConfig(),
                  max_attempts: int = 100000) -> PathSample:
    """Brute-force path from the core across ``lam``; practical when ``lam`` is low
    or the system is hot."""
    core = a_core(regions, cfg)
    cap = int(cfg.max_path_time / model.dt)
    cur = model.well_state(-1)
    for _ in range(max_attempts):
        # leave the core, remembering the last core slice
        seg, op, ok = model.integrate(cur, lo=-math.inf, hi=core + 1e-300,
                                      max_steps=cap, rng=rng)
        if not ok:
            cur = seg[-1]
            continue
        if op[-1] >= regions.b_min or op[-1] <= core:
            cur = model.well_state(-1)
            continue
        start = seg[-2]
        body, bop, ok = model.integrate(seg[-1], lo=core, hi=regions.b_min,
                                        max_steps=cap, rng=rng)
        slices = np.concatenate([start[None, :], body])
        ops_ = np.concatenate([[op[-2]], bop])
        if ok and valid_tis_path(ops_, lam, regions, core):
            return PathSample.from_slices(slices, model, op=ops_)
        cur = body[-1] if bop[-1] <= core else model.well_state(-1)
    raise SamplingError(f"could not seed a path crossing {lam}")


def tis_shoot(old: PathSample, s: int, dp: float, rng, regions: StateRegions, core: float,
              cap: int):
    """Variable-length two-way shot. Returns ``(new | None, s_new, reason)``."""
    model = old.model
    mid = model.kick(old.slices[s], dp)
    back, bop, ok = model.integrate(model.time_reverse(mid), lo=core, hi=regions.b_min,
                                    max_steps=cap, rng=rng)
    if not ok:
        return None, 0, "cap"
    if bop[-1] >= regions.b_min:
        return None, 0, "backward-in-B"
    remaining = cap - (len(bop) - 1)
    if remaining < 1:
        return None, 0, "cap"
    fwd, fop, ok = model.integrate(mid, lo=core, hi=regions.b_min, max_steps=remaining, rng=rng)
    if not ok:
        return None, 0, "cap"
    back = model.time_reverse(back[::-1])
    slices = np.concatenate([back[:-1], fwd])
    op = np.concatenate([bop[::-1][:-1], fop])
    s_new = len(bop) - 1
    return PathSample.from_slices(slices, model, op=op), s_new, "ok"


class _TopPaths:
    """Keeps the ``k`` paths with the highest maximum order parameter."""

    def __init__(self, k: int = 4):
        self.k = k
        self.heap = []
        self._tie = itertools.count()

    def offer(self, path: PathSample):
        item = (float(path.op.max()), next(self._tie), path)
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, item)
        elif item[0] > self.heap[0][0]:
            heapq.heapreplace(self.heap, item)

    def reaching(self, lam: float):
        ok = [it for it in self.heap if it[0] >= lam]
        return min(ok)[2] if ok else None


@dataclass
class EnsembleRun:
    entry: CrossingEntry
    current: PathSample
    top: _TopPaths
    lengths: np.ndarray


def tis_ensemble_sample(model, interfaces, i: int, rng, seed: PathSample,
                        regions: StateRegions, cfg: TisConfig = TisConfig(),
                        n_moves: int | None = None, lam_next: float | None = None) -> EnsembleRun:
    """Shooting Monte Carlo in the ensemble of paths crossing ``interfaces[i]``.

    The estimate is the fraction of chain states whose maximum reaches
    ``interfaces[i + 1]`` (or ``lam_next``).
    """
    lam = interfaces[i]
    lam_next = interfaces[i + 1] if lam_next is None else lam_next
    core = a_core(regions, cfg)
    if not valid_tis_path(seed.op, lam, regions, core):
        raise SamplingError(f"seed path is not in ensemble {i} (lambda={lam})")
    cap = int(cfg.max_path_time / model.dt)
    n_moves = cfg.n_moves if n_moves is None else n_moves
    cur = seed
    maxima = np.empty(n_moves)
    lengths = np.empty(n_moves, int)
    accepted = cap_hits = 0
    top = _TopPaths()
    top.offer(cur)
    for k in range(n_moves):
        n_old = cur.n_steps
        s = int(rng.integers(1, n_old))
        dp = float(rng.normal(0.0, cfg.dp_width))
        new, s_new, why = tis_shoot(cur, s, dp, rng, regions, core, cap)
        if why == "cap":
            cap_hits += 1
        if new is not None and new.n_steps >= 2 and new.op.max() >= lam:
            ratio = shoot_acceptance_log_ratio(cur, new, s, s_new)
            ratio += math.log((n_old - 1) / (new.n_steps - 1))
            if math.log(rng.random() + 1e-300) < ratio:
                cur = new
                accepted += 1
                top.offer(cur)
        maxima[k] = cur.op.max()
        lengths[k] = cur.n_steps
    hit = maxima >= lam_next
    p, se, tau = binomial_estimate(hit)
    entry = CrossingEntry(i, lam, lam_next, n_moves, int(hit.sum()), p, se, tau,
                          accepted / max(n_moves, 1), cap_hits, maxima, lengths)
    return EnsembleRun(entry, cur, top, lengths)


def place_interfaces(model, regions: StateRegions, rng, cfg: TisConfig = TisConfig(),
                     seed: PathSample | None = None):
    """Greedy placement: each next interface is the empirical (1 - target)
    quantile of pilot path maxima, so a fraction ``target`` of pilot paths
    cross it. Returns ``(InterfaceSet, pilot_runs)``.
    """
    lambdas = [regions.a_max]
    pilots = []
    path = seed if seed is not None else seed_tis_path(model, regions, regions.a_max, rng, cfg)
    while lambdas[-1] < regions.b_min:
        if len(lambdas) > cfg.max_interfaces:
            raise SamplingError("too many interfaces; pilot is not advancing")
        lam = lambdas[-1]
        run = tis_ensemble_sample(model, (lam, regions.b_min), 0, rng, path, regions, cfg,
                                  n_moves=cfg.pilot_moves)
        q = float(np.quantile(run.entry.maxima, 1 - cfg.target))
        if q >= regions.b_min:
            q = regions.b_min
        elif q <= lam + cfg.min_spacing:
            raise SamplingError(
                f"pilot at lambda={lam:.4f} cannot advance (quantile {q:.4f})")
        run.entry.lam_next = q
        hit = run.entry.maxima >= q
        run.entry.successes = int(hit.sum())
        run.entry.estimate, run.entry.stderr, run.entry.tau = binomial_estimate(hit)
        pilots.append(run)
        lambdas.append(q)
        path = run.top.reaching(q)
        if path is None:
            raise SamplingError(f"no pilot path reached {q:.4f}")
        if q >= regions.b_min:
            break
    return InterfaceSet(tuple(lambdas)), pilots


def sample_all(model, interfaces: InterfaceSet, regions: StateRegions, rng,
               cfg: TisConfig = TisConfig(), seed: PathSample | None = None,
               seeds: list | None = None) -> CrossingStats:
    """Sample every interface ensemble, bootstrapping seeds upward."""
    entries = []
    path = seed
    for i in range(len(interfaces) - 1):
        if seeds is not None and i < len(seeds) and seeds[i] is not None:
            path = seeds[i]
        if path is None:
            path = seed_tis_path(model, regions, interfaces[i], rng, cfg)
        run = tis_ensemble_sample(model, interfaces, i, rng, path, regions, cfg)
        entries.append(run.entry)
        path = run.top.reaching(interfaces[i + 1])
        if path is None and i + 2 < len(interfaces):
            raise SamplingError(f"ensemble {i} produced no path reaching {interfaces[i + 1]}")
    return CrossingStats(entries)


def tis_rate(flux: FluxEstimate, stats: CrossingStats, method: str = "tis",
             config: dict | None = None) -> RateEstimate:
    """k = flux * prod(P_i); stderr treats the factors as independent."""
    probs = stats.probabilities
    rate = flux.flux * float(np.prod(probs))
    rel2 = (flux.stderr / flux.flux) ** 2 if flux.flux > 0 else math.inf
    for e in stats.entries:
        rel2 += (e.stderr / e.estimate) ** 2 if e.estimate > 0 else math.inf
    return RateEstimate(flux.flux, probs, rate, rate * math.sqrt(rel2), method,
                        dict(config or {}), flux_stderr=flux.stderr)
