"""Transition path sampling with two-way shooting and mirror moves.

A path is a fixed-length array of slices together with the model that
generated it. Per-step forward and backward log-densities are computed lazily
because most proposals are rejected by the endpoint gate before they are
needed.

Conventions used by the acceptance rules: for a path with ``N`` steps,
``fwd[i] = log P(x_i -> x_{i+1})`` and ``bwd[i] = log Pbar(x_{i+1} -> x_i)``,
the latter being the forward density of the time-reversed pair. A shot at
slice ``s`` regenerates steps ``i < s`` with the reversed dynamics and steps
``i >= s`` forward.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import io
from .dynamics import Trajectory
from .errors import SamplingError
from .rng import seed_info

log = logging.getLogger(__name__)

TRANSFORMS = ("T", "P", "PT")


@dataclass(frozen=True)
class StateRegions:
    a_max: float = -2.6
    b_min: float = 2.6

    def __post_init__(self):
        if not self.a_max < self.b_min:
            raise ValueError("a_max must be < b_min")

    def in_a(self, op):
        return np.asarray(op) <= self.a_max

    def in_b(self, op):
        return np.asarray(op) >= self.b_min

    def mirrored(self) -> "StateRegions":
        return StateRegions(-self.b_min, -self.a_max)


@dataclass(frozen=True)
class Flags:
    h_a: int
    h_b: int
    visits_b: np.ndarray

    def __iter__(self):
        return iter((self.h_a, self.h_b))


def indicators(op_or_traj, regions: StateRegions) -> Flags:
    """h_A at the first slice, h_B at the last, and the per-slice B mask."""
    op = op_or_traj.op if isinstance(op_or_traj, Trajectory) else np.asarray(op_or_traj)
    mask = regions.in_b(op)
    return Flags(int(regions.in_a(op[0])), int(mask[-1]), mask)


class PathSample:
    """A path plus lazily evaluated densities under ``model``."""

    def __init__(self, traj: Trajectory, model):
        self.traj = traj
        self.model = model
        if traj.op is None:
            traj.op = model.order_parameters(traj.slices)
        self._fwd = None
        self._bwd = None
        self._w = None

    @classmethod
    def from_slices(cls, slices, model, op=None, info=None) -> "PathSample":
        return cls(Trajectory(model.dt, model.kind, slices, info or {}, op=op), model)

    @property
    def slices(self) -> np.ndarray:
        return self.traj.slices

    @property
    def op(self) -> np.ndarray:
        return self.traj.op

    @property
    def n_steps(self) -> int:
        return len(self.traj) - 1

    @property
    def fwd(self) -> np.ndarray:
        if self._fwd is None:
            self._fwd = self.model.step_log_probs(self.slices)
        return self._fwd

    @property
    def bwd(self) -> np.ndarray:
        if self._bwd is None:
            self._bwd = self.model.step_log_probs(self.slices, backward=True)
        return self._bwd

    @property
    def weight(self) -> float:
        if self._w is None:
            self._w = self.model.stationary_log_weight(self.slices[0])
        return self._w

    @property
    def log_prob(self) -> float:
        return self.weight + float(np.sum(self.fwd))

    def flags(self, regions: StateRegions) -> Flags:
        return indicators(self.op, regions)


# -- ensemble constraints ------------------------------------------------------------

def reactive(regions: StateRegions) -> Callable[[np.ndarray], bool]:
    return lambda op: bool(op[0] <= regions.a_max and op[-1] >= regions.b_min)


def visiting(regions: StateRegions) -> Callable[[np.ndarray], bool]:
    return lambda op: bool(op[0] <= regions.a_max and np.any(op >= regions.b_min))


def endpoint_window(regions: StateRegions, lo: float, hi: float):
    return lambda op: bool(op[0] <= regions.a_max and lo <= op[-1] <= hi)


def constraint_for(mode, regions: StateRegions):
    if callable(mode):
        return mode
    if mode == "AB":
        return reactive(regions)
    if mode == "visiting":
        return visiting(regions)
    raise ValueError(f"unknown ensemble mode {mode!r}")


# -- shooting ---------------------------------------------------------------------------

def two_way_shoot(old: PathSample, s: int, dp: float, rng=None, noise=None) -> PathSample:
    """Kick slice ``s`` by ``dp`` and regrow both ends with fresh noise.

    ``noise = (forward, backward)`` replays explicit draws of lengths
    ``N - s`` and ``s``. The backward segment is grown forward from the
    time-reversed kicked slice and then reversed back.
    """
    n = old.n_steps
    if not 0 < s < n:
        raise ValueError(f"shooting index {s} outside 0 < s < {n}")
    model = old.model
    if noise is None:
        f_noise = rng.standard_normal(n - s)
        b_noise = rng.standard_normal(s)
    else:
        f_noise, b_noise = noise
        if len(f_noise) != n - s or len(b_noise) != s:
            raise ValueError("replayed noise has the wrong length")
    mid = old.slices[s] if dp == 0 else model.kick(old.slices[s], dp)
    fwd, fop, _ = model.integrate(mid, noise=f_noise)
    back, bop, _ = model.integrate(model.time_reverse(mid), noise=b_noise)
    back = model.time_reverse(back[::-1])
    slices = np.concatenate([back[:-1], fwd])
    op = np.concatenate([bop[::-1][:-1], fop])
    info = seed_info(rng) if rng is not None else {"tag": "explicit-noise"}
    return PathSample.from_slices(slices, model, op=op, info=info)


def _safe(x: float) -> float:
    return -math.inf if math.isnan(x) else x


def shoot_acceptance_log_ratio(old: PathSample, new: PathSample, s: int,
                               s_new: int | None = None) -> float:
    """Log Metropolis ratio of a two-way shot (symmetric kick and index choice).

    Only the regenerated backward segment (steps before the shooting index)
    contributes path terms; the forward segments cancel against the
    generation probability. ``s_new`` allows the shooting slice to sit at a
    different index in paths of different lengths.
    """
    s_new = s if s_new is None else s_new
    r = (new.weight - old.weight
         + np.sum(new.fwd[:s_new] - new.bwd[:s_new])
         - np.sum(old.fwd[:s] - old.bwd[:s]))
    return _safe(float(r))


# -- mirror moves --------------------------------------------------------------------------

def transform_path(path: PathSample, label: str) -> PathSample:
    """Apply T (reverse order, time-reverse slices), P (parity) or PT."""
    if label in ("I", ""):
        return path
    model = path.model
    slices, op = path.slices, path.op
    if "T" in label:
        slices = model.time_reverse(slices[::-1])
        op = op[::-1]
    if "P" in label:
        slices = model.parity(slices)
        op = -op
    return PathSample.from_slices(np.ascontiguousarray(slices), model,
                                  op=np.ascontiguousarray(op), info=path.traj.seed_info)


def _transform_op(op: np.ndarray, label: str) -> np.ndarray:
    if "T" in label:
        op = op[::-1]
    if "P" in label:
        op = -op
    return op


def mirrored_index(s: int, n_steps: int, label: str) -> int:
    return n_steps - s if "T" in label else s


def count_valid(op: np.ndarray, transforms, constraint) -> int:
    """Valid candidates among ``op`` and its images under ``transforms``."""
    return sum(bool(constraint(_transform_op(op, lab))) for lab in ("I", *transforms))


def mirror_propose(old: PathSample, s: int, dp: float, transforms, rng, constraint,
                   noise=None):
    """Shoot, then pick uniformly among the shot and its mirror images that
    satisfy ``constraint``.

    Returns ``(chosen, label, n_s, raw)``; ``chosen`` is None when ``n_s = 0``.
    """
    raw = two_way_shoot(old, s, dp, rng=rng, noise=noise)
    labels = [lab for lab in ("I", *transforms) if constraint(_transform_op(raw.op, lab))]
    if not labels:
        return None, None, 0, raw
    label = labels[int(rng.integers(len(labels)))] if len(labels) > 1 else labels[0]
    return transform_path(raw, label), label, len(labels), raw


def mirror_acceptance_log_ratio(old: PathSample, chosen: PathSample, s: int, n_s: int,
                                nbar_s: int, label: str, raw: PathSample | None = None) -> float:
    """Log Metropolis ratio for a mirror move.

    The reverse move regrows ``Z = S(old)`` from ``chosen`` at index ``s'``
    (``N - s`` when S contains T). With ``n`` the raw shot,

        log(n_s/nbar_s) + [w(Y) + sum fwd(Y)] - [w(old) + sum fwd(old)]
          + [sum_{i<s'} bwd(Z) + sum_{i>=s'} fwd(Z)]
          - [sum_{i<s} bwd(n) + sum_{i>=s} fwd(n)].

    For pure time reversal the Y and Z terms map onto the raw and old arrays,
    which removes two density evaluations.
    """
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    if nbar_s < 1:
        raise SamplingError("reverse move impossible (nbar_s = 0)")
    base = math.log(n_s / nbar_s)
    if label == "I":
        return base + shoot_acceptance_log_ratio(old, chosen, s)
    n = transform_path(chosen, label) if raw is None else raw
    if label == "T":
        r = (chosen.weight - old.weight
             + np.sum(n.bwd[s:] - n.fwd[s:])
             + np.sum(old.bwd[:s] - old.fwd[:s]))
        return base + _safe(float(r))
    z = transform_path(old, label)
    sp_ = mirrored_index(s, old.n_steps, label)
    r = (chosen.weight + np.sum(chosen.fwd) - old.weight - np.sum(old.fwd)
         + np.sum(z.bwd[:sp_]) + np.sum(z.fwd[sp_:])
         - np.sum(n.bwd[:s]) - np.sum(n.fwd[s:]))
    return base + _safe(float(r))


# -- chain -----------------------------------------------------------------------------------

@dataclass
class TpsConfig:
    n_moves: int = 1000
    dp_width: float = 0.5
    mirror_fraction: float = 0.0
    transforms: tuple = TRANSFORMS
    mode: str = "AB"
    acceptance_floor: float = 0.01
    floor_window: int = 500
    store_every: int = 0

    def __post_init__(self):
        bad = set(self.transforms) - set(TRANSFORMS)
        if bad:
            raise ValueError(f"unknown transforms {sorted(bad)}")
        if not 0 <= self.mirror_fraction <= 1:
            raise ValueError("mirror_fraction must lie in [0, 1]")

    def digest(self) -> str:
        d = asdict(self)
        d["transforms"] = list(d["transforms"])
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MoveRecord:
    move: int
    kind: str
    s: int
    dp: float
    accepted: bool
    n_s: int = 1
    nbar_s: int = 1
    log_ratio: float = float("nan")
    label: str = "I"

    FIELDS = ("move", "kind", "s", "dp", "accepted", "n_s", "nbar_s", "log_ratio", "label")

    def row(self):
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class TpsChain:
    """State of a TPS Markov chain.

    ``paths`` holds every ``store_every``-th state (all zero means only the
    initial path); ``records`` holds per-move observer values.
    """

    config: TpsConfig
    current: PathSample
    paths: list = field(default_factory=list)
    moves: list = field(default_factory=list)
    records: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def acceptance(self, kind: str | None = None) -> float:
        sel = [m for m in self.moves if kind is None or m.kind == kind]
        return sum(m.accepted for m in sel) / len(sel) if sel else float("nan")

    def counters(self) -> dict:
        out = {}
        for kind in ("shoot", "mirror"):
            sel = [m for m in self.moves if m.kind == kind]
            out[kind] = {"tried": len(sel), "accepted": sum(m.accepted for m in sel)}
        return out

    def record_array(self, name: str) -> np.ndarray:
        return np.asarray(self.records[name])

    def write_move_log(self, path):
        return io.write_csv(path, MoveRecord.FIELDS, (m.row() for m in self.moves))


def tps_run(config: TpsConfig, initial: PathSample, regions: StateRegions, rng,
            observers: dict | None = None, constraint=None,
            resume: TpsChain | None = None) -> TpsChain:
    """Run ``config.n_moves`` shooting/mirror moves from ``initial``.

    ``observers`` maps names to ``fn(path) -> value``; each is evaluated on
    the chain state after every move (rejections repeat the state).
    """
    gate = constraint or constraint_for(config.mode, regions)
    if not gate(initial.op):
        raise SamplingError("initial path violates the ensemble constraint")
    observers = observers or {}
    if resume is not None:
        chain = resume
        chain.config = config
    else:
        chain = TpsChain(config, initial, paths=[initial], seeds=seed_info(rng),
                         records={k: [] for k in observers})
    cur = chain.current
    n = cur.n_steps
    if n < 2:
        raise SamplingError("paths need at least two steps for shooting")
    start = len(chain.moves)
    window = []
    for k in range(start, start + config.n_moves):
        s = int(rng.integers(1, n))
        dp = float(rng.normal(0.0, config.dp_width))
        use_mirror = config.mirror_fraction > 0 and rng.random() < config.mirror_fraction
        if use_mirror:
            chosen, label, n_s, raw = mirror_propose(cur, s, dp, config.transforms, rng, gate)
            rec = MoveRecord(k, "mirror", s, dp, False, n_s, 0, label=label or "-")
            if chosen is not None:
                rec.nbar_s = count_valid(_transform_op(cur.op, label), config.transforms, gate)
                if rec.nbar_s > 0:
                    rec.log_ratio = mirror_acceptance_log_ratio(cur, chosen, s, n_s,
                                                                rec.nbar_s, label, raw)
                    if math.log(rng.random() + 1e-300) < rec.log_ratio:
                        rec.accepted = True
                        cur = chosen
        else:
            new = two_way_shoot(cur, s, dp, rng=rng)
            rec = MoveRecord(k, "shoot", s, dp, False)
            if gate(new.op):
                rec.log_ratio = shoot_acceptance_log_ratio(cur, new, s)
                if math.log(rng.random() + 1e-300) < rec.log_ratio:
                    rec.accepted = True
                    cur = new
        chain.moves.append(rec)
        for name, fn in observers.items():
            chain.records.setdefault(name, []).append(fn(cur))
        if config.store_every and (k + 1) % config.store_every == 0:
            chain.paths.append(cur)
        window.append(rec.accepted)
        if len(window) > config.floor_window:
            window.pop(0)
        if len(window) == config.floor_window:
            rate = sum(window) / len(window)
            if rate < config.acceptance_floor:
                chain.current = cur
                raise SamplingError(
                    f"acceptance {rate:.4f} below floor {config.acceptance_floor} over the "
                    f"last {config.floor_window} moves (move {k}, counters "
                    f"{chain.counters()})")
    chain.current = cur
    return chain


# -- checkpoints -----------------------------------------------------------------------------

def save_checkpoint(chain: TpsChain, path, rng) -> None:
    meta = {
        "config_hash": chain.config.digest(),
        "config": {**asdict(chain.config), "transforms": list(chain.config.transforms)},
        "counters": chain.counters(),
        "n_moves_done": len(chain.moves),
        "rng_state": rng.bit_generator.state,
        "seeds": chain.seeds,
        "dt": chain.current.traj.dt,
        "kind": chain.current.traj.kind,
        "moves": [m.row() for m in chain.moves],
    }
    io.write_array(path, chain.current.slices, meta=_jsonable(meta))


def load_checkpoint(path, model, rng=None) -> tuple[TpsChain, object]:
    """Rebuild a chain (current path, move log) and restore ``rng`` in place."""
    slices, meta = io.read_array(path)
    cfg = meta["config"]
    cfg["transforms"] = tuple(cfg["transforms"])
    config = TpsConfig(**cfg)
    if config.digest() != meta["config_hash"]:
        raise SamplingError("checkpoint config hash mismatch")
    cur = PathSample.from_slices(slices, model)
    moves = [MoveRecord(*row) for row in meta["moves"]]
    chain = TpsChain(config, cur, paths=[cur], moves=moves, seeds=meta["seeds"])
    if rng is not None:
        rng.bit_generator.state = meta["rng_state"]
    return chain, rng


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


# -- correlation function and scale factor ----------------------------------------------------

def seed_reactive_path(model, regions: StateRegions, n_steps: int, rng, mode="AB",
                       max_tries: int = 100000, equil_steps: int = 20000,
                       chunk: int = 1 << 16):
    """Brute-force search for a path satisfying the ensemble ``mode``.

    Equilibrates in A first. For ``"AB"`` the dynamics runs until it first
    enters B and the ``n_steps`` window ending there is kept if it starts in A;
    other modes test consecutive windows of ``n_steps``.
    """
    gate = constraint_for(mode, regions)
    cur, _, _ = model.integrate(model.well_state(-1), max_steps=equil_steps, rng=rng)
    cur = cur[-1]
    if mode == "AB":
        tail = cur[None, :]
        tail_op = model.order_parameters(tail)
        for _ in range(max_tries):
            slices, op, hit = model.integrate(cur, hi=regions.b_min, max_steps=chunk, rng=rng)
            tail = np.concatenate([tail, slices[1:]])[-(n_steps + 1):]
            tail_op = np.concatenate([tail_op, op[1:]])[-(n_steps + 1):]
            if not hit:
                cur = slices[-1]
                continue
            if len(tail) == n_steps + 1 and gate(tail_op):
                return PathSample.from_slices(np.ascontiguousarray(tail), model,
                                              op=np.ascontiguousarray(tail_op),
                                              info=seed_info(rng))
            cur = model.well_state(-1)
            tail, tail_op = cur[None, :], model.order_parameters(cur[None, :])
        raise SamplingError(f"no A->B transition of length {n_steps} in {max_tries} attempts")
    for _ in range(max_tries):
        slices, op, _ = model.integrate(cur, max_steps=n_steps, rng=rng)
        if gate(op):
            return PathSample.from_slices(slices, model, op=op, info=seed_info(rng))
        cur = slices[-1]
    raise SamplingError(f"no path satisfying {mode!r} found in {max_tries} tries")


def h_b_profile(regions: StateRegions):
    """Observer returning the per-slice B indicator of the current path."""
    return lambda path: regions.in_b(path.op).astype(float)


@dataclass
class CorrelationTable:
    t: np.ndarray
    C: np.ndarray
    hb_mean: np.ndarray
    C_tprime: float
    t_prime: float

    def write_csv(self, path):
        return io.write_csv(path, ["t", "C", "hB_visiting"],
                            zip(self.t, self.C, self.hb_mean))


def correlation_function(hb_mean: np.ndarray, dt: float, t_grid, t_prime: float,
                         C_tprime: float) -> CorrelationTable:
    """C(t) = <h_B(x_t)>*/<h_B(x_t')>* . C(t') from visiting-ensemble averages.

    ``hb_mean[i]`` is the visiting-ensemble average of h_B at slice ``i``.
    """
    hb_mean = np.asarray(hb_mean, float)
    duration = (len(hb_mean) - 1) * dt
    if not 0 <= t_prime <= duration + 1e-12:
        raise ValueError(f"t_prime {t_prime} outside the path duration {duration}")
    ip = int(round(t_prime / dt))
    if hb_mean[ip] <= 0:
        raise SamplingError("<h_B(x_t')> is zero in the visiting ensemble; t' too early")
    t_grid = np.asarray(t_grid, float)
    idx = np.clip(np.rint(t_grid / dt).astype(int), 0, len(hb_mean) - 1)
    C = hb_mean[idx] / hb_mean[ip] * C_tprime
    return CorrelationTable(t_grid, C, hb_mean[idx], C_tprime, t_prime)


def linear_slope(table: CorrelationTable, t_lo: float, t_hi: float) -> float:
    sel = (table.t >= t_lo) & (table.t <= t_hi)
    if sel.sum() < 2:
        raise ValueError("need at least two points in the linear regime")
    return float(np.polyfit(table.t[sel], table.C[sel], 1)[0])


@dataclass
class UmbrellaResult:
    value: float
    edges: np.ndarray
    prob: np.ndarray
    windows: list
    counts: list
    seam_z: list
    stderr: float = math.nan

    def __float__(self):
        return self.value


def umbrella_windows(regions: StateRegions, n_windows: int = 8):
    """Windows over [a_max, b_min] with 50% overlap plus open end windows."""
    a, b = regions.a_max, regions.b_min
    w = 2 * (b - a) / (n_windows + 1)
    wins = [(-math.inf, a + w / 2)]
    wins += [(a + k * w / 2, a + k * w / 2 + w) for k in range(n_windows)]
    wins.append((b - w / 2, math.inf))
    return wins, w


def umbrella_scale_factor(model, regions: StateRegions, n_steps: int, rng,
                          moves_per_window: int = 2000, n_windows: int = 8,
                          bins_per_window: int = 8, dp_width: float = 0.5,
                          windows=None, seed_path: PathSample | None = None,
                          burn_in: float = 0.2, n_batches: int = 10,
                          n_boot: int = 200) -> UmbrellaResult:
    """P(x_{t'} in B | x_0 in A) by histogram matching of windowed endpoint
    distributions; ``t' = n_steps * dt``.

    Each window's chain starts from a path handed over at the edge of the
    window, so the first ``burn_in`` fraction of its moves is discarded. The
    standard error comes from a block bootstrap over ``n_batches``
    contiguous batches per window.
    """
    if windows is None:
        windows, w = umbrella_windows(regions, n_windows)
    else:
        finite = [hi - lo for lo, hi in windows if math.isfinite(hi - lo)]
        w = min(finite) if finite else regions.b_min - regions.a_max
    bw = w / bins_per_window
    lo_grid = regions.a_max - 2 * w
    hi_grid = regions.b_min + 2 * w
    grid = np.arange(lo_grid, hi_grid + bw / 2, bw)
    edges = np.concatenate([[-math.inf], grid, [math.inf]])
    nb = len(edges) - 1
    for (lo1, hi1), (lo2, hi2) in zip(windows, windows[1:]):
        if min(hi1, hi2) - max(lo1, lo2) < 2 * bw - 1e-12:
            raise SamplingError(f"windows {lo1, hi1} and {lo2, hi2} overlap by < 2 bins")

    cfg = TpsConfig(n_moves=moves_per_window, dp_width=dp_width, acceptance_floor=0.0)
    centers = _bin_centers(edges, bw)
    series, in_window = [], []
    path = seed_path
    for k, (lo, hi) in enumerate(windows):
        gate = endpoint_window(regions, lo, hi)
        if path is None or not gate(path.op):
            if k == 0:
                path = _seed_window(model, regions, n_steps, rng, gate)
            else:
                raise SamplingError(f"no seed path for umbrella window {k}")
        nxt = windows[k + 1] if k + 1 < len(windows) else None
        keep = {}

        def grab(p, nxt=nxt, keep=keep):
            if nxt is not None and nxt[0] <= p.op[-1] <= nxt[1]:
                keep["p"] = p
            return p.op[-1]

        chain = tps_run(cfg, path, regions, rng, observers={"end": grab}, constraint=gate)
        ends = chain.record_array("end")[int(burn_in * moves_per_window):]
        series.append(np.searchsorted(edges, ends, side="right") - 1)
        in_window.append((centers >= lo) & (centers <= hi))
        path = keep.get("p")

    in_b = centers >= regions.b_min
    counts = [np.bincount(b, minlength=nb).astype(float) for b in series]
    value, prob, seam_z = _match_windows(counts, in_window, in_b)
    # block bootstrap over contiguous batches of each window's endpoint series
    boot = []
    brng = np.random.default_rng(0)
    batches = [np.array_split(b, n_batches) for b in series]
    for _ in range(n_boot):
        cs = []
        for bl in batches:
            pick = brng.integers(len(bl), size=len(bl))
            cs.append(np.bincount(np.concatenate([bl[i] for i in pick]),
                                  minlength=nb).astype(float))
        try:
            boot.append(_match_windows(cs, in_window, in_b)[0])
        except SamplingError:
            continue
    stderr = float(np.std(boot, ddof=1)) if len(boot) > 1 else math.nan
    return UmbrellaResult(value, edges, prob, list(windows), counts, seam_z, stderr)


def _match_windows(counts, in_window, in_b):
    """Chain window histograms through their overlap masses; returns
    (mass in B, matched distribution, seam shape z-scores)."""
    nb = len(in_b)
    logz = [0.0]
    seam_z = []
    for k in range(1, len(counts)):
        ov = in_window[k - 1] & in_window[k]
        a_, b_ = counts[k - 1][ov].sum(), counts[k][ov].sum()
        if a_ == 0 or b_ == 0:
            raise SamplingError(f"windows {k - 1} and {k} share no sampled overlap")
        logz.append(logz[-1] + math.log((a_ / counts[k - 1].sum()) / (b_ / counts[k].sum())))
        # matching fixes the overlap mass, so compare the bin-wise shape instead
        fa = counts[k - 1][ov] / a_
        fb = counts[k][ov] / b_
        se = np.sqrt(fa * (1 - fa) / a_ + fb * (1 - fb) / b_) + 1e-300
        seam_z.append(float(np.max(np.abs(fa - fb) / se)))
    prob = np.zeros(nb)
    weight = np.zeros(nb)
    for k, c in enumerate(counts):
        m = in_window[k]
        prob[m] += c[m] * math.exp(logz[k])
        weight[m] += c.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        prob = np.where(weight > 0, prob / weight, 0.0)
    prob /= prob.sum()
    return float(prob[in_b].sum()), prob, seam_z


def _bin_centers(edges, bw):
    c = 0.5 * (edges[:-1] + edges[1:])
    c[0] = edges[1] - bw / 2
    c[-1] = edges[-2] + bw / 2
    return c


def _seed_window(model, regions, n_steps, rng, gate, max_tries=100000):
    cur, _, _ = model.integrate(model.well_state(-1), max_steps=20000, rng=rng)
    cur = cur[-1]
    for _ in range(max_tries):
        slices, op, _ = model.integrate(cur, max_steps=n_steps, rng=rng)
        if gate(op):
            return PathSample.from_slices(slices, model, op=op)
        cur = slices[-1]
    raise SamplingError("could not seed the first umbrella window")


def brute_force_scale_factor(model, regions: StateRegions, n_steps: int, rng,
                             n_samples: int = 2000, spacing: int = 2000) -> tuple[float, float]:
    """Direct estimate of P(x_{t'} in B | x_0 in A) from one long trajectory."""
    cur, _, _ = model.integrate(model.well_state(-1), max_steps=20000, rng=rng)
    cur = cur[-1]
    hits = trials = 0
    while trials < n_samples:
        seg, op, _ = model.integrate(cur, max_steps=spacing, rng=rng)
        cur = seg[-1]
        if op[-1] <= regions.a_max:
            tail, top, _ = model.integrate(cur, max_steps=n_steps, rng=rng)
            trials += 1
            hits += top[-1] >= regions.b_min
    p = hits / trials
    return p, math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
