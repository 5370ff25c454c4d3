"""Command-line entry point: ``ssepath <subcommand> --config FILE --seed N --out DIR``.

Every run directory receives ``config.toml`` (the resolved configuration,
re-parseable), ``manifest.json`` (config hash, code version, wall-clock time
and SHA-256 of every output) and the subcommand's CSV/binary outputs. On
failure ``error.json`` is written and the exit code is nonzero.

Overrides: ``--set table.key=VALUE`` (VALUE in TOML syntax) for any key, plus
per-subcommand shorthands such as ``--n-moves``. Flags beat the file, which
beats the defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from . import __version__, analysis, io, tis, tps
from .config import ExperimentConfig, parse_config
from .dynamics import ClassicalState, GaussianMoments, coherent_propagate, propagate
from .errors import ConfigError
from .fock import (build_hamiltonians, build_operators, build_position_momentum,
                   build_potential, coherent_state)
from .models import ClassicalModel, QuantumModel, quantum_model
from .pathprob import fidelity, gibbs_state, lindblad_superoperator, stationary_state
from .rng import stream

log = logging.getLogger("ssepath")

SUBCOMMANDS = ("simulate", "tps", "tis", "mfpt", "stationary", "wigner", "analyze", "compare")

# shorthand flag -> config key, per subcommand
SHORTHANDS = {
    "simulate": {"n-steps": ("simulate.n_steps", int)},
    "tps": {"n-moves": ("tps.n_moves", int), "path-time": ("tps.path_time", float),
            "mirror-fraction": ("tps.mirror_fraction", float), "mode": ("tps.mode", str)},
    "tis": {"n-moves": ("tis.n_moves", int), "pilot-moves": ("tis.pilot_moves", int),
            "min-crossings": ("tis.min_crossings", int)},
    "mfpt": {"cutoff": ("mfpt.cutoff", float), "n-trajectories": ("mfpt.n_trajectories", int)},
    "stationary": {"method": ("stationary.method", str)},
    "wigner": {"t-end": ("wigner.t_end", float)},
    "analyze": {},
    "compare": {},
}
COMMON = {"system": ("system", str), "T_B": ("bath.T_B", float), "T": ("bath.T", float),
          "gamma": ("bath.gamma", float), "dt": ("bath.dt", float), "dim": ("basis.dim", int)}


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    seed: int
    wall_clock: float = 0.0
    artifacts: dict = field(default_factory=dict)

    def add(self, path: Path, root: Path):
        self.artifacts[str(path.relative_to(root))] = io.sha256(path)

    def write(self, root: Path) -> Path:
        p = root / "manifest.json"
        p.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return p


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, cfg.digest(), __version__, cfg.seed)
        snap = out / "config.toml"
        snap.write_text(cfg.to_toml())
        self.manifest.add(snap, out)

    def path(self, name: str) -> Path:
        return self.out / name

    def done(self, *paths):
        for p in paths:
            self.manifest.add(Path(p), self.out)


# -- model construction ------------------------------------------------------------------------

def build_model(cfg: ExperimentConfig):
    params = cfg.sim_params()
    if cfg.system == "classical":
        return ClassicalModel(params)
    if cfg.system == "sse":
        model = quantum_model(params, cfg.basis(), with_stationary=params.gamma > 0,
                              guard=cfg["basis"]["guard"])
        return model
    raise ConfigError(f"system {cfg.system!r} is only supported by 'simulate'")


# -- workflows ----------------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, run: Run):
    sc = cfg["simulate"]
    params = cfg.sim_params()
    rng = stream(cfg.seed, 0, "simulate")
    n, stride = sc["n_steps"], max(1, sc["stride"])
    if cfg.system == "classical":
        tr = propagate(ClassicalState(sc["x0"], sc["p0"]), params, n, rng)
        cols, rows = ["t", "x", "p"], tr.slices
    elif cfg.system == "gaussian":
        g = GaussianMoments(sc["x0"], sc["p0"], sc["var_x"], sc["var_p"])
        tr = propagate(g, params, n, rng)
        cols, rows = ["t", "mean_x", "mean_p", "var_x", "var_p"], tr.slices
    else:
        ops = build_operators(cfg.basis(), params.gamma, params.T, params.c4, params.c2)
        psi0 = coherent_state(cfg.basis(), sc["x0"], sc["p0"])
        tr = propagate(psi0, params, n, rng, ops=ops, guard=cfg["basis"]["guard"])
        xs = tr.op
        ps = np.einsum("ij,ij->i", tr.slices.conj(), tr.slices @ ops.P.T).real
        cols, rows = ["t", "mean_X", "mean_P"], np.column_stack([xs, ps])
        run.done(io.write_array(run.path("states.bin"), tr.slices[::stride],
                                {"dt": params.dt * stride, "dim": ops.dim}))
    t = np.arange(len(rows)) * params.dt
    table = np.column_stack([t, rows])[::stride]
    run.done(io.write_csv(run.path("trajectory.csv"), cols, table))


def cmd_tps(cfg: ExperimentConfig, run: Run):
    model = build_model(cfg)
    regions = cfg.regions()
    tc = cfg.tps_config()
    n_steps = int(round(cfg["tps"]["path_time"] / model.dt))
    rng = stream(cfg.seed, 0, "tps")
    seed = tps.seed_reactive_path(model, regions, n_steps, rng, mode=tc.mode)
    observers = {"mid": lambda p: float(p.op[len(p.op) // 2]),
                 "end": lambda p: float(p.op[-1])}
    hb_sum = np.zeros(n_steps + 1)

    def hb(p):
        hb_sum[:] += regions.in_b(p.op)
        return None

    if tc.mode == "visiting":
        observers["hb"] = hb
    chain = tps.tps_run(tc, seed, regions, rng, observers=observers)
    run.done(chain.write_move_log(run.path("moves.csv")))
    rows = [[k, chain.counters()[k]["tried"], chain.counters()[k]["accepted"],
             chain.acceptance(k)] for k in ("shoot", "mirror")]
    run.done(io.write_csv(run.path("acceptance.csv"), ["move", "tried", "accepted", "rate"], rows))
    run.done(io.write_csv(run.path("observables.csv"), ["move", "mid_op", "end_op"],
                          zip(range(len(chain.moves)), chain.records["mid"],
                              chain.records["end"])))
    if tc.mode == "visiting":
        mean = hb_sum / max(len(chain.moves), 1)
        run.done(io.write_csv(run.path("hb_visiting.csv"), ["t", "hB"],
                              zip(np.arange(n_steps + 1) * model.dt, mean)))
    ck = run.path("checkpoint.bin")
    tps.save_checkpoint(chain, ck, rng)
    run.done(ck)


def _tis_rate(cfg: ExperimentConfig, model, rng_tag: str = "tis", chain: int = 0):
    regions = cfg.regions()
    tc = cfg.tis_config()
    rng = stream(cfg.seed, chain, rng_tag)
    flux = tis.first_interface_flux(model, regions, rng, tc)
    lam = cfg["tis"]["interfaces"]
    seeds = None
    if lam:
        interfaces = tis.InterfaceSet(tuple(lam))
    else:
        interfaces, pilots = tis.place_interfaces(model, regions, rng, tc)
        seeds = [None] + [p.top.reaching(interfaces[i + 1]) for i, p in enumerate(pilots)][:-1]
    stats = tis.sample_all(model, interfaces, regions, rng, tc, seeds=seeds)
    rate = tis.tis_rate(flux, stats, config={"T": cfg.T, "T_B": cfg.T_B,
                                            "system": cfg.system,
                                            "a_max": regions.a_max, "b_min": regions.b_min})
    return flux, interfaces, stats, rate


def cmd_tis(cfg: ExperimentConfig, run: Run):
    model = build_model(cfg)
    flux, interfaces, stats, rate = _tis_rate(cfg, model)
    run.done(rate.write_csv(run.path("rate.csv")),
             stats.write_csv(run.path("crossing.csv")),
             stats.write_histogram_csv(run.path("crossing_histogram.csv")),
             io.write_csv(run.path("flux_blocks.csv"), ["block", "flux"],
                          enumerate(flux.block_fluxes)))


def cmd_mfpt(cfg: ExperimentConfig, run: Run):
    model = build_model(cfg)
    mc = cfg["mfpt"]
    pt = analysis.first_passage_times(model, cfg.regions(), mc["cutoff"], mc["n_trajectories"],
                                      stream(cfg.seed, 0, "mfpt"))
    rate = analysis.passage_rate(pt, config={"T": cfg.T, "T_B": cfg.T_B})
    run.done(rate.write_csv(run.path("rate.csv")),
             io.write_csv(run.path("passage_times.csv"), ["time"], ([t] for t in pt.times)))


def cmd_stationary(cfg: ExperimentConfig, run: Run):
    params = cfg.sim_params()
    ops = build_operators(cfg.basis(), params.gamma, params.T, params.c4, params.c2)
    method = cfg["stationary"]["method"]
    method = None if method == "auto" else method
    st = stationary_state(lindblad_superoperator(ops, sparse=method != "svd"), method=method)
    gibbs = gibbs_state(ops.H, params.T, params.kB)
    F = fidelity(st.rho, gibbs.rho)
    run.done(io.write_array(run.path("stationary.bin"), st.rho,
                            {"T": params.T, "gamma": params.gamma, "dim": ops.dim}),
             io.write_csv(run.path("stationary.csv"),
                          ["T_B", "residual", "trace", "min_eig", "fidelity_gibbs"],
                          [[cfg.T_B, st.residual, float(np.trace(st.rho).real),
                            float(np.linalg.eigvalsh(st.rho).min()), F]]))


def cmd_wigner(cfg: ExperimentConfig, run: Run):
    wc = cfg["wigner"]
    params = cfg.sim_params()
    basis = cfg.basis()
    psi0 = coherent_state(basis, wc["x0"], wc["p0"])
    grid = analysis.PhaseGrid(wc["x_min"], wc["x_max"], wc["p_min"], wc["p_max"],
                              wc["nx"], wc["np"])
    if params.gamma == 0:
        H, _ = build_hamiltonians(basis, build_potential(basis, params.c4, params.c2), 0.0)
        tr = coherent_propagate(psi0, H, wc["t_end"], wc["dt"], params.hbar)
        step = wc["dt"]
    else:
        ops = build_operators(basis, params.gamma, params.T, params.c4, params.c2)
        H = ops.H
        n = int(round(wc["t_end"] / params.dt))
        tr = propagate(psi0, params, n, stream(cfg.seed, 0, "wigner"), ops=ops)
        step = params.dt
    times = np.arange(len(tr.slices)) * step
    pop = analysis.right_well_population(tr.slices, basis)
    X, _ = build_position_momentum(basis)
    mean_x = np.einsum("ij,ij->i", tr.slices.conj(), tr.slices @ X.T).real
    run.done(io.write_csv(run.path("population.csv"), ["t", "P_right", "mean_X"],
                          zip(times, pop, mean_x)))
    rows = []
    if params.gamma == 0:
        rows.append(["transfer_time", analysis.transfer_time(times, pop)])
        rows.append(["pi_over_splitting", np.pi * params.hbar
                     / analysis.tunneling_splitting(H)])
    run.done(io.write_csv(run.path("tunneling.csv"), ["quantity", "value"], rows))
    for k, ts in enumerate(wc["snapshots"]):
        j = int(np.clip(round(ts / step), 0, len(tr.slices) - 1))
        field_ = analysis.wigner_transform(tr.slices[j], basis, grid)
        run.done(field_.save(run.path(f"wigner_{k:03d}.bin")))


def _read_rate(d: Path):
    rows = {r["quantity"]: r for r in io.read_csv(d / "rate.csv")}
    cfg = tomli.loads((d / "config.toml").read_text())
    return cfg, rows


def arrhenius_table(entries, barrier: float):
    """entries: (T, k, stderr, method) -> table rows and fits per method."""
    rows, fits = [], {}
    by_method = {}
    for T, k, se, method in entries:
        rows.append([T, 1.0 / T, float(np.log(k)), se / k if k > 0 else float("nan"), method])
        by_method.setdefault(method, []).append((T, k, se))
    for method, pts in by_method.items():
        if len(pts) >= 3:
            T, k, se = map(np.asarray, zip(*pts))
            fits[method] = analysis.arrhenius_fit(T, k, barrier)
    return rows, fits


def _write_arrhenius(run: Run, entries, barrier):
    rows, fits = arrhenius_table(entries, barrier)
    run.done(io.write_csv(run.path("arrhenius.csv"), ["T", "inv_T", "ln_k", "ln_k_stderr",
                                                       "method"], rows))
    fit_rows = [[m, f.slope, f.slope_stderr, f.intercept, f.constrained_intercept]
                for m, f in fits.items()]
    run.done(io.write_csv(run.path("arrhenius_fit.csv"),
                          ["method", "slope", "slope_stderr", "intercept",
                           "constrained_intercept"], fit_rows))


def cmd_analyze(cfg: ExperimentConfig, run: Run, inputs):
    entries = []
    for d in map(Path, inputs or []):
        c, rows = _read_rate(d)
        if int(rows.get("bound_only", {"value": 0})["value"] or 0):
            continue
        entries.append((c["bath"]["T"], float(rows["rate"]["value"]),
                        float(rows["rate"]["stderr"] or "nan"), c["system"]))
    if not entries:
        raise ValueError("analyze needs --inputs run directories containing rate.csv")
    _write_arrhenius(run, entries, _barrier(cfg))


def _barrier(cfg):
    p = cfg["potential"]
    return p["c2"] ** 2 / (4 * p["c4"]) / cfg["bath"]["kB"]


def _compare_job(args):
    data, method, idx = args
    cfg = ExperimentConfig(data)
    model = build_model(cfg)
    if method == "tis":
        rate = _tis_rate(cfg, model, rng_tag="compare-tis", chain=idx)[3]
    else:
        mc = cfg["mfpt"]
        pt = analysis.first_passage_times(model, cfg.regions(), mc["cutoff"],
                                          mc["n_trajectories"],
                                          stream(cfg.seed, idx, "compare-mfpt"))
        rate = analysis.passage_rate(pt)
    return cfg.T, rate.rate, rate.stderr, f"{cfg.system}-{method}", rate.bound_only


def cmd_compare(cfg: ExperimentConfig, run: Run, threads: int = 1):
    jobs = []
    for i, tb in enumerate(cfg["compare"]["T_B"]):
        for method in cfg["compare"]["methods"]:
            jobs.append((cfg.with_temperature(tb).data, method, i))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_compare_job, jobs))
    else:
        results = [_compare_job(j) for j in jobs]
    run.done(io.write_csv(run.path("rates.csv"), ["T", "T_B", "rate", "stderr", "method",
                                                  "bound_only"],
                          ([T, T / _barrier(cfg), k, se, m, int(b)]
                           for T, k, se, m, b in results)))
    _write_arrhenius(run, [(T, k, se, m) for T, k, se, m, b in results if not b], _barrier(cfg))


# -- argument handling ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssepath", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, e.g. --set tis.n_moves=500")
        for flag, (key, typ) in {**COMMON, **SHORTHANDS[name]}.items():
            p.add_argument(f"--{flag}", dest=f"ov_{key}", type=typ, help=f"sets {key}")
        if name == "analyze":
            p.add_argument("--inputs", nargs="+", help="run directories with rate.csv")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def collect_overrides(ns) -> dict:
    ov = {}
    for item in ns.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            ov[key.strip()] = tomli.loads(f"v = {val}")["v"]
        except tomli.TOMLDecodeError:
            ov[key.strip()] = val
    for attr, v in vars(ns).items():
        if attr.startswith("ov_") and v is not None:
            ov[attr[3:]] = v
    if ns.seed is not None:
        ov["seed"] = ns.seed
    if ns.out is not None:
        ov["out"] = str(ns.out)
    return ov


def run(command: str, cfg: ExperimentConfig, out: Path, threads: int = 1,
        inputs=None) -> RunManifest:
    r = Run(command, cfg, out)
    t0 = time.time()
    if command == "analyze":
        cmd_analyze(cfg, r, inputs)
    elif command == "compare":
        cmd_compare(cfg, r, threads)
    else:
        globals()[f"cmd_{command}"](cfg, r)
    r.manifest.wall_clock = round(time.time() - t0, 3)
    r.manifest.write(out)
    return r.manifest


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(ns.out) if ns.out else None
    try:
        cfg = parse_config(ns.config, collect_overrides(ns))
        out = Path(cfg["out"])
        run(ns.command, cfg, out, ns.threads, getattr(ns, "inputs", None))
    except Exception as exc:  # noqa: BLE001 - converted to an error record
        record = {"error": type(exc).__name__, "message": str(exc), "command": ns.command,
                  "traceback": traceback.format_exc()}
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(record, indent=2) + "\n")
        print(json.dumps({k: record[k] for k in ("error", "message", "command")}),
              file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
