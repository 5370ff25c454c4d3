"""Experiment configuration.

Files are TOML. Top-level keys: ``system`` (classical | sse | gaussian),
``seed``, ``out``. Tables and their keys are listed in :data:`DEFAULTS`;
anything else is rejected with the line it appears on. Temperature is given
either as ``bath.T`` or as ``bath.T_B`` (barrier-normalized, T = T_B * V_B
with V_B = c2^2 / (4 c4)), never both.

Precedence: command-line override > file > default.
"""

from __future__ import annotations

import copy
import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path

import tomli
import tomli_w

from .dynamics import SimParams, barrier_height
from .errors import ConfigError
from .fock import DEFAULT_OSC_FREQ, BasisConfig, WELL_C2, WELL_C4
from .tis import TisConfig
from .tps import StateRegions, TpsConfig

SYSTEMS = ("classical", "sse", "gaussian")

DEFAULTS: dict = {
    "system": "classical",
    "seed": 0,
    "out": "run",
    "potential": {"c4": WELL_C4, "c2": WELL_C2},
    "bath": {"gamma": 0.25, "T_B": 0.1, "dt": 1e-3, "mass": 1.0, "hbar": 1.0, "kB": 1.0},
    "basis": {"dim": 60, "osc_freq": DEFAULT_OSC_FREQ, "pad": 8, "kick_form": "unitary",
              "guard": 0.1},
    "regions": {"a_max": -2.6, "b_min": 2.6},
    "simulate": {"n_steps": 100000, "x0": -4.1833, "p0": 0.0, "var_x": 0.5, "var_p": 0.5,
                 "stride": 100},
    "tps": {"n_moves": 1000, "path_time": 8.0, "dp_width": 0.5, "mirror_fraction": 0.0,
            "transforms": ["T", "P", "PT"], "mode": "AB", "acceptance_floor": 0.01,
            "floor_window": 500, "checkpoint_every": 0},
    "tis": {"n_moves": 1000, "pilot_moves": 300, "target": 0.4, "min_spacing": 0.05,
            "a_core_offset": 0.5, "max_path_time": 200.0, "min_crossings": 100,
            "n_blocks": 10, "dp_width": 0.5, "interfaces": []},
    "mfpt": {"cutoff": 2000.0, "n_trajectories": 100},
    "stationary": {"method": "auto"},
    "wigner": {"x0": -4.1833, "p0": 0.0, "t_end": 3.0e5, "dt": 1000.0,
               "snapshots": [0.0], "x_min": -8.0, "x_max": 8.0, "p_min": -5.0,
               "p_max": 5.0, "nx": 161, "np": 101},
    "compare": {"T_B": [0.1, 0.3, 0.5], "methods": ["tis"]},
}

# keys whose default is absent but which may be set
OPTIONAL = {("bath", "T")}


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def system(self) -> str:
        return self.data["system"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def T(self) -> float:
        return float(self.data["bath"]["T"])

    @property
    def T_B(self) -> float:
        return self.T * self.data["bath"]["kB"] / barrier_height(**self.data["potential"])

    def sim_params(self) -> SimParams:
        b, p = self.data["bath"], self.data["potential"]
        return SimParams(gamma=b["gamma"], T=b["T"], dt=b["dt"], c4=p["c4"], c2=p["c2"],
                         mass=b["mass"], kB=b["kB"], hbar=b["hbar"])

    def basis(self) -> BasisConfig:
        b, bath = self.data["basis"], self.data["bath"]
        return BasisConfig(dim=b["dim"], mass=bath["mass"], hbar=bath["hbar"], kB=bath["kB"],
                           osc_freq=b["osc_freq"], pad=b["pad"], kick_form=b["kick_form"])

    def regions(self) -> StateRegions:
        r = self.data["regions"]
        return StateRegions(r["a_max"], r["b_min"])

    def tps_config(self) -> TpsConfig:
        t = self.data["tps"]
        return TpsConfig(n_moves=t["n_moves"], dp_width=t["dp_width"],
                         mirror_fraction=t["mirror_fraction"],
                         transforms=tuple(t["transforms"]), mode=t["mode"],
                         acceptance_floor=t["acceptance_floor"],
                         floor_window=t["floor_window"])

    def tis_config(self) -> TisConfig:
        t = self.data["tis"]
        return TisConfig(a_core_offset=t["a_core_offset"], max_path_time=t["max_path_time"],
                         dp_width=t["dp_width"], n_moves=t["n_moves"],
                         pilot_moves=t["pilot_moves"], target=t["target"],
                         min_spacing=t["min_spacing"], min_crossings=t["min_crossings"],
                         n_blocks=t["n_blocks"])

    def with_temperature(self, T_B: float) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        d["bath"]["T"] = T_B * barrier_height(**d["potential"]) / d["bath"]["kB"]
        return ExperimentConfig(d)

    def to_toml(self) -> str:
        """Resolved configuration without the output location."""
        return tomli_w.dumps({k: v for k, v in self.data.items() if k != "out"})

    def digest(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()


def _line_of(text: str, table: str | None, key: str) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            current = m.group(1).strip()
            if table is None and current == key:
                return no
            continue
        if current == table and re.match(rf"^{re.escape(key)}\s*=", s):
            return no
    return None


def _where(text, table, key) -> str:
    no = _line_of(text, table, key)
    name = f"{table}.{key}" if table else key
    return f"line {no}: {name}" if no else name


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse, merge with defaults, validate, and resolve the temperature."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    overrides = overrides or {}
    data = copy.deepcopy(DEFAULTS)
    data["bath"].pop("T_B")

    for key, val in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"{_where(text, None, key)}: unknown key")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{_where(text, None, key)}: expected a table")
            for sub, v in val.items():
                if sub not in DEFAULTS[key] and (key, sub) not in OPTIONAL:
                    raise ConfigError(f"{_where(text, key, sub)}: unknown key")
                _check_type(v, DEFAULTS[key].get(sub), _where(text, key, sub))
                data[key][sub] = v
        else:
            _check_type(val, DEFAULTS[key], _where(text, None, key))
            data[key] = val

    if "bath.T" in overrides and "bath.T_B" in overrides:
        raise ConfigError("overrides set both bath.T and bath.T_B")
    bath_raw = dict(raw.get("bath", {}))
    for dotted, v in overrides.items():
        table, _, sub = dotted.rpartition(".")
        if table:
            if table not in DEFAULTS or not isinstance(DEFAULTS[table], dict) or (
                    sub not in DEFAULTS[table] and (table, sub) not in OPTIONAL):
                raise ConfigError(f"override {dotted}: unknown key")
            _check_type(v, DEFAULTS[table].get(sub), f"override {dotted}")
            data[table][sub] = v
            if table == "bath" and sub in ("T", "T_B"):
                bath_raw.pop("T" if sub == "T_B" else "T_B", None)
                bath_raw[sub] = v
        else:
            if sub not in DEFAULTS or isinstance(DEFAULTS[sub], dict):
                raise ConfigError(f"override {dotted}: unknown key")
            _check_type(v, DEFAULTS[sub], f"override {dotted}")
            data[sub] = v

    if "T" in bath_raw and "T_B" in bath_raw:
        raise ConfigError(f"{_where(text, 'bath', 'T_B')}: set either bath.T or bath.T_B, "
                          "not both")
    pot = data["potential"]
    if not (pot["c4"] > 0 and pot["c2"] > 0):
        raise ConfigError(f"{_where(text, 'potential', 'c4')}: c4 and c2 must be positive")
    vb = barrier_height(pot["c4"], pot["c2"])
    T_B = bath_raw.get("T_B", DEFAULTS["bath"]["T_B"])
    data["bath"]["T"] = float(bath_raw["T"]) if "T" in bath_raw else T_B * vb / data["bath"]["kB"]
    data["bath"].pop("T_B", None)
    _validate(data, text)
    return ExperimentConfig(data)


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    text = Path(path).read_text() if path is not None else ""
    return parse_config_text(text, overrides)


def _check_type(v, default, where):
    if default is None:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{where}: expected a number")
        return
    if isinstance(default, bool):
        ok = isinstance(v, bool)
    elif isinstance(default, float):
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    elif isinstance(default, int):
        ok = isinstance(v, int) and not isinstance(v, bool)
    elif isinstance(default, str):
        ok = isinstance(v, str)
    elif isinstance(default, list):
        ok = isinstance(v, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {v!r}")


def _validate(d: dict, text: str) -> None:
    def bad(table, key, msg):
        raise ConfigError(f"{_where(text, table, key)}: {msg}")

    if d["system"] not in SYSTEMS:
        bad(None, "system", f"must be one of {SYSTEMS}")
    b = d["bath"]
    if not b["T"] > 0:
        bad("bath", "T", "temperature must be positive")
    if not b["dt"] > 0:
        bad("bath", "dt", "must be positive")
    if b["gamma"] < 0:
        bad("bath", "gamma", "must be >= 0")
    for k in ("mass", "hbar", "kB"):
        if not b[k] > 0:
            bad("bath", k, "must be positive")
    if d["basis"]["dim"] < 2:
        bad("basis", "dim", "must be >= 2")
    if d["basis"]["kick_form"] not in ("unitary", "exponential"):
        bad("basis", "kick_form", "must be 'unitary' or 'exponential'")
    if not d["regions"]["a_max"] < d["regions"]["b_min"]:
        bad("regions", "a_max", "must be < regions.b_min")
    t = d["tps"]
    if not set(t["transforms"]) <= {"T", "P", "PT"}:
        bad("tps", "transforms", "allowed transforms are T, P, PT")
    if t["mode"] not in ("AB", "visiting"):
        bad("tps", "mode", "must be 'AB' or 'visiting'")
    if not 0 <= t["mirror_fraction"] <= 1:
        bad("tps", "mirror_fraction", "must lie in [0, 1]")
    if not t["path_time"] > 0:
        bad("tps", "path_time", "must be positive")
    tis = d["tis"]
    if not 0 < tis["target"] < 1:
        bad("tis", "target", "must lie in (0, 1)")
    lam = tis["interfaces"]
    if lam:
        if any(b2 <= a2 for a2, b2 in zip(lam, lam[1:])):
            bad("tis", "interfaces", "must be strictly increasing")
        if not (math.isclose(lam[0], d["regions"]["a_max"])
                and math.isclose(lam[-1], d["regions"]["b_min"])):
            bad("tis", "interfaces", "must start at regions.a_max and end at regions.b_min")
    if d["mfpt"]["n_trajectories"] < 10:
        bad("mfpt", "n_trajectories", "must be >= 10")
    if d["stationary"]["method"] not in ("auto", "svd", "inverse"):
        bad("stationary", "method", "must be auto, svd or inverse")
    if not d["compare"]["T_B"]:
        bad("compare", "T_B", "needs at least one temperature")
    if not set(d["compare"]["methods"]) <= {"tis", "mfpt"}:
        bad("compare", "methods", "allowed methods are tis and mfpt")
