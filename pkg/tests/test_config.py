import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssepath.config import DEFAULTS, parse_config, parse_config_text
from ssepath.errors import ConfigError


def test_barrier_temperature_conversion():
    cfg = parse_config_text("[bath]\nT_B = 0.1\n")
    assert cfg.T == pytest.approx(0.30625, rel=1e-12)
    assert cfg.T_B == pytest.approx(0.1, rel=1e-12)


def test_t_and_t_b_together_rejected():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("[bath]\nT = 0.3\nT_B = 0.1\n")
    with pytest.raises(ConfigError):
        parse_config_text("", {"bath.T": 0.3, "bath.T_B": 0.1})


def test_override_replaces_other_temperature_form():
    cfg = parse_config_text("[bath]\nT = 0.3\n", {"bath.T_B": 0.2})
    assert cfg.T == pytest.approx(0.6125)


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.toml"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg.system == DEFAULTS["system"] and cfg.seed == 0
    assert cfg.T_B == pytest.approx(DEFAULTS["bath"]["T_B"])
    assert cfg["tis"] == DEFAULTS["tis"]
    assert cfg.regions().a_max == -2.6
    assert parse_config().digest() == cfg.digest()


@pytest.mark.parametrize("text, line", [
    ("seed = 1\nbogus = 2\n", 2),
    ("[bath]\ngamma = 0.1\n\n[tps]\nn_moves = 10\nshots = 3\n", 6),
    ("[wrong]\nx = 1\n", 1),
])
def test_unknown_key_reports_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config_text(text)


@pytest.mark.parametrize("text", [
    "[bath]\ngamma = 'big'\n",
    "[basis]\ndim = 1\n",
    "[regions]\na_max = 3.0\nb_min = 2.0\n",
    "[tps]\ntransforms = ['Q']\n",
    "[tis]\ninterfaces = [-2.6, 0.0, -1.0, 2.6]\n",
    "[tis]\ninterfaces = [-2.0, 2.6]\n",
    "system = 'lattice'\n",
    "[bath]\nT = -1.0\n",
    "[potential]\nc4 = 0.0\n",
    "seed = ",
])
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_precedence_and_round_trip():
    cfg = parse_config_text("seed = 3\n[tis]\nn_moves = 50\n", {"tis.n_moves": 70})
    assert cfg.seed == 3 and cfg["tis"]["n_moves"] == 70
    again = parse_config_text(cfg.to_toml())
    assert again.data == {**cfg.data, "out": DEFAULTS["out"]}
    assert again.digest() == cfg.digest()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.0, 1.0), st.integers(2, 80))
def test_round_trip_property(tb, gamma, dim):
    cfg = parse_config_text("", {"bath.T_B": tb, "bath.gamma": gamma, "basis.dim": dim})
    again = parse_config_text(cfg.to_toml())
    assert again.T == cfg.T and again.digest() == cfg.digest()
    assert again.sim_params().gamma == gamma and again.basis().dim == dim


def test_derived_objects():
    cfg = parse_config_text("[tps]\nmirror_fraction = 0.3\ntransforms = ['T']\n")
    assert cfg.tps_config().transforms == ("T",)
    assert cfg.tis_config().target == 0.4
    hot = cfg.with_temperature(0.5)
    assert hot.T_B == pytest.approx(0.5) and cfg.T_B == pytest.approx(0.1)
