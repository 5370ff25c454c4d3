import math

import numpy as np
import pytest

from ssepath import tis
from ssepath.dynamics import SimParams
from ssepath.errors import SamplingError
from ssepath.io import read_csv
from ssepath.models import ClassicalModel
from ssepath.rng import stream
from ssepath.tps import StateRegions

REG = StateRegions()
CFG = tis.TisConfig(n_moves=1500, pilot_moves=300)


@pytest.fixture(scope="module")
def hot():
    return ClassicalModel(SimParams.from_barrier_temperature(0.5))


@pytest.fixture(scope="module")
def seed0(hot):
    return tis.seed_tis_path(hot, REG, REG.a_max, stream(1, 0, "seed"), CFG)


def direct_conditional(model, lam_hi, n_events, rng, cfg=CFG):
    """Fraction of effective lambda_0 crossings that reach ``lam_hi`` before the core."""
    core = tis.a_core(REG, cfg)
    cur = model.well_state(-1)
    armed, hits, events = True, 0, 0
    while events < n_events:
        seg, op, _ = model.integrate(cur, max_steps=1 << 15, rng=rng)
        cur = seg[-1]
        j = 0
        while j < len(op):
            x = op[j]
            if x <= core:
                armed = True
            elif x > REG.a_max and armed:
                armed = False
                events += 1
                # follow this excursion until it returns to the core or reaches lam_hi
                rest = op[j:]
                stop = np.flatnonzero((rest <= core) | (rest >= lam_hi))
                if len(stop):
                    hits += rest[stop[0]] >= lam_hi
                    j += stop[0]
                    if rest[stop[0]] >= lam_hi:
                        cur = model.well_state(-1)
                        armed = True
                        break
                    continue
                tail, top, _ = model.integrate(cur, lo=core, hi=lam_hi, max_steps=10 ** 7, rng=rng)
                hits += top[-1] >= lam_hi
                cur = model.well_state(-1) if top[-1] >= lam_hi else tail[-1]
                armed = True
                break
            j += 1
    return hits / events, math.sqrt(max(hits, 1) * (events - hits) / events) / events


# -- statistics helpers --------------------------------------------------------------------

def test_autocorr_of_ar1():
    rng = stream(2)
    phi = 0.8
    x = np.empty(200_000)
    x[0] = 0
    e = rng.standard_normal(len(x))
    for k in range(1, len(x)):
        x[k] = phi * x[k - 1] + e[k]
    assert tis.integrated_autocorr(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.15)
    assert tis.integrated_autocorr(np.ones(10)) == 1.0


def test_binomial_estimate_iid():
    flags = stream(3).random(20_000) < 0.3
    p, se, tau = tis.binomial_estimate(flags)
    assert p == pytest.approx(0.3, abs=0.02)
    assert tau < 1.5
    assert se == pytest.approx(math.sqrt(0.21 / 20_000), rel=0.3)


def test_interface_set():
    with pytest.raises(ValueError):
        tis.InterfaceSet((0.0, 0.0))
    with pytest.raises(ValueError):
        tis.InterfaceSet((1.0,))
    s = tis.InterfaceSet((REG.a_max, 0.0, REG.b_min))
    s.check(REG)
    with pytest.raises(ValueError):
        tis.InterfaceSet((-3.0, 2.6)).check(REG)


def test_valid_tis_path():
    core = tis.a_core(REG, CFG)
    assert tis.valid_tis_path(np.array([-3.2, -2.0, -1.0, -3.2]), -1.5, REG, core)
    assert not tis.valid_tis_path(np.array([-3.2, -2.0, -1.0, -3.2]), -0.5, REG, core)
    assert tis.valid_tis_path(np.array([-3.2, 0.0, 2.7]), 1.0, REG, core)
    assert not tis.valid_tis_path(np.array([-2.0, 0.0, 2.7]), 1.0, REG, core)
    assert not tis.valid_tis_path(np.array([-3.2, -3.2, 0.0, 2.7]), 1.0, REG, core)
    assert not tis.valid_tis_path(np.array([-3.2, 0.0, 1.0]), 0.5, REG, core)


# -- rate assembly --------------------------------------------------------------------------------

def entry(i, p, se=0.01):
    return tis.CrossingEntry(i, float(i), float(i + 1), 100, int(100 * p), p, se, 1.0, 0.3, 0)


def test_rate_identity_and_errors():
    flux = tis.FluxEstimate(4e-3, 4e-4, 1000, 1e5, np.zeros(10))
    stats = tis.CrossingStats([entry(0, 0.4), entry(1, 0.35), entry(2, 0.5)])
    r = tis.tis_rate(flux, stats)
    assert r.rate == flux.flux * np.prod(stats.probabilities)
    rel = math.sqrt(0.1 ** 2 + (0.01 / 0.4) ** 2 + (0.01 / 0.35) ** 2 + (0.01 / 0.5) ** 2)
    assert r.stderr == pytest.approx(r.rate * rel, rel=1e-12)
    ones = tis.CrossingStats([entry(0, 1.0, 0.0), entry(1, 1.0, 0.0)])
    assert tis.tis_rate(flux, ones).rate == flux.flux


def test_cumulative_and_csv(tmp_path):
    stats = tis.CrossingStats([entry(0, 0.4), entry(1, 0.5)])
    cum = stats.cumulative()
    assert cum[-1, 1] == pytest.approx(math.log(0.2))
    stats.write_csv(tmp_path / "c.csv")
    stats.write_histogram_csv(tmp_path / "h.csv")
    rows = read_csv(tmp_path / "c.csv")
    assert len(rows) == 2 and float(rows[1]["estimate"]) == 0.5
    flux = tis.FluxEstimate(1.0, 0.1, 10, 10.0, np.zeros(10))
    tis.tis_rate(flux, stats).write_csv(tmp_path / "r.csv")
    assert read_csv(tmp_path / "r.csv")[-3]["quantity"] == "rate"


# -- flux ----------------------------------------------------------------------------------------

def test_flux_needs_enough_crossings(hot):
    with pytest.raises(SamplingError):
        tis.first_interface_flux(hot, REG, stream(4), tis.TisConfig(min_crossings=10 ** 6,
                                                                   max_flux_time=100.0))


@pytest.mark.slow
def test_flux_increases_with_temperature(hot):
    cold = ClassicalModel(SimParams.from_barrier_temperature(0.1))
    f_hot = tis.first_interface_flux(hot, REG, stream(5), CFG)
    f_cold = tis.first_interface_flux(cold, REG, stream(6), CFG)
    assert f_hot.n_crossings >= 100 and len(f_hot.block_fluxes) == 10
    assert f_hot.flux - f_cold.flux > 3 * math.hypot(f_hot.stderr, f_cold.stderr)


# -- ensembles -----------------------------------------------------------------------------------

def test_seed_path_valid(seed0):
    assert tis.valid_tis_path(seed0.op, REG.a_max, REG, tis.a_core(REG, CFG))


def test_invalid_seed_rejected(hot, seed0):
    with pytest.raises(SamplingError):
        tis.tis_ensemble_sample(hot, (2.0, 2.5), 0, stream(1), seed0, REG, CFG, n_moves=5)


def test_degenerate_next_interface(hot, seed0):
    run = tis.tis_ensemble_sample(hot, (REG.a_max, REG.a_max), 0, stream(7), seed0, REG, CFG,
                                  n_moves=100)
    assert run.entry.estimate == 1.0


def test_ensemble_paths_are_valid(hot, seed0):
    core = tis.a_core(REG, CFG)
    run = tis.tis_ensemble_sample(hot, (REG.a_max, -1.0), 0, stream(8), seed0, REG, CFG,
                                  n_moves=300)
    assert tis.valid_tis_path(run.current.op, REG.a_max, REG, core)
    for _, _, p in run.top.heap:
        assert tis.valid_tis_path(p.op, REG.a_max, REG, core)
    assert np.all(run.entry.maxima >= REG.a_max)
    assert 0 < run.entry.acceptance < 1


def test_estimates_decrease_in_next_interface(hot, seed0):
    run = tis.tis_ensemble_sample(hot, (REG.a_max, REG.b_min), 0, stream(9), seed0, REG, CFG,
                                  n_moves=500)
    probs = [np.mean(run.entry.maxima >= lam) for lam in np.linspace(REG.a_max, REG.b_min, 8)]
    assert all(b <= a for a, b in zip(probs, probs[1:]))


@pytest.mark.slow
def test_first_ensemble_matches_direct_simulation(hot, seed0):
    p_direct, se_direct = direct_conditional(hot, REG.b_min, 1500, stream(10, 0, "direct"))
    run = tis.tis_ensemble_sample(hot, (REG.a_max, REG.b_min), 0, stream(11), seed0, REG,
                                  CFG, n_moves=6000)
    assert abs(run.entry.estimate - p_direct) < 3 * math.hypot(run.entry.stderr, se_direct)


@pytest.mark.slow
def test_placement_and_nesting(hot, seed0):
    lams, pilots = tis.place_interfaces(hot, REG, stream(12), CFG, seed=seed0)
    lams.check(REG)
    assert np.all(np.diff(lams.lambdas) >= CFG.min_spacing)
    for run in pilots[:-1]:
        assert 0.3 < run.entry.estimate < 0.5
    # nesting: direct two-interface probability vs product of the sampled factors
    stats = tis.sample_all(hot, lams, REG, stream(13), CFG, seed=seed0)
    if len(lams) >= 3:
        direct = tis.tis_ensemble_sample(hot, lams, 0, stream(14), seed0, REG, CFG,
                                         lam_next=lams[2]).entry
        prod = stats.entries[0].estimate * stats.entries[1].estimate
        se = prod * math.hypot(stats.entries[0].stderr / stats.entries[0].estimate,
                               stats.entries[1].stderr / stats.entries[1].estimate)
        assert direct.estimate >= prod - 3 * math.hypot(se, direct.stderr)


@pytest.mark.slow
def test_more_interfaces_when_colder(hot, seed0):
    cold = ClassicalModel(SimParams.from_barrier_temperature(0.1))
    cfg = tis.TisConfig(pilot_moves=200)
    hot_set, _ = tis.place_interfaces(hot, REG, stream(15), cfg, seed=seed0)
    cold_set, _ = tis.place_interfaces(cold, REG, stream(16), cfg)
    assert len(cold_set) > len(hot_set)
