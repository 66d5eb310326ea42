import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachelab import load_profile
from cachelab.telemetry import (SCENARIOS, Histogram, encryption_time_distribution,
                                per_encryption_miss_histogram, periodic_miss_trace,
                                run_aes_scenario, run_rsa_scenario)
from cachelab.victims import LOOKUPS_PER_ENCRYPTION, RsaSqmVictim


@pytest.fixture(scope="module")
def prof():
    return load_profile("i5-7600K")


@pytest.fixture(scope="module")
def hists(prof):
    return {sc: per_encryption_miss_histogram(prof, sc, 1500, seed=2) for sc in SCENARIOS}


@given(st.lists(st.integers(0, 30), min_size=1, max_size=200))
def test_histogram_mass(values):
    h = Histogram.of_integers(values)
    assert h.total == len(values)
    assert sum(h.percentages()) == pytest.approx(100.0)
    assert h.fraction(0) == values.count(0) / len(values)
    assert len(h.edges) == len(h.counts) + 1


def test_histogram_modes():
    assert Histogram([0, 1, 2, 3, 4], [1, 5, 1, 0]).modes() == 1
    assert Histogram([0, 1, 2, 3, 4], [5, 1, 1, 5]).modes() == 2


def test_no_attack_never_misses(hists):
    assert hists["none"].fraction(0) == 1.0


def test_scenario_ordering(hists):
    z = {k: h.fraction(0) for k, h in hists.items()}
    assert z["none"] >= z["rr"] > z["pp"] > z["fr"]
    assert z["rr"] >= 0.99 and z["fr"] <= 0.15


def test_time_decomposition_is_exact(prof):
    for sc in ("none", "rr"):
        td = encryption_time_distribution(prof, sc, 400, seed=1)
        assert sum(td.levels.values()) == pytest.approx(LOOKUPS_PER_ENCRYPTION)
        assert td.predicted_mean(prof.latencies()) == pytest.approx(td.mean)
        assert td.histogram.total == 400


def test_no_attack_time_is_unimodal(prof):
    td = encryption_time_distribution(prof, "none", 400, seed=1)
    assert td.histogram.modes() == 1


def test_counters_bracket_only_the_encryption(prof):
    run = run_aes_scenario(prof, "fr", 50, seed=3)
    for r in run.steady(10):
        assert r.llc_accesses + r.l1_hits + r.l2_hits == LOOKUPS_PER_ENCRYPTION
        assert r.misses <= r.llc_accesses


def test_unknown_scenario(prof):
    with pytest.raises(ValueError):
        run_aes_scenario(prof, "xx", 1)


def test_rsa_trace_shapes(prof):
    v = RsaSqmVictim.for_bits(256, 1)
    run = run_rsa_scenario(prof, "none", victim=v, period=20_000)
    assert sum(run.series) == v.init_lines + 3
    assert [op for _, op in run.log] == v.operations()
    assert run.samples == []


def test_rsa_steady_ordering(prof):
    tr = {sc: periodic_miss_trace(prof, sc, bits=512, seed=1, period=50_000) for sc in ("none", "rr", "fr")}
    assert tr["none"].steady_mean == 0.0
    assert sum(tr["none"].series[:tr["none"].steady_from]) >= 512 and tr["none"].init_burst > 0
    assert tr["rr"].steady_mean <= 0.1 * tr["fr"].steady_mean


def test_csv_with_sidecar(tmp_path, hists):
    p = tmp_path / "h.csv"
    hists["rr"].to_csv(p, {"scenario": "rr"})
    rows = p.read_text().splitlines()
    assert rows[0] == "lo,hi,count,percent"
    assert len(rows) == len(hists["rr"].counts) + 1
    assert json.loads((tmp_path / "h.csv.json").read_text()) == {"scenario": "rr"}
