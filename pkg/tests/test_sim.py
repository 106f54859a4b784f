import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otdrmtl.errors import ConfigError, ResourceError, SpecError
from otdrmtl.sim import (
    FLOOR_REL,
    SNR_CAP_DB,
    EventKind,
    FaultEvent,
    FiberLink,
    LinkRandomizationSpec,
    OtdrConfig,
    OtdrTrace,
    SubEvent,
    Termination,
    add_noise,
    apply_noise,
    estimate_snr,
    ideal_trace,
    measure_snr,
    random_link,
    sample_spacing,
    setup1_link,
    setup2_link,
    start_level,
)

CFG = OtdrConfig()
SHORT = LinkRandomizationSpec(length_range_m=(800.0, 1600.0), end_margin_m=250.0)


def _index(trace: OtdrTrace, z_m: float) -> int:
    return int(round(z_m / trace.sample_spacing_m))


def level_at(trace: OtdrTrace, z_m: float) -> float:
    return float(trace.samples_db[_index(trace, z_m)])


def baseline_db(trace: OtdrTrace, z_m: float) -> float:
    """Event-free level at the sample nearest ``z_m``: start level minus fiber attenuation."""
    z = _index(trace, z_m) * trace.sample_spacing_m
    return float(trace.samples_db[0] - trace.config.attenuation_db_km * z / 1000.0)


def step_link(loss: float, at: float = 1000.0) -> FiberLink:
    return FiberLink(2000.0, (FaultEvent(at, EventKind.NON_REFLECTIVE, loss, None, 3),))


# ---------------------------------------------------------------- spacing


def test_sample_spacing_examples():
    assert sample_spacing(OtdrConfig(sample_interval_ns=8.0, group_index=1.468)) == pytest.approx(0.817, abs=5e-4)
    assert sample_spacing(OtdrConfig(sample_interval_ns=16.0, group_index=1.468)) == pytest.approx(1.634, abs=5e-4)
    assert sample_spacing(OtdrConfig(sample_interval_ns=16.0)) == pytest.approx(2 * sample_spacing(CFG), rel=1e-15)


@pytest.mark.parametrize(
    "kw",
    [
        {"sample_interval_ns": 0.0},
        {"pulse_width_ns": -1.0},
        {"group_index": 1.7},
        {"attenuation_db_km": 0.0},
        {"launch_power_dbm": 20.0},
        {"shots_to_average": 0},
    ],
)
def test_config_invariants_rejected(kw):
    with pytest.raises(ConfigError):
        OtdrConfig(**kw)


def test_default_acquisition_settings():
    assert (CFG.pulse_width_ns, CFG.wavelength_nm, CFG.sample_interval_ns) == (50.0, 1650.0, 8.0)


# ---------------------------------------------------------------- event and link invariants


def test_fault_event_invariants():
    with pytest.raises(ConfigError):
        FaultEvent(10.0, EventKind.NON_REFLECTIVE, 1.0, -30.0, 3)
    with pytest.raises(ConfigError):
        FaultEvent(10.0, EventKind.NON_REFLECTIVE, 0.0, None, 3)
    with pytest.raises(ConfigError):
        FaultEvent(10.0, EventKind.REFLECTIVE, 0.5, -10.0, 1)
    with pytest.raises(ConfigError):
        FaultEvent(10.0, EventKind.REFLECTIVE, 0.5, -30.0, 3)
    with pytest.raises(ConfigError):
        FaultEvent(10.0, EventKind.NON_REFLECTIVE, 1.0, None, 0)


def test_link_invariants():
    a = FaultEvent(100.0, EventKind.NON_REFLECTIVE, 1.0, None, 3)
    b = FaultEvent(50.0, EventKind.NON_REFLECTIVE, 1.0, None, 4)
    with pytest.raises(ConfigError):
        FiberLink(1000.0, (a, b))
    with pytest.raises(ConfigError):
        FiberLink(90.0, (a,))
    close = FiberLink(1000.0, (a, FaultEvent(110.0, EventKind.NON_REFLECTIVE, 1.0, None, 4)))
    with pytest.raises(ConfigError, match="merged"):
        ideal_trace(close, CFG)


def test_merged_separation_bounded_by_pulse_width():
    w = CFG.pulse_length_m
    ev = FaultEvent.merged(500.0, SubEvent(0.0, 0.3, -40.0), SubEvent(1.5 * w, 0.3, -40.0), 5)
    with pytest.raises(ConfigError, match="pulse width"):
        ideal_trace(FiberLink(1000.0, (ev,)), CFG)


def test_sample_budget():
    with pytest.raises(ResourceError):
        ideal_trace(FiberLink(1e7), CFG)


# ---------------------------------------------------------------- ideal traces


def test_event_free_link_is_a_straight_line():
    tr = ideal_trace(FiberLink(3000.0), CFG)
    inside = tr.distance_m < 3000.0
    slope_db_per_km = np.polyfit(tr.distance_m[inside] / 1000.0, tr.samples_db[inside], 1)[0]
    assert slope_db_per_km == pytest.approx(-CFG.attenuation_db_km, abs=1e-9)
    assert np.all(np.diff(tr.samples_db[inside]) < 0)


def test_loss_difference_between_two_and_four_db():
    t2 = ideal_trace(step_link(2.0), CFG)
    t4 = ideal_trace(step_link(4.0), CFG)
    after = t2.distance_m > 1000.0 + 2 * CFG.pulse_length_m
    inside = after & (t2.distance_m < 2000.0)
    np.testing.assert_allclose(t2.samples_db[inside] - t4.samples_db[inside], 2.0, atol=1e-9)
    before = t2.distance_m < 1000.0
    np.testing.assert_array_equal(t2.samples_db[before], t4.samples_db[before])


def test_step_is_a_ramp_over_one_pulse_width():
    tr = ideal_trace(step_link(1.0), CFG)
    w = CFG.pulse_length_m
    drop = baseline_db(tr, 1000.0 + w + 5.0) - level_at(tr, 1000.0 + w + 5.0)
    assert drop == pytest.approx(1.0, abs=1e-9)
    half = baseline_db(tr, 1000.0 + w / 2) - level_at(tr, 1000.0 + w / 2)
    assert 0.3 < half < 0.7


def test_setup1_geometry():
    link = setup1_link("pc")
    assert [round(e.position_m) for e in link.events] == [995, 3003, 4014, 6012]
    assert [e.kind for e in link.events] == [EventKind.MERGED, EventKind.MERGED, EventKind.NON_REFLECTIVE, EventKind.REFLECTIVE]
    tr = ideal_trace(link, CFG)
    w = CFG.pulse_length_m

    def peak(pos):
        i = tr.onset_index(pos)
        return tr.samples_db[i] - tr.samples_db[i - 2]

    def step(pos, extent=0.0):
        gap = lambda z: baseline_db(tr, z) - level_at(tr, z)  # noqa: E731
        return gap(pos + extent + 2 * w) - gap(pos - 5.0)

    assert step(4014.0) == pytest.approx(1.0, abs=1e-6)
    assert peak(4014.0) <= 0.0
    assert peak(6012.0) > 3.0
    for ev in link.events[:2]:
        assert peak(ev.position_m) > 1.0
        assert step(ev.position_m, ev.extent_m) == pytest.approx(ev.loss_db, abs=1e-6)


@given(seed=st.integers(0, 2**31 - 1))
def test_step_additivity(seed):
    link = random_link(LinkRandomizationSpec(event_count=(1, 4)), seed)
    tr = ideal_trace(link, CFG)
    last = link.events[-1]
    z = (last.position_m + last.extent_m + 2 * CFG.pulse_length_m + link.total_length_m - CFG.pulse_length_m) / 2
    gap = baseline_db(tr, z) - level_at(tr, z)
    assert gap == pytest.approx(sum(e.loss_db for e in link.events), abs=0.01)


def test_reflective_peak_monotone_in_reflectance():
    heights = []
    for refl in (-50.0, -45.0, -40.0, -30.0, -20.0, -15.0):
        tr = ideal_trace(setup2_link(refl), CFG)
        i = tr.onset_index(1000.0)
        heights.append(tr.samples_db[i] - tr.samples_db[i - 1])
    assert np.all(np.diff(heights) > 0)


@given(seed=st.integers(0, 2**31 - 1))
def test_noiseless_trace_decreases_outside_reflections(seed):
    link = random_link(SHORT, seed)
    tr = ideal_trace(link, CFG)
    d = np.diff(tr.samples_db)
    ok = np.ones(len(d), bool)
    for ev in link.events:
        lo = tr.onset_index(ev.position_m) - 1
        hi = tr.onset_index(ev.position_m + ev.extent_m + CFG.pulse_length_m) + 1
        ok[lo:hi] = False
    ok[tr.onset_index(link.total_length_m) - 1 :] = False
    assert np.all(d[ok] <= 0)


# ---------------------------------------------------------------- noise and SNR


def test_zero_noise_is_identity():
    tr = ideal_trace(setup2_link(), CFG)
    out = apply_noise(tr, 0.0, 1, seed=7)
    np.testing.assert_array_equal(out.samples_db, tr.samples_db)


def test_noise_is_deterministic_per_seed():
    tr = ideal_trace(setup2_link(), CFG)
    a = add_noise(tr, 12.0, 100, seed=1)
    b = add_noise(tr, 12.0, 100, seed=1)
    c = add_noise(tr, 12.0, 100, seed=2)
    assert a.samples_db.tobytes() == b.samples_db.tobytes()
    assert not np.array_equal(a.samples_db, c.samples_db)


def test_shots_must_be_positive():
    tr = ideal_trace(setup2_link(), CFG)
    with pytest.raises(ConfigError):
        add_noise(tr, 10.0, 0, 0)


def averaged_noise_std(shots: int, shot_std: float, seed: int) -> float:
    tr = ideal_trace(FiberLink(4000.0), CFG)
    inside = tr.distance_m < 4000.0
    noisy = apply_noise(tr, shot_std, shots, seed)
    return float(np.std(noisy.linear[inside] - tr.linear[inside]))


def test_averaging_law():
    s = start_level(ideal_trace(FiberLink(4000.0), CFG)) * 1e-3
    ratio = averaged_noise_std(1, s, 0) / averaged_noise_std(100, s, 1)
    assert ratio == pytest.approx(10.0, rel=0.1)


@pytest.mark.parametrize("snr", [0, 5, 10, 15, 20, 25, 30])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_snr_round_trip(snr, seed):
    tr = ideal_trace(random_link(SHORT, seed, classes=[seed % 6 + 1]), CFG)
    assert measure_snr(add_noise(tr, snr, 1000, seed)) == pytest.approx(snr, abs=0.5)


def test_snr_round_trip_on_setup_traces():
    for link in (setup1_link("pc"), setup2_link()):
        tr = ideal_trace(link, CFG)
        for snr in (0.0, 15.0, 30.0):
            assert measure_snr(add_noise(tr, snr, 64, 5)) == pytest.approx(snr, abs=0.5)


def test_noiseless_snr_is_capped():
    assert measure_snr(ideal_trace(setup2_link(), CFG)) == SNR_CAP_DB


def test_pure_noise_trace_flags_degenerate_signal():
    tr = ideal_trace(setup2_link(), CFG)
    floor_db = 5 * math.log10(FLOOR_REL * CFG.launch_power_mw)
    dark = OtdrTrace(np.full(len(tr), floor_db), tr.sample_spacing_m, CFG, tr.ground_truth)
    est = estimate_snr(apply_noise(dark, 1e-6, 1, 0))
    assert est.degenerate
    assert est.snr_db <= 0.0


def test_snr_needs_enough_samples():
    tr = ideal_trace(setup2_link(), CFG)
    short = OtdrTrace(tr.samples_db[:80], tr.sample_spacing_m, CFG, FiberLink(60.0))
    with pytest.raises(Exception, match="100 samples"):
        measure_snr(short)


# ---------------------------------------------------------------- random links


def test_random_link_without_events():
    link = random_link(LinkRandomizationSpec(event_count=(0, 0)), 3)
    assert link.events == ()


def test_random_link_deterministic():
    a = random_link(LinkRandomizationSpec(), 11)
    b = random_link(LinkRandomizationSpec(), 11)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert a != random_link(LinkRandomizationSpec(), 12)


def test_random_link_kind_mixture():
    spec = LinkRandomizationSpec(event_count=(1, 1), kind_weights={"reflective": 0.5, "non_reflective": 0.5})
    kinds = [random_link(spec, s).events[0].kind for s in range(10_000)]
    frac = np.mean([k is EventKind.REFLECTIVE for k in kinds])
    assert abs(frac - 0.5) <= 0.02


@given(seed=st.integers(0, 2**31 - 1))
def test_random_links_satisfy_invariants(seed):
    spec = LinkRandomizationSpec()
    link = random_link(spec, seed)
    link.validate_spacing(CFG.pulse_length_m)
    for ev in link.events:
        assert spec.loss_range_db[0] <= ev.parts[0].loss_db <= spec.loss_range_db[1]
        assert ev.cause_class in range(1, 7)
        if ev.kind is EventKind.REFLECTIVE:
            assert -50.0 <= ev.reflectance_db <= -15.0


def test_infeasible_spec():
    with pytest.raises(SpecError):
        random_link(LinkRandomizationSpec(length_range_m=(500.0, 500.0), event_count=(40, 40)), 0)
    with pytest.raises(SpecError):
        LinkRandomizationSpec(loss_range_db=(0.1, 20.0))
    with pytest.raises(SpecError):
        LinkRandomizationSpec(reflectance_range_db=(-60.0, -15.0))


def test_spec_json_round_trip(tmp_path):
    spec = LinkRandomizationSpec(event_count=(2, 3), class_weights={1: 1.0, 5: 2.0})
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert LinkRandomizationSpec.from_json(p) == spec


# ---------------------------------------------------------------- export


def test_trace_export_round_trip(tmp_path):
    tr = add_noise(ideal_trace(setup1_link("apc"), CFG), 20.0, 64, 9)
    csv_path, json_path = tr.export(tmp_path / "t")
    assert csv_path.read_text().splitlines()[0] == "index,distance_m,level_db"
    meta = json.loads(json_path.read_text())
    assert {"config", "ground_truth", "seed", "snr_db"} <= set(meta)
    back = OtdrTrace.load(tmp_path / "t")
    np.testing.assert_allclose(back.samples_db, tr.samples_db, rtol=1e-8)
    assert back.ground_truth == tr.ground_truth
    assert back.config == tr.config


def test_terminations():
    assert FiberLink(100.0, end_termination=Termination.PC).end_reflectance_db is not None
    assert FiberLink(100.0, end_termination="apc").end_reflectance_db is None
