import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gallop.errors import (
    AmbiguousCategory,
    InvalidTiming,
    NotAGallop,
    SimultaneousEvents,
)
from gallop.taxonomy import (
    CATEGORY_FLIGHTS,
    FootfallSequence,
    categorize,
    classify,
    duty_factor,
    enumerate_gallops,
    find_template,
    phase_lags,
    phase_schedule,
    sequence_from_metrics,
    transform,
    wrap_lag,
)

# The worked example used throughout: a two-flight gallop with equal duty
# factors of 0.25, fore TDs at RF=0.0 / LF=0.1, hind TDs at RH=0.45 / LH=0.55.
G2_EXAMPLE = FootfallSequence(
    lh_td=0.55, lh_lo=0.80,
    lf_td=0.10, lf_lo=0.35,
    rf_td=0.00, rf_lo=0.25,
    rh_td=0.45, rh_lo=0.70,
)


def gallop_sequence(duty, d_f, d_h, d_p, shift=0.0):
    return sequence_from_metrics(duty, d_f, d_h, d_p).shifted(shift)


class TestDutyFactor:
    def test_plain_interval(self):
        assert duty_factor(0.0, 0.3) == pytest.approx(0.3, abs=1e-15)

    def test_wraparound_interval(self):
        assert duty_factor(0.8, 0.1) == pytest.approx(0.3, abs=1e-15)

    def test_zero_duration_stance_rejected(self):
        with pytest.raises(InvalidTiming):
            duty_factor(0.5, 0.5)

    @pytest.mark.parametrize("td,lo", [(-0.1, 0.5), (0.2, 1.0), (1.2, 0.3)])
    def test_out_of_range_rejected(self, td, lo):
        with pytest.raises(InvalidTiming):
            duty_factor(td, lo)


class TestPhaseLags:
    def test_foreleg_lag_wraps_negative(self):
        # LF at 0.6, RF at 0.0: ((0.6 - 0.0 + 0.5) mod 1) - 0.5 = -0.4
        seq = FootfallSequence(
            lh_td=0.30, lh_lo=0.55, lf_td=0.60, lf_lo=0.85,
            rf_td=0.00, rf_lo=0.25, rh_td=0.20, rh_lo=0.45)
        assert phase_lags(seq).foreleg_lag == pytest.approx(-0.4, abs=1e-12)

    def test_identical_timings_zero_lag(self):
        seq = FootfallSequence(
            lh_td=0.30, lh_lo=0.55, lf_td=0.10, lf_lo=0.35,
            rf_td=0.10, rf_lo=0.42, rh_td=0.60, rh_lo=0.85)
        assert phase_lags(seq).foreleg_lag == 0.0

    def test_fore_hind_midstance_lag(self):
        # fore midstances 0.125/0.225 -> mean 0.175; hind 0.575/0.675 -> 0.625
        m = phase_lags(G2_EXAMPLE)
        assert m.fore_hind_lag == pytest.approx(0.45, abs=1e-12)

    def test_duty_factor_is_mean(self):
        m = phase_lags(G2_EXAMPLE)
        assert m.duty_factor == pytest.approx(
            sum(m.duty_factor_per_leg.values()) / 4.0, abs=1e-15)


class TestClassify:
    def test_g2_transverse(self):
        seq = gallop_sequence(0.25, 0.1, 0.1, 0.45)
        label = classify(seq)
        assert (label.category, label.footfall_type) == ("G2", "Transverse")

    def test_g2_rotary(self):
        seq = gallop_sequence(0.25, 0.1, -0.1, 0.45)
        label = classify(seq)
        assert (label.category, label.footfall_type) == ("G2", "Rotary")

    def test_zero_fore_lag_not_a_gallop(self):
        seq = FootfallSequence(
            lh_td=0.55, lh_lo=0.80, lf_td=0.10, lf_lo=0.35,
            rf_td=0.10, rf_lo=0.35, rh_td=0.45, rh_lo=0.70)
        with pytest.raises(NotAGallop):
            classify(seq)

    def test_leading_foot_is_second_fore_td(self):
        # d_f < 0: LF strikes first, RF second -> FR leads.
        label = classify(gallop_sequence(0.25, -0.1, -0.1, 0.45))
        assert label.leading_foot == "FR"
        label = classify(gallop_sequence(0.25, 0.1, 0.1, 0.45))
        assert label.leading_foot == "FL"

    def test_boundary_is_ambiguous(self):
        with pytest.raises(AmbiguousCategory):
            categorize(0.25, 0.25)


class TestPhaseSchedule:
    def test_g2_example_domains(self):
        sched = phase_schedule(G2_EXAMPLE)
        expected = [
            {"RF"}, {"RF", "LF"}, {"LF"}, set(),
            {"RH"}, {"RH", "LH"}, {"LH"}, set(),
        ]
        assert [set(c) for c in sched.contact_sets] == expected
        assert sched.flight_count() == 2

    def test_g2_example_fractions(self):
        sched = phase_schedule(G2_EXAMPLE)
        assert sched.fractions == pytest.approx(
            [0.10, 0.15, 0.10, 0.10, 0.10, 0.15, 0.10, 0.20], abs=1e-12)
        assert math.fsum(sched.fractions) == pytest.approx(1.0, abs=1e-12)

    def test_g0_sequence_has_no_flight(self):
        seq = gallop_sequence(0.6, -0.1, -0.1, 0.55)
        sched = phase_schedule(seq)
        assert len(sched.domains) == 8
        assert sched.flight_count() == 0
        assert any(len(c) >= 3 for c in sched.contact_sets)

    def test_simultaneous_events_rejected(self):
        seq = FootfallSequence(
            lh_td=0.55, lh_lo=0.80, lf_td=0.25, lf_lo=0.50,
            rf_td=0.00, rf_lo=0.25, rh_td=0.45, rh_lo=0.70)
        with pytest.raises(SimultaneousEvents):
            phase_schedule(seq)

    def test_consecutive_sets_differ_by_event_leg(self):
        sched = phase_schedule(G2_EXAMPLE)
        n = len(sched.domains)
        for i in range(n):
            prev = sched.contact_sets[(i - 1) % n]
            cur = sched.contact_sets[i]
            leg, kind = sched.events[i]
            assert prev.symmetric_difference(cur) == {leg}
            assert (leg in cur) == (kind == "TD")


class TestEnumerate:
    def test_sixteen_distinct_labels(self):
        templates = enumerate_gallops()
        assert len(templates) == 16
        labels = {t.label for t in templates}
        assert len(labels) == 16

    def test_fr_filter_gives_eight(self):
        templates = enumerate_gallops("FR")
        assert len(templates) == 8
        assert all(t.label.leading_foot == "FR" for t in templates)

    def test_roundtrip_classification(self):
        for tpl in enumerate_gallops():
            assert classify(tpl.sequence) == tpl.label

    def test_flight_count_matches_category(self):
        for tpl in enumerate_gallops():
            assert tpl.flight_count() == CATEGORY_FLIGHTS[tpl.label.category]

    def test_find_template_by_name(self):
        tpl = find_template("G2-rotary-FR")
        assert tpl.label.category == "G2"
        assert tpl.label.footfall_type == "Rotary"
        with pytest.raises(KeyError):
            find_template("G3-sideways-FR")


class TestTransform:
    def test_fore_pair_reversal_flips_type(self):
        seq = gallop_sequence(0.25, -0.1, -0.1, 0.45)
        assert classify(seq).footfall_type == "Transverse"
        assert classify(transform(seq, "ReverseForePair")).footfall_type == "Rotary"

    def test_mirror_flips_leading_keeps_type_and_category(self):
        seq = gallop_sequence(0.25, -0.1, -0.1, 0.45)
        before = classify(seq)
        after = classify(transform(seq, "MirrorLR"))
        assert before.leading_foot == "FR" and after.leading_foot == "FL"
        assert after.footfall_type == before.footfall_type
        assert after.category == before.category

    def test_mirror_is_involution(self):
        seq = G2_EXAMPLE
        assert transform(transform(seq, "MirrorLR"), "MirrorLR") == seq


class TestSerialization:
    def test_json_roundtrip(self):
        text = G2_EXAMPLE.to_json()
        assert FootfallSequence.from_json(text) == G2_EXAMPLE

    def test_missing_field_rejected(self):
        with pytest.raises(InvalidTiming):
            FootfallSequence.from_dict({"LH_TD": 0.1})


# ---------------------------------------------------------------------------
# Property tests
# ---------------------------------------------------------------------------

def valid_metric_tuples(draw):
    duty = draw(st.floats(0.1, 0.9))
    mag = min(0.25, 0.8 * duty, 0.8 * (1.0 - duty))
    d_f = draw(st.floats(0.01, mag)) * (1 if draw(st.booleans()) else -1)
    d_h = draw(st.floats(0.01, mag)) * (1 if draw(st.booleans()) else -1)
    d_p = draw(st.floats(0.0, 1.0, exclude_max=True))
    return duty, d_f, d_h, d_p


metric_strategy = st.composite(valid_metric_tuples)()


@st.composite
def gallop_sequences(draw):
    duty, d_f, d_h, d_p = draw(metric_strategy)
    seq = sequence_from_metrics(duty, d_f, d_h, d_p)
    shift = draw(st.floats(0.0, 1.0, exclude_max=True))
    return seq.shifted(shift)


@given(gallop_sequences(), st.floats(0.0, 1.0, exclude_max=True))
@settings(max_examples=200)
def test_translation_invariance(seq, c):
    base = phase_lags(seq)
    shifted = phase_lags(seq.shifted(c))
    assert shifted.duty_factor == pytest.approx(base.duty_factor, abs=1e-9)
    assert shifted.foreleg_lag == pytest.approx(base.foreleg_lag, abs=1e-9)
    assert shifted.hindleg_lag == pytest.approx(base.hindleg_lag, abs=1e-9)
    assert wrap_lag(shifted.fore_hind_lag - base.fore_hind_lag) == pytest.approx(0.0, abs=1e-9)


@given(gallop_sequences())
@settings(max_examples=200)
def test_mirror_negates_both_lags_and_flips_leading(seq):
    base = phase_lags(seq)
    mirrored = phase_lags(transform(seq, "MirrorLR"))
    assert wrap_lag(mirrored.foreleg_lag + base.foreleg_lag) == pytest.approx(0.0, abs=1e-9)
    assert wrap_lag(mirrored.hindleg_lag + base.hindleg_lag) == pytest.approx(0.0, abs=1e-9)
    try:
        a, b = classify(seq), classify(transform(seq, "MirrorLR"))
    except (NotAGallop, AmbiguousCategory):
        return
    assert a.footfall_type == b.footfall_type
    assert {a.leading_foot, b.leading_foot} == {"FR", "FL"}


@given(metric_strategy)
@settings(max_examples=200)
def test_pair_reversal_flips_type_keeps_category_for_equal_lags(metrics):
    duty, d_f, d_h, d_p = metrics
    seq = sequence_from_metrics(duty, d_f, math.copysign(abs(d_f), d_h), d_p)
    try:
        a = classify(seq)
        b = classify(transform(seq, "ReverseForePair"))
    except (NotAGallop, AmbiguousCategory):
        return
    assert {a.footfall_type, b.footfall_type} == {"Transverse", "Rotary"}
    assert a.category == b.category


@given(st.floats(0.01, 0.99), st.floats(-0.5, 0.5, exclude_max=True))
@settings(max_examples=500)
def test_category_partition(duty, d_p):
    """Exactly one category predicate holds off the set boundaries."""
    u = d_p % 1.0
    if abs(u - duty) < 1e-6 or abs(u - (1.0 - duty)) < 1e-6:
        return
    preds = {
        "G0": (1.0 - duty) < u < duty,
        "GG": u < duty and u < 1.0 - duty,
        "GE": u > duty and u > 1.0 - duty,
        "G2": duty < u < 1.0 - duty,
    }
    assert sum(preds.values()) == 1
    assert preds[categorize(duty, d_p)]


def test_partition_dense_grid():
    hits = 0
    for i in range(1, 200):
        duty = i / 200.0
        for j in range(400):
            u = j / 400.0 + 1e-4
            if abs(u - duty) < 1e-3 or abs(u - (1.0 - duty)) < 1e-3 or u >= 1.0:
                continue
            cat = categorize(duty, u)
            flights = {"G0": 0, "GG": 1, "GE": 1, "G2": 2}[cat]
            assert flights in (0, 1, 2)
            hits += 1
    assert hits > 50000
