"""Footfall-sequence metrics, gallop classification, and template enumeration.

A stride is described by eight touchdown/lift-off timings, one TD and one LO
per leg, each normalized by the stride duration to a fraction in [0, 1).
From these we derive duty factors and three lateral/axial phase lags, classify
the gait into one of four gallop categories (by flight-phase count) and two
footfall types (transverse/rotary), and build the cyclic contact-set schedule
that downstream trajectory optimization consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import AmbiguousCategory, InvalidTiming, NotAGallop, SimultaneousEvents

LEGS = ("LH", "LF", "RF", "RH")
FORE_LEGS = ("LF", "RF")
HIND_LEGS = ("LH", "RH")
CATEGORIES = ("G0", "GG", "GE", "G2")
FOOTFALL_TYPES = ("Transverse", "Rotary")
LEADING_FEET = ("FR", "FL")

# Timings closer than this are treated as simultaneous events.
EVENT_TOLERANCE = 1e-9
# Lateral lags smaller than this do not define a gallop (bound/half-bound).
GALLOP_LAG_TOLERANCE = 1e-6


def wrap_lag(x: float) -> float:
    """Wrap a stride-fraction difference into [-0.5, 0.5)."""
    return ((x + 0.5) % 1.0) - 0.5


def duty_factor(td: float, lo: float) -> float:
    """Stance fraction of one leg, (lo - td) mod 1, handling stride wrap.

    Raises InvalidTiming if either timing is outside [0, 1) or the stance
    has zero duration.
    """
    for t in (td, lo):
        if not (0.0 <= t < 1.0):
            raise InvalidTiming(f"timing {t!r} outside [0, 1)")
    if abs(td - lo) < EVENT_TOLERANCE:
        raise InvalidTiming("zero-duration stance: TD and LO coincide")
    return (lo - td) % 1.0


@dataclass(frozen=True)
class FootfallSequence:
    """Eight normalized footfall timings plus optional stride duration.

    Timing fields are stride fractions in [0, 1); ``stride_duration`` is in
    seconds and defaults to 1.0 (metadata only, the fractions are primary).
    """

    lh_td: float
    lh_lo: float
    lf_td: float
    lf_lo: float
    rf_td: float
    rf_lo: float
    rh_td: float
    rh_lo: float
    stride_duration: float = 1.0

    def __post_init__(self):
        for leg in LEGS:
            duty_factor(self.td(leg), self.lo(leg))  # validates range + duration
        if not self.stride_duration > 0.0:
            raise InvalidTiming("stride_duration must be positive")

    def td(self, leg: str) -> float:
        return getattr(self, f"{leg.lower()}_td")

    def lo(self, leg: str) -> float:
        return getattr(self, f"{leg.lower()}_lo")

    def duty(self, leg: str) -> float:
        return duty_factor(self.td(leg), self.lo(leg))

    def midstance(self, leg: str) -> float:
        """Stride fraction halfway through the leg's stance."""
        return (self.td(leg) + 0.5 * self.duty(leg)) % 1.0

    def in_stance(self, leg: str, t: float) -> bool:
        """True if the leg is in ground contact at stride fraction t."""
        return (t - self.td(leg)) % 1.0 < self.duty(leg)

    def events(self) -> list[tuple[float, str, str]]:
        """All eight (time, leg, kind) events, unsorted."""
        out = []
        for leg in LEGS:
            out.append((self.td(leg), leg, "TD"))
            out.append((self.lo(leg), leg, "LO"))
        return out

    def shifted(self, c: float) -> "FootfallSequence":
        """Sequence with constant c added to all timings (mod 1)."""
        kw = {}
        for leg in LEGS:
            kw[f"{leg.lower()}_td"] = (self.td(leg) + c) % 1.0
            kw[f"{leg.lower()}_lo"] = (self.lo(leg) + c) % 1.0
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_dict(self) -> dict:
        d = {f"{leg}_{kind}": getattr(self, f"{leg.lower()}_{kind.lower()}")
             for leg in LEGS for kind in ("TD", "LO")}
        d["stride_duration"] = self.stride_duration
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FootfallSequence":
        kw = {}
        for leg in LEGS:
            for kind in ("TD", "LO"):
                key = f"{leg}_{kind}"
                if key not in d:
                    raise InvalidTiming(f"missing timing field {key!r}")
                kw[f"{leg.lower()}_{kind.lower()}"] = float(d[key])
        kw["stride_duration"] = float(d.get("stride_duration", 1.0))
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "FootfallSequence":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GaitMetrics:
    """Duty factors and the three phase lags of a footfall sequence."""

    duty_factor_per_leg: dict[str, float]
    duty_factor: float
    foreleg_lag: float
    hindleg_lag: float
    fore_hind_lag: float


def _couplet_mean_midstance(seq: FootfallSequence, right_leg: str, left_leg: str) -> float:
    # Mean of the two midstances taken the short way around the stride circle,
    # anchored at the right leg so a wrapped couplet averages correctly.
    m_r = seq.midstance(right_leg)
    m_l = seq.midstance(left_leg)
    return (m_r + 0.5 * wrap_lag(m_l - m_r)) % 1.0


def phase_lags(seq: FootfallSequence) -> GaitMetrics:
    """Duty factors plus foreleg, hindleg, and fore-hind phase lags.

    Lags are wrapped into [-0.5, 0.5). The fore-hind lag is the wrapped
    difference between the mean hind-pair midstance and the mean fore-pair
    midstance.
    """
    duties = {leg: seq.duty(leg) for leg in LEGS}
    d_f = wrap_lag(seq.lf_td - seq.rf_td)
    d_h = wrap_lag(seq.lh_td - seq.rh_td)
    mid_fore = _couplet_mean_midstance(seq, "RF", "LF")
    mid_hind = _couplet_mean_midstance(seq, "RH", "LH")
    d_p = wrap_lag(mid_hind - mid_fore)
    return GaitMetrics(
        duty_factor_per_leg=duties,
        duty_factor=sum(duties.values()) / 4.0,
        foreleg_lag=d_f,
        hindleg_lag=d_h,
        fore_hind_lag=d_p,
    )


def stance_duration_lag(seq: FootfallSequence) -> float:
    """Alternate fore-hind lag: half the hind-minus-fore stance duration sum.

    This is the literal difference-of-stance-durations formula. It is exposed
    for reference only; it is identically zero whenever all four duty factors
    are equal, so it cannot drive the category inequalities. Classification
    always uses the midstance-lag reading (see phase_lags).
    """
    hind = seq.duty("LH") + seq.duty("RH")
    fore = seq.duty("LF") + seq.duty("RF")
    return wrap_lag((hind - fore) / 2.0)


@dataclass(frozen=True)
class GaitLabel:
    """Classification of a gallop: category, footfall type, leading foot."""

    category: str
    footfall_type: str
    leading_foot: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.footfall_type not in FOOTFALL_TYPES:
            raise ValueError(f"unknown footfall type {self.footfall_type!r}")
        if self.leading_foot not in LEADING_FEET:
            raise ValueError(f"unknown leading foot {self.leading_foot!r}")

    @property
    def name(self) -> str:
        return f"{self.category}-{self.footfall_type.lower()}-{self.leading_foot}"


def categorize(duty: float, fore_hind_lag: float, tol: float = EVENT_TOLERANCE) -> str:
    """Category from mean duty factor and fore-hind lag alone.

    The lag is compared as a stride fraction in [0, 1): G0 has no flight
    phases, GG one gathered flight, GE one extended flight, G2 two flights.
    Raises AmbiguousCategory when the lag sits on a set boundary.
    """
    u = fore_hind_lag % 1.0
    if abs(u - duty) < tol or abs(u - (1.0 - duty)) < tol:
        raise AmbiguousCategory(
            f"fore-hind lag {u:.6g} on a category boundary for duty {duty:.6g}")
    if (1.0 - duty) < u < duty:
        return "G0"
    if u < duty and u < 1.0 - duty:
        return "GG"
    if u > duty and u > 1.0 - duty:
        return "GE"
    return "G2"


def classify(seq: FootfallSequence) -> GaitLabel:
    """Classify a footfall sequence as one of the 16 gallop labels.

    Transverse when the fore and hind lateral lags share a sign, rotary when
    they differ; the leading foot is the fore leg striking second in its
    couplet. Raises NotAGallop when either lateral lag vanishes.
    """
    m = phase_lags(seq)
    if abs(m.foreleg_lag) < GALLOP_LAG_TOLERANCE or abs(m.hindleg_lag) < GALLOP_LAG_TOLERANCE:
        raise NotAGallop("fore or hind lateral lag is zero: not a gallop")
    footfall = "Transverse" if m.foreleg_lag * m.hindleg_lag > 0 else "Rotary"
    leading = "FL" if m.foreleg_lag > 0 else "FR"
    category = categorize(m.duty_factor, m.fore_hind_lag)
    return GaitLabel(category=category, footfall_type=footfall, leading_foot=leading)


@dataclass(frozen=True)
class PhaseSchedule:
    """Cyclic stride schedule: contact-set domains and their boundary events.

    ``domains[i]`` is (contact_set, nominal_fraction); ``events[i]`` is the
    (leg, kind) event at the start of domain i, so the event between the last
    and first domains is ``events[0]``. Fractions sum to one.
    """

    domains: tuple[tuple[frozenset, float], ...]
    events: tuple[tuple[str, str], ...]

    @property
    def contact_sets(self) -> list[frozenset]:
        return [c for c, _ in self.domains]

    @property
    def fractions(self) -> list[float]:
        return [f for _, f in self.domains]

    def flight_count(self) -> int:
        return sum(1 for c, _ in self.domains if not c)


def phase_schedule(seq: FootfallSequence) -> PhaseSchedule:
    """Contact-set domains between consecutive events, starting at RF touchdown.

    Requires all eight event times pairwise distinct; gallops have eight
    single-leg transitions per stride.
    """
    events = sorted(seq.events(), key=lambda e: ((e[0] - seq.rf_td) % 1.0, e[1]))
    times = [(t - seq.rf_td) % 1.0 for t, _, _ in events]
    for i in range(len(times)):
        gap = (times[(i + 1) % len(times)] - times[i]) % 1.0 if i + 1 < len(times) \
            else 1.0 - times[i]
        if gap < EVENT_TOLERANCE:
            a, b = events[i], events[(i + 1) % len(events)]
            raise SimultaneousEvents(
                f"events {a[1]}-{a[2]} and {b[1]}-{b[2]} coincide")
    domains = []
    for i, t in enumerate(times):
        t_next = times[i + 1] if i + 1 < len(times) else 1.0
        mid = 0.5 * (t + t_next) + seq.rf_td
        contact = frozenset(leg for leg in LEGS if seq.in_stance(leg, mid % 1.0))
        domains.append((contact, t_next - t))
    return PhaseSchedule(
        domains=tuple(domains),
        events=tuple((leg, kind) for _, leg, kind in events),
    )


@dataclass(frozen=True)
class GaitTemplate:
    """A classified gallop with its representative sequence and schedule."""

    label: GaitLabel
    schedule: PhaseSchedule
    sequence: FootfallSequence
    name: str = field(default="")

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", self.label.name)

    def flight_count(self) -> int:
        return self.schedule.flight_count()


# Flight-phase counts implied by each category.
CATEGORY_FLIGHTS = {"G0": 0, "GG": 1, "GE": 1, "G2": 2}

# Representative metric seeds for enumeration. Any interior point of each
# category works; the optimizer re-times all phases. GE uses 0.78 rather than
# a rounder 0.8 because 0.8 makes one lift-off coincide with the stride-origin
# touchdown at these duty factors.
_TEMPLATE_SEEDS = {
    "G0": {"duty": 0.6, "fore_hind_lag": 0.55},
    "GG": {"duty": 0.3, "fore_hind_lag": 0.15},
    "GE": {"duty": 0.3, "fore_hind_lag": 0.78},
    "G2": {"duty": 0.3, "fore_hind_lag": 0.45},
}
_SEED_LAG = 0.1


def sequence_from_metrics(duty: float, foreleg_lag: float, hindleg_lag: float,
                          fore_hind_lag: float, stride_duration: float = 1.0,
                          ) -> FootfallSequence:
    """Construct the canonical sequence with the given metrics, RF TD at zero.

    All four legs share the duty factor. The hind couplet is placed so the
    midstance-based fore-hind lag equals ``fore_hind_lag`` (as a fraction in
    [0, 1) before wrapping).
    """
    t_rf = 0.0
    t_lf = foreleg_lag % 1.0
    tau = (fore_hind_lag - 0.5 * (hindleg_lag - foreleg_lag)) % 1.0
    t_rh = tau
    t_lh = (tau + hindleg_lag) % 1.0
    return FootfallSequence(
        lh_td=t_lh, lh_lo=(t_lh + duty) % 1.0,
        lf_td=t_lf, lf_lo=(t_lf + duty) % 1.0,
        rf_td=t_rf, rf_lo=(t_rf + duty) % 1.0,
        rh_td=t_rh, rh_lo=(t_rh + duty) % 1.0,
        stride_duration=stride_duration,
    )


def make_template(category: str, footfall_type: str, leading_foot: str,
                  stride_duration: float = 1.0) -> GaitTemplate:
    """Representative template for one (category, footfall, leading) triple."""
    seeds = _TEMPLATE_SEEDS[category]
    d_f = -_SEED_LAG if leading_foot == "FR" else _SEED_LAG
    same_sign = footfall_type == "Transverse"
    d_h = d_f if same_sign else -d_f
    seq = sequence_from_metrics(seeds["duty"], d_f, d_h, seeds["fore_hind_lag"],
                                stride_duration=stride_duration)
    label = classify(seq)
    expected = GaitLabel(category, footfall_type, leading_foot)
    if label != expected:
        raise AssertionError(f"template seed for {expected.name} classified as {label.name}")
    return GaitTemplate(label=label, schedule=phase_schedule(seq), sequence=seq)


def enumerate_gallops(leading_filter: str | None = None) -> list[GaitTemplate]:
    """All 16 gallop templates, or the 8 with the requested leading foot."""
    if leading_filter is not None and leading_filter not in LEADING_FEET:
        raise ValueError(f"leading_filter must be one of {LEADING_FEET}")
    out = []
    for category in CATEGORIES:
        for footfall in FOOTFALL_TYPES:
            for leading in LEADING_FEET:
                if leading_filter is not None and leading != leading_filter:
                    continue
                out.append(make_template(category, footfall, leading))
    return out


def find_template(name: str) -> GaitTemplate:
    """Template by name, e.g. 'G2-rotary-FR'."""
    for tpl in enumerate_gallops():
        if tpl.name == name:
            return tpl
    known = ", ".join(t.name for t in enumerate_gallops())
    raise KeyError(f"unknown gait template {name!r}; known: {known}")


TRANSFORMS = ("MirrorLR", "ReverseForePair", "ReverseHindPair")


def transform(seq: FootfallSequence, kind: str) -> FootfallSequence:
    """Swap left/right timings of one or both leg pairs.

    ``ReverseForePair``/``ReverseHindPair`` flip the footfall type;
    ``MirrorLR`` (both pairs) flips the leading foot and preserves the type.
    """
    if kind not in TRANSFORMS:
        raise ValueError(f"unknown transform {kind!r}")
    kw = seq.to_dict()
    if kind in ("MirrorLR", "ReverseForePair"):
        kw["LF_TD"], kw["RF_TD"] = kw["RF_TD"], kw["LF_TD"]
        kw["LF_LO"], kw["RF_LO"] = kw["RF_LO"], kw["LF_LO"]
    if kind in ("MirrorLR", "ReverseHindPair"):
        kw["LH_TD"], kw["RH_TD"] = kw["RH_TD"], kw["LH_TD"]
        kw["LH_LO"], kw["RH_LO"] = kw["RH_LO"], kw["LH_LO"]
    return FootfallSequence.from_dict(kw)
