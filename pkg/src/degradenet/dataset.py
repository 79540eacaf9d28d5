"""Cohort data model, CSV ingestion, synthetic cohorts, normalization and splitting.

A cohort is a list of :class:`Trajectory` objects, one per participant, each
holding an ordered run of :class:`WaveRecord` plus per-participant
:class:`StaticFeatures`. Models never see these objects directly: they consume
the dense, z-scored arrays in :class:`CohortTensors` produced by
:func:`normalize`.
"""
import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError, SchemaError, SpecError, ValidationError
from .numerics import make_rng, sigmoid

SCHEMA_VERSION = "1"
SCORE_MIN, SCORE_MAX = 0, 30

DYNAMIC_FEATURES = ("adl", "cog")

# closed category sets, in the order used for one-hot encoding
CATEGORIES = {
    "gender": ("female", "male"),
    "smoke": ("never", "always", "ever"),
    "drink": ("light_never", "heavy", "always"),
    "married": ("with_spouse", "spouse_absent", "partnered"),
    "region": ("northeast", "midwest", "south", "west", "other"),
    "race": ("white", "black", "hispanic", "other"),
}
NUMERIC_STATICS = (
    "age_at_entry",
    "poverty_category",
    "poverty_threshold",
    "education_years",
    "wealth",
    "income",
)
MONEY_STATICS = ("poverty_threshold", "wealth", "income")

WAVE_COLUMNS = (
    "wave_index", "adl", "cog", "ohs", "onhs",
    "ohs_count", "noohs_nights", "onhs_count", "noonhs_nights",
)
STATIC_COLUMNS = (
    "age_at_entry", "gender", "smoke", "drink", "married", "region", "race",
    "poverty_category", "poverty_threshold", "education_years", "wealth", "income",
)
CSV_COLUMNS = ("participant_id",) + WAVE_COLUMNS + STATIC_COLUMNS
OPTIONAL_COLUMNS = ("planted_cluster",)


@dataclass(frozen=True)
class WaveRecord:
    wave_index: int
    adl: int
    cog: int
    ohs: bool = False
    onhs: bool = False
    ohs_count: int = 0
    noohs_nights: int = 0
    onhs_count: int = 0
    noonhs_nights: int = 0

    def validate(self):
        if self.wave_index < 1:
            raise ValidationError(f"wave_index must be >= 1, got {self.wave_index}")
        for name in ("adl", "cog"):
            v = getattr(self, name)
            if not SCORE_MIN <= v <= SCORE_MAX:
                raise ValidationError(f"{name}={v} outside [{SCORE_MIN}, {SCORE_MAX}]")
        for name in ("ohs_count", "noohs_nights", "onhs_count", "noonhs_nights"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not self.ohs and (self.ohs_count or self.noohs_nights):
            raise ValidationError("ohs is 0 but hospital stay counts are non-zero")
        if not self.onhs and (self.onhs_count or self.noonhs_nights):
            raise ValidationError("onhs is 0 but nursing-home stay counts are non-zero")


@dataclass(frozen=True)
class StaticFeatures:
    age_at_entry: float
    gender: str
    smoke: str
    drink: str
    married: str
    region: str
    race: str
    poverty_category: int
    poverty_threshold: float
    education_years: float
    wealth: float
    income: float

    def validate(self):
        for name, levels in CATEGORIES.items():
            if getattr(self, name) not in levels:
                raise ValidationError(f"{name}={getattr(self, name)!r} not in {levels}")
        if not 1 <= self.poverty_category <= 5:
            raise ValidationError(f"poverty_category must be in 1..5, got {self.poverty_category}")
        for name in NUMERIC_STATICS:
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} is not finite")

    def encode(self):
        """Numerics followed by one-hot blocks; see :func:`static_feature_names`.

        Money amounts enter on a signed log scale: wealth spans several orders
        of magnitude, and on the raw scale a single multi-millionaire sits
        dozens of standard deviations out and dominates the model's input.
        """
        out = [_signed_log(getattr(self, name)) if name in MONEY_STATICS else float(getattr(self, name))
               for name in NUMERIC_STATICS]
        for name, levels in CATEGORIES.items():
            v = getattr(self, name)
            out.extend(1.0 if v == lvl else 0.0 for lvl in levels)
        return np.array(out)


def _signed_log(v):
    return math.copysign(math.log1p(abs(v)), v)


def static_feature_names():
    names = [f"log_{n}" if n in MONEY_STATICS else n for n in NUMERIC_STATICS]
    for name, levels in CATEGORIES.items():
        names.extend(f"{name}={lvl}" for lvl in levels)
    return names


@dataclass(frozen=True)
class Trajectory:
    participant_id: str
    waves: tuple
    statics: StaticFeatures
    planted_cluster: int | None = None

    @property
    def n_waves(self):
        return len(self.waves)

    def scores(self):
        """(T, 2) array of raw (adl, cog)."""
        return np.array([[w.adl, w.cog] for w in self.waves], dtype=np.float64)

    def validate(self):
        if len(self.waves) < 2:
            raise ValidationError(f"participant {self.participant_id}: need at least 2 waves")
        idx = [w.wave_index for w in self.waves]
        if any(b != a + 1 for a, b in zip(idx, idx[1:])):
            raise ValidationError(f"participant {self.participant_id}: waves {idx} are not contiguous")
        for w in self.waves:
            w.validate()
        self.statics.validate()


@dataclass(frozen=True)
class Cohort:
    trajectories: tuple
    schema_version: str = SCHEMA_VERSION

    def __len__(self):
        return len(self.trajectories)

    @property
    def ids(self):
        return [t.participant_id for t in self.trajectories]

    @property
    def planted(self):
        labels = [t.planted_cluster for t in self.trajectories]
        if any(lbl is None for lbl in labels):
            return None
        return np.array(labels, dtype=int)

    def n_waves(self):
        """Common trajectory length; raises if lengths differ."""
        lengths = {t.n_waves for t in self.trajectories}
        if len(lengths) != 1:
            raise ValidationError(f"trajectories have differing wave counts {sorted(lengths)}")
        return lengths.pop()

    def subset(self, indices):
        return Cohort(tuple(self.trajectories[i] for i in indices), self.schema_version)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cohort_to_csv_text(cohort):
    with_planted = any(t.planted_cluster is not None for t in cohort.trajectories)
    header = CSV_COLUMNS + (OPTIONAL_COLUMNS if with_planted else ())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for traj in cohort.trajectories:
        st = [getattr(traj.statics, c) for c in STATIC_COLUMNS]
        for w in traj.waves:
            row = [traj.participant_id] + [getattr(w, c) for c in WAVE_COLUMNS] + st
            if with_planted:
                row.append("" if traj.planted_cluster is None else traj.planted_cluster)
            writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_cohort_csv(cohort, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cohort_to_csv_text(cohort))


def _parse_int(s, col, rowno):
    try:
        return int(s)
    except ValueError:
        raise ValidationError(f"row {rowno}: column {col!r} expects an integer, got {s!r}") from None


def _parse_float(s, col, rowno):
    try:
        v = float(s)
    except ValueError:
        raise ValidationError(f"row {rowno}: column {col!r} expects a number, got {s!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"row {rowno}: column {col!r} is not finite")
    return v


def _parse_bool(s, col, rowno):
    if s not in ("0", "1"):
        raise ValidationError(f"row {rowno}: column {col!r} expects 0/1, got {s!r}")
    return s == "1"


def load_cohort_csv(path):
    """Parse a cohort CSV. Row numbers in error messages count the header as row 1."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        has_planted = "planted_cluster" in reader.fieldnames

        grouped = {}
        order = []
        for rowno, row in enumerate(reader, start=2):
            pid = row["participant_id"]
            wave = WaveRecord(
                wave_index=_parse_int(row["wave_index"], "wave_index", rowno),
                adl=_parse_int(row["adl"], "adl", rowno),
                cog=_parse_int(row["cog"], "cog", rowno),
                ohs=_parse_bool(row["ohs"], "ohs", rowno),
                onhs=_parse_bool(row["onhs"], "onhs", rowno),
                ohs_count=_parse_int(row["ohs_count"], "ohs_count", rowno),
                noohs_nights=_parse_int(row["noohs_nights"], "noohs_nights", rowno),
                onhs_count=_parse_int(row["onhs_count"], "onhs_count", rowno),
                noonhs_nights=_parse_int(row["noonhs_nights"], "noonhs_nights", rowno),
            )
            try:
                wave.validate()
            except ValidationError as exc:
                raise ValidationError(f"row {rowno}: {exc}") from None
            statics = StaticFeatures(
                age_at_entry=_parse_float(row["age_at_entry"], "age_at_entry", rowno),
                gender=row["gender"],
                smoke=row["smoke"],
                drink=row["drink"],
                married=row["married"],
                region=row["region"],
                race=row["race"],
                poverty_category=_parse_int(row["poverty_category"], "poverty_category", rowno),
                poverty_threshold=_parse_float(row["poverty_threshold"], "poverty_threshold", rowno),
                education_years=_parse_float(row["education_years"], "education_years", rowno),
                wealth=_parse_float(row["wealth"], "wealth", rowno),
                income=_parse_float(row["income"], "income", rowno),
            )
            try:
                statics.validate()
            except ValidationError as exc:
                raise ValidationError(f"row {rowno}: {exc}") from None
            planted = None
            if has_planted and row["planted_cluster"] != "":
                planted = _parse_int(row["planted_cluster"], "planted_cluster", rowno)

            if pid not in grouped:
                grouped[pid] = {"statics": statics, "planted": planted, "waves": []}
                order.append(pid)
            else:
                g = grouped[pid]
                if g["statics"] != statics or g["planted"] != planted:
                    raise ValidationError(
                        f"row {rowno}: static features of participant {pid} differ from earlier rows")
            grouped[pid]["waves"].append((wave, rowno))

    trajectories = []
    for pid in order:
        g = grouped[pid]
        waves = sorted(g["waves"], key=lambda wr: wr[0].wave_index)
        idx = [w.wave_index for w, _ in waves]
        for (a, _), (b, rowno) in zip(waves, waves[1:]):
            if b.wave_index != a.wave_index + 1:
                raise ValidationError(
                    f"row {rowno}: participant {pid} has non-contiguous waves {idx}")
        traj = Trajectory(pid, tuple(w for w, _ in waves), g["statics"], g["planted"])
        if traj.n_waves < 2:
            raise ValidationError(f"participant {pid}: need at least 2 waves, found {traj.n_waves}")
        trajectories.append(traj)
    if not trajectories:
        raise ValidationError(f"{path}: no data rows")
    return Cohort(tuple(trajectories))


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Subpopulation:
    """Dynamics and covariate shifts of one planted subpopulation.

    Score at wave ``w`` (1-based) is ``start + drift * (w - 1) + noise``, where
    ``start`` is drawn once per participant around ``*_start_mean``.
    """
    adl_start_mean: float
    adl_drift: float
    cog_start_mean: float
    cog_drift: float
    noise_sd: float = 1.0
    # COG measurement noise; None means the same as ``noise_sd``
    cog_noise_sd: float | None = None
    adl_start_sd: float = 1.0
    cog_start_sd: float = 1.5
    age_shift: float = 0.0
    education_shift: float = 0.0
    ohs_offset: float = 0.0
    onhs_offset: float = 0.0
    event_offset: float = 0.0


_TIGHT = dict(adl_start_sd=0.5, cog_start_sd=0.7, noise_sd=0.7, cog_noise_sd=0.7)

DEFAULT_SUBPOPULATIONS = (
    # steady, low disability
    Subpopulation(adl_start_mean=0.0, adl_drift=0.05, cog_start_mean=25.5, cog_drift=-0.1,
                  age_shift=-1.5, education_shift=0.8, **_TIGHT),
    # high and climbing physical disability
    Subpopulation(adl_start_mean=7.0, adl_drift=1.3, cog_start_mean=23.5, cog_drift=-0.2,
                  age_shift=1.5, education_shift=-0.5, ohs_offset=0.2, **_TIGHT),
    # cognitive decline that drags physical function down with it
    Subpopulation(adl_start_mean=0.3, adl_drift=0.0, cog_start_mean=20.5, cog_drift=-1.6,
                  age_shift=3.0, education_shift=-1.5, onhs_offset=0.4, **_TIGHT),
)


@dataclass(frozen=True)
class UtilizationLink:
    """Logistic links from (adl, cog) to the per-wave utilization indicators."""
    # calibrated so the default cohort lands near 26.7% OHS and 3.0% ONHS
    ohs_intercept: float = -1.22
    ohs_adl: float = 0.10
    ohs_cog: float = 0.15
    onhs_intercept: float = -5.45
    onhs_adl: float = 0.14
    onhs_cog: float = 0.20
    ohs_extra_stays: float = 0.5
    ohs_nights_per_stay: float = 3.4
    onhs_extra_stays: float = 0.3
    onhs_nights_per_stay: float = 45.0

    def ohs_prob(self, adl, cog, offset=0.0):
        # cog enters centred on the cohort mean so the intercept stays interpretable
        return sigmoid(self.ohs_intercept + self.ohs_adl * (adl - 3.5)
                       - self.ohs_cog * (cog - 22.0) + offset)

    def onhs_prob(self, adl, cog, offset=0.0):
        return sigmoid(self.onhs_intercept + self.onhs_adl * (adl - 3.5)
                       - self.onhs_cog * (cog - 22.0) + offset)


RISK_FACTORS = ("age", "smoke", "drink", "alone", "education", "wealth",
                "female", "minority", "south", "poverty", "income")


@dataclass(frozen=True)
class AcuteEvents:
    """ADL setbacks (falls, hospital stays...) with a logistic per-wave hazard.

    A setback adds ``size`` to that wave's ADL; a fraction ``persistence`` of
    the accumulated setback carries over to each later wave. With
    ``repeatable`` false a participant has at most one setback.

    The logit rises with low cognition in the previous wave and may also be
    made linear in the factors of ``RISK_FACTORS`` (current age, smoking,
    heavy drinking, living without a spouse, schooling, wealth, gender, race,
    region, poverty and income). By default only cognition drives it, so a
    setback is foreshadowed by the COG history rather than by the ADL one.
    """
    size: float = 4.0
    persistence: float = 1.0
    repeatable: bool = True
    wave_years: float = 2.0
    base_logit: float = -4.0
    age: float = 0.0
    smoke: float = 0.0
    drink: float = 0.0
    alone: float = 0.0
    education: float = 0.0
    wealth: float = 0.0
    female: float = 0.0
    minority: float = 0.0
    south: float = 0.0
    poverty: float = 0.0
    income: float = 0.0
    cog: float = 0.5

    def hazard(self, risk, prev_cog, offset=0.0):
        """``risk`` maps factor name to a per-participant array (z-scores or 0/1 flags)."""
        logit = self.base_logit + self.cog * (22.0 - prev_cog) + offset
        for name in RISK_FACTORS:
            logit = logit + getattr(self, name) * risk[name]
        return sigmoid(logit)


@dataclass(frozen=True)
class CognitiveCoupling:
    """Cognitive impairment accelerating physical decline.

    Each wave a participant's expected COG sits below ``threshold`` adds
    ``strength`` per point of shortfall to all later ADL scores.
    """
    threshold: float = 20.0
    strength: float = 0.35


@dataclass(frozen=True)
class AgeAcceleration:
    """ADL decline that speeds up once current age passes ``onset_age``.

    Adds ``rate * (years past onset / wave_years)**2`` to the ADL trend. The
    onset wave differs by entry age, so the static age tells the model when
    the curve will bend before the history shows it.
    """
    onset_age: float = 80.0
    rate: float = 0.4
    wave_years: float = 2.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_participants: int = 1699
    n_waves: int = 8
    subpopulations: tuple = DEFAULT_SUBPOPULATIONS
    mixing_weights: tuple = (0.55, 0.25, 0.20)
    link: UtilizationLink = field(default_factory=UtilizationLink)
    events: tuple = (AcuteEvents(),)
    coupling: CognitiveCoupling | None = CognitiveCoupling()
    aging: AgeAcceleration | None = AgeAcceleration()
    # pooled-wave means the scores are shifted to hit (None leaves them alone)
    adl_mean_target: float | None = 3.5
    cog_mean_target: float | None = 22.06
    seed: int = 1

    @property
    def n_subpopulations(self):
        return len(self.subpopulations)

    def validate(self):
        if self.n_participants < 1:
            raise SpecError("n_participants must be >= 1")
        if self.n_waves < 2:
            raise SpecError("n_waves must be >= 2")
        if len(self.subpopulations) < 1:
            raise SpecError("need at least one subpopulation")
        if len(self.mixing_weights) != len(self.subpopulations):
            raise SpecError("mixing_weights must have one entry per subpopulation")
        w = np.asarray(self.mixing_weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SpecError(f"mixing weights must lie on the simplex, got {tuple(w)}")
        waves = np.arange(self.n_waves)
        for k, sp in enumerate(self.subpopulations):
            if sp.noise_sd < 0 or sp.adl_start_sd < 0 or sp.cog_start_sd < 0:
                raise SpecError(f"subpopulation {k}: standard deviations must be non-negative")
            for start, drift, name in ((sp.adl_start_mean, sp.adl_drift, "adl"),
                                       (sp.cog_start_mean, sp.cog_drift, "cog")):
                means = start + drift * waves
                outside = np.mean((means < SCORE_MIN) | (means > SCORE_MAX))
                if outside > 0.5:
                    raise SpecError(
                        f"subpopulation {k}: {name} mean leaves [0, 30] for {outside:.0%} of waves")
        for name in ("adl_mean_target", "cog_mean_target"):
            target = getattr(self, name)
            if target is not None and not SCORE_MIN < target < SCORE_MAX:
                raise SpecError(f"{name} must lie strictly inside (0, 30), got {target}")
        for ev in self.events:
            if ev.size < 0 or not 0.0 <= ev.persistence <= 1.0:
                raise SpecError("event size must be >= 0 and persistence in [0, 1]")


# Table 1 marginals of the original cohort
_CATEGORY_PROBS = {
    "gender": (0.679, 0.321),
    "smoke": (0.534, 0.398, 0.068),
    "drink": (0.796, 0.132, 0.072),
    "married": (0.658, 0.233, 0.109),
    "region": (0.162, 0.290, 0.365, 0.182, 0.001),
    "race": (0.824, 0.102, 0.058, 0.016),
}
_POVERTY_PROBS = (0.147, 0.270, 0.207, 0.210, 0.166)


def _lognormal(rng, mean, sd, size):
    s2 = math.log(1.0 + (sd / mean) ** 2)
    return rng.lognormal(math.log(mean) - s2 / 2.0, math.sqrt(s2), size=size)


def _shift_to_mean(latent, target):
    """Add the constant that makes the clipped pooled mean equal ``target``."""
    def gap(delta):
        return np.clip(latent + delta, SCORE_MIN, SCORE_MAX).mean() - target
    lo = SCORE_MIN - latent.max() - 1.0
    hi = SCORE_MAX - latent.min() + 1.0
    return latent + brentq(gap, lo, hi, xtol=1e-10)


def generate_synthetic_cohort(spec=None):
    """Draw a cohort with planted subpopulations. Deterministic given ``spec.seed``."""
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = make_rng(spec.seed)
    n, T, K = spec.n_participants, spec.n_waves, spec.n_subpopulations

    labels = rng.choice(K, size=n, p=np.asarray(spec.mixing_weights) / np.sum(spec.mixing_weights))
    sub = spec.subpopulations

    def per_label(attr):
        return np.array([getattr(sub[k], attr) for k in labels])

    # statics
    age = rng.normal(70.07, 4.47, size=n) + per_label("age_shift")
    edu = np.clip(rng.normal(12.31, 3.06, size=n) + per_label("education_shift"), 0.0, 20.0)
    cats = {}
    for name, probs in _CATEGORY_PROBS.items():
        p = np.asarray(probs) / np.sum(probs)
        cats[name] = rng.choice(len(p), size=n, p=p)
    poverty_cat = rng.choice(5, size=n, p=np.asarray(_POVERTY_PROBS) / np.sum(_POVERTY_PROBS)) + 1
    poverty_thr = _lognormal(rng, 333.0, 394.64, n)
    wealth = _lognormal(rng, 367e3, 711e3, n)
    income = _lognormal(rng, 41e3, 49e3, n)

    # degradation scores
    steps = np.arange(T)
    adl_start = per_label("adl_start_mean") + per_label("adl_start_sd") * rng.standard_normal(n)
    cog_start = per_label("cog_start_mean") + per_label("cog_start_sd") * rng.standard_normal(n)
    noise_sd = per_label("noise_sd")[:, None]
    cog_noise_sd = np.array([sub[k].noise_sd if sub[k].cog_noise_sd is None else sub[k].cog_noise_sd
                             for k in labels])[:, None]
    adl_trend = adl_start[:, None] + per_label("adl_drift")[:, None] * steps
    cog_trend = cog_start[:, None] + per_label("cog_drift")[:, None] * steps
    if spec.coupling is not None:
        shortfall = spec.coupling.strength * np.maximum(spec.coupling.threshold - cog_trend, 0.0)
        adl_trend[:, 1:] += np.cumsum(shortfall[:, :-1], axis=1)
    if spec.aging is not None:
        ag = spec.aging
        past = np.maximum(age[:, None] + ag.wave_years * steps - ag.onset_age, 0.0) / ag.wave_years
        adl_trend += ag.rate * past ** 2
    adl_latent = adl_trend + noise_sd * rng.standard_normal((n, T))
    cog_latent = cog_trend + cog_noise_sd * rng.standard_normal((n, T))
    if spec.events:
        log_wealth = np.log(wealth)
        risk = {
            "smoke": (cats["smoke"] == CATEGORIES["smoke"].index("always")).astype(float),
            "drink": (cats["drink"] == CATEGORIES["drink"].index("heavy")).astype(float),
            "alone": (cats["married"] != CATEGORIES["married"].index("with_spouse")).astype(float),
            # protective factors enter with a flipped sign
            "education": -(edu - 12.31) / 3.06,
            "wealth": -(log_wealth - log_wealth.mean()) / log_wealth.std(),
            "female": (cats["gender"] == CATEGORIES["gender"].index("female")).astype(float),
            "minority": (cats["race"] != CATEGORIES["race"].index("white")).astype(float),
            "south": (cats["region"] == CATEGORIES["region"].index("south")).astype(float),
            "poverty": (poverty_cat - 3.0) / 1.3,
            "income": -(np.log(income) - np.log(income).mean()) / np.log(income).std(),
        }
        offset = per_label("event_offset")
    for ev in spec.events:
        jumps = np.zeros(n)
        at_risk = np.ones(n, dtype=bool)
        for t in range(1, T):
            # risk climbs as the participant ages through follow-up
            risk["age"] = (age + ev.wave_years * t - 70.07) / 4.47
            p = ev.hazard(risk, cog_latent[:, t - 1], offset)
            hit = (rng.random(n) < p) & at_risk
            if not ev.repeatable:
                at_risk &= ~hit
            jumps = ev.persistence * jumps + ev.size * hit
            adl_latent[:, t] += jumps
    if spec.adl_mean_target is not None:
        adl_latent = _shift_to_mean(adl_latent, spec.adl_mean_target)
    if spec.cog_mean_target is not None:
        cog_latent = _shift_to_mean(cog_latent, spec.cog_mean_target)
    adl = np.clip(np.rint(adl_latent), SCORE_MIN, SCORE_MAX).astype(int)
    cog = np.clip(np.rint(cog_latent), SCORE_MIN, SCORE_MAX).astype(int)

    # utilization
    link = spec.link
    p_ohs = link.ohs_prob(adl, cog, per_label("ohs_offset")[:, None])
    p_onhs = link.onhs_prob(adl, cog, per_label("onhs_offset")[:, None])
    ohs = rng.random((n, T)) < p_ohs
    onhs = rng.random((n, T)) < p_onhs
    ohs_count = np.where(ohs, 1 + rng.poisson(link.ohs_extra_stays, (n, T)), 0)
    onhs_count = np.where(onhs, 1 + rng.poisson(link.onhs_extra_stays, (n, T)), 0)
    # each stay lasts at least one night
    ohs_nights = np.where(ohs, ohs_count + rng.poisson(link.ohs_nights_per_stay * np.maximum(ohs_count, 1)), 0)
    onhs_nights = np.where(onhs, onhs_count + rng.poisson(link.onhs_nights_per_stay * np.maximum(onhs_count, 1)), 0)

    width = len(str(n))
    trajectories = []
    for i in range(n):
        statics = StaticFeatures(
            age_at_entry=round(float(age[i]), 1),
            gender=CATEGORIES["gender"][cats["gender"][i]],
            smoke=CATEGORIES["smoke"][cats["smoke"][i]],
            drink=CATEGORIES["drink"][cats["drink"][i]],
            married=CATEGORIES["married"][cats["married"][i]],
            region=CATEGORIES["region"][cats["region"][i]],
            race=CATEGORIES["race"][cats["race"][i]],
            poverty_category=int(poverty_cat[i]),
            poverty_threshold=round(float(poverty_thr[i]), 2),
            education_years=round(float(edu[i]), 1),
            wealth=round(float(wealth[i]), 0),
            income=round(float(income[i]), 0),
        )
        waves = tuple(
            WaveRecord(
                wave_index=t + 1,
                adl=int(adl[i, t]),
                cog=int(cog[i, t]),
                ohs=bool(ohs[i, t]),
                onhs=bool(onhs[i, t]),
                ohs_count=int(ohs_count[i, t]),
                noohs_nights=int(ohs_nights[i, t]),
                onhs_count=int(onhs_count[i, t]),
                noonhs_nights=int(onhs_nights[i, t]),
            )
            for t in range(T)
        )
        trajectories.append(Trajectory(f"P{i + 1:0{width}d}", waves, statics, int(labels[i])))
    return Cohort(tuple(trajectories))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass
class NormalizationStats:
    """Per-feature mean and standard deviation (population, ddof=0)."""
    mean: dict
    sd: dict
    constant: tuple = ()

    def dynamic_mean(self):
        return np.array([self.mean[f] for f in DYNAMIC_FEATURES])

    def dynamic_sd(self):
        return np.array([self.sd[f] for f in DYNAMIC_FEATURES])

    def denormalize_dynamic(self, values, features=DYNAMIC_FEATURES):
        """Map z-scored (..., len(features)) values back to raw score units."""
        mu = np.array([self.mean[f] for f in features])
        sd = np.array([self.sd[f] for f in features])
        return np.asarray(values) * sd + mu

    def normalize_dynamic(self, values, features=DYNAMIC_FEATURES):
        mu = np.array([self.mean[f] for f in features])
        sd = np.array([self.sd[f] for f in features])
        return (np.asarray(values, dtype=np.float64) - mu) / sd

    def to_json(self):
        doc = {}
        for name in self.mean:
            doc[name] = {"mean": self.mean[name], "sd": self.sd[name]}
            if name in self.constant:
                doc[name]["constant"] = True
        return json.dumps(doc, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        mean = {k: float(v["mean"]) for k, v in doc.items()}
        sd = {k: float(v["sd"]) for k, v in doc.items()}
        constant = tuple(k for k, v in doc.items() if v.get("constant"))
        return cls(mean, sd, constant)


@dataclass
class CohortTensors:
    """Dense z-scored view of a cohort.

    ``dynamic`` has shape (N, T, 2) with columns (adl, cog); ``statics`` has
    shape (N, m) in :func:`static_feature_names` order.
    """
    ids: list
    dynamic: np.ndarray
    statics: np.ndarray
    stats: NormalizationStats
    planted: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def static_dim(self):
        return self.statics.shape[1]

    def raw_dynamic(self):
        return self.stats.denormalize_dynamic(self.dynamic)

    def windowed(self):
        """(inputs (N, T-1, 2), statics (N, m), targets (N, 2)), all normalized."""
        if self.dynamic.shape[1] < 2:
            raise InvalidInputError("windowing needs at least 2 waves")
        return self.dynamic[:, :-1, :], self.statics, self.dynamic[:, -1, :]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return CohortTensors(
            [self.ids[i] for i in indices],
            self.dynamic[indices],
            self.statics[indices],
            self.stats,
            None if self.planted is None else self.planted[indices],
        )


def _raw_arrays(cohort):
    T = cohort.n_waves()
    dyn = np.stack([t.scores() for t in cohort.trajectories]).reshape(len(cohort), T, 2)
    stat = np.stack([t.statics.encode() for t in cohort.trajectories])
    return dyn, stat


def compute_stats(cohort):
    if len(cohort) == 0:
        raise InvalidInputError("cannot compute normalization statistics of an empty cohort")
    dyn, stat = _raw_arrays(cohort)
    mean, sd, constant = {}, {}, []
    pooled = dyn.reshape(-1, 2)
    columns = list(zip(DYNAMIC_FEATURES, pooled.T)) + list(zip(static_feature_names(), stat.T))
    for name, col in columns:
        mu = float(np.mean(col))
        s = float(np.std(col))
        if not s > 1e-12:
            s = 1.0
            constant.append(name)
        mean[name] = mu
        sd[name] = s
    return NormalizationStats(mean, sd, tuple(constant))


def normalize(cohort, stats=None):
    """Z-score a cohort. Statistics are computed from it unless ``stats`` is given.

    Returns ``(tensors, stats)``; supplied stats are returned unchanged.
    """
    if len(cohort) == 0:
        raise InvalidInputError("cannot normalize an empty cohort")
    if stats is None:
        stats = compute_stats(cohort)
    dyn, stat = _raw_arrays(cohort)
    names = static_feature_names()
    s_mu = np.array([stats.mean[n] for n in names])
    s_sd = np.array([stats.sd[n] for n in names])
    tensors = CohortTensors(
        ids=cohort.ids,
        dynamic=stats.normalize_dynamic(dyn),
        statics=(stat - s_mu) / s_sd,
        stats=stats,
        planted=cohort.planted,
    )
    return tensors, stats


# ---------------------------------------------------------------------------
# Split and window
# ---------------------------------------------------------------------------

def split_indices(n, test_fraction, rng):
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if n < 2:
        raise InvalidInputError("need at least 2 trajectories to split")
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 1)
    perm = rng.permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(cohort, test_fraction, rng):
    """Random participant-level split; returns ``(train, test)`` in original order."""
    train_idx, test_idx = split_indices(len(cohort), test_fraction, rng)
    return cohort.subset(train_idx), cohort.subset(test_idx)


def window(trajectory, stats=None):
    """Split one trajectory into model inputs (waves 1..T-1) and its wave-T target.

    Returns ``(inputs, statics, target)`` with ``inputs`` of shape (T-1, 2).
    Values are raw scores, or z-scores when ``stats`` is given.
    """
    if trajectory.n_waves < 2:
        raise InvalidInputError(f"participant {trajectory.participant_id}: need T >= 2 to window")
    scores = trajectory.scores()
    statics = trajectory.statics.encode()
    if stats is not None:
        scores = stats.normalize_dynamic(scores)
        names = static_feature_names()
        statics = (statics - np.array([stats.mean[n] for n in names])) / np.array([stats.sd[n] for n in names])
    return scores[:-1], statics, scores[-1]
