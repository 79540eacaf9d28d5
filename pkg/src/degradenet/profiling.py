"""Descriptive statistics and healthcare-utilization occurrence ratios.

Utilization is pooled at the wave level: every (participant, wave) pair is
one observation, so a cohort of N participants over T waves contributes N*T
yes/no outcomes per field.
"""
import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import CATEGORIES, NUMERIC_STATICS, SCORE_MAX
from .errors import InvalidInputError

UTILIZATION_FIELDS = {
    # field: (stay count column, nights column)
    "ohs": ("ohs_count", "noohs_nights"),
    "onhs": ("onhs_count", "noonhs_nights"),
}
DEFAULT_BIN_WIDTH = 5


class EmptyGroupWarning(UserWarning):
    pass


@dataclass
class WaveTable:
    """Pooled per-wave observations; row r belongs to participant ``owner[r]``."""
    owner: np.ndarray
    adl: np.ndarray
    cog: np.ndarray
    columns: dict

    @classmethod
    def from_cohort(cls, cohort):
        if len(cohort.trajectories) == 0:
            raise InvalidInputError("cohort is empty")
        names = ("ohs", "onhs", "ohs_count", "noohs_nights", "onhs_count", "noonhs_nights")
        owner, adl, cog = [], [], []
        cols = {n: [] for n in names}
        for i, traj in enumerate(cohort.trajectories):
            for w in traj.waves:
                owner.append(i)
                adl.append(w.adl)
                cog.append(w.cog)
                for n in names:
                    cols[n].append(getattr(w, n))
        return cls(np.array(owner), np.array(adl), np.array(cog),
                   {n: np.array(v, dtype=float) for n, v in cols.items()})

    def __len__(self):
        return len(self.owner)


@dataclass
class UtilizationProfile:
    group: object
    field: str
    yes: int
    no: int
    mean_count: float
    mean_nights: float
    label: str = ""

    @property
    def ratio(self):
        return self.yes / (self.yes + self.no)


def _group_keys(table, group_by, width, assignments):
    if group_by == "adl_bin":
        keys = np.minimum(table.adl // width, SCORE_MAX // width)
        return keys, list(range(SCORE_MAX // width + 1))
    if group_by == "cog_bin":
        keys = np.minimum(table.cog // width, SCORE_MAX // width)
        return keys, list(range(SCORE_MAX // width + 1))
    if group_by == "cluster":
        if assignments is None:
            raise InvalidInputError("grouping by cluster needs assignments")
        assignments = np.asarray(assignments)
        if table.owner.max() >= len(assignments):
            raise InvalidInputError("assignments are not aligned with the cohort's participants")
        return assignments[table.owner], list(range(int(assignments.max()) + 1))
    raise InvalidInputError(f"unknown grouping {group_by!r}; use adl_bin, cog_bin or cluster")


def _bin_label(group_by, key, width):
    if group_by == "cluster":
        return f"cluster {key}"
    lo = key * width
    hi = min(lo + width - 1, SCORE_MAX)
    return f"{group_by[:3]} {lo}-{hi}"


def occurrence_ratio(data, group_by="adl_bin", field="ohs", width=DEFAULT_BIN_WIDTH, assignments=None):
    """Yes-ratio of a utilization field per group, ordered by group key.

    ``data`` is a Cohort or a WaveTable. Groups with no observations are left
    out and reported through an ``EmptyGroupWarning``.
    """
    if field not in UTILIZATION_FIELDS:
        raise InvalidInputError(f"unknown utilization field {field!r}")
    if width < 1:
        raise InvalidInputError("bin width must be positive")
    table = data if isinstance(data, WaveTable) else WaveTable.from_cohort(data)
    keys, candidates = _group_keys(table, group_by, width, assignments)
    flag = table.columns[field] > 0
    count_col, nights_col = UTILIZATION_FIELDS[field]
    out = []
    for key in candidates:
        m = keys == key
        n = int(m.sum())
        if n == 0:
            warnings.warn(f"{_bin_label(group_by, key, width)} has no observations; dropped",
                          EmptyGroupWarning, stacklevel=2)
            continue
        yes = int(flag[m].sum())
        out.append(UtilizationProfile(
            group=key, field=field, yes=yes, no=n - yes,
            mean_count=float(table.columns[count_col][m].mean()),
            mean_nights=float(table.columns[nights_col][m].mean()),
            label=_bin_label(group_by, key, width),
        ))
    return out


def counts_table(yes, no, field="ohs"):
    """A WaveTable holding just ``yes`` positive and ``no`` negative outcomes (one group)."""
    n = yes + no
    flag = np.zeros(n)
    flag[:yes] = 1.0
    zeros = np.zeros(n)
    other = "onhs" if field == "ohs" else "ohs"
    cols = {field: flag, other: zeros}
    for c, nights in UTILIZATION_FIELDS.values():
        cols[c] = zeros
        cols[nights] = zeros
    return WaveTable(np.arange(n), np.zeros(n, dtype=int), np.zeros(n, dtype=int), cols)


def profiles_to_csv_text(profiles):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "field", "ratio", "yes", "no", "mean_count", "mean_nights"])
    for p in profiles:
        w.writerow([p.label or p.group, p.field, repr(p.ratio), p.yes, p.no,
                    repr(p.mean_count), repr(p.mean_nights)])
    return buf.getvalue()


def is_monotone(profiles, increasing=True):
    r = np.array([p.ratio for p in profiles])
    d = np.diff(r)
    return bool(np.all(d >= 0) if increasing else np.all(d <= 0))


def max_ratio_gap(profiles):
    r = [p.ratio for p in profiles]
    return max(r) - min(r) if r else 0.0


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

@dataclass
class DescriptiveReport:
    numeric: dict = field(default_factory=dict)      # name -> {mean, sd, n}
    categorical: dict = field(default_factory=dict)  # name -> {level: {count, percent}}

    def to_json(self):
        return json.dumps({"numeric": self.numeric, "categorical": self.categorical}, indent=2)


def _summary(values):
    v = np.asarray(values, dtype=float)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "sd": sd, "n": int(v.size)}


def _levels(values, levels):
    n = len(values)
    return {lv: {"count": int(sum(x == lv for x in values)),
                 "percent": 100.0 * sum(x == lv for x in values) / n} for lv in levels}


def descriptive_stats(cohort):
    """Table-1-style summary: statics per participant, dynamics pooled over waves."""
    table = WaveTable.from_cohort(cohort)
    trajs = cohort.trajectories
    report = DescriptiveReport()
    for name in NUMERIC_STATICS:
        report.numeric[name] = _summary([getattr(t.statics, name) for t in trajs])
    report.numeric["adl"] = _summary(table.adl)
    report.numeric["cog"] = _summary(table.cog)
    for name in ("ohs_count", "noohs_nights", "onhs_count", "noonhs_nights"):
        report.numeric[name] = _summary(table.columns[name])
    for name, levels in CATEGORIES.items():
        report.categorical[name] = _levels([getattr(t.statics, name) for t in trajs], levels)
    for name in ("ohs", "onhs"):
        flags = ["yes" if v > 0 else "no" for v in table.columns[name]]
        report.categorical[name] = _levels(flags, ("yes", "no"))
    return report
