import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from degradenet.dataset import (CATEGORIES, Cohort, StaticFeatures, SyntheticSpec, Trajectory,
                                WaveRecord, generate_synthetic_cohort)
from degradenet.errors import InvalidInputError
from degradenet.profiling import (EmptyGroupWarning, WaveTable, counts_table, descriptive_stats,
                                  is_monotone, max_ratio_gap, occurrence_ratio, profiles_to_csv_text)


def _statics(**kw):
    base = dict(age_at_entry=70.0, gender="female", smoke="no", drink="no", married="yes",
                region="south", race="white", poverty_category=3, poverty_threshold=1.5e4,
                education_years=12.0, wealth=1e5, income=3e4)
    base.update(kw)
    return StaticFeatures(**base)


def _traj(pid, scores, ohs=(), **statics):
    waves = tuple(WaveRecord(i + 1, a, c, ohs=(i in ohs), ohs_count=int(i in ohs))
                  for i, (a, c) in enumerate(scores))
    return Trajectory(pid, waves, _statics(**statics))


@pytest.fixture(scope="module")
def default_cohort():
    return generate_synthetic_cohort(SyntheticSpec(seed=0))


@pytest.mark.parametrize("yes,no,expected,field", [(3628, 9964, 0.267, "ohs"), (414, 13178, 0.030, "onhs")])
def test_reference_counts(yes, no, expected, field):
    (p,) = occurrence_ratio(counts_table(yes, no, field), group_by="adl_bin", field=field,
                            width=31)
    assert round(p.ratio, 3) == expected
    assert (p.yes, p.no) == (yes, no)


def test_all_yes_is_one():
    (p,) = occurrence_ratio(counts_table(10, 0), width=31)
    assert p.ratio == 1.0


def test_empty_bins_warn_and_are_dropped():
    cohort = Cohort((_traj("a", [(0, 25), (1, 26)], ohs=(0,)),))
    with pytest.warns(EmptyGroupWarning):
        out = occurrence_ratio(cohort, "adl_bin", "ohs")
    assert [p.group for p in out] == [0]
    assert out[0].ratio == 0.5


def test_totals_cover_every_wave(small_cohort):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyGroupWarning)
        for by in ("adl_bin", "cog_bin"):
            for field in ("ohs", "onhs"):
                out = occurrence_ratio(small_cohort, by, field)
                assert sum(p.yes + p.no for p in out) == 120 * 8


def test_cluster_grouping_needs_aligned_assignments(small_cohort):
    with pytest.raises(InvalidInputError):
        occurrence_ratio(small_cohort, "cluster")
    with pytest.raises(InvalidInputError):
        occurrence_ratio(small_cohort, "cluster", assignments=np.zeros(5, dtype=int))
    with pytest.raises(InvalidInputError):
        occurrence_ratio(small_cohort, "age")
    with pytest.raises(InvalidInputError):
        occurrence_ratio(small_cohort, field="er")


def test_ratios_rise_with_disability(default_cohort):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyGroupWarning)
        adl = occurrence_ratio(default_cohort, "adl_bin", "ohs")
        cog = occurrence_ratio(default_cohort, "cog_bin", "ohs")
    assert is_monotone(adl, increasing=True)
    # higher COG is better cognition, so use falls as it rises
    assert is_monotone(cog, increasing=False)


def test_planted_groups_differ(default_cohort):
    out = occurrence_ratio(default_cohort, "cluster", "ohs", assignments=default_cohort.planted)
    assert len(out) == 3
    assert max_ratio_gap(out) >= 0.05


def test_wave_table_layout(small_cohort):
    t = WaveTable.from_cohort(small_cohort)
    assert len(t) == 960
    assert np.array_equal(np.bincount(t.owner), np.full(120, 8))
    with pytest.raises(InvalidInputError):
        WaveTable.from_cohort(Cohort(()))


def test_csv_text():
    (p,) = occurrence_ratio(counts_table(1, 3), width=31)
    lines = profiles_to_csv_text([p]).splitlines()
    assert lines[0] == "group,field,ratio,yes,no,mean_count,mean_nights"
    assert lines[1].startswith("adl 0-30,ohs,0.25,1,3,")


def test_monotone_helpers():
    a, b = occurrence_ratio(counts_table(1, 3), width=31) + occurrence_ratio(counts_table(3, 1), width=31)
    assert is_monotone([a, b]) and not is_monotone([b, a])
    assert is_monotone([b, a], increasing=False)
    assert max_ratio_gap([a, b]) == 0.5 and max_ratio_gap([]) == 0.0


# --- descriptive statistics ------------------------------------------------------

def test_default_adl_mean(default_cohort):
    rep = descriptive_stats(default_cohort)
    assert abs(rep.numeric["adl"]["mean"] - 3.5) < 0.5
    assert rep.numeric["adl"]["n"] == 1699 * 8


def test_single_participant_sd_zero():
    rep = descriptive_stats(Cohort((_traj("a", [(2, 20), (3, 21)]),)))
    assert rep.numeric["age_at_entry"] == {"mean": 70.0, "sd": 0.0, "n": 1}
    assert_allclose(rep.numeric["adl"]["sd"], np.std([2, 3], ddof=1))


def test_even_split_percentages():
    cohort = Cohort((_traj("a", [(0, 20), (0, 20)], gender="male"),
                     _traj("b", [(0, 20), (0, 20)], gender="female")))
    rep = descriptive_stats(cohort)
    assert rep.categorical["gender"]["male"] == {"count": 1, "percent": 50.0}
    assert rep.categorical["gender"]["female"]["percent"] == 50.0


def test_category_percentages_sum(default_cohort):
    rep = descriptive_stats(default_cohort)
    for name in list(CATEGORIES) + ["ohs", "onhs"]:
        total = sum(v["percent"] for v in rep.categorical[name].values())
        assert abs(total - 100.0) <= 0.2
    assert '"numeric"' in rep.to_json()
