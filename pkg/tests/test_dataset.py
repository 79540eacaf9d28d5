import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from degradenet.dataset import (
    CSV_COLUMNS, Cohort, StaticFeatures, SyntheticSpec, Trajectory, WaveRecord, cohort_to_csv_text,
    compute_stats, generate_synthetic_cohort, load_cohort_csv, normalize, split, split_indices,
    static_feature_names, window, write_cohort_csv,
)
from degradenet.errors import InvalidInputError, SchemaError, SpecError, ValidationError
from degradenet.numerics import make_rng
from degradenet.profiling import is_monotone, occurrence_ratio

STATICS = StaticFeatures(71.5, "female", "never", "light_never", "with_spouse", "south", "white",
                         3, 250.0, 12.0, 150000.0, 32000.0)


def traj(pid, adl, cog=None, statics=STATICS, planted=None):
    cog = cog if cog is not None else [25] * len(adl)
    waves = tuple(WaveRecord(t + 1, a, c) for t, (a, c) in enumerate(zip(adl, cog)))
    return Trajectory(pid, waves, statics, planted)


@pytest.fixture(scope="module")
def default_cohort():
    return generate_synthetic_cohort(SyntheticSpec(seed=1))


def test_default_cohort_shape(default_cohort):
    assert len(default_cohort) == 1699
    assert all(t.n_waves == 8 for t in default_cohort.trajectories)
    assert set(default_cohort.planted) == {0, 1, 2}
    for t in default_cohort.trajectories[:50]:
        t.validate()


def test_generator_is_deterministic():
    a = generate_synthetic_cohort(SyntheticSpec(n_participants=300, seed=5))
    b = generate_synthetic_cohort(SyntheticSpec(n_participants=300, seed=5))
    assert cohort_to_csv_text(a) == cohort_to_csv_text(b)
    c = generate_synthetic_cohort(SyntheticSpec(n_participants=300, seed=6))
    assert cohort_to_csv_text(a) != cohort_to_csv_text(c)


def test_noise_free_flat_dynamics_give_constant_trajectories():
    base = SyntheticSpec()
    subs = tuple(dataclasses.replace(s, adl_drift=0.0, cog_drift=0.0, noise_sd=0.0, cog_noise_sd=0.0)
                 for s in base.subpopulations)
    # the optional mechanisms (setbacks, coupling, ageing) are dynamics too
    spec = dataclasses.replace(base, n_participants=200, subpopulations=subs, events=(),
                               coupling=None, aging=None, seed=3)
    for t in generate_synthetic_cohort(spec).trajectories:
        s = t.scores()
        assert np.all(s == s[0])


def test_infeasible_drift_is_rejected():
    base = SyntheticSpec()
    runaway = dataclasses.replace(base.subpopulations[0], adl_drift=20.0)
    with pytest.raises(SpecError, match="leaves"):
        dataclasses.replace(base, subpopulations=(runaway,) + base.subpopulations[1:]).validate()


@pytest.mark.parametrize("weights", [(0.5, 0.5, 0.5), (1.2, -0.1, -0.1), (0.5, 0.5)])
def test_mixing_weights_must_be_simplex(weights):
    with pytest.raises(SpecError):
        dataclasses.replace(SyntheticSpec(), mixing_weights=weights).validate()


def test_mean_target_must_be_interior():
    with pytest.raises(SpecError):
        dataclasses.replace(SyntheticSpec(), adl_mean_target=0.0).validate()


def test_default_cohort_hits_table_means(default_cohort):
    scores = np.concatenate([t.scores() for t in default_cohort.trajectories])
    assert abs(scores[:, 0].mean() - 3.5) < 0.3
    assert abs(scores[:, 1].mean() - 22.06) < 0.3


def test_hospital_ratio_rises_with_adl(default_cohort):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert is_monotone(occurrence_ratio(default_cohort, "adl_bin", "ohs"), increasing=True)


# --- CSV -------------------------------------------------------------------

def test_csv_round_trip_is_byte_identical(tmp_path, small_cohort):
    p = tmp_path / "c.csv"
    write_cohort_csv(small_cohort, p)
    loaded = load_cohort_csv(p)
    assert loaded == small_cohort
    q = tmp_path / "d.csv"
    write_cohort_csv(loaded, q)
    assert p.read_bytes() == q.read_bytes()


def test_two_by_two_file(tmp_path):
    c = Cohort((traj("a", [1, 2]), traj("b", [3, 4])))
    p = tmp_path / "c.csv"
    write_cohort_csv(c, p)
    back = load_cohort_csv(p)
    assert len(back) == 2 and all(t.n_waves == 2 for t in back.trajectories)
    assert back.planted is None


def _write_rows(tmp_path, mutate):
    text = cohort_to_csv_text(Cohort((traj("a", [1, 2]), traj("b", [3, 4])))).splitlines()
    text = mutate(text)
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(text) + "\n")
    return p


def test_out_of_range_score_names_row(tmp_path):
    def bump(lines):
        cells = lines[3].split(",")
        cells[CSV_COLUMNS.index("adl")] = "31"
        lines[3] = ",".join(cells)
        return lines
    with pytest.raises(ValidationError, match="row 4"):
        load_cohort_csv(_write_rows(tmp_path, bump))


def test_wave_gap_is_rejected(tmp_path):
    def gap(lines):
        cells = lines[2].split(",")
        cells[CSV_COLUMNS.index("wave_index")] = "3"
        lines[2] = ",".join(cells)
        return lines
    with pytest.raises(ValidationError, match="contiguous"):
        load_cohort_csv(_write_rows(tmp_path, gap))


def test_missing_column_is_schema_error(tmp_path):
    def drop(lines):
        return [",".join(x.split(",")[:-1]) for x in lines]
    with pytest.raises(SchemaError, match="income"):
        load_cohort_csv(_write_rows(tmp_path, drop))


def test_inconsistent_statics_rejected(tmp_path):
    def change(lines):
        cells = lines[2].split(",")
        cells[CSV_COLUMNS.index("gender")] = "male"
        lines[2] = ",".join(cells)
        return lines
    with pytest.raises(ValidationError, match="differ"):
        load_cohort_csv(_write_rows(tmp_path, change))


# --- normalization -----------------------------------------------------------

def test_normalized_training_features_are_standard(small_cohort):
    data, stats = normalize(small_cohort)
    pooled = data.dynamic.reshape(-1, 2)
    assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-9)
    assert_allclose(pooled.var(axis=0), 1.0, atol=1e-9)
    names = static_feature_names()
    for j, name in enumerate(names):
        col = data.statics[:, j]
        assert abs(col.mean()) < 1e-9
        if name not in stats.constant:
            assert abs(col.var() - 1.0) < 1e-9


def test_two_point_toy():
    c = Cohort((traj("a", [2, 4]),))
    data, stats = normalize(c)
    assert_allclose(data.dynamic[0, :, 0], [-1.0, 1.0])
    assert stats.mean["adl"] == 3.0 and stats.sd["adl"] == 1.0
    # cog is constant: sd replaced by 1 and flagged
    assert stats.sd["cog"] == 1.0 and "cog" in stats.constant
    assert "cog" in stats.to_json() and '"constant": true' in stats.to_json()


def test_supplied_stats_are_reused_unchanged(small_cohort):
    train, test = split(small_cohort, 0.25, make_rng(0))
    _, stats = normalize(train)
    snapshot = stats.to_json()
    _, used = normalize(test, stats)
    assert used is stats and stats.to_json() == snapshot


def test_normalization_inverts(small_cohort):
    data, stats = normalize(small_cohort)
    raw = np.stack([t.scores() for t in small_cohort.trajectories])
    assert_allclose(data.raw_dynamic(), raw, atol=1e-9)
    assert type(stats).from_json(stats.to_json()) == stats


def test_normalize_empty():
    with pytest.raises(InvalidInputError):
        normalize(Cohort(()))
    with pytest.raises(InvalidInputError):
        compute_stats(Cohort(()))


# --- split and window ----------------------------------------------------------

def test_split_sizes_and_disjointness():
    c = Cohort(tuple(traj(f"p{i}", [i % 5, 1]) for i in range(10)))
    train, test = split(c, 0.2, make_rng(3))
    assert len(train) == 8 and len(test) == 2
    assert not set(train.ids) & set(test.ids)
    assert sorted(train.ids + test.ids) == sorted(c.ids)
    again = split(c, 0.2, make_rng(3))
    assert again[0].ids == train.ids


@given(st.integers(2, 500), st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_split_indices_partition(n, frac, seed):
    tr, te = split_indices(n, frac, make_rng(seed))
    assert len(tr) + len(te) == n
    assert len(np.intersect1d(tr, te)) == 0
    assert len(te) == min(max(int(round(frac * n)), 1), n - 1)


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_split_fraction_bounds(frac):
    with pytest.raises(InvalidInputError):
        split_indices(10, frac, make_rng(0))


def test_split_keeps_cluster_proportions(default_cohort):
    # hypergeometric sd of a group share in an 80% sample of 1699 is about
    # 0.6 points, so 10 points is a very loose bound
    labels = default_cohort.planted
    share = np.bincount(labels) / len(labels)
    for seed in range(20):
        tr, _ = split_indices(len(labels), 0.2, make_rng(seed))
        got = np.bincount(labels[tr], minlength=3) / len(tr)
        assert np.all(np.abs(got - share) <= 0.10)


def test_window_shapes_and_target():
    t = traj("a", [1, 2, 3, 4, 5, 6, 7, 8], [20, 21, 22, 23, 24, 25, 26, 27])
    inputs, statics, target = window(t)
    assert inputs.shape == (7, 2)
    assert_array_equal(target, [8, 27])
    assert not np.any(np.all(inputs == target, axis=1))
    inputs, _, target = window(traj("b", [3, 9]))
    assert inputs.shape == (1, 2) and target[0] == 9
    assert statics.shape == (len(static_feature_names()),)


def test_window_needs_two_waves():
    with pytest.raises(InvalidInputError):
        window(traj("a", [1]))


def test_windowed_tensors_match_window(small_cohort):
    data, stats = normalize(small_cohort)
    inputs, statics, targets = data.windowed()
    i0, s0, t0 = window(small_cohort.trajectories[0], stats)
    assert_allclose(inputs[0], i0, atol=1e-12)
    assert_allclose(statics[0], s0, atol=1e-12)
    assert_allclose(targets[0], t0, atol=1e-12)


def test_unequal_lengths_rejected():
    c = Cohort((traj("a", [1, 2]), traj("b", [1, 2, 3])))
    with pytest.raises(ValidationError):
        c.n_waves()
