import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from haptest.errors import FeatureError, IncompleteTupleError
from haptest.exploration import ActionSpec, CSV_COLUMNS, TrialRecord, run_trials
from haptest.features import (BAND_EDGES, CSSF_REFERENCE, MP_NAMES, SF36_NAMES, SF_NAMES, FeatureMatrix,
                              band_means, chi_square_rank, chi_square_statistic, cssf_features,
                              equal_frequency_bins, feature_matrix, mechanical_features, record_features,
                              schema_from_filename, statistical_features)


def synthetic_record(action, n=3000, f_perp=None, f_par=None, theta=(1.0, 900.0, 12.0), mu=0.4,
                     label=1, psi=0.5):
    t = 1e-3 * np.arange(1, n + 1)
    table = np.zeros((n, len(CSV_COLUMNS)))
    table[:, 0] = t
    table[:, 5] = 2.0 if f_perp is None else f_perp
    table[:, 6] = -0.5 if f_par is None else f_par
    table[:, 11] = mu
    table[:, 12:15] = theta
    return TrialRecord.from_table(table, label, action, 0, 0, psi_hat=psi if action == "tapping" else None)


def synthetic_tuple(label=1, **kw):
    return {a: synthetic_record(a, label=label, **kw) for a in ("tapping", "indentation", "sliding")}


# ---------------------------------------------------------------- schemas

def test_schema_sizes():
    assert len(MP_NAMES) == 4
    assert len(SF36_NAMES) == 36
    assert len(SF_NAMES) == 35
    assert "tap_max_f_par" not in SF_NAMES
    assert set(CSSF_REFERENCE) <= set(SF_NAMES)


def test_constant_estimates_give_those_features():
    v = mechanical_features(synthetic_tuple())
    assert v.schema == "MP" and v.names == MP_NAMES
    assert np.allclose(v.values, [0.5, 900.0, 12.0, 0.4])


def test_constant_force_statistics():
    parts = record_features(synthetic_record("indentation", f_perp=3.0))
    assert parts["indent_mean_f_perp"] == pytest.approx(3.0)
    assert parts["indent_max_f_perp"] == pytest.approx(3.0)
    assert parts["indent_std_f_perp"] == pytest.approx(0.0, abs=1e-12)
    assert parts["indent_mean_f_abs"] == pytest.approx(np.hypot(3.0, 0.5))


def test_window_longer_than_trial_is_an_error():
    with pytest.raises(FeatureError):
        record_features(synthetic_record("indentation", n=1000), window=2.0)


def test_incomplete_tuple():
    parts = synthetic_tuple()
    del parts["sliding"]
    with pytest.raises(IncompleteTupleError):
        mechanical_features(parts)


def test_non_finite_feature_rejected():
    parts = synthetic_tuple(psi=float("nan"))
    with pytest.raises(FeatureError):
        mechanical_features(parts)


def test_statistical_vector_order_and_variant():
    v = statistical_features(synthetic_tuple())
    assert v.names == SF_NAMES and len(v.values) == 35
    v36 = statistical_features(synthetic_tuple(), schema="SF36")
    assert len(v36.values) == 36


# ---------------------------------------------------------------- spectrum

def test_fifty_hertz_sinusoid_lands_in_its_band():
    t = np.arange(4096) / 1000.0
    bands = band_means(np.sin(2 * np.pi * 50.0 * t))
    assert np.argmax(bands) == 1
    assert bands[1] > 20 * max(bands[0], bands[2], bands[3])


def test_band_edges_partition_spectrum():
    assert BAND_EDGES[0] == 0.0 and BAND_EDGES[-1] == 500.0
    assert all(a < b for a, b in zip(BAND_EDGES, BAND_EDGES[1:]))
    freq = np.fft.rfftfreq(2048, d=1e-3)
    counts = np.zeros(freq.size, dtype=int)
    for i in range(4):
        hi = freq <= BAND_EDGES[i + 1] if i == 3 else freq < BAND_EDGES[i + 1]
        counts += (freq >= BAND_EDGES[i]) & hi
    assert np.all(counts == 1)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_band_means_non_negative(seed):
    x = np.random.default_rng(seed).normal(size=1500)
    assert np.all(band_means(x) >= 0)


def test_short_series_rejected():
    with pytest.raises(FeatureError):
        band_means(np.zeros(100))


# ---------------------------------------------------------------- tap peak

def test_tap_peak_dominates_mean(catalog):
    rec = run_trials([catalog[0], catalog[12]], ActionSpec.tapping(), seeds=[1, 2])
    for r in rec:
        parts = record_features(r)
        assert parts["tap_peak"] >= parts["tap_mean_f_perp"]


# ---------------------------------------------------------------- chi square

def matrix(columns, labels, names=None):
    X = np.column_stack(columns).astype(float)
    names = names or tuple(f"c{i}" for i in range(X.shape[1]))
    return FeatureMatrix("SF", tuple(names), X, np.asarray(labels))


def test_hand_computed_contingency():
    # bins 0/1 against classes A/B: observed [[3, 1], [1, 3]], expected 2 everywhere
    bins = np.array([0, 0, 0, 1, 0, 1, 1, 1])
    labels = np.array([1, 1, 1, 1, 2, 2, 2, 2])
    assert chi_square_statistic(bins, labels) == pytest.approx(2.0, abs=1e-12)
    obs = np.array([[3, 1], [1, 3]])
    assert chi_square_statistic(bins, labels) == pytest.approx(chi2_contingency(obs, correction=False)[0])


def test_constant_feature_ranks_last_and_label_first():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(1, 5), 10)
    m = matrix([rng.normal(size=40), np.full(40, 3.0), y.astype(float)], y, ("noise", "const", "label"))
    ranking = chi_square_rank(m)
    assert ranking[0][0] == "label"
    assert ranking[-1] == ("const", 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ranking_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(1, 4), 12)
    cols = [rng.normal(size=36) + 0.3 * y * j for j in range(4)]
    m = matrix(cols, y)
    warped = matrix([np.exp(cols[0]), 5 * cols[1] + 2, cols[2] ** 3, np.arctan(cols[3])], y)
    assert chi_square_rank(m) == chi_square_rank(warped)


def test_equal_frequency_bins_balanced():
    bins = equal_frequency_bins(np.arange(100.0), 10)
    assert np.all(np.bincount(bins) == 10)


def test_ranking_needs_two_classes():
    with pytest.raises(FeatureError):
        chi_square_rank(matrix([np.arange(6.0)], [1] * 6))


def test_cssf_selection():
    rng = np.random.default_rng(3)
    y = np.repeat(np.arange(1, 6), 8)
    X = rng.normal(size=(40, len(SF_NAMES)))
    X[:, 7] += y
    X[:, 20] += 2 * y
    m = FeatureMatrix("SF", SF_NAMES, X, y)
    c = cssf_features(m)
    assert c.schema == "CSSF" and c.X.shape == (40, 4)
    assert {SF_NAMES[7], SF_NAMES[20]} <= set(c.names)
    assert cssf_features(m).names == c.names
    fixed = cssf_features(m, fixed=True)
    assert fixed.names == CSSF_REFERENCE


# ---------------------------------------------------------------- matrices

def test_feature_matrix_and_csv_roundtrip(tmp_path):
    tuples = {(lab, tr): synthetic_tuple(label=lab, theta=(1.0, 100.0 * lab + tr, 5.0))
              for lab in (1, 2, 3) for tr in range(3)}
    m = feature_matrix(tuples, "MP")
    assert m.X.shape == (9, 4) and list(m.labels) == [1, 1, 1, 2, 2, 2, 3, 3, 3]
    path = m.save_csv(tmp_path / "features_MP.csv")
    back = FeatureMatrix.load_csv(path)
    assert back.schema == "MP" and back.names == m.names
    assert np.array_equal(back.X, m.X) and np.array_equal(back.labels, m.labels)
    assert feature_matrix(tuples, "SF").X.shape == (9, 35)
    assert schema_from_filename("features_SF36.csv") == "SF36"
    with pytest.raises(FeatureError):
        schema_from_filename("table.csv")


# ---------------------------------------------------------------- robustness

def test_stiffness_feature_robust_to_indentation_frequency(catalog):
    base = ActionSpec.indentation()
    fast = ActionSpec.indentation(frequency=2 * base.frequency)
    slow_rec, fast_rec = run_trials([catalog[0], catalog[0]], [base, fast], seeds=[21, 22])
    a, b = record_features(slow_rec), record_features(fast_rec)
    assert abs(b["stiffness"] - a["stiffness"]) / a["stiffness"] < 0.10
    assert a["stiffness"] == pytest.approx(953.19, rel=0.10)
    changed = [n for n in a if n.startswith("indent_") and abs(b[n] - a[n]) > 0.10 * abs(a[n])]
    assert changed, "interaction statistics should depend on the trajectory"
