"""Feature vectors built from exploration records.

Three schemas are supported:

``MP``
    the four identified mechanical properties
    (restitution, stiffness, damping, friction);
``SF`` / ``SF36``
    statistics of the interaction forces.  ``SF36`` is the full enumerable set
    and ``SF`` drops the tangential-force maximum of the tap;
``CSSF``
    the four ``SF`` columns ranked highest by a chi-square test.

Each record is first reduced to a small dictionary of per-action values with
:func:`record_features`.  Tuple-level vectors are assembled from those
dictionaries, so a campaign never has to keep its raw series in memory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import FeatureError, IncompleteTupleError, NoImpactError
from .estimation import detect_impact
from .exploration import ACTIONS, TrialRecord

SCHEMAS = ("MP", "SF", "SF36", "CSSF")
MP_NAMES = ("restitution", "stiffness", "viscosity", "friction")
PREFIX = {"tapping": "tap", "indentation": "indent", "sliding": "slide"}
STATS = ("mean", "max", "std")
SIGNALS = ("f_perp", "f_par", "f_abs")
BAND_EDGES = (0.0, 36.0, 66.0, 101.0, 500.0)
BAND_LABELS = ("0_35", "36_65", "66_100", "101_500")
MIN_FFT_SAMPLES = 1024
DROPPED_SF = "tap_max_f_par"
CSSF_REFERENCE = ("tap_peak", "slide_mean_f_par", "indent_std_f_abs", "indent_mean_f_perp")


def _sf36_names():
    names = [f"{PREFIX[a]}_{s}_{sig}" for a in ACTIONS for sig in SIGNALS for s in STATS]
    names.append("tap_peak")
    names += [f"slide_band_{b}_{sig}" for sig in ("f_perp", "f_par") for b in BAND_LABELS]
    return tuple(names)


SF36_NAMES = _sf36_names()
SF_NAMES = tuple(n for n in SF36_NAMES if n != DROPPED_SF)


@dataclass(frozen=True)
class FeatureVector:
    schema: str
    names: tuple
    values: np.ndarray
    label: int

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise FeatureError("names and values differ in length")
        if not np.all(np.isfinite(self.values)):
            raise FeatureError(f"non-finite {self.schema} feature for label {self.label}")

    def as_dict(self):
        return dict(zip(self.names, map(float, self.values)))


@dataclass(frozen=True)
class FeatureMatrix:
    schema: str
    names: tuple
    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.names):
            raise FeatureError("matrix must be rows x len(names)")
        if len(self.labels) != X.shape[0]:
            raise FeatureError("one label per row required")

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector]):
        if not vectors:
            raise FeatureError("no feature vectors")
        first = vectors[0]
        if any(v.names != first.names for v in vectors):
            raise FeatureError("vectors do not share a schema")
        return cls(first.schema, first.names, np.array([v.values for v in vectors]),
                   np.array([v.label for v in vectors]))

    def __len__(self):
        return self.X.shape[0]

    def select(self, names, schema=None):
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(schema or self.schema, tuple(names), self.X[:, idx], self.labels)

    def save_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.names) + ["label"])
            for row, lab in zip(self.X, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])
        return path

    @classmethod
    def load_csv(cls, path, schema=None):
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1] != "label":
            raise FeatureError(f"{path}: header must end with 'label'")
        names = tuple(rows[0][:-1])
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(names) + 1)
        if schema is None:
            schema = schema_from_filename(path)
        return cls(schema, names, data[:, :-1], data[:, -1].astype(int))


def schema_from_filename(path):
    stem = Path(path).stem.upper()
    for s in sorted(SCHEMAS, key=len, reverse=True):
        if stem.endswith(s) or f"_{s}_" in f"_{stem}_":
            return s
    raise FeatureError(f"cannot infer schema from file name {Path(path).name}")


# --------------------------------------------------------------------------
# Per-record reduction
# --------------------------------------------------------------------------

def band_means(x, fs=1000.0, edges=BAND_EDGES):
    """Mean Hann-windowed magnitude spectrum of ``x`` in adjacent bands.

    Band ``i`` holds the bins with ``edges[i] <= f < edges[i + 1]``; the last
    band also includes ``edges[-1]``.  Requires at least 1024 samples.
    """
    x = np.asarray(x, dtype=float)
    if x.size < MIN_FFT_SAMPLES:
        raise FeatureError(f"series of {x.size} samples is too short for the spectrum (< {MIN_FFT_SAMPLES})")
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size))) / x.size
    freq = np.fft.rfftfreq(x.size, d=1.0 / fs)
    out = []
    for i in range(len(edges) - 1):
        hi_ok = freq <= edges[i + 1] if i == len(edges) - 2 else freq < edges[i + 1]
        sel = (freq >= edges[i]) & hi_ok
        out.append(float(spec[sel].mean()) if np.any(sel) else 0.0)
    return np.array(out)


def _window_mean(t, y, window):
    t = np.asarray(t)
    if window > t[-1] - t[0] + 1e-12:
        raise FeatureError(f"averaging window {window} s exceeds the {t[-1] - t[0]:.3f} s record")
    sel = t >= t[-1] - window + 1e-12
    return np.mean(y[sel], axis=0)


def record_features(rec: TrialRecord, window=2.0):
    """Reduce one record to the values its action contributes to every schema."""
    p = PREFIX[rec.action]
    fp = rec.f_perp_meas
    fl = rec.f_par_true
    out = {}
    for sig, y in (("f_perp", fp), ("f_par", fl), ("f_abs", np.hypot(fp, fl))):
        out[f"{p}_mean_{sig}"] = float(np.mean(y))
        out[f"{p}_max_{sig}"] = float(np.max(y))
        out[f"{p}_std_{sig}"] = float(np.std(y))
    if rec.action == "tapping":
        out["restitution"] = float(rec.psi_hat) if rec.psi_hat is not None else float("nan")
        try:
            w = detect_impact(rec.t, fp, rec.xi_hat[:, 1])
            out["tap_peak"] = float(np.max(w.force_trace))
        except NoImpactError:
            out["tap_peak"] = float(np.max(fp))
    elif rec.action == "indentation":
        k, d = _window_mean(rec.t, rec.theta_hat[:, 1:3], window)
        out["stiffness"] = float(k)
        out["viscosity"] = float(d)
    else:
        out["friction"] = float(_window_mean(rec.t, rec.mu_hat, window))
        for sig, y in (("f_perp", fp), ("f_par", fl)):
            for b, v in zip(BAND_LABELS, band_means(y)):
                out[f"slide_band_{b}_{sig}"] = float(v)
    return out


def _parts(tuple_records: Mapping):
    missing = [a for a in ACTIONS if a not in tuple_records]
    if missing:
        raise IncompleteTupleError(f"tuple lacks action(s): {', '.join(missing)}")
    merged = {}
    label = None
    for a in ACTIONS:
        part = tuple_records[a]
        if isinstance(part, TrialRecord):
            label = part.label if label is None else label
            part = record_features(part)
        merged.update(part)
    return merged, label


def mechanical_features(tuple_records: Mapping, label=None) -> FeatureVector:
    """MP vector of one object trial tuple (records or reduced dictionaries)."""
    merged, lab = _parts(tuple_records)
    return FeatureVector("MP", MP_NAMES, np.array([merged[n] for n in MP_NAMES]),
                         int(lab if label is None else label))


def statistical_features(tuple_records: Mapping, label=None, schema="SF") -> FeatureVector:
    names = {"SF": SF_NAMES, "SF36": SF36_NAMES}[schema]
    merged, lab = _parts(tuple_records)
    return FeatureVector(schema, names, np.array([merged[n] for n in names]),
                         int(lab if label is None else label))


def feature_matrix(tuples: Mapping, schema="MP", ranking_matrix=None) -> FeatureMatrix:
    """Stack the tuple vectors ``{(label, trial): {action: part}}`` for a schema.

    ``CSSF`` ranks the ``SF`` columns of the same tuples unless a ranking
    matrix is supplied.
    """
    keys = sorted(tuples)
    if schema == "MP":
        vecs = [mechanical_features(tuples[k], label=k[0]) for k in keys]
        return FeatureMatrix.from_vectors(vecs)
    if schema in ("SF", "SF36"):
        return FeatureMatrix.from_vectors([statistical_features(tuples[k], label=k[0], schema=schema)
                                           for k in keys])
    if schema == "CSSF":
        sf = feature_matrix(tuples, "SF")
        return cssf_features(sf if ranking_matrix is None else ranking_matrix, apply_to=sf)
    raise FeatureError(f"unknown schema {schema!r}")


# --------------------------------------------------------------------------
# Chi-square ranking
# --------------------------------------------------------------------------

def equal_frequency_bins(x, n_bins=10):
    """Bin index per value using ranks, so ties share a bin and any strictly
    increasing transform of ``x`` gives the same bins."""
    x = np.asarray(x, dtype=float)
    r = rankdata(x, method="min") - 1
    return np.minimum((r * n_bins) // x.size, n_bins - 1).astype(int)


def chi_square_statistic(bins, labels):
    _, bi = np.unique(bins, return_inverse=True)
    _, li = np.unique(labels, return_inverse=True)
    obs = np.zeros((bi.max() + 1, li.max() + 1))
    np.add.at(obs, (bi, li), 1.0)
    exp = obs.sum(1, keepdims=True) * obs.sum(0, keepdims=True) / obs.sum()
    return float(np.sum((obs - exp) ** 2 / exp))


def chi_square_rank(m: FeatureMatrix, n_bins=10):
    """Features sorted by descending chi-square score; ties keep column order."""
    labels = np.asarray(m.labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2 or np.any(counts < 2):
        raise FeatureError("chi-square ranking needs >= 2 classes with >= 2 rows each")
    scores = [chi_square_statistic(equal_frequency_bins(m.X[:, j], n_bins), labels)
              for j in range(m.X.shape[1])]
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return [(m.names[j], scores[j]) for j in order]


def cssf_features(m: FeatureMatrix, n=4, fixed=False, apply_to=None) -> FeatureMatrix:
    """Top-``n`` chi-square columns of an SF matrix, or the fixed reference set."""
    target = m if apply_to is None else apply_to
    if fixed:
        return target.select(CSSF_REFERENCE, schema="CSSF")
    if len(m.names) < n:
        raise FeatureError(f"need at least {n} features, got {len(m.names)}")
    top = [name for name, _ in chi_square_rank(m)[:n]]
    return target.select(top, schema="CSSF")
