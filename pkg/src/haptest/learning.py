"""Gaussian naive Bayes, diagonal Gaussian mixtures, NMI and cross-validation."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


def _xy(m, y=None):
    if y is None:
        return np.asarray(m.X, dtype=float), np.asarray(m.labels)
    return np.asarray(m, dtype=float), np.asarray(y)


# --------------------------------------------------------------------------
# Naive Bayes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GnbModel:
    classes: np.ndarray
    priors: np.ndarray
    means: np.ndarray       # (classes, features)
    variances: np.ndarray   # (classes, features)
    floor: np.ndarray       # (features,)


def gnb_fit(X, y=None) -> GnbModel:
    """Fit per-class means and variances.

    Accepts a feature matrix or ``(X, y)``.  Variances are floored at
    ``1e-9 * (column variance + 1)``.
    """
    X, y = _xy(X, y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-D training matrix")
    classes, inv, counts = np.unique(y, return_inverse=True, return_counts=True)
    floor = 1e-9 * (X.var(axis=0) + 1.0)
    means = np.zeros((classes.size, X.shape[1]))
    np.add.at(means, inv, X)
    means /= counts[:, None]
    var = np.zeros_like(means)
    np.add.at(var, inv, (X - means[inv]) ** 2)
    var = np.maximum(var / counts[:, None], floor)
    return GnbModel(classes, counts / counts.sum(), means, var, floor)


def gnb_log_joint(model: GnbModel, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.means.shape[1]:
        raise ValueError(f"expected {model.means.shape[1]} features, got {X.shape[1]}")
    diff = X[:, None, :] - model.means[None]
    ll = -0.5 * np.sum(LOG_2PI + np.log(model.variances)[None] + diff ** 2 / model.variances[None], axis=2)
    return ll + np.log(model.priors)[None]


def gnb_predict(model: GnbModel, x):
    """Label and normalized log-posteriors of one vector; ties go to the lowest class id."""
    joint = gnb_log_joint(model, x)[0]
    post = joint - logsumexp(joint)
    return model.classes[int(np.argmax(joint))], post


def gnb_predict_many(model: GnbModel, X):
    return model.classes[np.argmax(gnb_log_joint(model, X), axis=1)]


# --------------------------------------------------------------------------
# Gaussian mixture
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: tuple = ()
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.log_likelihood)


def kmeans_plus_plus(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[i])
        d2 = np.minimum(d2, np.sum((X - X[i]) ** 2, axis=1))
    return np.array(centers)


def _log_resp(X, w, mu, var):
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    diff = X[:, None, :] - mu[None]
    lp = -0.5 * np.sum(LOG_2PI + np.log(var)[None] + diff ** 2 / var[None], axis=2) + logw[None]
    norm = logsumexp(lp, axis=1)
    return lp - norm[:, None], float(norm.sum())


def gmm_fit(X, k=20, seed=0, max_iter=500, tol=1e-6, floor=1e-6) -> GmmModel:
    """EM for a diagonal-covariance mixture, seeded by k-means++.

    Stops when the total log-likelihood gains less than ``tol`` or after
    ``max_iter`` iterations.  ``log_likelihood`` records the value before
    each M-step.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    n, p = X.shape
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} rows")
    rng = np.random.default_rng(seed)
    mu = kmeans_plus_plus(X, k, rng)
    var = np.broadcast_to(np.maximum(X.var(axis=0), floor), (k, p)).copy()
    w = np.full(k, 1.0 / k)
    hist = []
    converged = False
    for _ in range(max_iter):
        log_r, ll = _log_resp(X, w, mu, var)
        if hist and ll - hist[-1] < tol:
            hist.append(ll)
            converged = True
            break
        hist.append(ll)
        r = np.exp(log_r)
        nk = r.sum(axis=0)
        w = nk / n
        alive = (nk > 0)[:, None]  # an emptied component keeps its parameters at zero weight
        safe = np.maximum(nk, 1e-300)[:, None]
        mu = np.where(alive, (r.T @ X) / safe, mu)
        spread = np.einsum("nk,nkp->kp", r, (X[:, None, :] - mu[None]) ** 2) / safe
        var = np.where(alive, np.maximum(spread, floor), var)
    return GmmModel(w, mu, var, tuple(hist), converged)


def gmm_predict(model: GmmModel, X):
    log_r, _ = _log_resp(np.asarray(getattr(X, "X", X), dtype=float), model.weights, model.means,
                         model.variances)
    return np.argmax(log_r, axis=1)


def zscore(X):
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


# --------------------------------------------------------------------------
# Clustering scores
# --------------------------------------------------------------------------

def contingency(a, b):
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    c = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(c, (ai, bi), 1.0)
    return c


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(clusters, truth):
    """``2 MI / (H(C) + H(L))`` with natural logarithms.

    Two single-cluster labelings are identical partitions and score 1.
    """
    clusters = np.asarray(clusters)
    truth = np.asarray(truth)
    if clusters.shape != truth.shape:
        raise ValueError("labelings differ in length")
    c = contingency(clusters, truth)
    hc = _entropy(c.sum(axis=1))
    hl = _entropy(c.sum(axis=0))
    if hc + hl == 0.0:
        return 1.0
    pij = c / c.sum()
    pi = pij.sum(axis=1, keepdims=True)
    pj = pij.sum(axis=0, keepdims=True)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / (pi @ pj)[nz])))
    return float(min(max(2.0 * mi / (hc + hl), 0.0), 1.0))


def matched_accuracy(clusters, truth):
    """Accuracy after a one-to-one cluster-to-class matching (Hungarian)."""
    c = contingency(clusters, truth)
    rows, cols = linear_sum_assignment(-c)
    return float(c[rows, cols].sum() / c.sum())


@dataclass
class ClusterReport:
    nmi_mean: float
    nmi_std: float
    nmi_runs: list
    matched_accuracy_mean: float

    def to_dict(self):
        return {"nmi_mean": self.nmi_mean, "nmi_std": self.nmi_std, "nmi_runs": list(self.nmi_runs),
                "matched_accuracy_mean": self.matched_accuracy_mean}


def cluster_nmi(X, y=None, k=20, repetitions=40, seed=0) -> ClusterReport:
    """GMM clustering of z-scored features repeated with different seeds."""
    X, y = _xy(X, y)
    Z = zscore(X)
    scores, accs = [], []
    for rep, ss in enumerate(np.random.SeedSequence(seed).spawn(repetitions)):
        model = gmm_fit(Z, k, seed=ss)
        lab = gmm_predict(model, Z)
        scores.append(nmi(lab, y))
        accs.append(matched_accuracy(lab, y))
    return ClusterReport(float(np.mean(scores)), float(np.std(scores)), scores, float(np.mean(accs)))


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

def stratified_folds(y, folds, rng):
    """Fold index per sample; every class is spread evenly over the folds."""
    y = np.asarray(y)
    out = np.empty(y.size, dtype=int)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        out[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return out


@dataclass
class RecognitionReport:
    accuracy_mean: float
    accuracy_std: float
    confusion: np.ndarray
    classes: np.ndarray
    accuracies: list = field(default_factory=list)
    features: tuple = ()
    clustering: Optional[ClusterReport] = None

    @property
    def recall(self):
        return np.diag(self.confusion).copy()

    def to_dict(self):
        d = {"accuracy_mean": self.accuracy_mean, "accuracy_std": self.accuracy_std,
             "classes": [int(c) for c in self.classes], "features": list(self.features),
             "confusion": self.confusion.tolist(), "recall": self.recall.tolist()}
        if self.clustering is not None:
            d["clustering"] = self.clustering.to_dict()
        return d

    def render_confusion(self, width=5):
        head = " " * 6 + "".join(f"{int(c):>{width}d}" for c in self.classes)
        lines = [head]
        for c, row in zip(self.classes, self.confusion):
            lines.append(f"{int(c):>5d} " + "".join(f"{v:>{width}.2f}" if v else " " * (width - 1) + "."
                                                  for v in row))
        return "\n".join(lines)


def cross_validate(X, y=None, folds=4, repetitions=100, seed=0, names=()) -> RecognitionReport:
    """Repeated stratified k-fold evaluation of Gaussian naive Bayes.

    The confusion matrix sums predictions over all repetitions and is then
    row-normalized.
    """
    if y is None:
        names = names or tuple(X.names)
    X, y = _xy(X, y)
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < folds):
        raise ValueError(f"every class needs at least {folds} samples")
    pos = {c: i for i, c in enumerate(classes)}
    yi = np.array([pos[c] for c in y])
    conf = np.zeros((classes.size, classes.size))
    accs = []
    rng = np.random.default_rng(seed)
    for _ in range(repetitions):
        f = stratified_folds(y, folds, rng)
        correct = 0
        for k in range(folds):
            test = f == k
            model = gnb_fit(X[~test], y[~test])
            pred = gnb_predict_many(model, X[test])
            pi = np.array([pos[c] for c in pred])
            np.add.at(conf, (yi[test], pi), 1.0)
            correct += int(np.sum(pi == yi[test]))
        accs.append(correct / y.size)
    conf = conf / conf.sum(axis=1, keepdims=True)
    return RecognitionReport(float(np.mean(accs)), float(np.std(accs)), conf, classes, accs, tuple(names))


def ablation(X, y=None, names=None, folds=4, repetitions=100, seed=0):
    """Cross-validated accuracy of every non-empty feature subset, largest first."""
    if y is None:
        names = tuple(X.names) if names is None else names
    X, y = _xy(X, y)
    names = tuple(names) if names is not None else tuple(f"f{j}" for j in range(X.shape[1]))
    rows = []
    for r in range(X.shape[1], 0, -1):
        for subset in itertools.combinations(range(X.shape[1]), r):
            rep = cross_validate(X[:, subset], y, folds, repetitions, seed)
            rows.append({"features": [names[j] for j in subset], "accuracy_mean": rep.accuracy_mean,
                         "accuracy_std": rep.accuracy_std})
    return rows
