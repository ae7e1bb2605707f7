"""Evaluation utilities: confusion matrices, the mean-F1 metric, the
two-layer synthetic generator, z-scoring, and the observed-class split
schedule used by the experiment protocol.

Conventions fixed here (the metric definition leaves them open):
zero-denominator F1 terms are 0; novel predicted columns are ordered by
size descending with ties by first appearance; argmax ties for unobserved
classes break toward the lowest column index; z-scoring uses the
population (divide-by-N) variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .niw import NIWParams, sample_niw


@dataclass
class ConfusionMatrix:
    """Counts with observed truth classes in the first ``n_observed`` rows
    and their aligned predictions in the first ``n_observed`` columns;
    remaining columns are novel predicted classes."""

    counts: np.ndarray
    n_observed: int
    row_classes: np.ndarray
    col_classes: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.row_classes = np.asarray(self.row_classes, dtype=np.int64)
        self.col_classes = np.asarray(self.col_classes, dtype=np.int64)
        k, l = self.counts.shape
        if self.row_classes.shape[0] != k or self.col_classes.shape[0] != l:
            raise ValueError("row/column id arrays must match the count shape")
        if not (0 <= self.n_observed <= min(k, l)):
            raise ValueError("observed-class count exceeds matrix shape")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def l(self) -> int:
        return self.counts.shape[1]


def _first_appearance_order(values, candidates) -> list:
    pos = {}
    for i, v in enumerate(values.tolist()):
        if v not in pos:
            pos[v] = i
    return sorted((int(c) for c in candidates), key=lambda c: pos[c])


def build_confusion(truth, predicted, observed) -> ConfusionMatrix:
    """Count (truth, predicted) pairs over the evaluation points.

    ``observed`` lists the truth ids of the observed classes, aligned with
    predicted ids 0..M-1. Any other predicted id is a novel class. Observed
    rows/columns come first even when empty; unobserved truth rows and
    novel columns are ordered by size descending, ties by first appearance.
    """
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise ValueError("truth and predicted labels must align")
    if truth.size == 0:
        raise ValueError("evaluation set is empty")
    observed = [int(k) for k in observed]
    m = len(observed)
    if np.any(predicted < 0):
        raise ValueError("predicted ids must be nonnegative")

    unobs = sorted(set(truth.tolist()) - set(observed))
    sizes = {k: int(np.sum(truth == k)) for k in unobs}
    order = _first_appearance_order(truth, unobs)
    unobs_rows = sorted(order, key=lambda k: (-sizes[k], order.index(k)))
    row_classes = np.asarray(observed + unobs_rows, dtype=np.int64)

    novel = sorted(set(predicted.tolist()) - set(range(m)))
    nsizes = {c: int(np.sum(predicted == c)) for c in novel}
    norder = _first_appearance_order(predicted, novel)
    novel_cols = sorted(norder, key=lambda c: (-nsizes[c], norder.index(c)))
    col_classes = np.asarray(list(range(m)) + novel_cols, dtype=np.int64)

    row_of = {int(k): i for i, k in enumerate(row_classes)}
    col_of = {int(c): j for j, c in enumerate(col_classes)}
    counts = np.zeros((row_classes.shape[0], col_classes.shape[0]), dtype=np.int64)
    for t, p in zip(truth.tolist(), predicted.tolist()):
        counts[row_of[t], col_of[p]] += 1
    return ConfusionMatrix(counts, m, row_classes, col_classes)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """One F1 per truth row: observed rows match their aligned column;
    unobserved rows match their best novel column (lowest index on ties);
    empty denominators give 0."""
    counts = cm.counts
    m = cm.n_observed
    rowsum = counts.sum(axis=1)
    colsum = counts.sum(axis=0)
    out = np.zeros(cm.k)
    for k in range(cm.k):
        if k < m:
            j = k
        else:
            if cm.l <= m:
                continue
            block = counts[k, m:]
            j = m + int(np.argmax(block))
        den = colsum[j] + rowsum[k]
        if den > 0:
            out[k] = 2.0 * counts[k, j] / den
    return out


def mean_f1(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    scores = per_class_f1(cm)
    return float(scores.mean()), scores


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    """Two-layer generator settings; defaults reproduce the simulated
    benchmark (10 classes, 70 components, 3000 2-D points)."""

    n_classes: int = 10
    n_components: int = 70
    n_points: int = 3000
    d: int = 2
    gamma: float = 1.0
    alpha: float = 1.0
    kappa0: float = 0.01
    m: float = 4.0
    kappa1: float = 0.3
    mu0: np.ndarray | None = None
    psi0: np.ndarray | None = None
    seed: int = 0
    max_tries: int = 100

    def __post_init__(self):
        if self.n_components < self.n_classes:
            raise ValueError("need at least one component per class")
        if self.n_points < self.n_components:
            raise ValueError("need at least one point per component")
        if not (self.gamma > 0 and self.alpha > 0 and self.kappa0 > 0 and self.kappa1 > 0):
            raise ValueError("positivity violated")
        if self.mu0 is None:
            self.mu0 = np.zeros(self.d)
        if self.psi0 is None:
            self.psi0 = np.eye(self.d)
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.psi0 = np.asarray(self.psi0, dtype=float)


@dataclass
class SynthData:
    X: np.ndarray
    class_of: np.ndarray
    comp_of: np.ndarray
    comp_class: np.ndarray
    class_mean: np.ndarray
    class_cov: np.ndarray
    comp_mean: np.ndarray


def _dirichlet_counts(rng, total: int, bins: int, conc: float, max_tries: int) -> np.ndarray:
    """Allocate ``total`` items to ``bins`` via a symmetric Dirichlet draw
    followed by a multinomial, resampling until every bin is nonempty."""
    for _ in range(max_tries):
        w = rng.dirichlet(np.full(bins, conc))
        counts = rng.multinomial(total, w)
        if counts.min() >= 1:
            return counts
    raise RuntimeError(f"no feasible allocation of {total} items to {bins} bins after {max_tries} tries")


def generate_synthetic(cfg: SynthConfig) -> SynthData:
    """Draw a dataset from the layered model: class moments from a
    conjugate prior, component centers around class means with spread
    Sigma_k / kappa1, points around component centers with covariance
    Sigma_k. Rows are grouped by component, components by class."""
    rng = np.random.default_rng(cfg.seed)
    comp_per_class = _dirichlet_counts(rng, cfg.n_components, cfg.n_classes, cfg.gamma, cfg.max_tries)
    pts_per_comp = _dirichlet_counts(rng, cfg.n_points, cfg.n_components, cfg.alpha, cfg.max_tries)

    prior = NIWParams(cfg.mu0, cfg.psi0, cfg.kappa0, cfg.m)
    d = cfg.d
    class_mean = np.empty((cfg.n_classes, d))
    class_cov = np.empty((cfg.n_classes, d, d))
    for k in range(cfg.n_classes):
        class_mean[k], class_cov[k] = sample_niw(prior, rng)

    comp_class = np.repeat(np.arange(cfg.n_classes), comp_per_class)
    comp_mean = np.empty((cfg.n_components, d))
    for l in range(cfg.n_components):
        k = comp_class[l]
        comp_mean[l] = rng.multivariate_normal(
            class_mean[k], class_cov[k] / cfg.kappa1, method="cholesky"
        )

    comp_of = np.repeat(np.arange(cfg.n_components), pts_per_comp)
    X = np.empty((cfg.n_points, d))
    start = 0
    for l in range(cfg.n_components):
        n_l = int(pts_per_comp[l])
        k = comp_class[l]
        X[start : start + n_l] = rng.multivariate_normal(
            comp_mean[l], class_cov[k], size=n_l, method="cholesky"
        )
        start += n_l
    return SynthData(
        X=X,
        class_of=comp_class[comp_of].copy(),
        comp_of=comp_of,
        comp_class=comp_class,
        class_mean=class_mean,
        class_cov=class_cov,
        comp_mean=comp_mean,
    )


# ---------------------------------------------------------------------------
# normalization and splits


def normalize_zscore(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale each feature to zero mean, unit population variance.
    Returns the transformed data and the (mean, std) used."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two points")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    bad = np.flatnonzero(std < 1e-12)
    if bad.size:
        raise ValueError(f"feature f{int(bad[0])} is constant; cannot z-score")
    return (X - mean) / std, mean, std


def observed_schedule(n_classes: int) -> list[int]:
    """0, 2, 4, ... capped at the class count, which is always included."""
    if n_classes < 0:
        raise ValueError("class count must be nonnegative")
    out = list(range(0, n_classes, 2))
    if not out or out[-1] != n_classes:
        out.append(n_classes)
    return out


@dataclass
class SplitSchedule:
    labeled_fraction: float = 0.20
    observed_counts: list[int] | None = None

    def __post_init__(self):
        if not (0.0 < self.labeled_fraction < 1.0):
            raise ValueError("labeled fraction must lie in (0, 1)")
        if self.observed_counts is not None:
            oc = list(self.observed_counts)
            if any(b <= a for a, b in zip(oc, oc[1:])):
                raise ValueError("observed counts must be strictly increasing")
            self.observed_counts = oc

    def resolve(self, n_classes: int) -> list[int]:
        if self.observed_counts is None:
            return observed_schedule(n_classes)
        if self.observed_counts[-1] > n_classes:
            raise ValueError("observed count exceeds the number of classes")
        return self.observed_counts


@dataclass
class SplitCase:
    """One grid cell of the protocol: labels visible for the n_observed
    largest classes only. ``labels`` is the run input (-1 hidden, dense
    0..M-1 for observed classes); ``eval_mask`` selects the points scored
    against the truth; ``observed_truth`` maps dense id m to its truth id."""

    n_observed: int
    labels: np.ndarray
    eval_mask: np.ndarray
    observed_truth: np.ndarray


@dataclass
class SplitPlan:
    pool: np.ndarray
    class_order: np.ndarray
    cases: list[SplitCase] = field(default_factory=list)


def make_split(truth, schedule: SplitSchedule, seed: int) -> SplitPlan:
    """Draw the stratified labeled pool once and derive every observed-count
    case from it.

    Per class the pool takes floor(fraction * size) points, at least one.
    For a case with M observed classes, pool points of the M largest
    classes (ties by id) carry labels renumbered to 0..M-1; every other
    point is unlabeled, and evaluation covers exactly those points.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if truth.ndim != 1 or truth.size == 0:
        raise ValueError("truth labels required")
    if np.any(truth < 0):
        raise ValueError("truth labels must be nonnegative")
    rng = np.random.default_rng(seed)
    classes, sizes = np.unique(truth, return_counts=True)
    order = classes[np.lexsort((classes, -sizes))]

    pool = np.zeros(truth.shape[0], dtype=bool)
    for k in classes:
        members = np.flatnonzero(truth == k)
        n_lab = max(1, int(np.floor(schedule.labeled_fraction * members.size)))
        chosen = rng.choice(members, size=n_lab, replace=False)
        pool[chosen] = True

    plan = SplitPlan(pool=pool, class_order=order)
    for m in schedule.resolve(len(classes)):
        observed = order[:m]
        rank = {int(k): i for i, k in enumerate(observed)}
        labels = np.full(truth.shape[0], -1, dtype=np.int64)
        vis = pool & np.isin(truth, observed)
        labels[vis] = [rank[int(t)] for t in truth[vis]]
        plan.cases.append(
            SplitCase(
                n_observed=m,
                labels=labels,
                eval_mask=~vis,
                observed_truth=observed.copy(),
            )
        )
    return plan
