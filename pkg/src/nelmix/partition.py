"""Partition state and collapsed Gibbs kernels for the layered mixtures.

The state is flat-array backed so the compiled passes in ``_kernels`` can
run over it directly; the functions in this module are the readable
reference implementations of the per-point and per-component sampling
steps. ``gibbs_sweep(..., impl="python")`` drives a full sweep through the
reference code with the same random stream as the compiled path, which the
test suite uses to pin the two implementations against each other.

Classes and components live in slots. A slot id is stable while the object
is alive; freed slots are reused lowest-first, so runs are reproducible.
Targets in the op-level APIs use ``NEW`` (-1) for "fresh component" (within
a class) or "fresh class" depending on context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .niw import LOG2PI, NIWParams, SuffStats, log_niw_marginal, niw_posterior_predictive_logpdf

NEW = -1

IGMM = "igmm"
I2GMM = "i2gmm"
VARIANTS = (IGMM, I2GMM)


@dataclass
class LabelInfo:
    """Per-point supervision: observed-class id (-1 for unlabeled) and the
    outlier flag assigned after pre-inference."""

    labels: np.ndarray
    outlier: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.outlier = np.asarray(self.outlier, dtype=bool)
        if self.labels.shape != self.outlier.shape:
            raise ValueError("labels and outlier flags must align")
        if np.any(self.outlier & (self.labels < 0)):
            raise ValueError("outlier flags are only defined for labeled points")
        obs = np.unique(self.labels[self.labels >= 0])
        if obs.size and (obs[0] != 0 or obs[-1] != obs.size - 1):
            raise ValueError("observed-class ids must be dense 0..M-1")

    @property
    def n_observed(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if lab.size else 0


@dataclass
class ComponentSummary:
    """Snapshot of one component: stats, owning class, and whether it is
    forced (contains at least one non-outlier labeled point)."""

    comp_id: int
    stats: SuffStats
    class_id: int
    forced: bool
    n_labeled: int


class MixtureState:
    """Flat-array partition state shared by the reference and compiled paths.

    Per-class mean/covariance estimates are stored alongside the partition
    and treated as frozen during a sweep; ``apply_hidden`` installs a fresh
    set. ``comp_mu`` holds the per-component mean estimates used by the
    hyperparameter updates.
    """

    def __init__(self, X, alpha, gamma, labels=None, outlier=None):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("X must be a nonempty (n, d) array")
        n, d = X.shape
        if not (alpha > 0 and gamma > 0):
            raise ValueError("concentrations must be positive")
        self.X = X
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.labels = (
            np.full(n, -1, dtype=np.int64)
            if labels is None
            else np.asarray(labels, dtype=np.int64).copy()
        )
        self.outlier = (
            np.zeros(n, dtype=bool) if outlier is None else np.asarray(outlier, dtype=bool).copy()
        )
        if self.labels.shape[0] != n or self.outlier.shape[0] != n:
            raise ValueError("labels/outlier must have one entry per point")
        LabelInfo(self.labels, self.outlier)  # validate

        cap = n + 8
        self.point_comp = np.zeros(n, dtype=np.int64)
        self.comp_active = np.zeros(cap, dtype=bool)
        self.comp_class = np.zeros(cap, dtype=np.int64)
        self.comp_n = np.zeros(cap, dtype=np.int64)
        self.comp_sum = np.zeros((cap, d))
        self.comp_scatter = np.zeros((cap, d, d))
        self.comp_nlab = np.zeros(cap, dtype=np.int64)
        self.comp_mu = np.zeros((cap, d))
        self.cls_active = np.zeros(cap, dtype=bool)
        self.cls_ncomp = np.zeros(cap, dtype=np.int64)
        self.cls_npoints = np.zeros(cap, dtype=np.int64)
        self.cls_mu = np.zeros((cap, d))
        self.cls_sig = np.zeros((cap, d, d))
        self.cls_sig_inv = np.zeros((cap, d, d))
        self.cls_sig_logdet = np.zeros(cap)
        self.meta = np.zeros(2, dtype=np.int64)  # [comp slots, class slots]
        self._psichol = None
        self._psi_updates = None

    # -- construction -------------------------------------------------------

    @classmethod
    def from_assignments(
        cls, X, point_comp, comp_class, alpha, gamma, labels=None, outlier=None
    ) -> "MixtureState":
        """Build a state from per-point component ids and a component->class
        map. Component ids are compacted to slots in sorted order; class ids
        are kept as given (they are semantic for observed classes)."""
        state = cls(X, alpha, gamma, labels=labels, outlier=outlier)
        point_comp = np.asarray(point_comp, dtype=np.int64)
        if point_comp.shape[0] != state.n_points:
            raise ValueError("point_comp must have one entry per point")
        comp_ids = np.unique(point_comp)
        slot_of = {int(c): i for i, c in enumerate(comp_ids)}
        state.meta[0] = len(comp_ids)
        max_cls = -1
        for c in comp_ids:
            if int(c) not in comp_class:
                raise ValueError(f"component {c} missing from comp_class")
            max_cls = max(max_cls, int(comp_class[int(c)]))
        if max_cls >= state.cls_active.shape[0]:
            raise ValueError("class id exceeds capacity")
        state.meta[1] = max_cls + 1
        for i in range(state.n_points):
            state.point_comp[i] = slot_of[int(point_comp[i])]
        for c in comp_ids:
            s = slot_of[int(c)]
            k = int(comp_class[int(c)])
            state.comp_active[s] = True
            state.comp_class[s] = k
            state.cls_active[k] = True
        state.recompute_stats()
        state.recompute_bookkeeping()
        for c in state.active_components():
            state.comp_mu[c] = state.comp_sum[c] / state.comp_n[c]
        for k in state.active_classes():
            members = state.class_points(k)
            state.cls_mu[k] = state.X[members].mean(axis=0)
        return state

    def init_estimates(self, hypers) -> None:
        """Seed the per-class estimates before the first sweep: class means
        from the data, covariances at the prior mode, component means at the
        component data means."""
        sig, inv, logdet = _prior_mode_consts(hypers, self.d)
        for k in self.active_classes():
            members = self.class_points(k)
            self.cls_mu[k] = self.X[members].mean(axis=0)
            self.cls_sig[k] = sig
            self.cls_sig_inv[k] = inv
            self.cls_sig_logdet[k] = logdet
        for c in self.active_components():
            self.comp_mu[c] = self.comp_sum[c] / self.comp_n[c]

    # -- views ---------------------------------------------------------------

    @property
    def n_points(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_components(self) -> int:
        return int(self.comp_active.sum())

    @property
    def n_classes(self) -> int:
        return int(self.cls_active.sum())

    def active_components(self):
        return [int(c) for c in np.flatnonzero(self.comp_active[: self.meta[0]])]

    def active_classes(self):
        return [int(k) for k in np.flatnonzero(self.cls_active[: self.meta[1]])]

    @property
    def point_component(self) -> np.ndarray:
        return self.point_comp.copy()

    @property
    def component_class(self) -> dict:
        return {c: int(self.comp_class[c]) for c in self.active_components()}

    @property
    def components(self) -> dict:
        return {c: self.component_stats(c) for c in self.active_components()}

    @property
    def classes(self) -> dict:
        out = {k: set() for k in self.active_classes()}
        for c in self.active_components():
            out[int(self.comp_class[c])].add(c)
        return out

    def component_stats(self, c: int) -> SuffStats:
        return SuffStats(int(self.comp_n[c]), self.comp_sum[c].copy(), self.comp_scatter[c].copy())

    def component_summary(self, c: int) -> ComponentSummary:
        if not self.comp_active[c]:
            raise KeyError(f"component {c} is not active")
        return ComponentSummary(
            comp_id=int(c),
            stats=self.component_stats(c),
            class_id=int(self.comp_class[c]),
            forced=bool(self.comp_nlab[c] > 0),
            n_labeled=int(self.comp_nlab[c]),
        )

    def class_points(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.comp_class[self.point_comp] == k)

    def class_mean(self, k: int) -> np.ndarray:
        return self.cls_mu[k].copy()

    def class_cov(self, k: int) -> np.ndarray:
        return self.cls_sig[k].copy()

    def copy(self) -> "MixtureState":
        new = MixtureState.__new__(MixtureState)
        new.X = self.X
        new.alpha = self.alpha
        new.gamma = self.gamma
        for name in (
            "labels",
            "outlier",
            "point_comp",
            "comp_active",
            "comp_class",
            "comp_n",
            "comp_sum",
            "comp_scatter",
            "comp_nlab",
            "comp_mu",
            "cls_active",
            "cls_ncomp",
            "cls_npoints",
            "cls_mu",
            "cls_sig",
            "cls_sig_inv",
            "cls_sig_logdet",
            "meta",
        ):
            setattr(new, name, getattr(self, name).copy())
        new._psichol = None if self._psichol is None else self._psichol.copy()
        new._psi_updates = None if self._psi_updates is None else self._psi_updates.copy()
        return new

    # -- maintenance ---------------------------------------------------------

    def recompute_stats(self) -> None:
        """Exact sufficient statistics from the raw data (drift reset)."""
        hi = int(self.meta[0])
        self.comp_n[:hi] = 0
        self.comp_sum[:hi] = 0.0
        self.comp_scatter[:hi] = 0.0
        counts = np.bincount(self.point_comp, minlength=hi)
        self.comp_n[:hi] = counts[:hi]
        np.add.at(self.comp_sum, self.point_comp, self.X)
        for c in np.flatnonzero(counts[:hi]):
            rows = self.X[self.point_comp == c]
            centered = rows - rows.mean(axis=0)
            self.comp_scatter[c] = centered.T @ centered

    def recompute_bookkeeping(self) -> None:
        hi_c, hi_k = int(self.meta[0]), int(self.meta[1])
        self.comp_nlab[:hi_c] = 0
        for i in range(self.n_points):
            if self.labels[i] >= 0 and not self.outlier[i]:
                self.comp_nlab[self.point_comp[i]] += 1
        self.cls_ncomp[:hi_k] = 0
        self.cls_npoints[:hi_k] = 0
        for c in self.active_components():
            k = int(self.comp_class[c])
            self.cls_ncomp[k] += 1
            self.cls_npoints[k] += int(self.comp_n[c])

    def set_class_estimates(self, k: int, mean, cov) -> None:
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"class {k} covariance estimate not PD") from exc
        self.cls_mu[k] = mean
        self.cls_sig[k] = cov
        self.cls_sig_inv[k] = np.linalg.inv(cov)
        self.cls_sig_logdet[k] = float(2.0 * np.log(np.diag(chol)).sum())

    def apply_hidden(self, hidden) -> None:
        """Install a fresh set of per-class and per-component estimates."""
        for k, mu in hidden.class_mean.items():
            self.set_class_estimates(k, mu, hidden.class_cov[k])
        for c, mu in hidden.comp_mean.items():
            self.comp_mu[c] = mu

    def igmm_setup(self, hypers) -> None:
        cap = self.comp_active.shape[0]
        self._psichol = np.zeros((cap, self.d, self.d))
        self._psi_updates = np.zeros(cap, dtype=np.int64)
        self.igmm_refactor_all(hypers)

    def igmm_refactor_all(self, hypers) -> None:
        for c in self.active_components():
            _kernels._psi_rebuild(
                c,
                self.comp_n,
                self.comp_sum,
                self.comp_scatter,
                self._psichol,
                hypers.mu0,
                hypers.kappa0,
                hypers.psi0,
            )
            self._psi_updates[c] = 0

    def check_consistency(self, atol: float = 1e-9, single_component_classes: bool = False) -> None:
        """Raise if bookkeeping, statistics, or the labeling restrictions are
        violated. Statistics are compared against an exact recompute."""
        hi_c, hi_k = int(self.meta[0]), int(self.meta[1])
        if not np.all(self.comp_active[self.point_comp]):
            raise AssertionError("a point sits in an inactive component")
        for c in self.active_components():
            rows = self.X[self.point_comp == c]
            if rows.shape[0] == 0:
                raise AssertionError(f"component {c} is active but empty")
            if rows.shape[0] != self.comp_n[c]:
                raise AssertionError(f"component {c} count mismatch")
            scale = max(1.0, float(np.abs(rows).max()) ** 2 * rows.shape[0])
            if not np.allclose(self.comp_sum[c], rows.sum(axis=0), atol=atol * scale):
                raise AssertionError(f"component {c} sum drifted")
            centered = rows - rows.mean(axis=0)
            if not np.allclose(self.comp_scatter[c], centered.T @ centered, atol=atol * scale):
                raise AssertionError(f"component {c} scatter drifted")
            if not self.cls_active[self.comp_class[c]]:
                raise AssertionError(f"component {c} points at an inactive class")
        for k in range(hi_k):
            comps = [c for c in self.active_components() if self.comp_class[c] == k]
            if self.cls_active[k]:
                if len(comps) != self.cls_ncomp[k] or len(comps) == 0:
                    raise AssertionError(f"class {k} component count mismatch")
                if self.cls_npoints[k] != sum(int(self.comp_n[c]) for c in comps):
                    raise AssertionError(f"class {k} point count mismatch")
                if single_component_classes and len(comps) > 1:
                    raise AssertionError(f"class {k} holds more than one component")
            elif comps:
                raise AssertionError(f"inactive class {k} still owns components")
        for i in range(self.n_points):
            lab = int(self.labels[i])
            if lab >= 0 and not self.outlier[i]:
                if int(self.comp_class[self.point_comp[i]]) != lab:
                    raise AssertionError(
                        f"labeled point {i} (class {lab}) sits in a component of class "
                        f"{int(self.comp_class[self.point_comp[i]])}"
                    )
        nlab = np.zeros(hi_c, dtype=np.int64)
        for i in range(self.n_points):
            if self.labels[i] >= 0 and not self.outlier[i]:
                nlab[self.point_comp[i]] += 1
        if not np.array_equal(nlab, self.comp_nlab[:hi_c]):
            raise AssertionError("forced-point counters drifted")

    # -- slot management (mirrors the kernels exactly) ------------------------

    def _alloc_comp(self) -> int:
        c = _kernels._first_free(self.comp_active, self.meta[0])
        if c == self.meta[0]:
            self.meta[0] += 1
        self.comp_active[c] = True
        self.comp_n[c] = 0
        self.comp_nlab[c] = 0
        self.comp_sum[c] = 0.0
        self.comp_scatter[c] = 0.0
        return int(c)

    def _alloc_cls(self) -> int:
        k = _kernels._first_free(self.cls_active, self.meta[1])
        if k == self.meta[1]:
            self.meta[1] += 1
        self.cls_active[k] = True
        self.cls_ncomp[k] = 0
        self.cls_npoints[k] = 0
        return int(k)


# ---------------------------------------------------------------------------
# shared predictive math


def _newclass_pred_consts(hypers, d: int):
    """Student-t predictive of a single point opening a fresh class: the
    class parameters and the component mean are both integrated out, which
    collapses to a NIW predictive with prior strength k0*k1/(k0+k1)."""
    kap = hypers.kappa0 * hypers.kappa1 / (hypers.kappa0 + hypers.kappa1)
    nu = hypers.m - d + 1.0
    scale = hypers.psi0 * (kap + 1.0) / (kap * nu)
    chol = np.linalg.cholesky(scale)
    ainv = np.linalg.inv(scale)
    logdet = float(2.0 * np.log(np.diag(chol)).sum())
    const = (
        math.lgamma(0.5 * (nu + d))
        - math.lgamma(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * logdet
    )
    return hypers.mu0, ainv, nu, const, kap


def _prior_mode_consts(hypers, d: int):
    sig = hypers.psi0 / (hypers.m + d + 1.0)
    chol = np.linalg.cholesky(sig)
    inv = np.linalg.inv(sig)
    logdet = float(2.0 * np.log(np.diag(chol)).sum())
    return sig, inv, logdet


def _log_newclass_pred(x, hypers, d: int) -> float:
    mu, ainv, nu, const, _ = _newclass_pred_consts(hypers, d)
    dx = x - mu
    return const - 0.5 * (nu + d) * math.log1p(float(dx @ ainv @ dx) / nu)


def _log_comp_pred(state, c: int, x, kappa1: float) -> float:
    """Density of x under an existing component: component mean integrated
    against its posterior given the class estimates."""
    k = int(state.comp_class[c])
    kp = kappa1 + state.comp_n[c]
    sl = (kp + 1.0) / kp
    mu_post = (kappa1 * state.cls_mu[k] + state.comp_sum[c]) / kp
    dx = x - mu_post
    q = float(dx @ state.cls_sig_inv[k] @ dx)
    return float(
        -0.5 * state.d * (LOG2PI + math.log(sl)) - 0.5 * state.cls_sig_logdet[k] - 0.5 * q / sl
    )


def _log_newcomp_pred(state, k: int, x, kappa1: float) -> float:
    s = (kappa1 + 1.0) / kappa1
    dx = x - state.cls_mu[k]
    q = float(dx @ state.cls_sig_inv[k] @ dx)
    return float(
        -0.5 * state.d * (LOG2PI + math.log(s)) - 0.5 * state.cls_sig_logdet[k] - 0.5 * q / s
    )


def crp_component_logweights(x, cls, state: MixtureState, hypers, loglik=None):
    """Seating weights of point ``x`` inside class ``cls``.

    One entry ``(comp_id, log N_kl + log pred)`` per live component of the
    class and one ``(NEW, log alpha + log pred under the class's mean
    prior)``. Passing ``cls=NEW`` (or an empty/inactive class) scores the
    fresh-class case: a single NEW entry under the base-measure chain.
    ``loglik(target)`` optionally replaces the predictive (used by the
    prior-fidelity tests).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != state.d:
        raise ValueError("x has the wrong dimension")
    log_alpha = math.log(state.alpha)
    if cls == NEW or not state.cls_active[cls]:
        ll = loglik(NEW) if loglik is not None else _log_newclass_pred(x, hypers, state.d)
        return [(NEW, log_alpha + ll)]
    out = []
    for c in range(int(state.meta[0])):
        if not state.comp_active[c] or state.comp_class[c] != cls:
            continue
        ll = loglik(c) if loglik is not None else _log_comp_pred(state, c, x, hypers.kappa1)
        out.append((int(c), math.log(float(state.comp_n[c])) + ll))
    ll = loglik(NEW) if loglik is not None else _log_newcomp_pred(state, cls, x, hypers.kappa1)
    out.append((NEW, log_alpha + ll))
    return out


# ---------------------------------------------------------------------------
# reference component step


def _pick(scores: np.ndarray, u: float) -> int:
    m = scores.max()
    w = np.exp(scores - m)
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, u * cum[-1], side="left"))
    return min(idx, scores.shape[0] - 1)


def _detach_point(state: MixtureState, i: int, forced: bool):
    c_old = int(state.point_comp[i])
    k_old = int(state.comp_class[c_old])
    stats = SuffStats(int(state.comp_n[c_old]), state.comp_sum[c_old], state.comp_scatter[c_old])
    stats.remove(state.X[i])
    state.comp_n[c_old] = stats.n
    state.comp_sum[c_old] = stats.sum
    state.comp_scatter[c_old] = stats.scatter
    state.cls_npoints[k_old] -= 1
    if forced:
        state.comp_nlab[c_old] -= 1
    if state.comp_n[c_old] == 0:
        state.comp_active[c_old] = False
        state.cls_ncomp[k_old] -= 1
        if state.cls_ncomp[k_old] == 0:
            state.cls_active[k_old] = False
    return c_old, k_old


def _point_candidates(state: MixtureState, x, forced_label, hypers):
    """Candidate targets and scores in the exact order the compiled pass
    enumerates them. Targets: ('c', slot), ('nc', class), ('nk',)."""
    targets, scores = [], []
    log_alpha = math.log(state.alpha)
    k1 = hypers.kappa1
    for c in range(int(state.meta[0])):
        if not state.comp_active[c]:
            continue
        k = int(state.comp_class[c])
        if forced_label is not None and k != forced_label:
            continue
        targets.append(("c", c))
        scores.append(
            math.log(float(state.comp_n[c])) + _log_comp_pred(state, c, x, k1)
        )
    if forced_label is not None:
        if state.cls_active[forced_label]:
            sc = log_alpha + _log_newcomp_pred(state, forced_label, x, k1)
        else:
            sc = 0.0  # sole candidate; weight is irrelevant
        targets.append(("nc", int(forced_label)))
        scores.append(sc)
    else:
        for k in range(int(state.meta[1])):
            if not state.cls_active[k]:
                continue
            targets.append(("nc", int(k)))
            scores.append(log_alpha + _log_newcomp_pred(state, k, x, k1))
        targets.append(("nk",))
        scores.append(log_alpha + _log_newclass_pred(x, hypers, state.d))
    return targets, np.asarray(scores)


def _attach_point(state: MixtureState, i: int, target, forced: bool, hypers) -> int:
    x = state.X[i]
    if target[0] == "c":
        c_new = int(target[1])
        k = int(state.comp_class[c_new])
    else:
        if target[0] == "nk":
            k = state._alloc_cls()
            fresh_cls = True
        else:
            k = int(target[1])
            fresh_cls = not state.cls_active[k]
            if fresh_cls:
                state.cls_active[k] = True
                state.cls_ncomp[k] = 0
                state.cls_npoints[k] = 0
        if fresh_cls:
            sig, inv, logdet = _prior_mode_consts(hypers, state.d)
            state.cls_mu[k] = x
            state.cls_sig[k] = sig
            state.cls_sig_inv[k] = inv
            state.cls_sig_logdet[k] = logdet
        c_new = state._alloc_comp()
        state.comp_class[c_new] = k
        state.comp_mu[c_new] = x
        state.cls_ncomp[k] += 1
    stats = SuffStats(int(state.comp_n[c_new]), state.comp_sum[c_new], state.comp_scatter[c_new])
    stats.add(x)
    state.comp_n[c_new] = stats.n
    state.comp_sum[c_new] = stats.sum
    state.comp_scatter[c_new] = stats.scatter
    state.cls_npoints[k] += 1
    if forced:
        state.comp_nlab[c_new] += 1
    state.point_comp[i] = c_new
    return c_new


def _component_step(state: MixtureState, i: int, hypers, u: float) -> int:
    lab = int(state.labels[i])
    forced = lab >= 0 and not state.outlier[i]
    _detach_point(state, i, forced)
    targets, scores = _point_candidates(state, state.X[i], lab if forced else None, hypers)
    return _attach_point(state, i, targets[_pick(scores, u)], forced, hypers)


def sample_component_indicator(i: int, state: MixtureState, hypers, rng) -> int:
    """Resample the component of point ``i`` from its collapsed conditional.

    Labeled non-outlier points only see their own class; everything else
    sees every class plus a fresh component per class plus a fresh class.
    """
    return _component_step(state, int(i), hypers, float(rng.random()))


# ---------------------------------------------------------------------------
# reference class step


def _log_class_marginal(stats_n, stats_sum, stats_scatter, state, k, kappa1) -> float:
    """Marginal of a block under class k with the block mean integrated
    against the class's mean prior (class estimates plugged in)."""
    n = float(stats_n)
    d = state.d
    xbar = stats_sum / n
    dx = xbar - state.cls_mu[k]
    tr = float(np.sum(state.cls_sig_inv[k] * stats_scatter))
    q = float(dx @ state.cls_sig_inv[k] @ dx)
    w = n * kappa1 / (n + kappa1)
    return float(
        -0.5 * n * d * LOG2PI
        - 0.5 * n * state.cls_sig_logdet[k]
        + 0.5 * d * (math.log(kappa1) - math.log(kappa1 + n))
        - 0.5 * (tr + w * q)
    )


def _log_newclass_marginal(stats: SuffStats, hypers) -> float:
    """Marginal of a block opening a fresh class: base chain collapsed to a
    NIW marginal with prior strength k0*k1/(k0+k1)."""
    kap = hypers.kappa0 * hypers.kappa1 / (hypers.kappa0 + hypers.kappa1)
    prior = NIWParams(hypers.mu0, hypers.psi0, kap, hypers.m)
    return log_niw_marginal(stats, prior)


def class_logweights_for_component(comp, state: MixtureState, hypers):
    """Class seating weights for a component.

    ``comp`` may be a live component id (scored as the Gibbs conditional,
    i.e. with the component held out of its own class's count) or a
    detached ``ComponentSummary``/``SuffStats``. Forced components are a
    contract violation.
    """
    if isinstance(comp, (int, np.integer)):
        summary = state.component_summary(int(comp))
        exclude_from = summary.class_id
    else:
        summary = comp
        exclude_from = None
    if isinstance(summary, ComponentSummary):
        if summary.forced:
            raise ValueError("class weights are undefined for a forced component")
        stats = summary.stats
    else:
        stats = summary
    if stats.n == 0:
        raise ValueError("class weights are undefined for an empty component")
    out = []
    for k in range(int(state.meta[1])):
        if not state.cls_active[k]:
            continue
        ncomp = int(state.cls_ncomp[k]) - (1 if k == exclude_from else 0)
        if ncomp <= 0:
            continue
        out.append(
            (
                int(k),
                math.log(ncomp)
                + _log_class_marginal(stats.n, stats.sum, stats.scatter, state, k, hypers.kappa1),
            )
        )
    out.append((NEW, math.log(state.gamma) + _log_newclass_marginal(stats, hypers)))
    return out


def _class_step(state: MixtureState, c: int, hypers, u: float) -> int:
    n = int(state.comp_n[c])
    k0 = int(state.comp_class[c])
    state.cls_ncomp[k0] -= 1
    state.cls_npoints[k0] -= n
    if state.cls_ncomp[k0] == 0:
        state.cls_active[k0] = False
    targets, scores = [], []
    stats = state.component_stats(c)
    for k in range(int(state.meta[1])):
        if not state.cls_active[k]:
            continue
        targets.append(int(k))
        scores.append(
            math.log(float(state.cls_ncomp[k]))
            + _log_class_marginal(stats.n, stats.sum, stats.scatter, state, k, hypers.kappa1)
        )
    targets.append(NEW)
    scores.append(math.log(state.gamma) + _log_newclass_marginal(stats, hypers))
    k_new = targets[_pick(np.asarray(scores), u)]
    if k_new == NEW:
        k_new = state._alloc_cls()
        sig, inv, logdet = _prior_mode_consts(hypers, state.d)
        state.cls_mu[k_new] = stats.mean
        state.cls_sig[k_new] = sig
        state.cls_sig_inv[k_new] = inv
        state.cls_sig_logdet[k_new] = logdet
    state.comp_class[c] = k_new
    state.cls_ncomp[k_new] += 1
    state.cls_npoints[k_new] += n
    return int(k_new)


def sample_class_indicator(comp: int, state: MixtureState, hypers, rng) -> int:
    """Resample the class of a component; forced components are returned
    unchanged without consuming randomness."""
    c = int(comp)
    if not state.comp_active[c]:
        raise KeyError(f"component {c} is not active")
    if state.comp_nlab[c] > 0:
        return int(state.comp_class[c])
    return _class_step(state, c, hypers, float(rng.random()))


# ---------------------------------------------------------------------------
# full sweeps


def _igmm_candidates(state: MixtureState, x, prior: NIWParams):
    targets, scores = [], []
    for c in range(int(state.meta[0])):
        if not state.comp_active[c]:
            continue
        targets.append(("c", c))
        scores.append(
            math.log(float(state.comp_n[c]))
            + niw_posterior_predictive_logpdf(x, state.component_stats(c), prior)
        )
    targets.append(("nk",))
    scores.append(
        math.log(state.alpha)
        + niw_posterior_predictive_logpdf(x, SuffStats.empty(state.d), prior)
    )
    return targets, np.asarray(scores)


def _igmm_step(state: MixtureState, i: int, prior: NIWParams, u: float) -> int:
    _detach_point(state, i, False)
    targets, scores = _igmm_candidates(state, state.X[i], prior)
    target = targets[_pick(scores, u)]
    if target[0] == "c":
        c_new = int(target[1])
        k = int(state.comp_class[c_new])
    else:
        k = state._alloc_cls()
        c_new = state._alloc_comp()
        state.comp_class[c_new] = k
        state.cls_ncomp[k] = 1
    stats = SuffStats(int(state.comp_n[c_new]), state.comp_sum[c_new], state.comp_scatter[c_new])
    stats.add(state.X[i])
    state.comp_n[c_new] = stats.n
    state.comp_sum[c_new] = stats.sum
    state.comp_scatter[c_new] = stats.scatter
    state.cls_npoints[k] += 1
    state.point_comp[i] = c_new
    return c_new


def gibbs_sweep(state: MixtureState, labels: LabelInfo | None, hypers, variant: str, rng, impl: str = "kernel"):
    """One full Gibbs scan, in place.

    * ``igmm``: one pass over unlabeled points across single-component
      classes under the conjugate predictive.
    * ``i2gmm``: a component pass over every point, then a class pass over
      every unforced component.

    ``labels`` may carry updated label info to install first (or ``None``
    to keep the state's own). The per-class estimates are treated as frozen
    and must have been refreshed by the caller.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if labels is not None:
        state.labels[:] = labels.labels
        state.outlier[:] = labels.outlier
    perm = rng.permutation(state.n_points)
    u1 = rng.random(state.n_points)
    d = state.d
    cap_c = state.comp_active.shape[0]
    cap_k = state.cls_active.shape[0]

    if variant == IGMM:
        prior = NIWParams(hypers.mu0, hypers.psi0, hypers.kappa0, hypers.m)
        if impl == "kernel":
            if state._psichol is None:
                state.igmm_setup(hypers)
            nu0 = hypers.m - d + 1.0
            a0 = hypers.psi0 * (hypers.kappa0 + 1.0) / (hypers.kappa0 * nu0)
            chol = np.linalg.cholesky(a0)
            const = (
                math.lgamma(0.5 * (nu0 + d))
                - math.lgamma(0.5 * nu0)
                - 0.5 * d * math.log(nu0 * math.pi)
                - float(np.log(np.diag(chol)).sum())
            )
            cand_t = np.empty(cap_c + cap_k + 2, dtype=np.int64)
            cand_s = np.empty(cap_c + cap_k + 2)
            _kernels.igmm_pass(
                state.X,
                state.labels,
                state.point_comp,
                state.comp_active,
                state.comp_class,
                state.comp_n,
                state.comp_sum,
                state.comp_scatter,
                state.comp_nlab,
                state.cls_active,
                state.cls_ncomp,
                state.cls_npoints,
                state._psichol,
                state._psi_updates,
                state.meta,
                state.alpha,
                hypers.mu0,
                hypers.kappa0,
                hypers.m,
                hypers.psi0,
                hypers.mu0,
                np.linalg.inv(a0),
                nu0,
                const,
                256,
                perm,
                u1,
                cand_t,
                cand_s,
            )
        else:
            for j in range(state.n_points):
                i = int(perm[j])
                if state.labels[i] >= 0:
                    continue
                _igmm_step(state, i, prior, float(u1[j]))
            if state._psichol is not None:
                state.igmm_refactor_all(hypers)
        return state

    sig_prior, sig_prior_inv, sig_prior_logdet = _prior_mode_consts(hypers, d)
    if impl == "kernel":
        mu_nc, ainv_nc, nu_nc, const_nc, _ = _newclass_pred_consts(hypers, d)
        cand_t = np.empty(cap_c + cap_k + 2, dtype=np.int64)
        cand_s = np.empty(cap_c + cap_k + 2)
        _kernels.component_pass(
            state.X,
            state.labels,
            state.outlier.view(np.uint8),
            state.point_comp,
            state.comp_active,
            state.comp_class,
            state.comp_n,
            state.comp_sum,
            state.comp_scatter,
            state.comp_nlab,
            state.comp_mu,
            state.cls_active,
            state.cls_ncomp,
            state.cls_npoints,
            state.cls_mu,
            state.cls_sig,
            state.cls_sig_inv,
            state.cls_sig_logdet,
            state.meta,
            state.alpha,
            hypers.kappa1,
            mu_nc,
            ainv_nc,
            nu_nc,
            const_nc,
            sig_prior,
            sig_prior_inv,
            sig_prior_logdet,
            perm,
            u1,
            cand_t,
            cand_s,
        )
        u2 = rng.random(int(state.meta[0]))
        kap = hypers.kappa0 * hypers.kappa1 / (hypers.kappa0 + hypers.kappa1)
        psi_chol = np.linalg.cholesky(hypers.psi0)
        _kernels.class_pass(
            state.comp_active,
            state.comp_class,
            state.comp_n,
            state.comp_sum,
            state.comp_scatter,
            state.comp_nlab,
            state.cls_active,
            state.cls_ncomp,
            state.cls_npoints,
            state.cls_mu,
            state.cls_sig,
            state.cls_sig_inv,
            state.cls_sig_logdet,
            state.meta,
            state.gamma,
            hypers.kappa1,
            hypers.mu0,
            hypers.psi0,
            float(2.0 * np.log(np.diag(psi_chol)).sum()),
            kap,
            hypers.m,
            sig_prior,
            sig_prior_inv,
            sig_prior_logdet,
            u2,
            cand_t,
            cand_s,
        )
    else:
        for j in range(state.n_points):
            _component_step(state, int(perm[j]), hypers, float(u1[j]))
        u2 = rng.random(int(state.meta[0]))
        for c in range(int(state.meta[0])):
            if not state.comp_active[c] or state.comp_nlab[c] > 0:
                continue
            _class_step(state, c, hypers, float(u2[c]))
    return state


# ---------------------------------------------------------------------------
# joint score


def log_joint(state: MixtureState, hypers, variant: str) -> float:
    """Unnormalized joint log score of the partition: seating terms of both
    restaurant processes plus the collapsed block marginals under the
    current estimates. Comparable across sweeps of one run; used to pick
    the reported sample."""
    alpha, gamma = state.alpha, state.gamma
    comps = state.active_components()
    classes = state.active_classes()
    if variant == IGMM:
        prior = NIWParams(hypers.mu0, hypers.psi0, hypers.kappa0, hypers.m)
        data = sum(log_niw_marginal(state.component_stats(c), prior) for c in comps)
        n = state.n_points
        seat = (
            len(classes) * math.log(alpha)
            + gammaln(alpha)
            - gammaln(alpha + n)
            + sum(gammaln(float(state.comp_n[c])) for c in comps)
        )
        return float(data + seat)

    act = np.asarray(comps, dtype=np.int64)
    kk = state.comp_class[act]
    n = state.comp_n[act].astype(float)
    xbar = state.comp_sum[act] / n[:, None]
    dx = xbar - state.cls_mu[kk]
    sinv = state.cls_sig_inv[kk]
    tr = np.einsum("lab,lab->l", sinv, state.comp_scatter[act])
    q = np.einsum("la,lab,lb->l", dx, sinv, dx)
    k1 = hypers.kappa1
    w = n * k1 / (n + k1)
    data = float(
        np.sum(
            -0.5 * n * state.d * LOG2PI
            - 0.5 * n * state.cls_sig_logdet[kk]
            + 0.5 * state.d * (math.log(k1) - np.log(k1 + n))
            - 0.5 * (tr + w * q)
        )
    )
    seat = 0.0
    for k in classes:
        nk = float(state.cls_npoints[k])
        lk = int(state.cls_ncomp[k])
        seat += lk * math.log(alpha) + gammaln(alpha) - gammaln(alpha + nk)
    seat += float(np.sum(gammaln(n)))
    ltot = len(comps)
    seat += (
        len(classes) * math.log(gamma)
        + gammaln(gamma)
        - gammaln(gamma + ltot)
        + sum(gammaln(float(state.cls_ncomp[k])) for k in classes)
    )
    return float(data + seat)
