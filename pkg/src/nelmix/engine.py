"""Run orchestration: pre-inference, outlier flagging, the restricted Gibbs
loop for the three model variants, and outcome extraction.

A run proceeds as: fit component structure to the labeled data alone
(two-layer variants), flag the least likely fixed fraction of labeled
points per class as outliers, seed the unlabeled side — for two-layer
variants via a short single-layer clustering pass whose clusters become
novel-class candidates — build the initial joint partition, then sweep.
Labeled non-outlier points keep their class for the whole run; that is
enforced inside the sampler, not here. The reported labeling is the
recorded post-burn-in sweep with the highest joint log score.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .hypers import (
    HyperPriorConfig,
    HyperState,
    estimate_hypers,
    refresh_hidden_estimates,
)
from .partition import I2GMM, IGMM, MixtureState, gibbs_sweep, log_joint

log = logging.getLogger(__name__)

AI2GMM = "ai2gmm"
VARIANTS = (IGMM, I2GMM, AI2GMM)

OUTCOME_STANDARD = "standard"
OUTCOME_COMPONENT = "component_discovery"
OUTCOME_NEW_CLASS = "new_class"
OUTCOME_KINDS = (OUTCOME_STANDARD, OUTCOME_COMPONENT, OUTCOME_NEW_CLASS)


@dataclass
class NELConfig:
    """Knobs of one run. Defaults follow the vague settings the evaluation
    protocol uses throughout; ``burn_in=None`` means half the sweeps."""

    variant: str = AI2GMM
    sweeps: int = 1000
    preinference_sweeps: int = 100
    warmup_sweeps: int = 100
    outlier_fraction: float = 0.20
    burn_in: int | None = None
    seed: int = 0
    alpha: float = 1.0
    gamma: float = 1.0
    hypers: HyperState | None = None
    hyper_priors: HyperPriorConfig | None = None
    recompute_every: int = 64
    impl: str = "kernel"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")
        if self.preinference_sweeps < 0:
            raise ValueError("preinference_sweeps must be nonnegative")
        if self.warmup_sweeps < 0:
            raise ValueError("warmup_sweeps must be nonnegative")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.burn_in is not None and not (0 <= self.burn_in < self.sweeps):
            raise ValueError("need sweeps > burn_in >= 0")
        if not (self.alpha > 0 and self.gamma > 0):
            raise ValueError("concentrations must be positive")
        if self.impl not in ("kernel", "python"):
            raise ValueError("impl must be 'kernel' or 'python'")

    @property
    def resolved_burn_in(self) -> int:
        return self.sweeps // 2 if self.burn_in is None else self.burn_in


@dataclass
class RunResult:
    """Final labeling of one run plus the information needed to audit it.

    ``outcome`` holds one of the three discovery kinds for unlabeled points
    and the empty string for labeled ones. Equality ignores wall-clock time,
    so deterministic reruns compare equal.
    """

    class_of: np.ndarray
    comp_of: np.ndarray
    outcome: np.ndarray
    outlier: np.ndarray
    logjoint_trace: np.ndarray
    hypers: HyperState
    map_sweep: int
    n_observed: int
    wall_seconds: float = field(compare=False, default=0.0)

    def __eq__(self, other):
        if not isinstance(other, RunResult):
            return NotImplemented
        return (
            np.array_equal(self.class_of, other.class_of)
            and np.array_equal(self.comp_of, other.comp_of)
            and np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.outlier, other.outlier)
            and np.array_equal(self.logjoint_trace, other.logjoint_trace)
            and np.array_equal(self.hypers.mu0, other.hypers.mu0)
            and np.array_equal(self.hypers.psi0, other.hypers.psi0)
            and self.hypers.kappa0 == other.hypers.kappa0
            and self.hypers.kappa1 == other.hypers.kappa1
            and self.hypers.m == other.hypers.m
            and self.map_sweep == other.map_sweep
            and self.n_observed == other.n_observed
        )

    @property
    def n_classes(self) -> int:
        return int(np.unique(self.class_of).size)

    @property
    def n_components(self) -> int:
        return int(np.unique(self.comp_of).size)


# ---------------------------------------------------------------------------
# pre-inference and outlier flagging


def _labeled_seed_state(X_lab, labels_lab, alpha, gamma) -> MixtureState:
    comp_class = {int(k): int(k) for k in np.unique(labels_lab)}
    return MixtureState.from_assignments(
        X_lab,
        labels_lab,
        comp_class,
        alpha,
        gamma,
        labels=labels_lab,
        outlier=np.zeros(len(labels_lab), dtype=bool),
    )


def preinference(X_lab, labels_lab, hypers: HyperState, config: NELConfig, rng, impl=None):
    """Fit component structure to the labeled data alone.

    Every point is pinned to its class, so the sweeps only split and merge
    components within classes. Hyperparameters stay fixed throughout.
    Returns the per-point component ids and the component-to-class map.
    """
    labels_lab = np.asarray(labels_lab, dtype=np.int64)
    if labels_lab.size == 0:
        raise ValueError("pre-inference needs at least one labeled point")
    if np.any(labels_lab < 0):
        raise ValueError("pre-inference expects fully labeled input")
    impl = config.impl if impl is None else impl
    state = _labeled_seed_state(X_lab, labels_lab, config.alpha, config.gamma)
    state.init_estimates(hypers)
    for _ in range(config.preinference_sweeps):
        state.apply_hidden(refresh_hidden_estimates(state, hypers, config.hyper_priors))
        gibbs_sweep(state, None, hypers, I2GMM, rng, impl=impl)
    return state.point_comp.copy(), state.component_class


def flag_outliers(
    X_lab,
    labels_lab,
    point_comp,
    comp_class: dict,
    hypers: HyperState,
    fraction: float,
    hyper_priors: HyperPriorConfig | None = None,
) -> np.ndarray:
    """Flag the least likely floor(fraction * class size) labeled points of
    each class, judged by the class-conditional likelihood of the point
    under the size-weighted mixture of its class's component predictives,
    with the point held out of its own component. Ties break by point index.
    """
    if not (0.0 <= fraction < 1.0):
        raise ValueError("outlier fraction must lie in [0, 1)")
    labels_lab = np.asarray(labels_lab, dtype=np.int64)
    n = labels_lab.shape[0]
    flags = np.zeros(n, dtype=bool)
    if fraction == 0.0 or n == 0:
        return flags
    state = MixtureState.from_assignments(
        X_lab,
        point_comp,
        comp_class,
        1.0,
        1.0,
        labels=labels_lab,
        outlier=np.zeros(n, dtype=bool),
    )
    state.init_estimates(hypers)
    state.apply_hidden(refresh_hidden_estimates(state, hypers, hyper_priors))

    d = state.d
    k1 = hypers.kappa1
    loglik = np.empty(n)
    for i in range(n):
        k = int(labels_lab[i])
        x = state.X[i]
        own = int(state.point_comp[i])
        terms = []
        weights = []
        for c in state.active_components():
            if int(state.comp_class[c]) != k:
                continue
            cnt = int(state.comp_n[c])
            csum = state.comp_sum[c]
            if c == own:
                cnt -= 1
                csum = csum - x
                if cnt == 0:
                    continue
            kp = k1 + cnt
            sl = (kp + 1.0) / kp
            mu_post = (k1 * state.cls_mu[k] + csum) / kp
            dx = x - mu_post
            q = float(dx @ state.cls_sig_inv[k] @ dx)
            terms.append(
                -0.5 * d * (math.log(2.0 * math.pi) + math.log(sl))
                - 0.5 * state.cls_sig_logdet[k]
                - 0.5 * q / sl
            )
            weights.append(cnt)
        if not terms:
            loglik[i] = -np.inf
            continue
        w = np.asarray(weights, dtype=float)
        loglik[i] = float(logsumexp(np.asarray(terms), b=w / w.sum()))

    for k in np.unique(labels_lab):
        members = np.flatnonzero(labels_lab == k)
        n_flag = int(math.floor(fraction * members.size))
        if n_flag == 0:
            continue
        order = members[np.lexsort((members, loglik[members]))]
        flags[order[:n_flag]] = True
    return flags


# ---------------------------------------------------------------------------
# outcome extraction


def classify_outcomes(class_of, comp_of, labels) -> np.ndarray:
    """Assign each unlabeled point its discovery kind.

    Sharing a component with any labeled point is standard classification;
    a fresh component inside a class that holds labeled points elsewhere is
    component discovery; a class with no labeled points anywhere is a new
    class. Labeled points get the empty string.
    """
    class_of = np.asarray(class_of, dtype=np.int64)
    comp_of = np.asarray(comp_of, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    lab = labels >= 0
    labeled_comps = set(comp_of[lab].tolist())
    labeled_classes = set(class_of[lab].tolist())
    out = np.full(class_of.shape[0], "", dtype="<U24")
    for i in np.flatnonzero(~lab):
        if int(comp_of[i]) in labeled_comps:
            out[i] = OUTCOME_STANDARD
        elif int(class_of[i]) in labeled_classes:
            out[i] = OUTCOME_COMPONENT
        else:
            out[i] = OUTCOME_NEW_CLASS
    return out


def final_labels(trace, records, burn_in: int):
    """Pick the reported sweep: the post-burn-in record with the highest
    joint log score (earliest wins ties). Returns its per-point class ids,
    component ids, and sweep index."""
    trace = np.asarray(trace, dtype=float)
    if not 0 <= burn_in < trace.shape[0]:
        raise ValueError("need at least one recorded sweep after burn-in")
    if len(records) != trace.shape[0]:
        raise ValueError("one record per traced sweep required")
    idx = int(burn_in + np.argmax(trace[burn_in:]))
    class_of, comp_of = records[idx]
    return np.asarray(class_of).copy(), np.asarray(comp_of).copy(), idx


# ---------------------------------------------------------------------------
# the full run


def _initial_assignments(labels, n_observed: int, pre_comp=None):
    """Per-point component ids and component-to-class map for sweep zero:
    labeled points keep their pre-inference components (or one component
    per class), unlabeled points share one provisional component in a
    fresh class."""
    n = labels.shape[0]
    point_comp = np.zeros(n, dtype=np.int64)
    comp_class: dict[int, int] = {}
    lab = labels >= 0
    if lab.any():
        if pre_comp is not None:
            pc, cmap = pre_comp
            point_comp[lab] = pc
            comp_class.update({int(c): int(k) for c, k in cmap.items()})
        else:
            point_comp[lab] = labels[lab]
            comp_class.update({int(k): int(k) for k in np.unique(labels[lab])})
    if (~lab).any():
        prov = (max(comp_class) + 1) if comp_class else 0
        point_comp[~lab] = prov
        comp_class[prov] = n_observed
    return point_comp, comp_class


def _warm_unlabeled_clusters(X_unlab, hypers, config: NELConfig, rng) -> np.ndarray:
    """Cluster the unlabeled points alone with a short single-layer run at
    fixed hyperparameters and return the per-point cluster ids.

    Starting the joint run from these clusters instead of one undifferentiated
    block spares the restricted sampler from having to carve novel classes out
    of a single provisional class one point at a time."""
    n = X_unlab.shape[0]
    state = MixtureState.from_assignments(
        X_unlab,
        np.zeros(n, dtype=np.int64),
        {0: 0},
        config.alpha,
        config.gamma,
        labels=np.full(n, -1, dtype=np.int64),
        outlier=np.zeros(n, dtype=bool),
    )
    state.init_estimates(hypers)
    for w in range(config.warmup_sweeps):
        gibbs_sweep(state, None, hypers, IGMM, rng, impl=config.impl)
        if config.recompute_every and (w + 1) % config.recompute_every == 0:
            state.recompute_stats()
            if state._psichol is not None:
                state.igmm_refactor_all(hypers)
    return state.point_comp.copy()


def _warm_initial(X, labels, n_observed: int, pre_comp, hypers, config: NELConfig, rng):
    """Initial partition for two-layer variants: labeled points keep their
    pre-inference components, and each cluster found among the unlabeled
    points becomes its own novel class holding one component."""
    point_comp, comp_class = _initial_assignments(labels, n_observed, pre_comp)
    unlab = np.flatnonzero(labels < 0)
    if unlab.size == 0 or config.warmup_sweeps == 0:
        return point_comp, comp_class
    del comp_class[int(point_comp[unlab[0]])]
    flat = _warm_unlabeled_clusters(np.ascontiguousarray(X[unlab]), hypers, config, rng)
    next_comp = (max(comp_class) + 1) if comp_class else 0
    next_cls = n_observed
    remap: dict[int, int] = {}
    for i, f in zip(unlab, flat):
        f = int(f)
        if f not in remap:
            remap[f] = next_comp
            comp_class[next_comp] = next_cls
            next_comp += 1
            next_cls += 1
        point_comp[i] = remap[f]
    return point_comp, comp_class


def run_nel(X, labels=None, config: NELConfig | None = None, on_sweep=None) -> RunResult:
    """Run one variant on one dataset and extract the reported labeling.

    ``labels`` uses -1 for unlabeled points and dense ids 0..M-1 for
    observed classes. ``on_sweep(sweep_index, state)`` is called after every
    sweep; it must not mutate the state.
    """
    t0 = time.perf_counter()
    config = config or NELConfig()
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty (n, d) array")
    n, d = X.shape
    labels = (
        np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    )
    if labels.shape[0] != n:
        raise ValueError("labels must have one entry per point")
    hypers = config.hypers.copy() if config.hypers is not None else HyperState.vague(d)
    if hypers.d != d:
        raise ValueError("hyperparameter dimension does not match the data")
    rng = np.random.default_rng(config.seed)
    lab = labels >= 0
    n_observed = int(labels[lab].max()) + 1 if lab.any() else 0
    two_layer = config.variant in (I2GMM, AI2GMM)

    outlier = np.zeros(n, dtype=bool)
    pre_comp = None
    if two_layer and lab.any():
        pc, cmap = preinference(X[lab], labels[lab], hypers, config, rng)
        pre_comp = (pc, cmap)
        if config.outlier_fraction > 0.0:
            outlier[lab] = flag_outliers(
                X[lab],
                labels[lab],
                pc,
                cmap,
                hypers,
                config.outlier_fraction,
                config.hyper_priors,
            )
    elif two_layer:
        log.info("no labeled points: skipping pre-inference and outlier flagging")

    if two_layer:
        point_comp, comp_class = _warm_initial(
            X, labels, n_observed, pre_comp, hypers, config, rng
        )
    else:
        point_comp, comp_class = _initial_assignments(labels, n_observed, pre_comp)
    state = MixtureState.from_assignments(
        X, point_comp, comp_class, config.alpha, config.gamma, labels=labels, outlier=outlier
    )
    state.init_estimates(hypers)
    samp_variant = I2GMM if two_layer else IGMM
    prior_cfg = None
    if config.variant == AI2GMM:
        prior_cfg = config.hyper_priors or HyperPriorConfig.defaults(d)

    burn = config.resolved_burn_in
    trace = np.empty(config.sweeps)
    best_lj = -np.inf
    best: tuple[np.ndarray, np.ndarray] | None = None
    best_sweep = -1
    for s in range(config.sweeps):
        if config.variant == AI2GMM:
            hypers = estimate_hypers(state, hypers, prior_cfg)
        if two_layer:
            state.apply_hidden(
                refresh_hidden_estimates(state, hypers, prior_cfg or config.hyper_priors)
            )
        gibbs_sweep(state, None, hypers, samp_variant, rng, impl=config.impl)
        if config.recompute_every and (s + 1) % config.recompute_every == 0:
            state.recompute_stats()
            if samp_variant == IGMM and state._psichol is not None:
                state.igmm_refactor_all(hypers)
        lj = log_joint(state, hypers, samp_variant)
        trace[s] = lj
        if s >= burn and (best is None or lj > best_lj):
            best_lj = lj
            best = (state.comp_class[state.point_comp].copy(), state.point_comp.copy())
            best_sweep = s
        if on_sweep is not None:
            on_sweep(s, state)

    class_of, comp_of = best
    outcome = classify_outcomes(class_of, comp_of, labels)
    return RunResult(
        class_of=class_of,
        comp_of=comp_of,
        outcome=outcome,
        outlier=outlier,
        logjoint_trace=trace,
        hypers=hypers,
        map_sweep=best_sweep,
        n_observed=n_observed,
        wall_seconds=time.perf_counter() - t0,
    )
