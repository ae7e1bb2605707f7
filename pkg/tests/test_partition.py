"""Partition state and reference sampler: seating-prior fidelity,
exchangeability of the joint, bookkeeping round trips, and the labeling
restrictions."""

import math

import numpy as np
import pytest

from nelmix.hypers import HyperPriorConfig, HyperState, refresh_hidden_estimates
from nelmix.niw import NIWParams, SuffStats, log_niw_marginal, niw_posterior_predictive_logpdf
from nelmix.partition import (
    I2GMM,
    IGMM,
    NEW,
    LabelInfo,
    MixtureState,
    _attach_point,
    _detach_point,
    _log_comp_pred,
    _log_newclass_pred,
    _pick,
    _point_candidates,
    class_logweights_for_component,
    crp_component_logweights,
    gibbs_sweep,
    log_joint,
    sample_class_indicator,
    sample_component_indicator,
)


def _state_with_counts(counts, alpha=1.5, d=2, spread=8.0):
    """One class whose components have the given sizes, points far apart so
    the structure is unambiguous."""
    rng = np.random.default_rng(0)
    rows = []
    pc = []
    for c, n in enumerate(counts):
        center = np.array([spread * c, 0.0])[:d]
        rows.append(center + rng.normal(scale=0.1, size=(n, d)))
        pc.extend([c] * n)
    X = np.vstack(rows)
    comp_class = {c: 0 for c in range(len(counts))}
    return MixtureState.from_assignments(X, np.array(pc), comp_class, alpha, 1.0)


def test_crp_prior_fidelity():
    # Criterion: constant likelihood, 1e5 draws, within 3 MC standard errors
    counts = [5, 3, 2]
    alpha = 1.5
    state = _state_with_counts(counts, alpha=alpha)
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    pairs = crp_component_logweights(np.zeros(2), 0, state, hypers, loglik=lambda t: 0.0)
    targets = [t for t, _ in pairs]
    scores = np.array([s for _, s in pairs])
    assert targets == [0, 1, 2, NEW]

    n_draws = 100_000
    rng = np.random.default_rng(123)
    u = rng.random(n_draws)
    picks = np.array([_pick(scores, ui) for ui in u])
    total = sum(counts) + alpha
    expected = np.array(counts + [alpha]) / total
    freq = np.bincount(picks, minlength=4) / n_draws
    se = np.sqrt(expected * (1 - expected) / n_draws)
    np.testing.assert_array_less(np.abs(freq - expected), 3 * se)


def test_crp_weights_shape_and_new_class():
    state = _state_with_counts([4, 2])
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    x = np.array([0.3, -0.2])
    pairs = crp_component_logweights(x, 0, state, hypers)
    assert [t for t, _ in pairs] == [0, 1, NEW]
    # existing-component weight = log N_kl + predictive
    n0 = float(state.comp_n[0])
    assert pairs[0][1] == pytest.approx(
        math.log(n0) + _log_comp_pred(state, 0, x, hypers.kappa1), abs=1e-12
    )
    fresh = crp_component_logweights(x, NEW, state, hypers)
    assert len(fresh) == 1 and fresh[0][0] == NEW
    # fresh-class predictive: conjugate chain with the squeezed strength
    k = hypers.kappa0 * hypers.kappa1 / (hypers.kappa0 + hypers.kappa1)
    prior = NIWParams(hypers.mu0, hypers.psi0, k, hypers.m)
    want = math.log(state.alpha) + niw_posterior_predictive_logpdf(
        x, SuffStats.empty(2), prior
    )
    assert fresh[0][1] == pytest.approx(want, abs=1e-9)
    assert _log_newclass_pred(x, hypers, 2) == pytest.approx(want - math.log(state.alpha), abs=1e-12)


def test_log_joint_exchangeable():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(25, 2))
    pc = rng.integers(0, 4, size=25)
    comp_class = {0: 0, 1: 0, 2: 1, 3: 2}
    hypers = HyperState.vague(2)
    state = MixtureState.from_assignments(X, pc, comp_class, 1.0, 1.0)
    perm = rng.permutation(25)
    state_p = MixtureState.from_assignments(X[perm], pc[perm], comp_class, 1.0, 1.0)
    for variant in (IGMM, I2GMM):
        a = log_joint(state, hypers, variant)
        b = log_joint(state_p, hypers, variant)
        assert a == pytest.approx(b, abs=1e-9)


def test_log_joint_invariant_to_component_relabeling():
    rng = np.random.default_rng(15)
    X = rng.normal(size=(20, 2))
    pc = rng.integers(0, 3, size=20)
    hypers = HyperState.vague(2)
    a = log_joint(MixtureState.from_assignments(X, pc, {0: 0, 1: 1, 2: 1}, 1.0, 1.0), hypers, I2GMM)
    swap = {0: 2, 1: 0, 2: 1}
    pc2 = np.array([swap[c] for c in pc])
    b = log_joint(MixtureState.from_assignments(X, pc2, {2: 0, 0: 1, 1: 1}, 1.0, 1.0), hypers, I2GMM)
    assert a == pytest.approx(b, abs=1e-9)


def test_from_assignments_compacts_ids():
    X = np.arange(10, dtype=float).reshape(5, 2)
    pc = np.array([7, 7, 2, 9, 2])
    state = MixtureState.from_assignments(X, pc, {7: 0, 2: 0, 9: 3}, 1.0, 1.0)
    # sorted original ids 2,7,9 -> slots 0,1,2
    np.testing.assert_array_equal(state.point_comp, [1, 1, 0, 2, 0])
    assert state.comp_class[0] == 0 and state.comp_class[1] == 0 and state.comp_class[2] == 3
    assert state.n_components == 3
    assert state.n_classes == 2
    state.check_consistency()


def test_detach_attach_roundtrip():
    state = _state_with_counts([4, 3])
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    before = state.copy()
    for i in (0, 5, 6):
        c_old = int(state.point_comp[i])
        _detach_point(state, i, False)
        _attach_point(state, i, ("c", c_old), False, hypers)
        np.testing.assert_array_equal(state.point_comp, before.point_comp)
        np.testing.assert_array_equal(state.comp_n, before.comp_n)
        np.testing.assert_allclose(state.comp_sum, before.comp_sum, atol=1e-9)
        np.testing.assert_allclose(state.comp_scatter, before.comp_scatter, atol=1e-8)
    state.check_consistency()


def test_detach_last_point_kills_component():
    state = _state_with_counts([1, 3])
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    _detach_point(state, 0, False)
    assert not state.comp_active[0]
    assert state.cls_ncomp[0] == 1
    _attach_point(state, 0, ("nc", 0), False, hypers)
    assert state.n_components == 2
    state.check_consistency()


def test_labeled_point_candidates_restricted():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 2))
    X[6:] += 15.0
    labels = np.array([0] * 6 + [1] * 6, dtype=np.int64)
    outlier = np.zeros(12, dtype=bool)
    outlier[3] = True
    state = MixtureState.from_assignments(
        X, np.array([0] * 6 + [1] * 6), {0: 0, 1: 1}, 1.0, 1.0, labels=labels, outlier=outlier
    )
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)

    # non-outlier labeled point: candidates stay inside class 0
    _detach_point(state, 1, True)
    targets, _ = _point_candidates(state, X[1], 0, hypers)
    kinds = set()
    for t in targets:
        if t[0] == "c":
            kinds.add(int(state.comp_class[t[1]]))
        elif t[0] == "nc":
            kinds.add(int(t[1]))
        else:
            kinds.add("nk")
    assert kinds == {0}
    _attach_point(state, 1, ("c", 0), True, hypers)

    # outlier labeled point: full menu, including a brand-new class
    _detach_point(state, 3, False)
    targets, _ = _point_candidates(state, X[3], None, hypers)
    assert any(t[0] == "nk" for t in targets)
    assert any(t[0] == "nc" and t[1] == 1 for t in targets)
    _attach_point(state, 3, ("c", 0), False, hypers)
    state.check_consistency()


def test_forced_component_class_fixed():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(10, 2))
    labels = np.array([0] * 5 + [-1] * 5, dtype=np.int64)
    state = MixtureState.from_assignments(
        X, np.array([0] * 5 + [1] * 5), {0: 0, 1: 1}, 1.0, 1.0,
        labels=labels, outlier=np.zeros(10, dtype=bool),
    )
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    assert state.comp_nlab[0] == 5
    for seed in range(20):
        got = sample_class_indicator(0, state, hypers, np.random.default_rng(seed))
        assert got == 0
    with pytest.raises(ValueError):
        class_logweights_for_component(0, state, hypers)


def test_class_weights_symmetric_state():
    # two identical classes, a component equidistant from both: equal weights
    d = 2
    X = np.vstack(
        [
            np.array([[-5.0, 1.0], [-5.0, -1.0], [-5.2, 0.0]]),
            np.array([[5.0, 1.0], [5.0, -1.0], [5.2, 0.0]]),
        ]
    )
    state = MixtureState.from_assignments(
        X, np.array([0, 0, 0, 1, 1, 1]), {0: 0, 1: 1}, 1.0, 1.0
    )
    hypers = HyperState.vague(d)
    state.init_estimates(hypers)
    # mirror the estimates so the two classes are exactly symmetric
    state.cls_mu[0] = np.array([-5.0, 0.0])
    state.cls_mu[1] = np.array([5.0, 0.0])
    sig = np.array([[0.05, 0.0], [0.0, 0.6]])
    for k in (0, 1):
        state.set_class_estimates(k, state.cls_mu[k], sig)
    block = SuffStats.from_points(np.array([[0.0, 1.0], [0.0, -1.0]]))
    pairs = class_logweights_for_component(block, state, hypers)
    weights = dict(pairs)
    assert weights[0] == pytest.approx(weights[1], abs=1e-9)
    assert set(weights) == {0, 1, NEW}


def test_class_marginal_matches_niw_for_fresh_class():
    # the NEW-class block score is the conjugate marginal with the squeezed
    # prior strength
    rng = np.random.default_rng(31)
    X = rng.normal(size=(4, 2)) + 3.0
    state = _state_with_counts([3])
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    block = SuffStats.from_points(X)
    pairs = dict(class_logweights_for_component(block, state, hypers))
    k = hypers.kappa0 * hypers.kappa1 / (hypers.kappa0 + hypers.kappa1)
    prior = NIWParams(hypers.mu0, hypers.psi0, k, hypers.m)
    want = math.log(state.gamma) + log_niw_marginal(block, prior)
    assert pairs[NEW] == pytest.approx(want, abs=1e-9)


def test_sampler_single_point_conditional_frequencies():
    # resampling one point repeatedly from a frozen state follows the
    # normalized candidate scores
    state = _state_with_counts([6, 4], spread=3.0)
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    i = 0
    draws = 20_000
    hits = {}
    base = state.copy()
    x = base.X[i]
    _detach_point(base, i, False)
    targets, scores = _point_candidates(base, x, None, hypers)
    probs = np.exp(scores - scores.max())
    probs /= probs.sum()
    rng = np.random.default_rng(99)
    for _ in range(draws):
        work = state.copy()
        c = sample_component_indicator(i, work, hypers, rng)
        key = int(work.comp_class[c]) if work.comp_n[c] > 1 else "fresh"
        hits[key] = hits.get(key, 0) + 1
    # coarse check: the dominant existing component should win roughly its
    # posterior share
    p_existing = probs[0] + probs[1]
    got = hits.get(0, 0) / draws
    assert abs(got - p_existing) < 4 * np.sqrt(p_existing * (1 - p_existing) / draws) + 0.01


def test_gibbs_sweep_python_respects_labels():
    rng = np.random.default_rng(12)
    X = np.vstack([rng.normal(0, 0.5, (10, 2)), rng.normal(10, 0.5, (10, 2))])
    labels = np.array([0] * 10 + [-1] * 10, dtype=np.int64)
    outlier = np.zeros(20, dtype=bool)
    info = LabelInfo(labels, outlier)
    state = MixtureState.from_assignments(
        X, np.array([0] * 10 + [1] * 10), {0: 0, 1: 1}, 1.0, 1.0,
        labels=labels, outlier=outlier,
    )
    hypers = HyperState.vague(2)
    state.init_estimates(hypers)
    cfg = HyperPriorConfig.defaults(2)
    rng_s = np.random.default_rng(5)
    for _ in range(10):
        state.apply_hidden(refresh_hidden_estimates(state, hypers, cfg))
        gibbs_sweep(state, info, hypers, I2GMM, rng_s, impl="python")
        state.check_consistency()
        for i in range(10):
            assert state.comp_class[state.point_comp[i]] == 0


def test_check_consistency_detects_corruption():
    state = _state_with_counts([3, 2])
    state.comp_n[0] += 1
    with pytest.raises(AssertionError):
        state.check_consistency()
