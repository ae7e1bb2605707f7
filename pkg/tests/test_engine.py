"""End-to-end engine behavior: pre-inference, outlier flagging, labeling
restrictions across full runs, outcome kinds, and reporting."""

import numpy as np
import pytest

from nelmix.engine import (
    AI2GMM,
    I2GMM,
    IGMM,
    OUTCOME_COMPONENT,
    OUTCOME_NEW_CLASS,
    OUTCOME_STANDARD,
    NELConfig,
    classify_outcomes,
    final_labels,
    flag_outliers,
    preinference,
    run_nel,
)
from nelmix.hypers import HyperState


def _blob_problem(rng, n_lab=24, n_unl=8, offset=(0.0, 0.0)):
    lab_pts = rng.normal(0, 0.25, (n_lab, 2))
    unl_pts = rng.normal(0, 0.25, (n_unl, 2)) + np.asarray(offset)
    X = np.vstack([lab_pts, unl_pts])
    labels = np.array([0] * n_lab + [-1] * n_unl, dtype=np.int64)
    return X, labels


# ---------------------------------------------------------------------------
# config and result plumbing


def test_config_validation():
    with pytest.raises(ValueError):
        NELConfig(variant="gmm")
    with pytest.raises(ValueError):
        NELConfig(sweeps=0)
    with pytest.raises(ValueError):
        NELConfig(outlier_fraction=1.0)
    with pytest.raises(ValueError):
        NELConfig(burn_in=10, sweeps=10)
    with pytest.raises(ValueError):
        NELConfig(impl="cuda")
    assert NELConfig(sweeps=9).resolved_burn_in == 4
    assert NELConfig(sweeps=9, burn_in=2).resolved_burn_in == 2


def test_run_result_equality_ignores_wall_clock():
    X, labels = _blob_problem(np.random.default_rng(0))
    cfg = NELConfig(variant=I2GMM, sweeps=12, preinference_sweeps=4, seed=5)
    a = run_nel(X, labels, cfg)
    b = run_nel(X, labels, cfg)
    assert a is not b
    assert a == b
    b.wall_seconds = a.wall_seconds + 123.0
    assert a == b


@pytest.mark.parametrize("variant", [IGMM, I2GMM, AI2GMM])
def test_determinism_per_variant(variant):
    X, labels = _blob_problem(np.random.default_rng(3), offset=(6.0, 0.0))
    cfg = NELConfig(variant=variant, sweeps=15, preinference_sweeps=5, seed=11)
    assert run_nel(X, labels, cfg) == run_nel(X, labels, cfg)


def test_final_labels_earliest_argmax():
    records = [(np.array([i]), np.array([i])) for i in range(5)]
    trace = np.array([9.0, 2.0, 7.0, 7.0, 1.0])
    class_of, comp_of, idx = final_labels(trace, records, burn_in=1)
    assert idx == 2  # the tie at sweep 3 loses to the earlier peak
    assert class_of[0] == 2 and comp_of[0] == 2
    _, _, idx = final_labels(trace, records, burn_in=4)
    assert idx == 4
    with pytest.raises(ValueError):
        final_labels(trace, records, burn_in=5)
    with pytest.raises(ValueError):
        final_labels(trace, records[:3], burn_in=0)


def test_classify_outcomes_unit():
    labels = np.array([0, 0, -1, -1, -1, -1])
    class_of = np.array([0, 0, 0, 0, 1, 1])
    comp_of = np.array([0, 0, 0, 3, 4, 4])
    out = classify_outcomes(class_of, comp_of, labels)
    assert out[0] == "" and out[1] == ""
    assert out[2] == OUTCOME_STANDARD  # shares component 0 with labeled points
    assert out[3] == OUTCOME_COMPONENT  # fresh component in a labeled class
    assert out[4] == OUTCOME_NEW_CLASS and out[5] == OUTCOME_NEW_CLASS


def test_classify_outcomes_outlier_component_counts_as_standard():
    # an outlier that drifted into its own component in a labeled class:
    # points joining THAT component share it with a labeled point
    labels = np.array([0, -1])
    out = classify_outcomes(np.array([0, 0]), np.array([1, 1]), labels)
    assert out[1] == OUTCOME_STANDARD


# ---------------------------------------------------------------------------
# pre-inference and outliers


def test_preinference_splits_bimodal_class():
    rng = np.random.default_rng(6)
    X = np.vstack([rng.normal(0, 0.3, (20, 2)), rng.normal(6, 0.3, (20, 2))])
    labels = np.zeros(40, dtype=np.int64)
    cfg = NELConfig(variant=I2GMM, sweeps=10, preinference_sweeps=40, seed=2)
    pc, cmap = preinference(X, labels, HyperState.vague(2), cfg, np.random.default_rng(2))
    assert all(k == 0 for k in cmap.values())
    left = set(pc[:20].tolist())
    right = set(pc[20:].tolist())
    assert left.isdisjoint(right)
    with pytest.raises(ValueError):
        preinference(X[:0], labels[:0], HyperState.vague(2), cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        preinference(X, np.full(40, -1, dtype=np.int64), HyperState.vague(2), cfg,
                      np.random.default_rng(0))


def test_flag_outliers_counts_and_extreme_point():
    rng = np.random.default_rng(8)
    X0 = rng.normal(0, 0.5, (10, 2))
    X0[4] = [40.0, -40.0]  # unmistakable
    X1 = rng.normal(8, 0.5, (7, 2))
    X = np.vstack([X0, X1])
    labels = np.array([0] * 10 + [1] * 7, dtype=np.int64)
    point_comp = np.array([0] * 10 + [1] * 7)
    flags = flag_outliers(X, labels, point_comp, {0: 0, 1: 1}, HyperState.vague(2), 0.20)
    assert flags[:10].sum() == 2  # floor(0.2 * 10)
    assert flags[10:].sum() == 1  # floor(0.2 * 7)
    assert flags[4]
    # fraction zero: nothing flagged
    none = flag_outliers(X, labels, point_comp, {0: 0, 1: 1}, HyperState.vague(2), 0.0)
    assert not none.any()
    with pytest.raises(ValueError):
        flag_outliers(X, labels, point_comp, {0: 0, 1: 1}, HyperState.vague(2), 1.0)


def test_flag_outliers_tie_break_by_index():
    # four identical points, fraction 0.5: the two lowest indices win
    X = np.zeros((4, 1))
    labels = np.zeros(4, dtype=np.int64)
    flags = flag_outliers(X, labels, np.zeros(4, dtype=np.int64), {0: 0},
                          HyperState.vague(1), 0.5)
    np.testing.assert_array_equal(flags, [True, True, False, False])


# ---------------------------------------------------------------------------
# restriction invariants over full runs


@pytest.mark.parametrize("variant", [I2GMM, AI2GMM])
def test_labeled_points_never_leave_class(variant):
    rng = np.random.default_rng(14)
    X = np.vstack(
        [
            rng.normal((0, 0), 0.4, (25, 2)),
            rng.normal((7, 0), 0.4, (20, 2)),
            rng.normal((0, 7), 0.4, (15, 2)),
        ]
    )
    labels = np.array([0] * 25 + [1] * 20 + [-1] * 15, dtype=np.int64)
    violations = []

    for seed in range(3):
        cfg = NELConfig(variant=variant, sweeps=20, preinference_sweeps=8, seed=seed)

        def watch(s, state):
            for i in range(45):
                if state.outlier[i]:
                    continue
                k = int(state.comp_class[state.point_comp[i]])
                if k != labels[i]:
                    violations.append((seed, s, i))
            # a component holding labeled points must sit in their class
            # (slots are recycled, so identity is per sweep, not global)
            for c in state.active_components():
                if state.comp_nlab[c] == 0:
                    continue
                members = np.flatnonzero(state.point_comp == c)
                pinned_members = [
                    i for i in members if labels[i] >= 0 and not state.outlier[i]
                ]
                if len(pinned_members) != state.comp_nlab[c]:
                    violations.append((seed, s, f"nlab{c}"))
                for i in pinned_members:
                    if int(state.comp_class[c]) != labels[i]:
                        violations.append((seed, s, f"comp{c}"))

        res = run_nel(X, labels, cfg, on_sweep=watch)
        for i in range(45):
            if not res.outlier[i]:
                assert res.class_of[i] == labels[i]
    assert violations == []


def test_igmm_labeled_points_fixed():
    rng = np.random.default_rng(20)
    X = np.vstack([rng.normal(0, 0.4, (15, 2)), rng.normal(5, 0.4, (15, 2))])
    labels = np.array([0] * 15 + [-1] * 15, dtype=np.int64)
    cfg = NELConfig(variant=IGMM, sweeps=25, seed=4)
    res = run_nel(X, labels, cfg)
    np.testing.assert_array_equal(res.class_of[:15], 0)
    assert not res.outlier.any()  # single-layer runs skip outlier flagging


# ---------------------------------------------------------------------------
# the three discovery kinds (fixed geometry, fixed seeds)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_outcome_standard(seed):
    rng = np.random.default_rng(42)
    X, labels = _blob_problem(rng, offset=(0.0, 0.0))
    cfg = NELConfig(variant=I2GMM, sweeps=60, preinference_sweeps=20, seed=seed)
    res = run_nel(X, labels, cfg)
    assert set(res.outcome[24:].tolist()) == {OUTCOME_STANDARD}


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_outcome_component_discovery(seed):
    rng = np.random.default_rng(42)
    X, labels = _blob_problem(rng, offset=(1.3, 0.0))
    cfg = NELConfig(variant=I2GMM, sweeps=60, preinference_sweeps=20, seed=seed)
    res = run_nel(X, labels, cfg)
    assert set(res.outcome[24:].tolist()) == {OUTCOME_COMPONENT}


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_outcome_new_class(seed):
    rng = np.random.default_rng(42)
    X, labels = _blob_problem(rng, offset=(25.0, 25.0))
    cfg = NELConfig(variant=I2GMM, sweeps=60, preinference_sweeps=20, seed=seed)
    res = run_nel(X, labels, cfg)
    assert set(res.outcome[24:].tolist()) == {OUTCOME_NEW_CLASS}


# ---------------------------------------------------------------------------
# misc engine behavior


def test_unlabeled_only_run():
    rng = np.random.default_rng(30)
    X = np.vstack([rng.normal(0, 0.3, (20, 2)), rng.normal(9, 0.3, (20, 2))])
    cfg = NELConfig(variant=AI2GMM, sweeps=30, seed=0)
    res = run_nel(X, None, cfg)
    assert res.n_observed == 0
    assert res.n_classes >= 2
    assert set(res.outcome.tolist()) == {OUTCOME_NEW_CLASS}


def test_warmup_config_validation():
    with pytest.raises(ValueError):
        NELConfig(warmup_sweeps=-1)


def test_warm_start_seeds_separated_blobs_as_classes():
    # two well-separated unlabeled blobs next to one labeled class: the
    # warm-start pass hands each blob to the joint run as its own
    # novel-class candidate, so even a short run keeps them apart
    rng = np.random.default_rng(14)
    X = np.vstack([
        rng.normal((0.0, 0.0), 0.3, (15, 2)),
        rng.normal((8.0, 0.0), 0.3, (12, 2)),
        rng.normal((0.0, 8.0), 0.3, (12, 2)),
    ])
    labels = np.array([0] * 15 + [-1] * 24, dtype=np.int64)
    cfg = NELConfig(variant=I2GMM, sweeps=20, preinference_sweeps=5, seed=3)
    res = run_nel(X, labels, cfg)
    assert res.n_classes >= 3
    assert set(res.outcome[15:].tolist()) == {OUTCOME_NEW_CLASS}
    assert len(set(res.class_of[15:27].tolist()) & set(res.class_of[27:].tolist())) == 0


def test_warmup_zero_single_block_init():
    # warmup_sweeps=0 starts all unlabeled points in one provisional block;
    # an easy two-blob problem still separates within the run
    rng = np.random.default_rng(14)
    X = np.vstack([rng.normal(0.0, 0.3, (15, 2)), rng.normal(8.0, 0.3, (12, 2))])
    labels = np.array([0] * 15 + [-1] * 12, dtype=np.int64)
    cfg = NELConfig(
        variant=I2GMM, sweeps=40, preinference_sweeps=5, warmup_sweeps=0, seed=3
    )
    res = run_nel(X, labels, cfg)
    assert set(res.outcome[15:].tolist()) == {OUTCOME_NEW_CLASS}


def test_map_sweep_post_burn_in():
    X, labels = _blob_problem(np.random.default_rng(1))
    cfg = NELConfig(variant=I2GMM, sweeps=16, preinference_sweeps=4, burn_in=10, seed=0)
    res = run_nel(X, labels, cfg)
    assert 10 <= res.map_sweep < 16
    assert res.logjoint_trace.shape == (16,)
    best = res.logjoint_trace[10:].max()
    assert res.logjoint_trace[res.map_sweep] == best


def test_run_nel_input_validation():
    with pytest.raises(ValueError):
        run_nel(np.zeros((0, 2)), None, NELConfig(sweeps=2))
    with pytest.raises(ValueError):
        run_nel(np.zeros((5, 2)), np.zeros(3, dtype=np.int64), NELConfig(sweeps=2))
    with pytest.raises(ValueError):
        run_nel(np.zeros((5, 2)), None,
                NELConfig(sweeps=2, hypers=HyperState.vague(3)))
