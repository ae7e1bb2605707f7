"""Pin the two class-covariance estimators on one fixed d=1 state.

Builds a small two-class partition with unequal component sizes (the case
where the "posterior_max" and "component_weighted" estimates disagree),
numerically maximizes the weighted log-density over the class variance by
golden-section search on log v, and prints all three numbers. The printed
values are frozen into tests/test_hypers.py.
"""

import numpy as np
from scipy.optimize import minimize_scalar

from nelmix.hypers import (
    HiddenEstimates,
    HyperPriorConfig,
    HyperState,
    estimate_sigma_k,
    log_weighted_posterior,
    refresh_hidden_estimates,
    snapshot_classes,
)
from nelmix.partition import MixtureState


def build_state():
    X = np.array([[0.0], [0.4], [1.1], [3.0], [10.0], [10.5], [9.6], [10.2]])
    pc = np.array([0, 0, 0, 1, 2, 2, 2, 2])
    state = MixtureState.from_assignments(X, pc, {0: 0, 1: 0, 2: 1}, 1.0, 1.0)
    hypers = HyperState(mu0=[0.5], psi0=[[1.2]], kappa0=0.7, kappa1=1.3, m=3.0)
    cfg = HyperPriorConfig.defaults(1)
    state.init_estimates(hypers)
    state.apply_hidden(refresh_hidden_estimates(state, hypers, cfg, weighting="weighted"))
    return state, hypers, cfg


def main():
    state, hypers, cfg = build_state()
    snaps = {s.class_id: s for s in snapshot_classes(state)}
    s = snaps[0]
    hid = HiddenEstimates()
    for k, snap in snaps.items():
        hid.class_mean[k] = snap.mu_k
        hid.class_cov[k] = snap.sigma_k
    for snap in snaps.values():
        for c, mu in zip(snap.comp_ids, snap.mu_kl):
            hid.comp_mean[int(c)] = mu

    args = (s.comp_counts, s.comp_scatters, s.mu_kl, s.mu_k, hypers.mu0, hypers.psi0,
            hypers.kappa0, hypers.kappa1, hypers.m, state.n_points)
    est_pm = estimate_sigma_k(*args, mode="posterior_max")
    est_cw = estimate_sigma_k(*args, mode="component_weighted")

    def neg(logv):
        return -log_weighted_posterior(
            "sigma_k", np.array([[np.exp(logv)]]), state, hypers, hid, cfg, class_id=0
        )

    res = minimize_scalar(neg, bounds=(-8.0, 8.0), method="bounded",
                          options={"xatol": 1e-14})
    vmax = float(np.exp(res.x))
    print(f"stored class means: {[float(snaps[k].mu_k[0]) for k in (0, 1)]!r}")
    print(f"posterior_max      : {float(est_pm[0, 0])!r}")
    print(f"component_weighted : {float(est_cw[0, 0])!r}")
    print(f"numerical maximizer: {vmax!r}")
    print(f"pm vs maximizer rel: {abs(est_pm[0, 0] - vmax) / vmax:.3e}")
    print(f"cw vs maximizer rel: {abs(est_cw[0, 0] - vmax) / vmax:.3e}")


if __name__ == "__main__":
    main()
