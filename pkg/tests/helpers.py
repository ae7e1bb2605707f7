"""Shared machinery for checking the closed-form hyper-estimates against
independent numerical maximizers of their weighted log-densities."""

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from nelmix.hypers import (
    HiddenEstimates,
    HyperPriorConfig,
    HyperState,
    estimate_kappa0,
    estimate_kappa1,
    estimate_mu0,
    estimate_mu_k,
    estimate_mu_kl,
    estimate_psi0,
    estimate_sigma_k,
    log_weighted_posterior,
    refresh_hidden_estimates,
    snapshot_classes,
)
from nelmix.partition import MixtureState


def rel_err(got, want) -> float:
    got = np.asarray(got, dtype=float).reshape(-1)
    want = np.asarray(want, dtype=float).reshape(-1)
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12))


def random_hyper_problem(rng, d):
    """A random partition state with consistent stored estimates, plus a
    random hyper state and prior config."""
    n_classes = int(rng.integers(1, 5))
    rows, pc, comp_class = [], [], {}
    nxt = 0
    for k in range(n_classes):
        center = rng.normal(scale=5.0, size=d)
        for _ in range(int(rng.integers(1, 5))):
            n = int(rng.integers(2, 13))
            mu = center + rng.normal(scale=1.5, size=d)
            rows.append(mu + rng.normal(scale=0.8, size=(n, d)))
            pc.extend([nxt] * n)
            comp_class[nxt] = k
            nxt += 1
    X = np.vstack(rows)
    state = MixtureState.from_assignments(X, np.array(pc), comp_class, 1.0, 1.0)
    a = rng.normal(size=(d, d))
    hypers = HyperState(
        mu0=rng.normal(scale=2.0, size=d),
        psi0=a @ a.T + d * np.eye(d),
        kappa0=float(rng.uniform(0.05, 2.0)),
        kappa1=float(rng.uniform(0.05, 2.0)),
        m=d + float(rng.uniform(1.5, 5.0)),
    )
    cfg = HyperPriorConfig.defaults(d)
    state.init_estimates(hypers)
    state.apply_hidden(refresh_hidden_estimates(state, hypers, cfg))
    return state, hypers, cfg


def hidden_from_state(state) -> HiddenEstimates:
    """The estimates currently stored on the state, in dict form (what the
    estimators condition on)."""
    hid = HiddenEstimates()
    for k in state.active_classes():
        hid.class_mean[k] = state.cls_mu[k].copy()
        hid.class_cov[k] = state.cls_sig[k].copy()
    for c in state.active_components():
        hid.comp_mean[c] = state.comp_mu[c].copy()
    return hid


def _pack(mat):
    L = np.linalg.cholesky(mat)
    d = L.shape[0]
    ii, jj = np.tril_indices(d)
    v = L[ii, jj].copy()
    v[ii == jj] = np.log(v[ii == jj])
    return v


def _unpack(v, d):
    ii, jj = np.tril_indices(d)
    L = np.zeros((d, d))
    L[ii, jj] = v
    diag = np.arange(d)
    L[diag, diag] = np.exp(L[diag, diag])
    return L @ L.T


def _argmax_vector(f, x0, rng):
    start = x0 + rng.normal(scale=0.2 * (1.0 + np.abs(x0)))
    res = minimize(lambda v: -f(v), start, method="BFGS",
                   options={"gtol": 1e-11, "maxiter": 1000})
    return res.x


def _argmax_matrix(f, m0, rng):
    d = m0.shape[0]
    start = _pack(m0 * float(rng.uniform(1.05, 1.3)))
    res = minimize(lambda v: -f(_unpack(v, d)), start, method="BFGS",
                   options={"gtol": 1e-11, "maxiter": 2000})
    return _unpack(res.x, d)


def _argmax_scalar(f, v0):
    lo, hi = np.log(v0) - 5.0, np.log(v0) + 5.0
    res = minimize_scalar(lambda t: -f(float(np.exp(t))), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-13})
    return float(np.exp(res.x))


def check_maximizers(state, hypers, cfg, rng):
    """Compare every closed-form estimate with a numerical maximizer of its
    weighted log-density. Returns {target: worst relative error}."""
    d = state.d
    n = state.n_points
    snaps = snapshot_classes(state)
    hid = hidden_from_state(state)
    errs = {}

    def lwp(target, value, **kw):
        return log_weighted_posterior(target, value, state, hypers, hid, cfg, **kw)

    est = estimate_mu0(snaps, hypers.psi0, hypers.kappa0, cfg, n)
    got = _argmax_vector(lambda v: lwp("mu0", v), est, rng)
    errs["mu0"] = rel_err(got, est)

    est = estimate_psi0(snaps, hypers.mu0, hypers.m, cfg, n)
    got = _argmax_matrix(lambda v: lwp("psi0", v), est, rng)
    errs["psi0"] = rel_err(got, est)

    est = estimate_kappa0(snaps, hypers.mu0, cfg, n)
    errs["kappa0"] = rel_err(_argmax_scalar(lambda v: lwp("kappa0", v), est), est)

    est = estimate_kappa1(snaps, cfg, n)
    errs["kappa1"] = rel_err(_argmax_scalar(lambda v: lwp("kappa1", v), est), est)

    worst_sig = worst_muk = worst_mukl = 0.0
    for s in snaps:
        est = estimate_sigma_k(
            s.comp_counts, s.comp_scatters, s.mu_kl, s.mu_k, hypers.mu0,
            hypers.psi0, hypers.kappa0, hypers.kappa1, hypers.m, n,
            mode="posterior_max",
        )
        got = _argmax_matrix(lambda v: lwp("sigma_k", v, class_id=s.class_id), est, rng)
        worst_sig = max(worst_sig, rel_err(got, est))

        est = estimate_mu_k(s.comp_counts, s.mu_kl, hypers.mu0, hypers.kappa0, hypers.kappa1)
        got = _argmax_vector(lambda v: lwp("mu_k", v, class_id=s.class_id), est, rng)
        worst_muk = max(worst_muk, rel_err(got, est))

        for c in s.comp_ids:
            stats = state.component_stats(int(c))
            est = estimate_mu_kl(stats, s.mu_k, s.sigma_k, hypers.kappa1)
            got = _argmax_vector(
                lambda v: lwp("mu_kl", v, comp_id=int(c)), est, rng
            )
            worst_mukl = max(worst_mukl, rel_err(got, est))
    errs["sigma_k"] = worst_sig
    errs["mu_k"] = worst_muk
    errs["mu_kl"] = worst_mukl
    return errs
