"""Compiled inner loops for the Gibbs sweeps.

Everything here operates on the flat state arrays owned by
``partition.MixtureState``. The readable reference implementations live in
``partition.py``; the test suite checks score-level and trajectory-level
agreement between the two, so treat any edit here as an edit to both.

Candidate targets are encoded as integers:

    0 .. C-1        existing component slot
    C + k           fresh component inside class slot k
    C + K           fresh component inside a fresh class       (two-layer only)

with C the component capacity and K the class capacity of the state.
"""

import math

import numpy as np
from numba import njit

LOG2PI = math.log(2.0 * math.pi)
LOGPI = math.log(math.pi)


# ---------------------------------------------------------------------------
# rank-one Cholesky maintenance


@njit(cache=True)
def chol_update(L, x):
    """In place: L <- chol(L L^T + x x^T). Clobbers x."""
    d = L.shape[0]
    for k in range(d):
        r = math.sqrt(L[k, k] * L[k, k] + x[k] * x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        for i in range(k + 1, d):
            L[i, k] = (L[i, k] + s * x[i]) / c
            x[i] = c * x[i] - s * L[i, k]


@njit(cache=True)
def chol_downdate(L, x):
    """In place: L <- chol(L L^T - x x^T). Clobbers x.

    Returns 0 on success, 1 if the downdated matrix is not positive
    definite (callers must refactorize or raise).
    """
    d = L.shape[0]
    for k in range(d):
        h = L[k, k] * L[k, k] - x[k] * x[k]
        if h <= 0.0:
            return 1
        r = math.sqrt(h)
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        for i in range(k + 1, d):
            L[i, k] = (L[i, k] - s * x[i]) / c
            x[i] = c * x[i] - s * L[i, k]
    return 0


@njit(cache=True)
def categorical_from_logs(scores, n, u):
    """Index draw from unnormalized log weights using one uniform."""
    m = scores[0]
    for i in range(1, n):
        if scores[i] > m:
            m = scores[i]
    tot = 0.0
    for i in range(n):
        tot += math.exp(scores[i] - m)
    t = u * tot
    acc = 0.0
    for i in range(n):
        acc += math.exp(scores[i] - m)
        if acc >= t:
            return i
    return n - 1


# ---------------------------------------------------------------------------
# sufficient-statistic maintenance (count, sum, centered scatter)


@njit(cache=True)
def _stats_add(x, c, comp_n, comp_sum, comp_scatter):
    d = x.shape[0]
    n = comp_n[c]
    if n > 0:
        w = n / (n + 1.0)
        inv = 1.0 / n
        for i in range(d):
            vi = x[i] - comp_sum[c, i] * inv
            for j in range(d):
                comp_scatter[c, i, j] += w * vi * (x[j] - comp_sum[c, j] * inv)
    for i in range(d):
        comp_sum[c, i] += x[i]
    comp_n[c] = n + 1


@njit(cache=True)
def _stats_remove(x, c, comp_n, comp_sum, comp_scatter):
    d = x.shape[0]
    n_new = comp_n[c] - 1
    for i in range(d):
        comp_sum[c, i] -= x[i]
    if n_new == 0:
        for i in range(d):
            comp_sum[c, i] = 0.0
            for j in range(d):
                comp_scatter[c, i, j] = 0.0
    else:
        w = n_new / (n_new + 1.0)
        inv = 1.0 / n_new
        for i in range(d):
            vi = x[i] - comp_sum[c, i] * inv
            for j in range(d):
                comp_scatter[c, i, j] -= w * vi * (x[j] - comp_sum[c, j] * inv)
    comp_n[c] = n_new


@njit(cache=True)
def _first_free(active, hi):
    for s in range(hi):
        if not active[s]:
            return s
    return hi


# ---------------------------------------------------------------------------
# two-layer component pass


@njit(cache=True)
def _quad_form(dx, a):
    d = dx.shape[0]
    q = 0.0
    for i in range(d):
        ri = 0.0
        for j in range(d):
            ri += a[i, j] * dx[j]
        q += ri * dx[i]
    return q


@njit(cache=True)
def component_pass(
    X,
    labels,
    outlier,
    point_comp,
    comp_active,
    comp_class,
    comp_n,
    comp_sum,
    comp_scatter,
    comp_nlab,
    comp_mu,
    cls_active,
    cls_ncomp,
    cls_npoints,
    cls_mu,
    cls_sig,
    cls_sig_inv,
    cls_sig_logdet,
    meta,
    alpha,
    kappa1,
    newcls_mu,
    newcls_ainv,
    newcls_nu,
    newcls_const,
    prior_sig,
    prior_sig_inv,
    prior_sig_logdet,
    perm,
    u1,
    cand_target,
    cand_score,
):
    """One pass of component-indicator sampling over all points.

    Labeled non-outlier points only see components of their own class plus
    a fresh component of that class; everything else sees every component,
    a fresh component per active class, and a fresh class.
    """
    n_points, d = X.shape
    ccap = comp_active.shape[0]
    kcap = cls_active.shape[0]
    dx = np.empty(d)
    x = np.empty(d)
    log_alpha = math.log(alpha)
    s_new = (kappa1 + 1.0) / kappa1
    log_s_new = math.log(s_new)

    for jj in range(n_points):
        i = perm[jj]
        for t in range(d):
            x[t] = X[i, t]
        lab = labels[i]
        forced = lab >= 0 and outlier[i] == 0

        # detach the point
        c_old = point_comp[i]
        k_old = comp_class[c_old]
        _stats_remove(x, c_old, comp_n, comp_sum, comp_scatter)
        cls_npoints[k_old] -= 1
        if forced:
            comp_nlab[c_old] -= 1
        if comp_n[c_old] == 0:
            comp_active[c_old] = False
            cls_ncomp[k_old] -= 1
            if cls_ncomp[k_old] == 0:
                cls_active[k_old] = False

        # score candidates
        nc = 0
        hi_c = meta[0]
        hi_k = meta[1]
        for c in range(hi_c):
            if not comp_active[c]:
                continue
            k = comp_class[c]
            if forced and k != lab:
                continue
            kp = kappa1 + comp_n[c]
            sl = (kp + 1.0) / kp
            inv_kp = 1.0 / kp
            for t in range(d):
                dx[t] = x[t] - (kappa1 * cls_mu[k, t] + comp_sum[c, t]) * inv_kp
            q = _quad_form(dx, cls_sig_inv[k])
            cand_target[nc] = c
            cand_score[nc] = (
                math.log(float(comp_n[c]))
                - 0.5 * d * (LOG2PI + math.log(sl))
                - 0.5 * cls_sig_logdet[k]
                - 0.5 * q / sl
            )
            nc += 1
        if forced:
            k = lab
            if cls_active[k]:
                for t in range(d):
                    dx[t] = x[t] - cls_mu[k, t]
                q = _quad_form(dx, cls_sig_inv[k])
                sc = (
                    log_alpha
                    - 0.5 * d * (LOG2PI + log_s_new)
                    - 0.5 * cls_sig_logdet[k]
                    - 0.5 * q / s_new
                )
            else:
                sc = 0.0  # sole candidate; value irrelevant
            cand_target[nc] = ccap + k
            cand_score[nc] = sc
            nc += 1
        else:
            for k in range(hi_k):
                if not cls_active[k]:
                    continue
                for t in range(d):
                    dx[t] = x[t] - cls_mu[k, t]
                q = _quad_form(dx, cls_sig_inv[k])
                cand_target[nc] = ccap + k
                cand_score[nc] = (
                    log_alpha
                    - 0.5 * d * (LOG2PI + log_s_new)
                    - 0.5 * cls_sig_logdet[k]
                    - 0.5 * q / s_new
                )
                nc += 1
            for t in range(d):
                dx[t] = x[t] - newcls_mu[t]
            q = _quad_form(dx, newcls_ainv)
            cand_target[nc] = ccap + kcap
            cand_score[nc] = (
                log_alpha
                + newcls_const
                - 0.5 * (newcls_nu + d) * math.log1p(q / newcls_nu)
            )
            nc += 1

        choice = cand_target[categorical_from_logs(cand_score, nc, u1[jj])]

        # attach
        if choice < ccap:
            c_new = choice
            k = comp_class[c_new]
        else:
            k = choice - ccap
            if k == kcap:  # fresh class
                k = _first_free(cls_active, meta[1])
                if k == meta[1]:
                    meta[1] += 1
                fresh_cls = True
            elif not cls_active[k]:
                # forced class being re-seeded after losing its last component
                fresh_cls = True
            else:
                fresh_cls = False
            if fresh_cls:
                cls_active[k] = True
                cls_ncomp[k] = 0
                cls_npoints[k] = 0
                for t in range(d):
                    cls_mu[k, t] = x[t]
                for a in range(d):
                    for b in range(d):
                        cls_sig[k, a, b] = prior_sig[a, b]
                        cls_sig_inv[k, a, b] = prior_sig_inv[a, b]
                cls_sig_logdet[k] = prior_sig_logdet
            c_new = _first_free(comp_active, meta[0])
            if c_new == meta[0]:
                meta[0] += 1
            comp_active[c_new] = True
            comp_class[c_new] = k
            comp_n[c_new] = 0
            comp_nlab[c_new] = 0
            for t in range(d):
                comp_mu[c_new, t] = x[t]
                comp_sum[c_new, t] = 0.0
                for b in range(d):
                    comp_scatter[c_new, t, b] = 0.0
            cls_ncomp[k] += 1
        _stats_add(x, c_new, comp_n, comp_sum, comp_scatter)
        cls_npoints[k] += 1
        if forced:
            comp_nlab[c_new] += 1
        point_comp[i] = c_new

    return 0


# ---------------------------------------------------------------------------
# two-layer class pass


@njit(cache=True)
def class_pass(
    comp_active,
    comp_class,
    comp_n,
    comp_sum,
    comp_scatter,
    comp_nlab,
    cls_active,
    cls_ncomp,
    cls_npoints,
    cls_mu,
    cls_sig,
    cls_sig_inv,
    cls_sig_logdet,
    meta,
    gamma,
    kappa1,
    base_mu,
    base_psi,
    base_psi_logdet,
    base_kappa,
    base_m,
    prior_sig,
    prior_sig_inv,
    prior_sig_logdet,
    u2,
    cand_target,
    cand_score,
):
    """One pass of class-indicator sampling over unforced components.

    Existing classes score the component's points against the class mean
    and covariance estimates with the component mean integrated out; the
    NEW entry scores the full conjugate chain (fresh class drawn from the
    base measure, then the component mean, then the points).
    """
    d = comp_sum.shape[1]
    kcap = cls_active.shape[0]
    hi_c = meta[0]
    dx = np.empty(d)
    xbar = np.empty(d)
    pn = np.empty((d, d))
    log_gamma = math.log(gamma)
    log_k1 = math.log(kappa1)

    for c in range(hi_c):
        if not comp_active[c] or comp_nlab[c] > 0:
            continue
        n = comp_n[c]
        fn = float(n)
        k0 = comp_class[c]

        cls_ncomp[k0] -= 1
        cls_npoints[k0] -= n
        if cls_ncomp[k0] == 0:
            cls_active[k0] = False

        for t in range(d):
            xbar[t] = comp_sum[c, t] / fn

        nc = 0
        hi_k = meta[1]
        for k in range(hi_k):
            if not cls_active[k]:
                continue
            tr = 0.0
            for a in range(d):
                for b in range(d):
                    tr += cls_sig_inv[k, a, b] * comp_scatter[c, a, b]
            for t in range(d):
                dx[t] = xbar[t] - cls_mu[k, t]
            q = _quad_form(dx, cls_sig_inv[k])
            w = fn * kappa1 / (fn + kappa1)
            cand_target[nc] = k
            cand_score[nc] = (
                math.log(float(cls_ncomp[k]))
                - 0.5 * fn * d * LOG2PI
                - 0.5 * fn * cls_sig_logdet[k]
                + 0.5 * d * (log_k1 - math.log(kappa1 + fn))
                - 0.5 * (tr + w * q)
            )
            nc += 1

        # NEW: marginal under the base chain, component mean integrated out
        kn = base_kappa + fn
        mn = base_m + fn
        w0 = base_kappa * fn / kn
        for a in range(d):
            for b in range(d):
                pn[a, b] = (
                    base_psi[a, b]
                    + comp_scatter[c, a, b]
                    + w0 * (xbar[a] - base_mu[a]) * (xbar[b] - base_mu[b])
                )
        lcho = np.linalg.cholesky(pn)
        logdet_pn = 0.0
        for t in range(d):
            logdet_pn += 2.0 * math.log(lcho[t, t])
        mvlg = 0.0
        for j in range(d):
            mvlg += math.lgamma(0.5 * (mn - j)) - math.lgamma(0.5 * (base_m - j))
        cand_target[nc] = kcap
        cand_score[nc] = (
            log_gamma
            - 0.5 * fn * d * LOGPI
            + mvlg
            + 0.5 * base_m * base_psi_logdet
            - 0.5 * mn * logdet_pn
            + 0.5 * d * (math.log(base_kappa) - math.log(kn))
        )
        nc += 1

        k_new = cand_target[categorical_from_logs(cand_score, nc, u2[c])]
        if k_new == kcap:
            k_new = _first_free(cls_active, meta[1])
            if k_new == meta[1]:
                meta[1] += 1
            cls_active[k_new] = True
            cls_ncomp[k_new] = 0
            cls_npoints[k_new] = 0
            for t in range(d):
                cls_mu[k_new, t] = xbar[t]
            for a in range(d):
                for b in range(d):
                    cls_sig[k_new, a, b] = prior_sig[a, b]
                    cls_sig_inv[k_new, a, b] = prior_sig_inv[a, b]
            cls_sig_logdet[k_new] = prior_sig_logdet
        comp_class[c] = k_new
        cls_ncomp[k_new] += 1
        cls_npoints[k_new] += n

    return 0


# ---------------------------------------------------------------------------
# single-layer (IGMM) pass: one class per component, conjugate NIW scoring


@njit(cache=True)
def _psi_rebuild(c, comp_n, comp_sum, comp_scatter, comp_psichol, mu0, kappa0, psi0):
    d = mu0.shape[0]
    n = float(comp_n[c])
    kn = kappa0 + n
    w = kappa0 * n / kn
    pn = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            da = comp_sum[c, a] / n - mu0[a]
            db = comp_sum[c, b] / n - mu0[b]
            pn[a, b] = psi0[a, b] + comp_scatter[c, a, b] + w * da * db
    lcho = np.linalg.cholesky(pn)
    for a in range(d):
        for b in range(d):
            comp_psichol[c, a, b] = lcho[a, b]


@njit(cache=True)
def _t_logpdf_from_chol(x, c, comp_n, comp_sum, comp_psichol, mu0, kappa0, m, work):
    d = x.shape[0]
    n = float(comp_n[c])
    kn = kappa0 + n
    mn = m + n
    nu = mn - d + 1.0
    s = (kn + 1.0) / (kn * nu)
    for t in range(d):
        work[t] = x[t] - (kappa0 * mu0[t] + comp_sum[c, t]) / kn
    # forward solve L z = dx
    q = 0.0
    logdet = 0.0
    for a in range(d):
        acc = work[a]
        for b in range(a):
            acc -= comp_psichol[c, a, b] * work[b]
        z = acc / comp_psichol[c, a, a]
        work[a] = z
        q += z * z
        logdet += 2.0 * math.log(comp_psichol[c, a, a])
    qs = q / s
    return (
        math.lgamma(0.5 * (nu + d))
        - math.lgamma(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * (logdet + d * math.log(s))
        - 0.5 * (nu + d) * math.log1p(qs / nu)
    )


@njit(cache=True)
def igmm_pass(
    X,
    labels,
    point_comp,
    comp_active,
    comp_class,
    comp_n,
    comp_sum,
    comp_scatter,
    comp_nlab,
    cls_active,
    cls_ncomp,
    cls_npoints,
    comp_psichol,
    comp_updates,
    meta,
    alpha,
    mu0,
    kappa0,
    m,
    psi0,
    prior_mu,
    prior_ainv,
    prior_nu,
    prior_const,
    refactor_every,
    perm,
    u1,
    cand_target,
    cand_score,
):
    """Single-layer pass: unlabeled points resampled across classes under the
    conjugate posterior predictive; labeled points are pinned. Each class
    owns exactly one component, whose posterior scale factor is maintained
    by rank-one updates and refactored on a cadence."""
    n_points, d = X.shape
    ccap = comp_active.shape[0]
    x = np.empty(d)
    dx = np.empty(d)
    v = np.empty(d)
    log_alpha = math.log(alpha)

    for jj in range(n_points):
        i = perm[jj]
        if labels[i] >= 0:
            continue
        for t in range(d):
            x[t] = X[i, t]

        # detach
        c_old = point_comp[i]
        k_old = comp_class[c_old]
        n_old = float(comp_n[c_old])
        kn_old = kappa0 + n_old
        kn_new = kn_old - 1.0
        if comp_n[c_old] == 1:
            _stats_remove(x, c_old, comp_n, comp_sum, comp_scatter)
            comp_active[c_old] = False
            cls_active[k_old] = False
            cls_ncomp[k_old] = 0
            cls_npoints[k_old] = 0
        else:
            # mean term before removal
            for t in range(d):
                v[t] = math.sqrt(kn_old) * (kappa0 * mu0[t] + comp_sum[c_old, t]) / kn_old
            _stats_remove(x, c_old, comp_n, comp_sum, comp_scatter)
            cls_npoints[k_old] -= 1
            chol_update(comp_psichol[c_old], v)
            ok = 0
            for t in range(d):
                dx[t] = x[t]
            ok += chol_downdate(comp_psichol[c_old], dx)
            for t in range(d):
                dx[t] = math.sqrt(kn_new) * (kappa0 * mu0[t] + comp_sum[c_old, t]) / kn_new
            ok += chol_downdate(comp_psichol[c_old], dx)
            comp_updates[c_old] += 3
            if ok != 0 or comp_updates[c_old] >= refactor_every:
                _psi_rebuild(c_old, comp_n, comp_sum, comp_scatter, comp_psichol, mu0, kappa0, psi0)
                comp_updates[c_old] = 0

        # score
        nc = 0
        hi_c = meta[0]
        for c in range(hi_c):
            if not comp_active[c]:
                continue
            cand_target[nc] = c
            cand_score[nc] = math.log(float(comp_n[c])) + _t_logpdf_from_chol(
                x, c, comp_n, comp_sum, comp_psichol, mu0, kappa0, m, dx
            )
            nc += 1
        for t in range(d):
            dx[t] = x[t] - prior_mu[t]
        q = _quad_form(dx, prior_ainv)
        cand_target[nc] = ccap
        cand_score[nc] = log_alpha + prior_const - 0.5 * (prior_nu + d) * math.log1p(q / prior_nu)
        nc += 1

        choice = cand_target[categorical_from_logs(cand_score, nc, u1[jj])]

        # attach
        if choice < ccap:
            c_new = choice
            k = comp_class[c_new]
            n_cur = float(comp_n[c_new])
            kn_a = kappa0 + n_cur
            kn_b = kn_a + 1.0
            for t in range(d):
                v[t] = math.sqrt(kn_a) * (kappa0 * mu0[t] + comp_sum[c_new, t]) / kn_a
            _stats_add(x, c_new, comp_n, comp_sum, comp_scatter)
            for t in range(d):
                dx[t] = x[t]
            chol_update(comp_psichol[c_new], dx)
            chol_update(comp_psichol[c_new], v)
            for t in range(d):
                dx[t] = math.sqrt(kn_b) * (kappa0 * mu0[t] + comp_sum[c_new, t]) / kn_b
            ok = chol_downdate(comp_psichol[c_new], dx)
            comp_updates[c_new] += 3
            if ok != 0 or comp_updates[c_new] >= refactor_every:
                _psi_rebuild(c_new, comp_n, comp_sum, comp_scatter, comp_psichol, mu0, kappa0, psi0)
                comp_updates[c_new] = 0
            cls_npoints[k] += 1
        else:
            k = _first_free(cls_active, meta[1])
            if k == meta[1]:
                meta[1] += 1
            c_new = _first_free(comp_active, meta[0])
            if c_new == meta[0]:
                meta[0] += 1
            cls_active[k] = True
            cls_ncomp[k] = 1
            cls_npoints[k] = 1
            comp_active[c_new] = True
            comp_class[c_new] = k
            comp_n[c_new] = 0
            comp_nlab[c_new] = 0
            for t in range(d):
                comp_sum[c_new, t] = 0.0
                for b in range(d):
                    comp_scatter[c_new, t, b] = 0.0
            _stats_add(x, c_new, comp_n, comp_sum, comp_scatter)
            _psi_rebuild(c_new, comp_n, comp_sum, comp_scatter, comp_psichol, mu0, kappa0, psi0)
            comp_updates[c_new] = 0
        point_comp[i] = c_new

    return 0
