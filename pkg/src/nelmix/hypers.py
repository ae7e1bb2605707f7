"""Adaptive estimation of the shared hyperparameters and hidden moments.

The adaptive variant treats the four data-sensitive quantities of the
two-layer model (shared mean ``mu0``, shared scale ``psi0``, and the two
precision multipliers ``kappa0``/``kappa1``) as variables with conjugate
priors, and replaces sampling them by maximizing class-size-weighted
posteriors: each class's likelihood factor enters with exponent N_k/N so
spurious small classes cannot drag the shared values around. The same
device gives point estimates of the hidden per-class and per-component
moments, which the sampler then plugs in.

Everything here is pure: estimators read a partition state and return new
values; nothing is written back. ``sigma_mode`` selects between the
closed-form class covariance that exactly maximizes its weighted posterior
("posterior_max") and a variant with per-component weights N_kl/N_k
("component_weighted") kept for compatibility; the two disagree whenever
component sizes are unequal, see the test suite for pinned values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .niw import SuffStats, _check_pos_def

SIGMA_MODES = ("posterior_max", "component_weighted", "flat")
MU_K_MODES = ("weighted", "flat")
REFRESH_WEIGHTINGS = ("flat", "weighted")


@dataclass
class HyperPriorConfig:
    """Priors of the adaptive layer.

    mu0 ~ Normal(mu_p, (psi0 * c1)^-1), psi0 ~ Wishart(Sigma0, c2),
    kappa0 ~ Gamma(alpha0, beta0), kappa1 ~ Gamma(alpha1, beta1)
    (shape-rate convention).
    """

    mu_p: np.ndarray
    c1: float
    Sigma0: np.ndarray
    c2: float
    alpha0: float
    beta0: float
    alpha1: float
    beta1: float
    sigma_mode: str = "posterior_max"
    kappa_floor: float = 1e-8

    def __post_init__(self):
        self.mu_p = np.asarray(self.mu_p, dtype=float).reshape(-1)
        d = self.mu_p.shape[0]
        self.Sigma0, _ = _check_pos_def(np.asarray(self.Sigma0, dtype=float), "Sigma0")
        if self.Sigma0.shape != (d, d):
            raise ValueError("Sigma0 must be d x d")
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if not self.c2 > d - 1:
            raise ValueError("c2 must exceed d - 1")
        for name in ("alpha0", "beta0", "alpha1", "beta1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")

    @classmethod
    def defaults(cls, d: int) -> "HyperPriorConfig":
        """Vague settings scaled by the dimension."""
        return cls(
            mu_p=np.zeros(d),
            c1=0.1,
            Sigma0=np.eye(d),
            c2=d + 2.0,
            alpha0=0.2 * d + 1.0,
            beta0=2.0 * d,
            alpha1=d + 1.0,
            beta1=2.0 * d,
        )

    @property
    def d(self) -> int:
        return self.mu_p.shape[0]


@dataclass
class HyperState:
    """Current values of the shared hyperparameters."""

    mu0: np.ndarray
    psi0: np.ndarray
    kappa0: float
    kappa1: float
    m: float

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float).reshape(-1)
        self.psi0, _ = _check_pos_def(np.asarray(self.psi0, dtype=float), "psi0")
        d = self.mu0.shape[0]
        if self.psi0.shape != (d, d):
            raise ValueError("psi0 must be d x d")
        if not (self.kappa0 > 0 and self.kappa1 > 0):
            raise ValueError("kappa0 and kappa1 must be positive")
        if not self.m > d - 1:
            raise ValueError("m must exceed d - 1")

    @classmethod
    def vague(cls, d: int) -> "HyperState":
        return cls(mu0=np.zeros(d), psi0=np.eye(d), kappa0=0.1, kappa1=0.5, m=d + 2.0)

    @property
    def d(self) -> int:
        return self.mu0.shape[0]

    def copy(self) -> "HyperState":
        return HyperState(self.mu0.copy(), self.psi0.copy(), self.kappa0, self.kappa1, self.m)


@dataclass
class HiddenEstimates:
    """Point estimates of the hidden moments, keyed by slot id."""

    class_mean: dict = field(default_factory=dict)
    class_cov: dict = field(default_factory=dict)
    comp_mean: dict = field(default_factory=dict)


@dataclass
class ClassSnapshot:
    """Raw statistics and current estimates of one class, frozen for a scan."""

    class_id: int
    n_points: int
    comp_ids: np.ndarray
    comp_counts: np.ndarray
    comp_means: np.ndarray
    comp_scatters: np.ndarray
    mu_k: np.ndarray
    sigma_k: np.ndarray
    sigma_k_inv: np.ndarray
    mu_kl: np.ndarray


def snapshot_classes(state) -> list[ClassSnapshot]:
    out = []
    for k in state.active_classes():
        comps = [c for c in state.active_components() if int(state.comp_class[c]) == k]
        counts = np.array([int(state.comp_n[c]) for c in comps], dtype=np.int64)
        out.append(
            ClassSnapshot(
                class_id=int(k),
                n_points=int(counts.sum()),
                comp_ids=np.asarray(comps, dtype=np.int64),
                comp_counts=counts,
                comp_means=np.stack([state.comp_sum[c] / state.comp_n[c] for c in comps]),
                comp_scatters=np.stack([state.comp_scatter[c].copy() for c in comps]),
                mu_k=state.cls_mu[k].copy(),
                sigma_k=state.cls_sig[k].copy(),
                sigma_k_inv=state.cls_sig_inv[k].copy(),
                mu_kl=np.stack([state.comp_mu[c].copy() for c in comps]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# hidden-moment estimators


def estimate_mu_kl(comp: SuffStats, mu_k_hat, sigma_k_hat, kappa1: float) -> np.ndarray:
    """Component mean estimate: precision-weighted blend of the class mean
    and the component sample mean. The covariance argument cancels out of
    the maximizer; it is kept so the signature matches the density."""
    mu_k_hat = np.asarray(mu_k_hat, dtype=float)
    if comp.n == 0:
        return mu_k_hat.copy()
    return (kappa1 * mu_k_hat + comp.sum) / (kappa1 + comp.n)


def estimate_mu_k(
    comp_counts, mu_kl_hats, mu0_hat, kappa0: float, kappa1: float, mode: str = "weighted"
) -> np.ndarray:
    """Class mean estimate from the component mean estimates.

    "weighted": the component terms carry weights N_kl/N_k, which makes the
    data side enter through the count-weighted average of component means
    with total weight kappa1 regardless of class size — the shared mean
    keeps a fixed share kappa0/(kappa0+kappa1) forever. "flat": every
    component term carries weight kappa1, so the shared mean washes out as
    components accumulate and the estimate is consistent.
    """
    if mode not in MU_K_MODES:
        raise ValueError(f"mode must be one of {MU_K_MODES}")
    counts = np.asarray(comp_counts, dtype=float)
    if counts.sum() <= 0:
        raise ValueError("class mean estimate needs a nonempty class")
    mu_kl_hats = np.asarray(mu_kl_hats, dtype=float)
    mu0_hat = np.asarray(mu0_hat, dtype=float)
    if mode == "flat":
        total = mu_kl_hats.sum(axis=0)
        return (kappa0 * mu0_hat + kappa1 * total) / (kappa0 + kappa1 * counts.shape[0])
    avg = counts @ mu_kl_hats / counts.sum()
    return (kappa0 * mu0_hat + kappa1 * avg) / (kappa0 + kappa1)


def _sigma_k_pieces(comp_counts, comp_scatters, mu_kl_hats, mu_k_hat, kappa1):
    counts = np.asarray(comp_counts, dtype=float)
    dev = np.asarray(mu_kl_hats, dtype=float) - np.asarray(mu_k_hat, dtype=float)
    terms = kappa1 * np.einsum("la,lb->lab", dev, dev) + np.asarray(comp_scatters, dtype=float)
    return counts, terms


def estimate_sigma_k(
    comp_counts,
    comp_scatters,
    mu_kl_hats,
    mu_k_hat,
    mu0_hat,
    psi0_hat,
    kappa0: float,
    kappa1: float,
    m: float,
    n_total: int,
    mode: str = "posterior_max",
) -> np.ndarray:
    """Class covariance estimate.

    "posterior_max" weights every component factor by N_k/N and is the
    exact mode of the size-weighted posterior; "component_weighted" uses
    per-component weights N_kl/N_k instead (compatibility behavior). Under
    both, the data weight grows sublinearly, so psi0_hat keeps a large
    share even when the class is big. "flat" gives every component factor
    unit weight (denominator m+d+2+N_k): the estimate converges to the
    class's pooled within-component covariance as data accumulates. All
    modes shrink toward psi0_hat, which keeps the result positive definite.
    """
    if mode not in SIGMA_MODES:
        raise ValueError(f"mode must be one of {SIGMA_MODES}")
    counts, terms = _sigma_k_pieces(comp_counts, comp_scatters, mu_kl_hats, mu_k_hat, kappa1)
    n_k = counts.sum()
    if n_k <= 0:
        raise ValueError("class covariance estimate needs a nonempty class")
    d = np.asarray(mu_k_hat).shape[0]
    delta = np.asarray(mu_k_hat, dtype=float) - np.asarray(mu0_hat, dtype=float)
    num = np.asarray(psi0_hat, dtype=float) + kappa0 * np.outer(delta, delta)
    if mode == "posterior_max":
        num = num + (n_k / n_total) * terms.sum(axis=0)
        den = m + d + 2.0 + n_k * n_k / n_total
    elif mode == "flat":
        num = num + terms.sum(axis=0)
        den = m + d + 2.0 + n_k
    else:
        num = num + np.einsum("l,lab->ab", counts, terms) / n_k
        den = m + d + 2.0 + float(counts @ counts) / n_k
    sig = (num + num.T) / (2.0 * den)
    _check_pos_def(sig, "class covariance estimate")
    return sig


# ---------------------------------------------------------------------------
# shared-hyperparameter estimators


def estimate_mu0(snaps, psi0_hat, kappa0: float, config: HyperPriorConfig, n_total: int):
    """Shared mean: solve the normal equations mixing the prior precision
    c1*psi0_hat with the size-weighted class precisions."""
    if not snaps:
        raise ValueError("shared mean estimate needs at least one class")
    psi0_hat = np.asarray(psi0_hat, dtype=float)
    a = config.c1 * psi0_hat
    b = config.c1 * psi0_hat @ config.mu_p
    for s in snaps:
        w = kappa0 * s.n_points / n_total
        a = a + w * s.sigma_k_inv
        b = b + w * s.sigma_k_inv @ s.mu_k
    return np.linalg.solve(a, b)


def estimate_psi0(snaps, mu0_hat, m: float, config: HyperPriorConfig, n_total: int):
    """Shared scale: scaled inverse of the accumulated precision terms."""
    if not snaps:
        raise ValueError("shared scale estimate needs at least one class")
    d = config.d
    delta = np.asarray(mu0_hat, dtype=float) - config.mu_p
    den = np.linalg.inv(config.Sigma0) + config.c1 * np.outer(delta, delta)
    for s in snaps:
        den = den + (s.n_points / n_total) * s.sigma_k_inv
    scale = config.c2 - d + m
    if not scale > 0:
        raise ValueError("c2 - d + m must be positive")
    psi = scale * np.linalg.inv(den)
    psi = (psi + psi.T) / 2.0
    _check_pos_def(psi, "shared scale estimate")
    return psi


def _clamped(value: float, floor: float, name: str) -> float:
    if not value > floor:
        warnings.warn(f"{name} estimate {value:.3g} clamped to {floor:g}", RuntimeWarning)
        return floor
    return value


def estimate_kappa0(snaps, mu0_hat, config: HyperPriorConfig, n_total: int) -> float:
    if not snaps:
        raise ValueError("kappa0 estimate needs at least one class")
    d = config.d
    mu0_hat = np.asarray(mu0_hat, dtype=float)
    quad = 0.0
    for s in snaps:
        dv = s.mu_k - mu0_hat
        quad += s.n_points * float(dv @ s.sigma_k_inv @ dv)
    val = (2.0 * (config.alpha0 - 1.0) + d) / (2.0 * config.beta0 + quad / n_total)
    return _clamped(val, config.kappa_floor, "kappa0")


def estimate_kappa1(snaps, config: HyperPriorConfig, n_total: int) -> float:
    if not snaps:
        raise ValueError("kappa1 estimate needs at least one class")
    d = config.d
    quad = 0.0
    for s in snaps:
        dev = s.mu_kl - s.mu_k
        quad += float(
            np.einsum("l,la,ab,lb->", s.comp_counts.astype(float), dev, s.sigma_k_inv, dev)
        )
    val = (2.0 * (config.alpha1 - 1.0) + d) / (2.0 * config.beta1 + quad / n_total)
    return _clamped(val, config.kappa_floor, "kappa1")


def estimate_hypers(state, hypers: HyperState, config: HyperPriorConfig) -> HyperState:
    """One sequential update of the four shared hyperparameters.

    Order: mu0 (against the frozen psi0), then psi0, then kappa0, then
    kappa1, each using the most recent values. No inner fixed point: the
    surrounding Gibbs loop supplies the iteration.
    """
    snaps = snapshot_classes(state)
    n = state.n_points
    mu0 = estimate_mu0(snaps, hypers.psi0, hypers.kappa0, config, n)
    psi0 = estimate_psi0(snaps, mu0, hypers.m, config, n)
    kappa0 = estimate_kappa0(snaps, mu0, config, n)
    kappa1 = estimate_kappa1(snaps, config, n)
    return HyperState(mu0=mu0, psi0=psi0, kappa0=kappa0, kappa1=kappa1, m=hypers.m)


def refresh_hidden_estimates(
    state,
    hypers: HyperState,
    config: HyperPriorConfig | None = None,
    weighting: str = "flat",
) -> HiddenEstimates:
    """Recompute the hidden moment estimates in dependency order.

    Component means first (against the class means currently stored on the
    state), then class means, then class covariances. Pure: reads the state,
    returns the new estimates without writing back, so two consecutive calls
    on the same state agree.

    ``weighting="flat"`` (default) composes the flat per-class estimators:
    each component factor enters with unit weight, so the shared prior
    washes out of a class's own moment estimates as it accumulates data.
    ``weighting="weighted"`` composes the size-weighted estimators instead
    (class covariance mode taken from ``config.sigma_mode`` when a config is
    given); there the shared prior keeps a constant share of every class's
    estimates regardless of class size.
    """
    if weighting not in REFRESH_WEIGHTINGS:
        raise ValueError(f"weighting must be one of {REFRESH_WEIGHTINGS}")
    if weighting == "flat":
        mu_mode, sig_mode = "flat", "flat"
    else:
        mu_mode = "weighted"
        sig_mode = config.sigma_mode if config is not None else "posterior_max"
    out = HiddenEstimates()
    n = state.n_points
    for s in snapshot_classes(state):
        mu_kl = (hypers.kappa1 * s.mu_k + s.comp_counts[:, None] * s.comp_means) / (
            hypers.kappa1 + s.comp_counts[:, None]
        )
        mu_k = estimate_mu_k(
            s.comp_counts, mu_kl, hypers.mu0, hypers.kappa0, hypers.kappa1, mode=mu_mode
        )
        sig = estimate_sigma_k(
            s.comp_counts,
            s.comp_scatters,
            mu_kl,
            mu_k,
            hypers.mu0,
            hypers.psi0,
            hypers.kappa0,
            hypers.kappa1,
            hypers.m,
            n,
            mode=sig_mode,
        )
        out.class_mean[s.class_id] = mu_k
        out.class_cov[s.class_id] = sig
        for c, mu in zip(s.comp_ids, mu_kl):
            out.comp_mean[int(c)] = mu
    return out


# ---------------------------------------------------------------------------
# weighted log-posteriors (unnormalized, value-dependent terms only)

TARGETS = ("mu0", "psi0", "kappa0", "kappa1", "sigma_k", "mu_k", "mu_kl")


def _logdet_pd(a, name: str) -> float:
    _, chol = _check_pos_def(np.asarray(a, dtype=float), name)
    return float(2.0 * np.log(np.diag(chol)).sum())


def log_weighted_posterior(
    target: str,
    value,
    state,
    hypers: HyperState,
    hidden: HiddenEstimates,
    config: HyperPriorConfig,
    class_id: int | None = None,
    comp_id: int | None = None,
) -> float:
    """Unnormalized log-density that each estimator maximizes.

    Shared targets ("mu0", "psi0", "kappa0", "kappa1") weight each class
    factor by N_k/N (component factors of kappa1 by N_kl/N). Hidden targets
    need ``class_id`` ("sigma_k", "mu_k") or ``comp_id`` ("mu_kl"); their
    component factors carry N_k/N, N_kl/N_k, and 1 respectively. Terms that
    do not involve the target value are dropped.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    n = state.n_points
    snaps = snapshot_classes(state)
    by_id = {s.class_id: s for s in snaps}

    def _hid(k):
        mu = hidden.class_mean.get(k)
        cov = hidden.class_cov.get(k)
        if mu is None or cov is None:
            raise ValueError(f"hidden estimates missing for class {k}")
        return np.asarray(mu, float), np.asarray(cov, float)

    if target == "mu0":
        v = np.asarray(value, dtype=float).reshape(-1)
        dv = v - config.mu_p
        total = -0.5 * config.c1 * float(dv @ hypers.psi0 @ dv)
        for s in snaps:
            mu_k, cov = _hid(s.class_id)
            dd = mu_k - v
            total -= 0.5 * hypers.kappa0 * (s.n_points / n) * float(dd @ np.linalg.solve(cov, dd))
        return total

    if target == "psi0":
        v = np.asarray(value, dtype=float)
        logdet = _logdet_pd(v, "psi0 value")
        dv = hypers.mu0 - config.mu_p
        total = (
            0.5 * (config.c2 - config.d - 1.0) * logdet
            - 0.5 * float(np.trace(np.linalg.solve(config.Sigma0, v)))
            + 0.5 * logdet
            - 0.5 * config.c1 * float(dv @ v @ dv)
        )
        for s in snaps:
            _, cov = _hid(s.class_id)
            w = s.n_points / n
            total += w * (0.5 * hypers.m * logdet - 0.5 * float(np.trace(np.linalg.solve(cov, v))))
        return total

    if target in ("kappa0", "kappa1"):
        v = float(value)
        if v <= 0:
            raise ValueError("precision multipliers must be positive")
        if target == "kappa0":
            total = (config.alpha0 - 1.0) * math.log(v) - config.beta0 * v
            for s in snaps:
                mu_k, cov = _hid(s.class_id)
                dd = mu_k - hypers.mu0
                w = s.n_points / n
                total += w * (
                    0.5 * config.d * math.log(v) - 0.5 * v * float(dd @ np.linalg.solve(cov, dd))
                )
            return total
        total = (config.alpha1 - 1.0) * math.log(v) - config.beta1 * v
        for s in snaps:
            mu_k, cov = _hid(s.class_id)
            cinv = np.linalg.inv(cov)
            for j, c in enumerate(s.comp_ids):
                mu_kl = np.asarray(hidden.comp_mean[int(c)], float)
                dd = mu_kl - mu_k
                w = s.comp_counts[j] / n
                total += w * (0.5 * config.d * math.log(v) - 0.5 * v * float(dd @ cinv @ dd))
        return total

    if target == "sigma_k":
        if class_id is None:
            raise ValueError("sigma_k needs class_id")
        s = by_id[class_id]
        v = np.asarray(value, dtype=float)
        logdet = _logdet_pd(v, "sigma_k value")
        vinv = np.linalg.inv(v)
        mu_k, _ = _hid(class_id)
        dd = mu_k - hypers.mu0
        total = (
            -0.5 * (hypers.m + config.d + 1.0) * logdet
            - 0.5 * float(np.trace(vinv @ hypers.psi0))
            - 0.5 * logdet
            - 0.5 * hypers.kappa0 * float(dd @ vinv @ dd)
        )
        w = s.n_points / n
        for j, c in enumerate(s.comp_ids):
            mu_kl = np.asarray(hidden.comp_mean[int(c)], float)
            dkl = mu_kl - mu_k
            nl = float(s.comp_counts[j])
            total += w * (
                -0.5 * logdet
                - 0.5 * hypers.kappa1 * float(dkl @ vinv @ dkl)
                - 0.5 * (nl - 1.0) * logdet
                - 0.5 * float(np.trace(vinv @ s.comp_scatters[j]))
            )
        return total

    if target == "mu_k":
        if class_id is None:
            raise ValueError("mu_k needs class_id")
        s = by_id[class_id]
        _, cov = _hid(class_id)
        cinv = np.linalg.inv(cov)
        v = np.asarray(value, dtype=float).reshape(-1)
        dd = v - hypers.mu0
        total = -0.5 * hypers.kappa0 * float(dd @ cinv @ dd)
        for j, c in enumerate(s.comp_ids):
            mu_kl = np.asarray(hidden.comp_mean[int(c)], float)
            dkl = mu_kl - v
            total -= 0.5 * hypers.kappa1 * (s.comp_counts[j] / s.n_points) * float(dkl @ cinv @ dkl)
        return total

    # mu_kl
    if comp_id is None:
        raise ValueError("mu_kl needs comp_id")
    for s in snaps:
        hit = np.flatnonzero(s.comp_ids == comp_id)
        if hit.size:
            j = int(hit[0])
            mu_k, cov = _hid(s.class_id)
            cinv = np.linalg.inv(cov)
            v = np.asarray(value, dtype=float).reshape(-1)
            d1 = v - mu_k
            xbar = s.comp_means[j]
            d2 = xbar - v
            nl = float(s.comp_counts[j])
            return -0.5 * hypers.kappa1 * float(d1 @ cinv @ d1) - 0.5 * nl * float(
                d2 @ cinv @ d2
            )
    raise KeyError(f"component {comp_id} not found")
