"""Independent numerical oracle for the d=1 conjugate Gaussian model.

For a handful of fixed (prior, data, query) cases this integrates the
posterior predictive and the data marginal directly over (mu, log sigma^2)
with adaptive quadrature, no Student-t shortcut anywhere. The printed
values are frozen into tests/test_niw.py; rerun this script to regenerate.
"""

import numpy as np
from scipy import integrate
from scipy.stats import invgamma, norm

CASES = [
    # (mu0, psi0, kappa0, m, data, query)
    (0.0, 1.0, 1.0, 3.0, [0.5], 0.2),
    (0.0, 1.0, 0.1, 4.0, [1.0, -0.5, 0.3], 0.0),
    (2.0, 3.0, 0.5, 5.0, [2.5, 1.8, 2.2, 2.9], 2.0),
    (-1.0, 0.5, 2.0, 6.0, [-1.2, -0.8], -3.0),
    (0.0, 2.0, 0.01, 4.5, [10.0, 11.0, 9.5], 10.5),
    (5.0, 1.0, 1.5, 3.5, [], 5.5),
]


def log_niw_1d(mu, s2, mu0, psi0, kappa0, m):
    # sigma^2 ~ InvGamma(m/2, psi0/2), mu | sigma^2 ~ N(mu0, sigma^2/kappa0)
    lp = invgamma.logpdf(s2, m / 2.0, scale=psi0 / 2.0)
    lp += norm.logpdf(mu, mu0, np.sqrt(s2 / kappa0))
    return lp


def integrand(t, mu, mu0, psi0, kappa0, m, data, query):
    # t = log sigma^2; jacobian ds2 = s2 dt
    s2 = np.exp(t)
    lp = log_niw_1d(mu, s2, mu0, psi0, kappa0, m) + t
    for x in data:
        lp += norm.logpdf(x, mu, np.sqrt(s2))
    if query is not None:
        lp += norm.logpdf(query, mu, np.sqrt(s2))
    return np.exp(lp)


def dbl(mu0, psi0, kappa0, m, data, query):
    val, err = integrate.dblquad(
        integrand,
        -60.0,
        60.0,
        -25.0,
        25.0,
        args=(mu0, psi0, kappa0, m, data, query),
        epsabs=1e-13,
        epsrel=1e-11,
    )
    return val, err


def main():
    print("# (case, log_predictive, log_marginal_data)")
    rows = []
    for case in CASES:
        mu0, psi0, kappa0, m, data, query = case
        joint, ej = dbl(mu0, psi0, kappa0, m, data, query)
        marg, em = dbl(mu0, psi0, kappa0, m, data, None)
        log_pred = np.log(joint) - np.log(marg)
        log_marg = np.log(marg)
        rows.append((case, log_pred, log_marg, ej / joint + em / marg))
        print(f"{case!r}: pred={log_pred!r} marg={log_marg!r} relerr~{ej / joint + em / marg:.2e}")
    print()
    print("FROZEN = [")
    for case, lp, lm, _ in rows:
        print(f"    ({case!r}, {lp!r}, {lm!r}),")
    print("]")


if __name__ == "__main__":
    main()
