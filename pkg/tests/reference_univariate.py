"""Standalone univariate three-level random-intercept Gibbs sampler, written
with plain loops as an independent oracle for the P=1 collapse check. It shares
no code with the package sampler; priors match the package defaults
(N(0, 1e6) coefficients, inverse-Wishart(dim+1, I) == inverse-gamma(1, 1/2) on
each scalar variance)."""

import numpy as np


def run_reference_chain(y, X, team_of, fac_of, n_teams, n_facilities,
                        n_iterations, n_burnin, thin, seed,
                        prior_var=1e6, iw_df=2.0, iw_scale=1.0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, L = X.shape
    team_of = np.asarray(team_of)
    fac_of = np.asarray(fac_of)

    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < L:
        beta = np.zeros(L)
    u = np.zeros(n_teams)
    v = np.zeros(n_facilities)
    sig_e = sig_t = sig_f = 1.0

    team_members = [np.where(team_of == j)[0] for j in range(n_teams)]
    fac_members = [np.where(fac_of == k)[0] for k in range(n_facilities)]

    kept = {"beta": [], "sig_e": [], "sig_t": [], "sig_f": []}
    for it in range(1, n_iterations + 1):
        resid = y - u[team_of] - v[fac_of]
        prec = X.T @ X / sig_e + np.eye(L) / prior_var
        cov = np.linalg.inv(prec)
        mean = cov @ (X.T @ resid / sig_e)
        beta = rng.multivariate_normal(mean, cov)
        xb = X @ beta

        for k in range(n_facilities):
            m = fac_members[k]
            r = y[m] - xb[m] - u[team_of[m]]
            prec_k = len(m) / sig_e + 1.0 / sig_f
            mean_k = (r.sum() / sig_e) / prec_k
            v[k] = mean_k + rng.standard_normal() / np.sqrt(prec_k)

        for j in range(n_teams):
            m = team_members[j]
            r = y[m] - xb[m] - v[fac_of[m]]
            prec_j = len(m) / sig_e + 1.0 / sig_t
            mean_j = (r.sum() / sig_e) / prec_j
            u[j] = mean_j + rng.standard_normal() / np.sqrt(prec_j)

        # scalar inverse-Wishart(df, s) == inverse-gamma(df/2, s/2)
        sig_f = (iw_scale + (v ** 2).sum()) / 2.0 / rng.standard_gamma(
            0.5 * (iw_df + n_facilities))
        sig_t = (iw_scale + (u ** 2).sum()) / 2.0 / rng.standard_gamma(
            0.5 * (iw_df + n_teams))
        r = y - xb - u[team_of] - v[fac_of]
        sig_e = (iw_scale + (r ** 2).sum()) / 2.0 / rng.standard_gamma(
            0.5 * (iw_df + n))

        if it > n_burnin and (it - n_burnin) % thin == 0:
            kept["beta"].append(beta.copy())
            kept["sig_e"].append(sig_e)
            kept["sig_t"].append(sig_t)
            kept["sig_f"].append(sig_f)
    return {k: np.asarray(vv) for k, vv in kept.items()}
