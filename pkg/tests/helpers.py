"""Independent oracles used by the tests: brute-force HPD windows, closed-form
conjugate posteriors, method-of-moments variance decomposition, and batch-means
Monte Carlo standard errors. These deliberately avoid the package's own code
paths for the quantities they check."""

import math

import numpy as np


def brute_force_hpd(samples, mass):
    """Enumerate every contiguous ceil(mass*n)-sample window over the sorted
    samples and return the leftmost shortest one."""
    x = sorted(float(v) for v in samples)
    n = len(x)
    target = mass * n
    if abs(target - round(target)) < 1e-9:
        target = round(target)
    k = min(max(int(math.ceil(target)), 1), n)
    best = (math.inf, None)
    for i in range(n - k + 1):
        width = x[i + k - 1] - x[i]
        if width < best[0]:
            best = (width, (x[i], x[i + k - 1]))
    return best[1]


def conjugate_posterior(X, y, sigma2, prior_var, prior_mean=0.0):
    """Exact Gaussian posterior for linear regression with known residual
    variance and independent N(prior_mean, prior_var) coefficient priors."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    L = X.shape[1]
    prec = X.T @ X / sigma2 + np.eye(L) / prior_var
    cov = np.linalg.inv(prec)
    mean = cov @ (X.T @ y / sigma2 + np.full(L, prior_mean / prior_var))
    return mean, cov


def mom_variance_components(y, team_of, facility_of):
    """Method-of-moments decomposition of a balanced-ish nested sample into
    (patient, team, facility) variance components."""
    y = np.asarray(y, dtype=float)
    teams = {}
    for i, t in enumerate(team_of):
        teams.setdefault(t, []).append(i)
    facilities = {}
    for t, members in teams.items():
        facilities.setdefault(facility_of[members[0]], []).append(t)

    within = [np.var(y[m], ddof=1) for m in teams.values() if len(m) > 1]
    sigma_e = float(np.mean(within))
    n_bar = float(np.mean([len(m) for m in teams.values()]))

    team_means = {t: float(np.mean(y[m])) for t, m in teams.items()}
    between_team = []
    for f, tlist in facilities.items():
        if len(tlist) > 1:
            between_team.append(np.var([team_means[t] for t in tlist], ddof=1))
    sigma_t = float(np.mean(between_team)) - sigma_e / n_bar
    m_bar = float(np.mean([len(tl) for tl in facilities.values()]))

    fac_means = [float(np.mean([team_means[t] for t in tlist]))
                 for tlist in facilities.values()]
    sigma_f = float(np.var(fac_means, ddof=1)) - sigma_t / m_bar - sigma_e / (m_bar * n_bar)
    return max(sigma_e, 0.0), max(sigma_t, 0.0), max(sigma_f, 0.0)


def batch_means_mcse(draws, n_batches=20):
    """Monte Carlo standard error of the mean via batch means."""
    x = np.asarray(draws, dtype=float).ravel()
    n = x.size // n_batches * n_batches
    batches = x[:n].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))
