"""Posterior-predictive workload portfolios for patient profiles.

For each retained draw the predictive distribution conditions on the sampled
parameters: known units contribute their sampled effects, new units integrate
over the sampled level covariance, and the residual covariance always enters.
On the model (identity) scale, means, SDs, and correlations come from the
exact per-draw conditional moments (law of total variance over the draw
mixture); intervals, and everything under a back-converted log model, come
from simulated draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignStructure, PredictionContext
from .diagnostics import hpd_interval
from .errors import DimensionMismatch, UnknownUnit
from .sampler import as_chain_list


@dataclass(frozen=True, eq=False)
class PredictionRequest:
    """One patient profile. `team_id=None` means a new team (likewise for
    facilities); optional raw covariates describe new units, defaulting to an
    average unit (zero on the standardized scale)."""

    patient_covariates: np.ndarray
    team_id: str | None = None
    facility_id: str | None = None
    team_covariates: np.ndarray | None = None
    facility_covariates: np.ndarray | None = None
    back_transform: bool = True


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    outcome_labels: tuple[str, ...]
    mean: np.ndarray           # (P,)
    sd: np.ndarray             # (P,)
    interval_low: np.ndarray   # (P,)
    interval_high: np.ndarray  # (P,)
    correlation: np.ndarray    # (P, P)
    mass: float
    n_draws: int

    def to_dict(self) -> dict:
        return {"outcomes": list(self.outcome_labels), "mean": self.mean.tolist(),
                "sd": self.sd.tolist(), "interval_low": self.interval_low.tolist(),
                "interval_high": self.interval_high.tolist(),
                "correlation": self.correlation.tolist(),
                "mass": self.mass, "n_draws": self.n_draws}


def _standardize_row(raw, dim: int, record: dict, what: str) -> np.ndarray:
    if raw is None:
        return np.zeros(dim)
    row = np.atleast_1d(np.asarray(raw, dtype=float))
    if row.shape != (dim,):
        raise DimensionMismatch(f"{what} covariates must have length {dim}, got {row.shape}")
    out = row.copy()
    for c, (mu, sd) in record.items():
        c = int(c)
        out[c] = (out[c] - mu) / sd
    return out


def _design_rows(ctx: PredictionContext, x, z, w):
    """(P, L), (P, q_team), (P, q_facility) design rows for one profile."""
    spec = ctx.spec
    P = spec.n_outcomes

    def value(kind, index):
        if kind == "intercept":
            return 1.0
        if kind == "patient":
            return x[index]
        if kind == "team":
            return z[index]
        return w[index]

    terms = spec.fixed_terms()
    F = np.zeros((P, ctx.n_fixed))
    for p in range(P):
        for t_i, (kind, index) in enumerate(terms):
            col = int(ctx.raw_to_merged[p * len(terms) + t_i])
            F[p, col] += value(kind, index)

    t_terms = spec.team_random_terms()
    T = np.zeros((P, P * len(t_terms)))
    for p in range(P):
        for t_i, (kind, index) in enumerate(t_terms):
            T[p, p * len(t_terms) + t_i] = value(kind, index)

    f_terms = spec.facility_random_terms()
    G = np.zeros((P, P * len(f_terms)))
    for p in range(P):
        for t_i, (kind, index) in enumerate(f_terms):
            G[p, p * len(f_terms) + t_i] = value(kind, index)
    return F, T, G


def _resolve_units(ctx: PredictionContext, request: PredictionRequest):
    """(team position | None, facility position | None) after validation."""
    team_pos = fac_pos = None
    if request.team_id is not None:
        try:
            team_pos = ctx.team_ids.index(request.team_id)
        except ValueError:
            raise UnknownUnit(f"unknown team id {request.team_id!r}") from None
    if request.facility_id is not None:
        try:
            fac_pos = ctx.facility_ids.index(request.facility_id)
        except ValueError:
            raise UnknownUnit(f"unknown facility id {request.facility_id!r}") from None
    if team_pos is not None:
        owner = int(ctx.team_facility_idx[team_pos])
        if fac_pos is not None and fac_pos != owner:
            raise UnknownUnit(
                f"team {request.team_id!r} belongs to facility "
                f"{ctx.facility_ids[owner]!r}, not {request.facility_id!r}")
        fac_pos = owner
    return team_pos, fac_pos


def posterior_predict(chains, context, request: PredictionRequest,
                      rng: np.random.Generator | None = None,
                      draws_per_state: int = 2, mass: float = 0.95) -> PredictiveSummary:
    """Predictive portfolio summary for one patient profile."""
    if isinstance(context, DesignStructure):
        context = context.prediction_context()
    ctx: PredictionContext = context
    chains = as_chain_list(chains)
    if rng is None:
        rng = np.random.default_rng(0)
    P = ctx.n_outcomes

    x = np.atleast_1d(np.asarray(request.patient_covariates, dtype=float))
    if x.shape != (ctx.patient_dim,):
        raise DimensionMismatch(
            f"request covariates must have length {ctx.patient_dim}, got {x.shape}")
    x = _standardize_row(x, ctx.patient_dim, ctx.standardization.get("patient", {}), "patient")

    team_pos, fac_pos = _resolve_units(ctx, request)
    if team_pos is not None:
        z = ctx.team_covariates[team_pos]
    else:
        z = _standardize_row(request.team_covariates, ctx.team_covariates.shape[1],
                             ctx.standardization.get("team", {}), "team")
    if fac_pos is not None:
        w = ctx.facility_covariates[fac_pos]
    else:
        w = _standardize_row(request.facility_covariates, ctx.facility_covariates.shape[1],
                             ctx.standardization.get("facility", {}), "facility")

    F, T, G = _design_rows(ctx, x, z, w)

    gamma = np.concatenate([c.gamma for c in chains])
    sigma_e = np.concatenate([c.sigma_patient for c in chains])
    n = gamma.shape[0]

    m = np.einsum("sa,pa->sp", gamma, F)
    C = sigma_e.copy()
    if T.shape[1]:
        if team_pos is not None:
            u = np.concatenate([c.team_effects for c in chains])[:, team_pos, :]
            m += np.einsum("sa,pa->sp", u, T)
        else:
            sig_t = np.concatenate([c.sigma_team for c in chains])
            C += np.einsum("pa,sab,qb->spq", T, sig_t, T)
    if G.shape[1]:
        if fac_pos is not None:
            v = np.concatenate([c.facility_effects for c in chains])[:, fac_pos, :]
            m += np.einsum("sa,pa->sp", v, G)
        else:
            sig_f = np.concatenate([c.sigma_facility for c in chains])
            C += np.einsum("pa,sab,qb->spq", G, sig_f, G)

    # simulate outcomes per retained draw
    chol = np.linalg.cholesky(0.5 * (C + np.swapaxes(C, 1, 2)))
    z_draws = rng.standard_normal((n, draws_per_state, P))
    y = m[:, None, :] + np.einsum("spq,sdq->sdp", chol, z_draws)
    y = y.reshape(n * draws_per_state, P)

    back = ctx.transform == "log" and request.back_transform
    if back:
        y = np.exp(y)
        mean = y.mean(axis=0)
        sd = y.std(axis=0)
        cov = np.cov(y, rowvar=False).reshape(P, P)
    else:
        mean = m.mean(axis=0)
        total_cov = C.mean(axis=0)
        centered = m - mean
        total_cov = total_cov + (centered.T @ centered) / n
        sd = np.sqrt(np.diag(total_cov))
        cov = total_cov

    denom = np.outer(sd, sd)
    corr = np.ones((P, P))
    nz = denom > 0
    corr[nz] = np.clip(cov[nz] / denom[nz], -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)

    lo = np.empty(P)
    hi = np.empty(P)
    for p in range(P):
        lo[p], hi[p] = hpd_interval(y[:, p], mass)

    return PredictiveSummary(
        outcome_labels=tuple(f"y{p + 1}" for p in range(P)),
        mean=mean, sd=sd, interval_low=lo, interval_high=hi,
        correlation=corr, mass=mass, n_draws=y.shape[0])
