"""Gibbs sampler for the three-level multivariate Gaussian mixed model.

All full conditionals are conjugate: Gaussian for fixed and unit effects,
inverse-Wishart for unstructured level covariances, inverse-gamma for the
pooled (common-variance, zero off-diagonal) structure. Update order is fixed:
fixed effects, facility effects, team effects, then the facility / team /
patient covariances.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import PanelDataset
from .design import DesignStructure
from .errors import NumericalBreakdown, SingularDesignWarning, UsageError
from .modelspec import POOLED_DIAGONAL

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LevelPrior:
    """Covariance prior for one level: inverse-Wishart(df, scale * I) when the
    level is unstructured, inverse-gamma(shape, rate) on the common variance
    when it is pooled-diagonal. df=None resolves to dimension + 1."""

    iw_df: float | None = None
    iw_scale: float = 1.0
    ig_shape: float = 1e-3
    ig_rate: float = 1e-3

    def __post_init__(self):
        if self.iw_scale <= 0:
            raise UsageError("inverse-Wishart scale must be positive")
        if self.ig_shape <= 0 or self.ig_rate <= 0:
            raise UsageError("inverse-gamma hyperparameters must be positive")


@dataclass(frozen=True)
class Priors:
    """Independent Gaussian priors on fixed effects plus per-level covariance
    priors. `fix_patient_covariance` pins the residual covariance at a known
    value (it is then never resampled), which makes conjugate oracle checks
    exact."""

    fixed_mean: float = 0.0
    fixed_variance: float = 1e6
    patient: LevelPrior = LevelPrior()
    team: LevelPrior = LevelPrior()
    facility: LevelPrior = LevelPrior()
    fix_patient_covariance: np.ndarray | None = None

    def __post_init__(self):
        if self.fixed_variance <= 0:
            raise UsageError("fixed-effect prior variance must be positive")


@dataclass(frozen=True)
class McmcConfig:
    n_iterations: int = 50_000
    n_burnin: int = 10_000
    thin: int = 25
    n_chains: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_burnin >= self.n_iterations:
            raise UsageError("n_burnin must be smaller than n_iterations")
        if self.thin < 1:
            raise UsageError("thin must be >= 1")
        if self.n_chains < 1:
            raise UsageError("n_chains must be >= 1")
        if self.seed < 0:
            raise UsageError("seed must be non-negative")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.n_burnin) // self.thin


@dataclass(eq=False)
class ParameterState:
    """One full parameter draw."""

    gamma: np.ndarray             # (L,)
    team_effects: np.ndarray      # (J, q_team)
    facility_effects: np.ndarray  # (K, q_facility)
    sigma_patient: np.ndarray     # (P, P)
    sigma_team: np.ndarray        # (q_team, q_team)
    sigma_facility: np.ndarray    # (q_facility, q_facility)

    def copy(self) -> "ParameterState":
        return ParameterState(self.gamma.copy(), self.team_effects.copy(),
                              self.facility_effects.copy(), self.sigma_patient.copy(),
                              self.sigma_team.copy(), self.sigma_facility.copy())


@dataclass(eq=False)
class ChainSamples:
    """Thinned post-burn-in draws of one chain, array-backed.

    len(chain) == (n_iterations - n_burnin) // thin and every retained draw
    carries its deviance.
    """

    config: McmcConfig
    chain_index: int
    gamma: np.ndarray             # (n, L)
    team_effects: np.ndarray      # (n, J, q_team)
    facility_effects: np.ndarray  # (n, K, q_facility)
    sigma_patient: np.ndarray     # (n, P, P)
    sigma_team: np.ndarray        # (n, q_team, q_team)
    sigma_facility: np.ndarray    # (n, q_facility, q_facility)
    deviance: np.ndarray          # (n,)

    @property
    def seed(self) -> int:
        return self.config.seed

    def __len__(self) -> int:
        return self.gamma.shape[0]

    def state(self, i: int) -> ParameterState:
        return ParameterState(self.gamma[i], self.team_effects[i], self.facility_effects[i],
                              self.sigma_patient[i], self.sigma_team[i], self.sigma_facility[i])

    def __getitem__(self, i: int) -> ParameterState:
        return self.state(i)

    def states(self):
        return (self.state(i) for i in range(len(self)))

    def posterior_mean_state(self) -> ParameterState:
        return ParameterState(self.gamma.mean(axis=0), self.team_effects.mean(axis=0),
                              self.facility_effects.mean(axis=0),
                              self.sigma_patient.mean(axis=0), self.sigma_team.mean(axis=0),
                              self.sigma_facility.mean(axis=0))


def as_chain_list(chains) -> list[ChainSamples]:
    if isinstance(chains, ChainSamples):
        return [chains]
    return list(chains)


def pooled_mean_state(chains) -> ParameterState:
    chains = as_chain_list(chains)
    n = sum(len(c) for c in chains)
    acc = None
    for c in chains:
        parts = (c.gamma.sum(axis=0), c.team_effects.sum(axis=0),
                 c.facility_effects.sum(axis=0), c.sigma_patient.sum(axis=0),
                 c.sigma_team.sum(axis=0), c.sigma_facility.sum(axis=0))
        acc = parts if acc is None else tuple(a + p for a, p in zip(acc, parts))
    return ParameterState(*(a / n for a in acc))


# ---------------------------------------------------------------------------
# numerics

def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _chol(a: np.ndarray, block: str, iteration: int | None) -> np.ndarray:
    try:
        L = np.linalg.cholesky(_sym(a))
    except np.linalg.LinAlgError:
        raise NumericalBreakdown(block, iteration, "covariance not positive definite") from None
    if not np.all(np.isfinite(L)):
        raise NumericalBreakdown(block, iteration, "non-finite Cholesky factor")
    return L


def _draw_from_precision(prec: np.ndarray, rhs: np.ndarray, rng: np.random.Generator,
                         block: str, iteration: int | None) -> np.ndarray:
    """Draw from N(prec^-1 rhs, prec^-1); works batched on (..., q, q)."""
    L = _chol(prec, block, iteration)
    mean = np.linalg.solve(_sym(prec), rhs[..., None])[..., 0]
    z = rng.standard_normal(mean.shape)
    dev = np.linalg.solve(np.swapaxes(L, -1, -2), z[..., None])[..., 0]
    return mean + dev


def _segment_sum(values: np.ndarray, idx: np.ndarray, n_units: int) -> np.ndarray:
    """Sum (N, q) rows into (n_units, q) groups; empty units sum to zero."""
    out = np.empty((n_units, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(idx, weights=values[:, c], minlength=n_units)
    return out


def _invgamma_rvs(shape: float, rate: float, rng: np.random.Generator) -> float:
    return float(rate / rng.standard_gamma(shape))


def _invwishart_rvs(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bartlett-decomposition draw from the inverse Wishart (mean = scale / (df - q - 1))."""
    q = scale.shape[0]
    ls = np.linalg.cholesky(scale)
    a = np.zeros((q, q))
    for i in range(q):
        a[i, i] = np.sqrt(2.0 * rng.standard_gamma(0.5 * (df - i)))
    lower = np.tril_indices(q, -1)
    if lower[0].size:
        a[lower] = rng.standard_normal(lower[0].size)
    m = ls @ np.linalg.solve(a, np.eye(q)).T
    return m @ m.T


def _unit_blocks(D: np.ndarray, idx: np.ndarray, n_units: int) -> np.ndarray:
    """Per-unit sum of D_n' (x) D_n cross tensors: (n_units, P, P, q, q)."""
    N, P, q = D.shape
    per = np.einsum("npa,nqb->npqab", D, D).reshape(N, -1)
    out = np.empty((n_units, per.shape[1]))
    for c in range(per.shape[1]):
        out[:, c] = np.bincount(idx, weights=per[:, c], minlength=n_units)
    return out.reshape(n_units, P, P, q, q)


def _draw_level_cov(vectors: np.ndarray, pooled: bool, prior: LevelPrior,
                    rng: np.random.Generator, block: str, iteration: int | None) -> np.ndarray:
    """Full-conditional covariance draw given the zero-mean vectors at a level."""
    m, q = vectors.shape
    if pooled:
        shape = prior.ig_shape + 0.5 * m * q
        rate = prior.ig_rate + 0.5 * float(np.sum(vectors * vectors))
        var = _invgamma_rvs(shape, rate, rng)
        if not np.isfinite(var) or var <= 0:
            raise NumericalBreakdown(block, iteration, "invalid pooled variance draw")
        return var * np.eye(q)
    df0 = prior.iw_df if prior.iw_df is not None else q + 1
    if df0 <= q - 1:
        raise UsageError(f"inverse-Wishart df must exceed dim - 1 = {q - 1}")
    scale = prior.iw_scale * np.eye(q) + vectors.T @ vectors
    try:
        draw = _sym(_invwishart_rvs(df0 + m, _sym(scale), rng))
    except np.linalg.LinAlgError:
        raise NumericalBreakdown(block, iteration, "singular covariance scale") from None
    if not np.all(np.isfinite(draw)):
        raise NumericalBreakdown(block, iteration, "non-finite covariance draw")
    return draw


# ---------------------------------------------------------------------------
# workspace: everything that depends only on (design, priors)

class _Workspace:
    def __init__(self, design: DesignStructure, priors: Priors):
        self.design = design
        self.priors = priors
        spec = design.spec
        self.N, self.P, self.L = design.F.shape[0], design.n_outcomes, design.n_fixed
        self.J, self.K = design.n_teams, design.n_facilities
        self.qt, self.qf = design.q_team, design.q_facility
        self.Y, self.F, self.T, self.G = design.Y, design.F, design.T, design.G
        self.F2 = np.ascontiguousarray(self.F.reshape(self.N * self.P, self.L))
        self.team_idx = design.patient_team_idx
        self.fac_idx = design.patient_facility_idx

        self.FtF = np.einsum("npa,nqb->pqab", self.F, self.F, optimize=True)
        self.TT = _unit_blocks(self.T, self.team_idx, self.J) if self.qt else None
        self.GG = _unit_blocks(self.G, self.fac_idx, self.K) if self.qf else None

        self.prior_prec = np.full(self.L, 1.0 / priors.fixed_variance)
        self.prior_rhs = self.prior_prec * priors.fixed_mean
        self.pooled_patient = spec.cov_patient == POOLED_DIAGONAL
        self.pooled_team = spec.cov_team == POOLED_DIAGONAL
        self.pooled_facility = spec.cov_facility == POOLED_DIAGONAL

        fix = priors.fix_patient_covariance
        if fix is not None:
            fix = np.atleast_2d(np.asarray(fix, dtype=float))
            if fix.shape != (self.P, self.P):
                raise UsageError("fix_patient_covariance has the wrong shape")
        self.fix_patient = fix


class _Running:
    __slots__ = ("gamma", "u", "v", "sigma_e", "sigma_t", "sigma_f",
                 "w_e", "logdet_e", "resid")

    def __init__(self, state: ParameterState, ws: _Workspace, iteration=None):
        self.gamma = state.gamma.astype(float).copy()
        self.u = state.team_effects.astype(float).copy()
        self.v = state.facility_effects.astype(float).copy()
        self.sigma_e = state.sigma_patient.astype(float).copy()
        self.sigma_t = state.sigma_team.astype(float).copy()
        self.sigma_f = state.sigma_facility.astype(float).copy()
        self._refresh_w(iteration)
        self.resid = None

    def _refresh_w(self, iteration):
        L = _chol(self.sigma_e, "sigma_patient", iteration)
        self.logdet_e = 2.0 * float(np.sum(np.log(np.diag(L))))
        self.w_e = np.linalg.inv(_sym(self.sigma_e))

    def to_state(self) -> ParameterState:
        return ParameterState(self.gamma.copy(), self.u.copy(), self.v.copy(),
                              self.sigma_e.copy(), self.sigma_t.copy(), self.sigma_f.copy())


def _sweep(st: _Running, ws: _Workspace, rng: np.random.Generator,
           iteration: int | None) -> None:
    """One full Gibbs sweep, mutating `st` in place."""
    W = st.w_e
    TU = np.einsum("npa,na->np", ws.T, st.u[ws.team_idx])
    GV = np.einsum("npa,na->np", ws.G, st.v[ws.fac_idx])

    # fixed effects
    prec = np.tensordot(W, ws.FtF, axes=([0, 1], [0, 1])) + np.diag(ws.prior_prec)
    rw = (ws.Y - TU - GV) @ W
    rhs = ws.F2.T @ rw.ravel() + ws.prior_rhs
    st.gamma = _draw_from_precision(prec, rhs, rng, "fixed_effects", iteration)
    Fg = (ws.F2 @ st.gamma).reshape(ws.N, ws.P)

    # facility effects
    if ws.qf:
        sf_inv = np.linalg.inv(_sym(st.sigma_f))
        rw = (ws.Y - Fg - TU) @ W
        s = np.einsum("npa,np->na", ws.G, rw)
        rhs_k = _segment_sum(s, ws.fac_idx, ws.K)
        prec_k = np.tensordot(ws.GG, W, axes=([1, 2], [0, 1])) + sf_inv
        st.v = _draw_from_precision(prec_k, rhs_k, rng, "facility_effects", iteration)
        GV = np.einsum("npa,na->np", ws.G, st.v[ws.fac_idx])

    # team effects
    if ws.qt:
        stinv = np.linalg.inv(_sym(st.sigma_t))
        rw = (ws.Y - Fg - GV) @ W
        s = np.einsum("npa,np->na", ws.T, rw)
        rhs_j = _segment_sum(s, ws.team_idx, ws.J)
        prec_j = np.tensordot(ws.TT, W, axes=([1, 2], [0, 1])) + stinv
        st.u = _draw_from_precision(prec_j, rhs_j, rng, "team_effects", iteration)
        TU = np.einsum("npa,na->np", ws.T, st.u[ws.team_idx])

    # level covariances: facility, team, patient
    if ws.qf:
        st.sigma_f = _draw_level_cov(st.v, ws.pooled_facility, ws.priors.facility,
                                     rng, "sigma_facility", iteration)
    if ws.qt:
        st.sigma_t = _draw_level_cov(st.u, ws.pooled_team, ws.priors.team,
                                     rng, "sigma_team", iteration)
    st.resid = ws.Y - Fg - TU - GV
    if ws.fix_patient is None:
        st.sigma_e = _draw_level_cov(st.resid, ws.pooled_patient, ws.priors.patient,
                                     rng, "sigma_patient", iteration)
    st._refresh_w(iteration)
    if not np.all(np.isfinite(st.gamma)):
        raise NumericalBreakdown("fixed_effects", iteration, "non-finite draw")


def _resid_deviance(resid: np.ndarray, w_e: np.ndarray, logdet_e: float) -> float:
    n, p = resid.shape
    quad = float(np.sum((resid @ w_e) * resid))
    return n * (p * LOG_2PI + logdet_e) + quad


# ---------------------------------------------------------------------------
# public operations

def init_state(design: DesignStructure, dataset: PanelDataset | None = None,
               priors: Priors | None = None) -> ParameterState:
    """Starting point: per-outcome least squares for the fixed effects (zero on
    rank deficiency, with a warning), zero random effects, identity covariances."""
    N, P, L = design.F.shape
    F2 = design.F.reshape(N * P, L)
    y2 = design.Y.reshape(N * P)
    gamma, _, rank, _ = np.linalg.lstsq(F2, y2, rcond=None)
    if rank < L:
        warnings.warn(SingularDesignWarning(
            "least-squares start is rank-deficient; initializing fixed effects at zero"))
        gamma = np.zeros(L)
    sigma_e = np.eye(P)
    if priors is not None and priors.fix_patient_covariance is not None:
        sigma_e = np.atleast_2d(np.asarray(priors.fix_patient_covariance, dtype=float)).copy()
    return ParameterState(
        gamma=np.asarray(gamma, dtype=float),
        team_effects=np.zeros((design.n_teams, design.q_team)),
        facility_effects=np.zeros((design.n_facilities, design.q_facility)),
        sigma_patient=sigma_e,
        sigma_team=np.eye(design.q_team),
        sigma_facility=np.eye(design.q_facility),
    )


def gibbs_step(state: ParameterState, design: DesignStructure, dataset: PanelDataset | None,
               priors: Priors, rng: np.random.Generator,
               workspace: "_Workspace | None" = None) -> ParameterState:
    """One full conditional sweep; returns a new state."""
    ws = workspace if workspace is not None else _Workspace(design, priors)
    st = _Running(state, ws)
    _sweep(st, ws, rng, None)
    return st.to_state()


def deviance(state: ParameterState, design: DesignStructure,
             dataset: PanelDataset | None = None) -> float:
    """-2 x Gaussian log-likelihood of all responses, conditional on the full
    state (random effects included in the mean)."""
    Fg = np.einsum("npa,a->np", design.F, state.gamma)
    TU = np.einsum("npa,na->np", design.T, state.team_effects[design.patient_team_idx])
    GV = np.einsum("npa,na->np", design.G, state.facility_effects[design.patient_facility_idx])
    resid = design.Y - Fg - TU - GV
    L = _chol(state.sigma_patient, "sigma_patient", None)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    w = np.linalg.inv(_sym(state.sigma_patient))
    return _resid_deviance(resid, w, logdet)


def run_chain(design: DesignStructure, dataset: PanelDataset | None, priors: Priors,
              config: McmcConfig, chain_index: int = 0,
              workspace: "_Workspace | None" = None) -> ChainSamples:
    """Run one chain: n_iterations sweeps from the least-squares start, keeping
    every thin-th post-burn-in state with its deviance. Fully determined by
    (config.seed, chain_index) and the inputs."""
    ws = workspace if workspace is not None else _Workspace(design, priors)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, chain_index]))
    st = _Running(init_state(design, dataset, priors), ws)

    n_keep = config.n_retained
    out = ChainSamples(
        config=config,
        chain_index=chain_index,
        gamma=np.empty((n_keep, ws.L)),
        team_effects=np.empty((n_keep, ws.J, ws.qt)),
        facility_effects=np.empty((n_keep, ws.K, ws.qf)),
        sigma_patient=np.empty((n_keep, ws.P, ws.P)),
        sigma_team=np.empty((n_keep, ws.qt, ws.qt)),
        sigma_facility=np.empty((n_keep, ws.qf, ws.qf)),
        deviance=np.empty(n_keep),
    )
    kept = 0
    for t in range(1, config.n_iterations + 1):
        _sweep(st, ws, rng, t)
        if t > config.n_burnin and (t - config.n_burnin) % config.thin == 0:
            out.gamma[kept] = st.gamma
            out.team_effects[kept] = st.u
            out.facility_effects[kept] = st.v
            out.sigma_patient[kept] = st.sigma_e
            out.sigma_team[kept] = st.sigma_t
            out.sigma_facility[kept] = st.sigma_f
            dev = _resid_deviance(st.resid, st.w_e, st.logdet_e)
            if not np.isfinite(dev):
                raise NumericalBreakdown("deviance", t, "non-finite deviance")
            out.deviance[kept] = dev
            kept += 1
    return out


def run_chains(design: DesignStructure, dataset: PanelDataset | None, priors: Priors,
               config: McmcConfig) -> list[ChainSamples]:
    """Run config.n_chains independent chains; HBMV_THREADS > 1 runs them in
    parallel (per-chain random streams are never shared)."""
    ws = _Workspace(design, priors)
    threads = int(os.environ.get("HBMV_THREADS", "1") or "1")
    indices = list(range(config.n_chains))
    if threads > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=min(threads, config.n_chains)) as pool:
            futures = [pool.submit(run_chain, design, dataset, priors, config, i, ws)
                       for i in indices]
            return [f.result() for f in futures]
    return [run_chain(design, dataset, priors, config, i, ws) for i in indices]
