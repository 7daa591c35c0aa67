"""Posterior summarization and model selection: HPD intervals, DIC, variance
decomposition (ICC), cross-outcome correlations, the DIC model-comparison rule,
and the constrained-vs-free deviance test."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .design import DesignStructure
from .errors import (EmptySamples, MissingRandomIntercept, NegativeStatisticWarning,
                     UsageError, ZeroVariance)
from .sampler import ChainSamples, as_chain_list, deviance, pooled_mean_state

DIC_RULE = 10.0  # adopt a richer model only when mean DIC drops by more than this


def hpd_interval(samples, mass: float = 0.95) -> tuple[float, float]:
    """Shortest contiguous interval over the sorted samples containing
    ceil(mass * n) of them; ties broken leftmost."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise EmptySamples(f"need at least 2 samples for an HPD interval, got {n}")
    if not 0.0 < mass < 1.0:
        raise UsageError("mass must lie in (0, 1)")
    target = mass * n
    if abs(target - round(target)) < 1e-9:
        target = round(target)
    k = int(math.ceil(target))
    k = min(max(k, 1), n)
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))  # argmin returns the first (leftmost) minimum
    return float(x[i]), float(x[i + k - 1])


@dataclass(frozen=True)
class DicResult:
    dbar: float
    p_d: float
    dic: float

    @property
    def dhat(self) -> float:
        return self.dbar - self.p_d

    def to_dict(self) -> dict:
        return {"Dbar": self.dbar, "pD": self.p_d, "DIC": self.dic}


def dic(chain, design: DesignStructure, dataset=None) -> DicResult:
    """Deviance information criterion with the conditional (random effects in
    the mean) focus: Dbar from the stored deviances, Dhat at the posterior-mean
    parameters, pD = Dbar - Dhat, DIC = Dbar + pD."""
    chains = as_chain_list(chain)
    devs = np.concatenate([c.deviance for c in chains])
    if devs.size == 0:
        raise EmptySamples("chain holds no retained draws")
    dbar = float(devs.mean())
    dhat = deviance(pooled_mean_state(chains), design, dataset)
    p_d = dbar - dhat
    return DicResult(dbar=dbar, p_d=p_d, dic=dbar + p_d)


def icc(sigma_patient, sigma_team, sigma_facility, outcome_index: int = 0
        ) -> tuple[float, float, float]:
    """Variance shares (patient, team, facility) for one outcome from the three
    intercept-level covariance blocks; the facility share is the complement so
    the three sum to one exactly."""
    mats = []
    for name, m in (("patient", sigma_patient), ("team", sigma_team),
                    ("facility", sigma_facility)):
        arr = np.atleast_2d(np.asarray(m, dtype=float))
        if arr.shape[0] <= outcome_index or arr.shape[1] <= outcome_index:
            raise MissingRandomIntercept(
                f"no random-intercept variance for outcome {outcome_index + 1} at {name} level")
        mats.append(float(arr[outcome_index, outcome_index]))
    vp, vt, vf = mats
    total = vp + vt + vf
    if total <= 0:
        raise ZeroVariance("total variance across levels is zero")
    share_p = vp / total
    share_t = vt / total
    # complement keeps share_p + share_t + share_f == 1.0 exactly
    return share_p, share_t, 1.0 - (share_p + share_t)


def level_correlation(sigma, p: int, q: int) -> float:
    """Correlation between components p and q of a level covariance matrix."""
    arr = np.atleast_2d(np.asarray(sigma, dtype=float))
    vp, vq = float(arr[p, p]), float(arr[q, q])
    if vp <= 0 or vq <= 0:
        raise ZeroVariance(f"zero variance at entry {p} or {q}")
    r = float(arr[p, q]) / math.sqrt(vp * vq)
    return float(min(1.0, max(-1.0, r)))


@dataclass(frozen=True)
class ModelRuns:
    model_id: str
    dic_runs: tuple[float, float]
    n_params: int

    @property
    def mean_dic(self) -> float:
        return 0.5 * (self.dic_runs[0] + self.dic_runs[1])

    @property
    def unstable(self) -> bool:
        return abs(self.dic_runs[0] - self.dic_runs[1]) > DIC_RULE


@dataclass(frozen=True)
class ComparisonReport:
    models: tuple[ModelRuns, ...]          # canonical order: simplest first
    deltas: tuple[tuple[str, str, float], ...]  # (simpler, richer, richer - simpler)
    selected: str
    rationale: str

    def to_dict(self) -> dict:
        return {
            "models": [
                {"model_id": m.model_id, "dic_run1": m.dic_runs[0], "dic_run2": m.dic_runs[1],
                 "mean_dic": m.mean_dic, "n_params": m.n_params, "unstable": m.unstable}
                for m in self.models
            ],
            "dic_deltas": [
                {"simpler": a, "richer": b, "delta": d} for a, b, d in self.deltas
            ],
            "selected": self.selected,
            "rationale": self.rationale,
        }


def compare_models(reports) -> ComparisonReport:
    """Rank models by mean DIC over their duplicate runs and select per the
    more-than-10-units rule: a richer model displaces a simpler one only when
    its mean DIC is lower by more than 10; models whose two runs disagree by
    more than 10 are flagged unstable. Pure function: input order never changes
    the selection."""
    entries = []
    for item in reports:
        if isinstance(item, ModelRuns):
            entries.append(item)
        else:
            model_id, r1, r2, n_params = item
            entries.append(ModelRuns(str(model_id), (float(r1), float(r2)), int(n_params)))
    if len(entries) < 2:
        raise UsageError("model comparison needs at least two models")

    ordered = tuple(sorted(entries, key=lambda m: (m.n_params, m.mean_dic, m.model_id)))
    selected = ordered[0]
    steps = []
    for challenger in ordered[1:]:
        drop = selected.mean_dic - challenger.mean_dic
        if drop > DIC_RULE:
            steps.append(f"{challenger.model_id} replaces {selected.model_id} "
                         f"(mean DIC lower by {drop:.1f} > {DIC_RULE:g})")
            selected = challenger
        else:
            steps.append(f"{challenger.model_id} rejected against {selected.model_id} "
                         f"(mean DIC reduction {drop:.1f} <= {DIC_RULE:g})")
    deltas = tuple((ordered[i].model_id, ordered[i + 1].model_id,
                    ordered[i + 1].mean_dic - ordered[i].mean_dic)
                   for i in range(len(ordered) - 1))
    flagged = [m.model_id for m in ordered if m.unstable]
    rationale = f"selected {selected.model_id}; " + "; ".join(steps)
    if flagged:
        rationale += f"; unstable (runs disagree by > {DIC_RULE:g}): {', '.join(flagged)}"
    return ComparisonReport(models=ordered, deltas=deltas,
                            selected=selected.model_id, rationale=rationale)


@dataclass(frozen=True)
class ConstraintTest:
    statistic: float
    df: int
    p_value: float
    clipped: bool = False

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def chi_square_deviance_test(dic_free: DicResult, dic_constrained: DicResult,
                             n_constraints: int) -> ConstraintTest:
    """Chi-square test on deviances at each model's posterior means: the
    constrained model is nested in the free one with df = n_constraints.
    A negative statistic (Monte Carlo noise) is clipped to zero with a warning."""
    if n_constraints < 1:
        raise UsageError("n_constraints must be >= 1")
    stat = dic_constrained.dhat - dic_free.dhat
    clipped = False
    if stat < 0:
        warnings.warn(NegativeStatisticWarning(
            f"deviance-test statistic {stat:.3f} < 0; reporting 0"))
        stat, clipped = 0.0, True
    p = float(chi2.sf(stat, df=n_constraints))
    return ConstraintTest(statistic=float(stat), df=int(n_constraints),
                          p_value=p, clipped=clipped)


# ---------------------------------------------------------------------------
# fit summary

@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    hpd_low: float
    hpd_high: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd,
                "hpd95": [self.hpd_low, self.hpd_high]}


@dataclass(frozen=True, eq=False)
class LevelCorrelation:
    outcome_labels: tuple[str, ...]
    mean: np.ndarray
    hpd_low: np.ndarray
    hpd_high: np.ndarray

    def to_dict(self) -> dict:
        return {"outcomes": list(self.outcome_labels),
                "mean": self.mean.tolist(),
                "hpd_low": self.hpd_low.tolist(),
                "hpd_high": self.hpd_high.tolist()}


@dataclass(frozen=True, eq=False)
class FitSummary:
    params: dict
    dic: DicResult
    dic_per_chain: tuple[DicResult, ...]
    icc_table: dict | None
    icc_hpd: dict | None
    correlations: dict
    mass: float
    n_draws: int
    deviance_focus: str = "conditional on random effects"

    def to_dict(self) -> dict:
        return {
            "params": {k: v.to_dict() for k, v in self.params.items()},
            "dic": self.dic.to_dict(),
            "dic_per_chain": [d.to_dict() for d in self.dic_per_chain],
            "deviance_focus": self.deviance_focus,
            "icc_table": self.icc_table,
            "icc_hpd": self.icc_hpd,
            "correlations": {k: v.to_dict() for k, v in self.correlations.items()},
            "mass": self.mass,
            "n_draws": self.n_draws,
        }


def _summary(draws: np.ndarray, mass: float) -> ParamSummary:
    lo, hi = hpd_interval(draws, mass)
    return ParamSummary(mean=float(draws.mean()), sd=float(draws.std(ddof=1)),
                        hpd_low=lo, hpd_high=hi)


def _intercept_block_draws(chains: list[ChainSamples], design: DesignStructure,
                           level: str) -> np.ndarray | None:
    """Per-draw covariance block of the outcome intercepts at a level, or None
    if some outcome lacks a random intercept there."""
    P = design.n_outcomes
    if level == "patient":
        return np.concatenate([c.sigma_patient for c in chains])
    try:
        slots = [design.intercept_slot(level, p) for p in range(P)]
    except MissingRandomIntercept:
        return None
    sig = np.concatenate([c.sigma_team if level == "team" else c.sigma_facility
                          for c in chains])
    rows = np.asarray(slots)[:, None]
    cols = np.asarray(slots)[None, :]
    return sig[:, rows, cols]


def summarize(chains, design: DesignStructure, mass: float = 0.95) -> FitSummary:
    """Pool retained draws across chains into posterior means, SDs, HPD
    intervals, DIC, the ICC table, and per-level outcome correlations."""
    chains = as_chain_list(chains)
    P = design.n_outcomes
    outcome_labels = tuple(f"y{p + 1}" for p in range(P))

    params: dict[str, ParamSummary] = {}
    gamma = np.concatenate([c.gamma for c in chains])
    for i, label in enumerate(design.fixed_labels):
        params[f"gamma:{label}"] = _summary(gamma[:, i], mass)

    def add_cov(name: str, draws: np.ndarray, labels: tuple[str, ...]):
        for i in range(len(labels)):
            for j in range(i, len(labels)):
                params[f"{name}[{labels[i]},{labels[j]}]"] = _summary(draws[:, i, j], mass)

    sig_e = np.concatenate([c.sigma_patient for c in chains])
    add_cov("sigma_patient", sig_e, outcome_labels)
    if design.q_team:
        sig_t = np.concatenate([c.sigma_team for c in chains])
        add_cov("sigma_team", sig_t, design.team_term_labels)
    if design.q_facility:
        sig_f = np.concatenate([c.sigma_facility for c in chains])
        add_cov("sigma_facility", sig_f, design.facility_term_labels)

    if design.q_team:
        u = np.concatenate([c.team_effects for c in chains])
        for j, tid in enumerate(design.team_ids):
            for a, term in enumerate(design.team_term_labels):
                params[f"team[{tid}]:{term}"] = _summary(u[:, j, a], mass)
    if design.q_facility:
        v = np.concatenate([c.facility_effects for c in chains])
        for k, fid in enumerate(design.facility_ids):
            for a, term in enumerate(design.facility_term_labels):
                params[f"facility[{fid}]:{term}"] = _summary(v[:, k, a], mass)

    dic_per_chain = tuple(dic(c, design) for c in chains)
    dic_pooled = dic(chains, design)

    # ICC: plug-in shares from posterior-mean variances, HPDs from per-draw shares
    blocks = {lvl: _intercept_block_draws(chains, design, lvl)
              for lvl in ("patient", "team", "facility")}
    icc_table = icc_hpd = None
    if blocks["team"] is not None and blocks["facility"] is not None:
        icc_table, icc_hpd = {}, {}
        for p, out_label in enumerate(outcome_labels):
            mean_shares = icc(blocks["patient"].mean(axis=0), blocks["team"].mean(axis=0),
                              blocks["facility"].mean(axis=0), p)
            icc_table[out_label] = {"patient": mean_shares[0], "team": mean_shares[1],
                                    "facility": mean_shares[2]}
            vp = blocks["patient"][:, p, p]
            vt = blocks["team"][:, p, p]
            vf = blocks["facility"][:, p, p]
            tot = vp + vt + vf
            icc_hpd[out_label] = {
                "patient": hpd_interval(vp / tot, mass),
                "team": hpd_interval(vt / tot, mass),
                "facility": hpd_interval(vf / tot, mass),
            }

    correlations: dict[str, LevelCorrelation] = {}
    if P >= 2:
        for lvl, block in blocks.items():
            if block is None:
                continue
            mean_m = np.eye(P)
            lo_m = np.eye(P)
            hi_m = np.eye(P)
            for i in range(P):
                for j in range(i + 1, P):
                    denom = np.sqrt(block[:, i, i] * block[:, j, j])
                    r = np.clip(block[:, i, j] / denom, -1.0, 1.0)
                    lo, hi = hpd_interval(r, mass)
                    mean_m[i, j] = mean_m[j, i] = float(r.mean())
                    lo_m[i, j] = lo_m[j, i] = lo
                    hi_m[i, j] = hi_m[j, i] = hi
            correlations[lvl] = LevelCorrelation(outcome_labels, mean_m, lo_m, hi_m)

    n_draws = int(sum(len(c) for c in chains))
    return FitSummary(params=params, dic=dic_pooled, dic_per_chain=dic_per_chain,
                      icc_table=icc_table, icc_hpd=icc_hpd, correlations=correlations,
                      mass=mass, n_draws=n_draws)
