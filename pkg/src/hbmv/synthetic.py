"""Synthetic PCMH-shaped datasets from known ground truth, for recovery tests,
DIC discrimination studies, and constraint-test calibration."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import FacilityRecord, PanelDataset, PatientRecord, TeamRecord
from .design import build_design, fixed_effect_labels, random_term_labels
from .diagnostics import FitSummary
from .errors import InvalidTruth, LayoutMismatch
from .modelspec import ModelSpec


@dataclass(frozen=True)
class CovariateModel:
    """Distribution of one synthetic covariate column."""

    kind: str = "normal"  # "normal" | "bernoulli"
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(self.mean, self.sd, size=n)
        if self.kind == "bernoulli":
            return rng.binomial(1, self.p, size=n).astype(float)
        raise InvalidTruth(f"unknown covariate kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "sd": self.sd, "p": self.p}


def _check_spd(name: str, mat: np.ndarray, dim: int) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(mat, dtype=float))
    if arr.shape != (dim, dim):
        raise InvalidTruth(f"{name} must be {dim}x{dim}, got {arr.shape}")
    if dim == 0:
        return arr
    if not np.allclose(arr, arr.T):
        raise InvalidTruth(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(arr)
    except np.linalg.LinAlgError:
        raise InvalidTruth(f"{name} is not positive definite") from None
    return arr


def _as_range(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        lo, hi = int(value[0]), int(value[1])
    else:
        lo = hi = int(value)
    if lo < 1 or hi < lo:
        raise InvalidTruth(f"invalid unit count range ({lo}, {hi})")
    return lo, hi


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True parameters of the generating model plus the panel shape and the
    covariate distributions. `gamma` is ordered by the merged fixed-effect
    layout of `spec` and refers to the raw (unstandardized) covariate scale."""

    spec: ModelSpec
    gamma: np.ndarray
    sigma_patient: np.ndarray
    sigma_team: np.ndarray
    sigma_facility: np.ndarray
    n_facilities: int | tuple[int, int] = 10
    teams_per_facility: int | tuple[int, int] = 5
    patients_per_team: int | tuple[int, int] = 20
    patient_covariates: tuple[CovariateModel, ...] = ()
    team_covariates: tuple[CovariateModel, ...] = ()
    facility_covariates: tuple[CovariateModel, ...] = ()

    def __post_init__(self):
        spec = self.spec
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.shape != (spec.n_fixed,):
            raise InvalidTruth(f"gamma must have length {spec.n_fixed}, got {gamma.shape}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma_patient",
                           _check_spd("sigma_patient", self.sigma_patient, spec.n_outcomes))
        object.__setattr__(self, "sigma_team",
                           _check_spd("sigma_team", self.sigma_team, spec.q_team))
        object.__setattr__(self, "sigma_facility",
                           _check_spd("sigma_facility", self.sigma_facility, spec.q_facility))
        object.__setattr__(self, "patient_covariates",
                           tuple(c if isinstance(c, CovariateModel) else CovariateModel(**c)
                                 for c in self.patient_covariates))
        object.__setattr__(self, "team_covariates",
                           tuple(c if isinstance(c, CovariateModel) else CovariateModel(**c)
                                 for c in self.team_covariates))
        object.__setattr__(self, "facility_covariates",
                           tuple(c if isinstance(c, CovariateModel) else CovariateModel(**c)
                                 for c in self.facility_covariates))
        _as_range(self.n_facilities)
        _as_range(self.teams_per_facility)
        _as_range(self.patients_per_team)
        dx = len(self.patient_covariates)
        if any(p.index >= dx for p in spec.patient_predictors):
            raise InvalidTruth("spec references a patient covariate the truth does not generate")
        dz = len(self.team_covariates)
        if any(t.index >= dz for t in spec.team_predictors):
            raise InvalidTruth("spec references a team covariate the truth does not generate")
        dw = len(self.facility_covariates)
        if any(i >= dw for i in spec.facility_predictors):
            raise InvalidTruth("spec references a facility covariate the truth does not generate")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "gamma": self.gamma.tolist(),
            "sigma_patient": self.sigma_patient.tolist(),
            "sigma_team": self.sigma_team.tolist(),
            "sigma_facility": self.sigma_facility.tolist(),
            "n_facilities": list(self.n_facilities) if isinstance(self.n_facilities, tuple)
            else self.n_facilities,
            "teams_per_facility": list(self.teams_per_facility)
            if isinstance(self.teams_per_facility, tuple) else self.teams_per_facility,
            "patients_per_team": list(self.patients_per_team)
            if isinstance(self.patients_per_team, tuple) else self.patients_per_team,
            "patient_covariates": [c.to_dict() for c in self.patient_covariates],
            "team_covariates": [c.to_dict() for c in self.team_covariates],
            "facility_covariates": [c.to_dict() for c in self.facility_covariates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        d = dict(d)
        d["spec"] = ModelSpec.from_dict(d["spec"])
        for key in ("n_facilities", "teams_per_facility", "patients_per_team"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EffectsLedger:
    """Every sampled effect that went into a generated dataset."""

    gamma: np.ndarray
    facility_effects: dict
    team_effects: dict
    residuals: dict
    team_term_labels: tuple[str, ...]
    facility_term_labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "facility_effects": {k: v.tolist() for k, v in self.facility_effects.items()},
            "team_effects": {k: v.tolist() for k, v in self.team_effects.items()},
            "residuals": {k: v.tolist() for k, v in self.residuals.items()},
            "team_term_labels": list(self.team_term_labels),
            "facility_term_labels": list(self.facility_term_labels),
        }


def _chol_or_zero(mat: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(mat) if mat.shape[0] else mat


def generate(truth: GroundTruth, seed: int = 0) -> tuple[PanelDataset, EffectsLedger]:
    """Draw a complete panel from the generating model: facility and team
    effects from their level covariances, residuals from the patient
    covariance, responses assembled exactly per the model. Deterministic in
    the seed."""
    rng = np.random.default_rng(seed)
    spec = truth.spec
    P = spec.n_outcomes

    lo, hi = _as_range(truth.n_facilities)
    K = int(rng.integers(lo, hi + 1))
    tlo, thi = _as_range(truth.teams_per_facility)
    plo, phi = _as_range(truth.patients_per_team)

    fw = len(str(max(K, 1)))
    fac_ids = [f"F{k + 1:0{max(fw, 3)}d}" for k in range(K)]
    teams_per = [int(rng.integers(tlo, thi + 1)) for _ in range(K)]
    J = sum(teams_per)
    pats_per = [int(rng.integers(plo, phi + 1)) for _ in range(J)]
    N = sum(pats_per)

    dw = len(truth.facility_covariates)
    W = np.column_stack([c.draw(rng, K) for c in truth.facility_covariates]) \
        if dw else np.zeros((K, 0))
    dz = len(truth.team_covariates)
    Z = np.column_stack([c.draw(rng, J) for c in truth.team_covariates]) \
        if dz else np.zeros((J, 0))
    dx = len(truth.patient_covariates)
    X = np.column_stack([c.draw(rng, N) for c in truth.patient_covariates]) \
        if dx else np.zeros((N, 0))

    qf, qt = spec.q_facility, spec.q_team
    v = rng.standard_normal((K, qf)) @ _chol_or_zero(truth.sigma_facility).T
    u = rng.standard_normal((J, qt)) @ _chol_or_zero(truth.sigma_team).T
    e = rng.standard_normal((N, P)) @ np.linalg.cholesky(truth.sigma_patient).T

    facilities = [FacilityRecord(fac_ids[k], W[k]) for k in range(K)]
    teams, team_ids = [], []
    j = 0
    for k in range(K):
        tw = len(str(max(teams_per[k], 1)))
        for t in range(teams_per[k]):
            tid = f"{fac_ids[k]}.T{t + 1:0{max(tw, 2)}d}"
            teams.append(TeamRecord(tid, fac_ids[k], Z[j]))
            team_ids.append(tid)
            j += 1
    patients, patient_ids = [], []
    i = 0
    for j, tid in enumerate(team_ids):
        pw = len(str(max(pats_per[j], 1)))
        for t in range(pats_per[j]):
            pid = f"{tid}.P{t + 1:0{max(pw, 3)}d}"
            patients.append(PatientRecord(pid, tid, X[i], np.zeros(P)))
            patient_ids.append(pid)
            i += 1

    shell = PanelDataset.from_records(facilities, teams, patients)
    # tensors on the raw covariate scale; transform applies to responses only
    assembly_spec = replace(spec, response_transform="identity")
    design = build_design(shell, assembly_spec, standardize=False)

    u_map = {tid: u[j] for j, tid in enumerate(team_ids)}
    e_map = {pid: e[i] for i, pid in enumerate(patient_ids)}
    v_map = {fid: v[k] for k, fid in enumerate(fac_ids)}
    u_design = np.stack([u_map[tid] for tid in design.team_ids]) if qt else np.zeros((J, 0))
    v_design = np.stack([v_map[fid] for fid in design.facility_ids]) if qf else np.zeros((K, 0))
    e_design = np.stack([e_map[pid] for pid in design.patient_ids])

    Y = (np.einsum("npa,a->np", design.F, truth.gamma)
         + np.einsum("npa,na->np", design.T, u_design[design.patient_team_idx])
         + np.einsum("npa,na->np", design.G, v_design[design.patient_facility_idx])
         + e_design)
    if spec.response_transform == "log":
        Y = np.exp(Y)

    y_map = {pid: Y[i] for i, pid in enumerate(design.patient_ids)}
    final_patients = [PatientRecord(p.patient_id, p.team_id, p.covariates,
                                    y_map[p.patient_id]) for p in patients]
    dataset = PanelDataset.from_records(facilities, teams, final_patients)
    ledger = EffectsLedger(
        gamma=truth.gamma.copy(),
        facility_effects={fid: v[k].copy() for k, fid in enumerate(fac_ids)},
        team_effects={tid: u[j].copy() for j, tid in enumerate(team_ids)},
        residuals={pid: e[i].copy() for i, pid in enumerate(patient_ids)},
        team_term_labels=random_term_labels(spec, "team"),
        facility_term_labels=random_term_labels(spec, "facility"),
    )
    return dataset, ledger


@dataclass(frozen=True)
class RecoveryRow:
    name: str
    truth: float
    posterior_mean: float
    hpd_low: float
    hpd_high: float

    @property
    def covered(self) -> bool:
        return self.hpd_low <= self.truth <= self.hpd_high


@dataclass(frozen=True)
class RecoveryReport:
    rows: tuple[RecoveryRow, ...]

    def subset(self, prefix: str) -> tuple[RecoveryRow, ...]:
        return tuple(r for r in self.rows if r.name.startswith(prefix))

    def coverage_rate(self, prefix: str = "") -> float:
        rows = self.subset(prefix) if prefix else self.rows
        return float(np.mean([r.covered for r in rows])) if rows else float("nan")

    def to_dict(self) -> dict:
        return {"rows": [{"name": r.name, "truth": r.truth, "posterior_mean": r.posterior_mean,
                          "hpd_low": r.hpd_low, "hpd_high": r.hpd_high, "covered": r.covered}
                         for r in self.rows],
                "coverage_rate": self.coverage_rate()}


def recovery_report(truth: GroundTruth, fit: FitSummary) -> RecoveryReport:
    """Compare a fit's posterior summaries against the generating truth.

    The fit must come from a dataset generated by `truth` and fitted with the
    same spec and with standardization disabled (truth coefficients live on
    the raw covariate scale)."""
    _, merged, _ = fixed_effect_labels(truth.spec)
    rows: list[RecoveryRow] = []

    def look(name: str):
        if name not in fit.params:
            raise LayoutMismatch(f"fit summary lacks parameter {name!r}; "
                                 "was it produced with a different spec?")
        return fit.params[name]

    for i, label in enumerate(merged):
        s = look(f"gamma:{label}")
        rows.append(RecoveryRow(f"gamma:{label}", float(truth.gamma[i]),
                                s.mean, s.hpd_low, s.hpd_high))

    outcome_labels = tuple(f"y{p + 1}" for p in range(truth.spec.n_outcomes))
    for name, mat, labels in (
            ("sigma_patient", truth.sigma_patient, outcome_labels),
            ("sigma_team", truth.sigma_team, random_term_labels(truth.spec, "team")),
            ("sigma_facility", truth.sigma_facility, random_term_labels(truth.spec, "facility"))):
        for i in range(len(labels)):
            for j in range(i, len(labels)):
                pname = f"{name}[{labels[i]},{labels[j]}]"
                s = look(pname)
                rows.append(RecoveryRow(pname, float(mat[i, j]), s.mean, s.hpd_low, s.hpd_high))
    return RecoveryReport(rows=tuple(rows))
