"""Stacked multivariate design: each patient contributes one pseudo-row per
outcome, with dummy indicators selecting which outcome's coefficients are
active. Builds the fixed-effect layout (with equality-constraint column
merging) and the team/facility random-effect layouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PanelDataset, validate_hierarchy
from .errors import BadPredictorIndex, InvalidConstraint, MissingRandomIntercept, UsageError
from .modelspec import _KIND_PREFIX, ModelSpec


def _term_label(outcome: int, kind: str, index: int | None) -> str:
    if kind == "intercept":
        return f"y{outcome + 1}:intercept"
    return f"y{outcome + 1}:{_KIND_PREFIX[kind]}{index}"


def fixed_effect_labels(spec: ModelSpec) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    """(raw labels, merged labels, raw-to-merged column map) for a spec.

    The raw layout is outcome-major: all of outcome 1's terms, then outcome 2's,
    and so on. Each equality constraint removes exactly one column; a merged
    column keeps the joined label of its members, ordered by raw position.
    """
    P = spec.n_outcomes
    terms = spec.fixed_terms()
    raw_labels = tuple(_term_label(p, kind, idx) for p in range(P) for kind, idx in terms)
    n_raw = len(raw_labels)

    parent = list(range(n_raw))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in spec.equality_constraints:
        ra, rb = find(spec.raw_position(a)), find(spec.raw_position(b))
        if ra == rb:
            raise InvalidConstraint("redundant constraint")  # unreachable after spec validation
        parent[max(ra, rb)] = min(ra, rb)

    roots = sorted({find(i) for i in range(n_raw)})
    root_to_col = {r: c for c, r in enumerate(roots)}
    raw_to_merged = np.array([root_to_col[find(i)] for i in range(n_raw)], dtype=np.intp)

    members: list[list[str]] = [[] for _ in roots]
    for i, lbl in enumerate(raw_labels):
        members[raw_to_merged[i]].append(lbl)
    merged_labels = tuple("=".join(m) for m in members)
    return raw_labels, merged_labels, raw_to_merged


def random_term_labels(spec: ModelSpec, level: str) -> tuple[str, ...]:
    """Outcome-major labels of a level's random-effect vector."""
    if level == "team":
        terms = spec.team_random_terms()
    elif level == "facility":
        terms = spec.facility_random_terms()
    else:
        raise UsageError(f"no random terms at level {level!r}")
    return tuple(_term_label(p, kind, idx)
                 for p in range(spec.n_outcomes) for kind, idx in terms)


@dataclass(frozen=True, eq=False)
class PredictionContext:
    """Everything posterior prediction needs: layouts, unit covariates on the
    design scale, and the standardization record for raw request covariates."""

    spec: ModelSpec
    transform: str
    fixed_labels: tuple[str, ...]
    raw_to_merged: np.ndarray
    n_fixed: int
    team_term_labels: tuple[str, ...]
    facility_term_labels: tuple[str, ...]
    team_ids: tuple[str, ...]
    facility_ids: tuple[str, ...]
    team_facility_idx: np.ndarray
    team_covariates: np.ndarray       # standardized (J, dz)
    facility_covariates: np.ndarray   # standardized (K, dw)
    standardization: dict
    patient_dim: int

    @property
    def n_outcomes(self) -> int:
        return self.spec.n_outcomes


@dataclass(eq=False)
class DesignStructure:
    """Numeric design tensors plus the deterministic parameter layout.

    Patients are ordered by (facility, team, patient id) so each unit's block
    is contiguous; `Y`, `F`, `T`, `G` all follow that order.
    """

    spec: ModelSpec
    transform: str
    # layouts
    fixed_raw_labels: tuple[str, ...]
    fixed_labels: tuple[str, ...]
    raw_to_merged: np.ndarray
    fixed_slots: dict
    team_term_labels: tuple[str, ...]
    facility_term_labels: tuple[str, ...]
    # units, design order
    facility_ids: tuple[str, ...]
    team_ids: tuple[str, ...]
    patient_ids: tuple[str, ...]
    team_facility_idx: np.ndarray
    patient_team_idx: np.ndarray
    patient_facility_idx: np.ndarray
    # data tensors
    Y: np.ndarray   # (N, P)
    F: np.ndarray   # (N, P, L)
    T: np.ndarray   # (N, P, q_team)
    G: np.ndarray   # (N, P, q_facility)
    team_covariates: np.ndarray
    facility_covariates: np.ndarray
    standardization: dict

    @property
    def n_outcomes(self) -> int:
        return self.Y.shape[1]

    @property
    def n_patients(self) -> int:
        return self.Y.shape[0]

    @property
    def n_teams(self) -> int:
        return len(self.team_ids)

    @property
    def n_facilities(self) -> int:
        return len(self.facility_ids)

    @property
    def n_fixed(self) -> int:
        return self.F.shape[2]

    @property
    def q_team(self) -> int:
        return self.T.shape[2]

    @property
    def q_facility(self) -> int:
        return self.G.shape[2]

    def intercept_slot(self, level: str, outcome: int) -> int:
        """Slot of an outcome's random intercept in a level's effect vector."""
        labels = self.team_term_labels if level == "team" else self.facility_term_labels
        want = f"y{outcome + 1}:intercept"
        if want not in labels:
            raise MissingRandomIntercept(
                f"model has no random intercept for outcome {outcome + 1} at {level} level")
        return labels.index(want)

    def prediction_context(self) -> PredictionContext:
        return PredictionContext(
            spec=self.spec,
            transform=self.transform,
            fixed_labels=self.fixed_labels,
            raw_to_merged=self.raw_to_merged,
            n_fixed=self.n_fixed,
            team_term_labels=self.team_term_labels,
            facility_term_labels=self.facility_term_labels,
            team_ids=self.team_ids,
            facility_ids=self.facility_ids,
            team_facility_idx=self.team_facility_idx,
            team_covariates=self.team_covariates,
            facility_covariates=self.facility_covariates,
            standardization=self.standardization,
            patient_dim=int(self.standardization.get("patient_dim", 0)),
        )


def _standardize(mat: np.ndarray, enabled: bool) -> tuple[np.ndarray, dict[int, tuple[float, float]]]:
    """Center/scale columns with more than two distinct values; binary and
    constant columns pass through unchanged."""
    out = np.array(mat, dtype=float, copy=True)
    record: dict[int, tuple[float, float]] = {}
    if not enabled:
        return out, record
    for c in range(out.shape[1]):
        col = out[:, c]
        if np.unique(col).size <= 2:
            continue
        mu = float(col.mean())
        sd = float(col.std())
        if sd <= 0:
            continue
        out[:, c] = (col - mu) / sd
        record[c] = (mu, sd)
    return out, record


def build_design(dataset: PanelDataset, spec: ModelSpec,
                 standardize: bool = True) -> DesignStructure:
    """Build the stacked design for a validated dataset.

    Deterministic: identical inputs give identical layouts and tensors.
    """
    idx = validate_hierarchy(dataset)
    if dataset.response_transform != spec.response_transform:
        raise UsageError(
            f"dataset responses carry transform {dataset.response_transform!r} but the spec "
            f"wants {spec.response_transform!r}; run apply_transform first")

    P = spec.n_outcomes
    if idx.n_outcomes != P:
        raise UsageError(f"spec expects {P} outcomes, dataset has {idx.n_outcomes}")
    for p in spec.patient_predictors:
        if p.index >= idx.patient_dim:
            raise BadPredictorIndex(
                f"patient predictor index {p.index} out of range for covariate dimension {idx.patient_dim}")
    for t in spec.team_predictors:
        if t.index >= idx.team_dim:
            raise BadPredictorIndex(
                f"team predictor index {t.index} out of range for covariate dimension {idx.team_dim}")
    for w in spec.facility_predictors:
        if w >= idx.facility_dim:
            raise BadPredictorIndex(
                f"facility predictor index {w} out of range for covariate dimension {idx.facility_dim}")

    # unit ordering: facilities by id; teams by (facility, id); patients by
    # (facility, team, id) so unit blocks are contiguous
    fac_ids = idx.facility_ids
    team_order = sorted(range(len(idx.team_ids)),
                        key=lambda j: (int(idx.team_facility[j]), idx.team_ids[j]))
    team_ids = tuple(idx.team_ids[j] for j in team_order)
    team_newpos = {old: new for new, old in enumerate(team_order)}
    team_facility_idx = np.array([idx.team_facility[j] for j in team_order], dtype=np.intp)

    pat_order = sorted(range(len(idx.patient_ids)),
                       key=lambda i: (int(idx.team_facility[idx.patient_team[i]]),
                                      team_newpos[int(idx.patient_team[i])],
                                      idx.patient_ids[i]))
    patient_ids = tuple(idx.patient_ids[i] for i in pat_order)
    patient_team_idx = np.array([team_newpos[int(idx.patient_team[i])] for i in pat_order],
                                dtype=np.intp)
    patient_facility_idx = team_facility_idx[patient_team_idx]

    N = len(pat_order)
    X = np.stack([np.atleast_1d(np.asarray(dataset.patients[i].covariates, dtype=float))
                  for i in pat_order]) if idx.patient_dim else np.zeros((N, 0))
    Y = np.stack([np.atleast_1d(np.asarray(dataset.patients[i].responses, dtype=float))
                  for i in pat_order])
    Z = np.stack([np.atleast_1d(np.asarray(dataset.teams[j].covariates, dtype=float))
                  for j in team_order]) if idx.team_dim else np.zeros((len(team_order), 0))
    W = np.stack([np.atleast_1d(np.asarray(f.covariates, dtype=float))
                  for f in dataset.facilities]) if idx.facility_dim else np.zeros((len(fac_ids), 0))

    X, x_std = _standardize(X, standardize)
    Z, z_std = _standardize(Z, standardize)
    W, w_std = _standardize(W, standardize)
    standardization = {"patient": x_std, "team": z_std, "facility": w_std,
                       "patient_dim": idx.patient_dim}

    def term_values(kind: str, index: int | None) -> np.ndarray:
        if kind == "intercept":
            return np.ones(N)
        if kind == "patient":
            return X[:, index]
        if kind == "team":
            return Z[patient_team_idx, index]
        return W[patient_facility_idx, index]

    raw_labels, merged_labels, raw_to_merged = fixed_effect_labels(spec)
    terms = spec.fixed_terms()
    L = len(merged_labels)
    F = np.zeros((N, P, L))
    fixed_slots: dict = {}
    for p in range(P):
        for t_i, (kind, index) in enumerate(terms):
            raw = p * len(terms) + t_i
            col = int(raw_to_merged[raw])
            F[:, p, col] += term_values(kind, index)
            fixed_slots[(p, kind, index)] = col

    team_terms = spec.team_random_terms()
    q_t = P * len(team_terms)
    T = np.zeros((N, P, q_t))
    for p in range(P):
        for t_i, (kind, index) in enumerate(team_terms):
            T[:, p, p * len(team_terms) + t_i] = term_values(kind, index)

    fac_terms = spec.facility_random_terms()
    q_f = P * len(fac_terms)
    G = np.zeros((N, P, q_f))
    for p in range(P):
        for t_i, (kind, index) in enumerate(fac_terms):
            G[:, p, p * len(fac_terms) + t_i] = term_values(kind, index)

    return DesignStructure(
        spec=spec,
        transform=dataset.response_transform,
        fixed_raw_labels=raw_labels,
        fixed_labels=merged_labels,
        raw_to_merged=raw_to_merged,
        fixed_slots=fixed_slots,
        team_term_labels=random_term_labels(spec, "team"),
        facility_term_labels=random_term_labels(spec, "facility"),
        facility_ids=fac_ids,
        team_ids=team_ids,
        patient_ids=patient_ids,
        team_facility_idx=team_facility_idx,
        patient_team_idx=patient_team_idx,
        patient_facility_idx=patient_facility_idx,
        Y=Y,
        F=F,
        T=T,
        G=G,
        team_covariates=Z,
        facility_covariates=W,
        standardization=standardization,
    )
