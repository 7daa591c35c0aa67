"""Nested facility/team/patient panel data, CSV ingestion, hierarchy validation,
and response transforms."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    CrossNesting,
    DimensionMismatch,
    DuplicateUnit,
    EmptyDataset,
    MissingValues,
    NonPositiveResponse,
    OrphanPatient,
    OrphanTeam,
    UsageError,
)
from .modelspec import ModelSpec


@dataclass(frozen=True, eq=False)
class FacilityRecord:
    facility_id: str
    covariates: np.ndarray  # w


@dataclass(frozen=True, eq=False)
class TeamRecord:
    team_id: str
    facility_id: str
    covariates: np.ndarray  # z


@dataclass(frozen=True, eq=False)
class PatientRecord:
    patient_id: str
    team_id: str
    covariates: np.ndarray  # x
    responses: np.ndarray   # length-P workload vector


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable three-level panel. `response_transform` records the transform
    already applied to the stored responses."""

    facilities: tuple[FacilityRecord, ...]
    teams: tuple[TeamRecord, ...]
    patients: tuple[PatientRecord, ...]
    response_transform: str = "identity"

    @classmethod
    def from_records(cls, facilities, teams, patients,
                     response_transform: str = "identity") -> "PanelDataset":
        """Build a dataset with units sorted by id (deterministic ordering)."""
        return cls(
            facilities=tuple(sorted(facilities, key=lambda r: r.facility_id)),
            teams=tuple(sorted(teams, key=lambda r: r.team_id)),
            patients=tuple(sorted(patients, key=lambda r: r.patient_id)),
            response_transform=response_transform,
        )

    @property
    def n_outcomes(self) -> int:
        return len(self.patients[0].responses) if self.patients else 0


@dataclass(frozen=True, eq=False)
class HierarchyIndex:
    """Fast patient -> team -> facility lookups plus per-unit children lists."""

    facility_ids: tuple[str, ...]
    team_ids: tuple[str, ...]
    patient_ids: tuple[str, ...]
    team_facility: np.ndarray   # (J,) facility position per team
    patient_team: np.ndarray    # (N,) team position per patient
    facility_teams: tuple[tuple[int, ...], ...]
    team_patients: tuple[tuple[int, ...], ...]
    n_outcomes: int
    patient_dim: int
    team_dim: int
    facility_dim: int

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.facility_ids), len(self.team_ids), len(self.patient_ids))

    def facility_of_patient(self, patient_pos: int) -> int:
        return int(self.team_facility[self.patient_team[patient_pos]])


def _check_finite(arr: np.ndarray, what: str) -> None:
    if arr.size and not np.all(np.isfinite(arr)):
        raise MissingValues(f"missing or non-finite value in {what}")


def validate_hierarchy(dataset: PanelDataset) -> HierarchyIndex:
    """Verify strict nesting and dimension consistency; return the lookup index."""
    if not dataset.facilities or not dataset.teams or not dataset.patients:
        raise EmptyDataset("dataset needs at least one facility, team, and patient")

    fac_ids = [f.facility_id for f in dataset.facilities]
    if len(set(fac_ids)) != len(fac_ids):
        raise DuplicateUnit("duplicate facility id")
    fac_pos = {fid: i for i, fid in enumerate(fac_ids)}

    team_pos: dict[str, int] = {}
    team_fac = np.empty(len(dataset.teams), dtype=np.intp)
    for j, t in enumerate(dataset.teams):
        if t.facility_id not in fac_pos:
            raise OrphanTeam(f"team {t.team_id!r} references unknown facility {t.facility_id!r}")
        if t.team_id in team_pos:
            other = dataset.teams[team_pos[t.team_id]]
            if other.facility_id != t.facility_id:
                raise CrossNesting(
                    f"team {t.team_id!r} listed under facilities "
                    f"{other.facility_id!r} and {t.facility_id!r}")
            raise DuplicateUnit(f"duplicate team id {t.team_id!r}")
        team_pos[t.team_id] = j
        team_fac[j] = fac_pos[t.facility_id]

    pat_pos: dict[str, int] = {}
    pat_team = np.empty(len(dataset.patients), dtype=np.intp)
    for i, p in enumerate(dataset.patients):
        if p.team_id not in team_pos:
            raise OrphanPatient(f"patient {p.patient_id!r} references unknown team {p.team_id!r}")
        if p.patient_id in pat_pos:
            raise DuplicateUnit(f"duplicate patient id {p.patient_id!r}")
        pat_pos[p.patient_id] = i
        pat_team[i] = team_pos[p.team_id]

    p0 = dataset.patients[0]
    n_out = len(np.atleast_1d(p0.responses))
    if n_out < 1:
        raise DimensionMismatch("patients must carry at least one response")
    x_dim = len(np.atleast_1d(p0.covariates))
    for p in dataset.patients:
        if len(np.atleast_1d(p.responses)) != n_out:
            raise DimensionMismatch(f"patient {p.patient_id!r} has a different response dimension")
        if len(np.atleast_1d(p.covariates)) != x_dim:
            raise DimensionMismatch(f"patient {p.patient_id!r} has a different covariate dimension")
        _check_finite(np.atleast_1d(p.responses), f"responses of patient {p.patient_id!r}")
        _check_finite(np.atleast_1d(p.covariates), f"covariates of patient {p.patient_id!r}")
    z_dim = len(np.atleast_1d(dataset.teams[0].covariates))
    for t in dataset.teams:
        if len(np.atleast_1d(t.covariates)) != z_dim:
            raise DimensionMismatch(f"team {t.team_id!r} has a different covariate dimension")
        _check_finite(np.atleast_1d(t.covariates), f"covariates of team {t.team_id!r}")
    w_dim = len(np.atleast_1d(dataset.facilities[0].covariates))
    for f in dataset.facilities:
        if len(np.atleast_1d(f.covariates)) != w_dim:
            raise DimensionMismatch(f"facility {f.facility_id!r} has a different covariate dimension")
        _check_finite(np.atleast_1d(f.covariates), f"covariates of facility {f.facility_id!r}")

    fac_teams: list[list[int]] = [[] for _ in fac_ids]
    for j, k in enumerate(team_fac):
        fac_teams[k].append(j)
    team_pats: list[list[int]] = [[] for _ in dataset.teams]
    for i, j in enumerate(pat_team):
        team_pats[j].append(i)

    return HierarchyIndex(
        facility_ids=tuple(fac_ids),
        team_ids=tuple(t.team_id for t in dataset.teams),
        patient_ids=tuple(p.patient_id for p in dataset.patients),
        team_facility=team_fac,
        patient_team=pat_team,
        facility_teams=tuple(tuple(v) for v in fac_teams),
        team_patients=tuple(tuple(v) for v in team_pats),
        n_outcomes=n_out,
        patient_dim=x_dim,
        team_dim=z_dim,
        facility_dim=w_dim,
    )


def apply_transform(dataset: PanelDataset, spec: ModelSpec) -> PanelDataset:
    """Return the dataset with responses on the model scale.

    Identity is a no-op. The log transform requires strictly positive responses
    and is recorded on the dataset so predictions can be back-converted.
    """
    target = spec.response_transform
    if target == dataset.response_transform:
        return dataset
    if dataset.response_transform != "identity":
        raise UsageError(
            f"dataset already carries transform {dataset.response_transform!r}")
    if target != "log":
        raise UsageError(f"unknown response transform {target!r}")
    patients = []
    for p in dataset.patients:
        y = np.atleast_1d(np.asarray(p.responses, dtype=float))
        if np.any(y <= 0):
            raise NonPositiveResponse(
                f"patient {p.patient_id!r} has a non-positive response; log transform undefined")
        patients.append(PatientRecord(p.patient_id, p.team_id, p.covariates, np.log(y)))
    return PanelDataset(dataset.facilities, dataset.teams, tuple(patients),
                        response_transform="log")


# ---------------------------------------------------------------------------
# CSV ingestion: one row per patient / team / facility, header row required.

def _numeric(df: pd.DataFrame, cols: list[str], what: str) -> np.ndarray:
    try:
        arr = df[cols].to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise MissingValues(f"non-numeric value in {what} columns: {exc}") from None
    if arr.size and not np.all(np.isfinite(arr)):
        raise MissingValues(f"missing value in {what} columns")
    return arr


def _prefixed(df: pd.DataFrame, prefix: str) -> list[str]:
    # covariate index = order of appearance in the file
    return [c for c in df.columns if c.startswith(prefix)]


def _response_columns(df: pd.DataFrame) -> list[str]:
    ys = []
    for c in df.columns:
        if c.startswith("y_"):
            try:
                ys.append((int(c[2:]), c))
            except ValueError:
                continue
    ys.sort()
    return [c for _, c in ys]


def _require(df: pd.DataFrame, cols: list[str], path) -> None:
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise DimensionMismatch(f"{path}: missing required column(s) {missing}")


def load_dataset(patients_csv, teams_csv, facilities_csv) -> PanelDataset:
    """Read the CSV triplet (patients, teams, facilities) into a PanelDataset."""
    pats = pd.read_csv(patients_csv, dtype={"patient_id": str, "team_id": str,
                                            "facility_id": str})
    teams = pd.read_csv(teams_csv, dtype={"team_id": str, "facility_id": str})
    facs = pd.read_csv(facilities_csv, dtype={"facility_id": str})
    _require(pats, ["patient_id", "team_id", "facility_id"], patients_csv)
    _require(teams, ["team_id", "facility_id"], teams_csv)
    _require(facs, ["facility_id"], facilities_csv)

    y_cols = _response_columns(pats)
    if not y_cols:
        raise DimensionMismatch(f"{patients_csv}: no response columns (expected y_1..y_P)")
    x_cols = _prefixed(pats, "x_")
    z_cols = _prefixed(teams, "z_")
    w_cols = _prefixed(facs, "w_")

    for df, ids, path in ((pats, ["patient_id", "team_id", "facility_id"], patients_csv),
                          (teams, ["team_id", "facility_id"], teams_csv),
                          (facs, ["facility_id"], facilities_csv)):
        if df[ids].isna().any().any():
            raise MissingValues(f"{path}: missing id value")

    Y = _numeric(pats, y_cols, "response")
    X = _numeric(pats, x_cols, "patient covariate") if x_cols else np.zeros((len(pats), 0))
    Z = _numeric(teams, z_cols, "team covariate") if z_cols else np.zeros((len(teams), 0))
    W = _numeric(facs, w_cols, "facility covariate") if w_cols else np.zeros((len(facs), 0))

    team_owner = {str(t.team_id): str(t.facility_id) for t in teams.itertuples()}
    patient_records = []
    for i, row in enumerate(pats.itertuples()):
        owner = team_owner.get(str(row.team_id))
        if owner is not None and owner != str(row.facility_id):
            raise CrossNesting(
                f"patient {row.patient_id!r} lists facility {row.facility_id!r} "
                f"but team {row.team_id!r} belongs to {owner!r}")
        patient_records.append(PatientRecord(str(row.patient_id), str(row.team_id),
                                             X[i], Y[i]))
    team_records = [TeamRecord(str(r.team_id), str(r.facility_id), Z[i])
                    for i, r in enumerate(teams.itertuples())]
    facility_records = [FacilityRecord(str(r.facility_id), W[i])
                        for i, r in enumerate(facs.itertuples())]
    return PanelDataset.from_records(facility_records, team_records, patient_records)


def write_dataset(dataset: PanelDataset, out_dir) -> dict[str, str]:
    """Write the CSV triplet this package ingests; returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    idx = validate_hierarchy(dataset)

    p0 = dataset.patients[0]
    P = len(np.atleast_1d(p0.responses))
    dx = len(np.atleast_1d(p0.covariates))
    rows = {
        "patient_id": [p.patient_id for p in dataset.patients],
        "team_id": [p.team_id for p in dataset.patients],
        "facility_id": [idx.facility_ids[idx.facility_of_patient(i)]
                        for i in range(len(dataset.patients))],
    }
    for h in range(P):
        rows[f"y_{h + 1}"] = [float(np.atleast_1d(p.responses)[h]) for p in dataset.patients]
    for m in range(dx):
        rows[f"x_{m}"] = [float(np.atleast_1d(p.covariates)[m]) for p in dataset.patients]
    pd.DataFrame(rows).to_csv(out / "patients.csv", index=False)

    dz = idx.team_dim
    trows = {"team_id": [t.team_id for t in dataset.teams],
             "facility_id": [t.facility_id for t in dataset.teams]}
    for m in range(dz):
        trows[f"z_{m}"] = [float(np.atleast_1d(t.covariates)[m]) for t in dataset.teams]
    pd.DataFrame(trows).to_csv(out / "teams.csv", index=False)

    dw = idx.facility_dim
    frows = {"facility_id": [f.facility_id for f in dataset.facilities]}
    for m in range(dw):
        frows[f"w_{m}"] = [float(np.atleast_1d(f.covariates)[m]) for f in dataset.facilities]
    pd.DataFrame(frows).to_csv(out / "facilities.csv", index=False)

    return {"patients": str(out / "patients.csv"),
            "teams": str(out / "teams.csv"),
            "facilities": str(out / "facilities.csv")}
