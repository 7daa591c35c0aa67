"""Model specification: predictors per level, random terms, equality constraints,
covariance structures, and the standard six-model ladder."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadPredictorIndex, InvalidConstraint, UsageError

UNSTRUCTURED = "unstructured"
POOLED_DIAGONAL = "pooled_diagonal"
COV_STRUCTURES = (UNSTRUCTURED, POOLED_DIAGONAL)
TRANSFORMS = ("identity", "log")
LEVELS = ("patient", "team", "facility")

# term kinds as they appear in coefficient references and design labels
_TERM_KINDS = ("intercept", "patient", "team", "facility")
_KIND_PREFIX = {"patient": "x", "team": "z", "facility": "w"}


@dataclass(frozen=True)
class PatientPredictor:
    """One patient-level covariate column, optionally with random slopes."""

    index: int
    random_over_team: bool = False
    random_over_facility: bool = False


@dataclass(frozen=True)
class TeamPredictor:
    """One team-level covariate column, optionally with a facility random slope."""

    index: int
    random_over_facility: bool = False


@dataclass(frozen=True)
class CoefRef:
    """Reference to one fixed-effect coefficient: (outcome, term kind, covariate index)."""

    outcome: int
    term: str
    index: int | None = None

    def __post_init__(self):
        if self.term not in _TERM_KINDS:
            raise InvalidConstraint(f"unknown term kind {self.term!r}")
        if self.term == "intercept" and self.index is not None:
            raise InvalidConstraint("intercept reference must not carry an index")
        if self.term != "intercept" and self.index is None:
            raise InvalidConstraint(f"{self.term} reference requires a covariate index")

    def label(self) -> str:
        if self.term == "intercept":
            return f"y{self.outcome + 1}:intercept"
        return f"y{self.outcome + 1}:{_KIND_PREFIX[self.term]}{self.index}"


def _as_tuple(items, ctor):
    out = []
    for it in items:
        if isinstance(it, ctor):
            out.append(it)
        elif isinstance(it, dict):
            out.append(ctor(**it))
        else:
            out.append(ctor(*it) if isinstance(it, (list, tuple)) else ctor(it))
    return tuple(out)


@dataclass(frozen=True)
class ModelSpec:
    """Which covariates enter at each level, which effects are random, and how
    each level's covariance is structured.

    Every outcome always gets its own intercept; a predictor flagged random at a
    level is by construction also a fixed (mean) effect, since the random flags
    live on the included predictor entries.
    """

    n_outcomes: int = 2
    patient_predictors: tuple[PatientPredictor, ...] = ()
    team_predictors: tuple[TeamPredictor, ...] = ()
    facility_predictors: tuple[int, ...] = ()
    random_intercept_team: bool = True
    random_intercept_facility: bool = True
    equality_constraints: tuple[tuple[CoefRef, CoefRef], ...] = ()
    cov_patient: str = UNSTRUCTURED
    cov_team: str = UNSTRUCTURED
    cov_facility: str = UNSTRUCTURED
    response_transform: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "patient_predictors",
                           _as_tuple(self.patient_predictors, PatientPredictor))
        object.__setattr__(self, "team_predictors",
                           _as_tuple(self.team_predictors, TeamPredictor))
        object.__setattr__(self, "facility_predictors",
                           tuple(int(i) for i in self.facility_predictors))
        cons = []
        for pair in self.equality_constraints:
            a, b = pair
            if isinstance(a, dict):
                a = CoefRef(**a)
            if isinstance(b, dict):
                b = CoefRef(**b)
            cons.append((a, b))
        object.__setattr__(self, "equality_constraints", tuple(cons))

        if self.n_outcomes < 1:
            raise UsageError("n_outcomes must be >= 1")
        for name, val in (("cov_patient", self.cov_patient),
                          ("cov_team", self.cov_team),
                          ("cov_facility", self.cov_facility)):
            if val not in COV_STRUCTURES:
                raise UsageError(f"{name} must be one of {COV_STRUCTURES}, got {val!r}")
        if self.response_transform not in TRANSFORMS:
            raise UsageError(f"response_transform must be one of {TRANSFORMS}")
        for coll, label in ((self.patient_predictors, "patient"),
                            (self.team_predictors, "team")):
            idxs = [p.index for p in coll]
            if any(i < 0 for i in idxs):
                raise BadPredictorIndex(f"negative {label} predictor index")
            if len(set(idxs)) != len(idxs):
                raise BadPredictorIndex(f"{label} predictor listed twice")
        if any(i < 0 for i in self.facility_predictors):
            raise BadPredictorIndex("negative facility predictor index")
        if len(set(self.facility_predictors)) != len(self.facility_predictors):
            raise BadPredictorIndex("facility predictor listed twice")
        self._validate_constraints()

    # fixed-effect term template, identical for every outcome
    def fixed_terms(self) -> tuple[tuple[str, int | None], ...]:
        terms: list[tuple[str, int | None]] = [("intercept", None)]
        terms += [("patient", p.index) for p in self.patient_predictors]
        terms += [("team", t.index) for t in self.team_predictors]
        terms += [("facility", i) for i in self.facility_predictors]
        return tuple(terms)

    def team_random_terms(self) -> tuple[tuple[str, int | None], ...]:
        terms: list[tuple[str, int | None]] = []
        if self.random_intercept_team:
            terms.append(("intercept", None))
        terms += [("patient", p.index) for p in self.patient_predictors if p.random_over_team]
        return tuple(terms)

    def facility_random_terms(self) -> tuple[tuple[str, int | None], ...]:
        terms: list[tuple[str, int | None]] = []
        if self.random_intercept_facility:
            terms.append(("intercept", None))
        terms += [("patient", p.index) for p in self.patient_predictors if p.random_over_facility]
        terms += [("team", t.index) for t in self.team_predictors if t.random_over_facility]
        return tuple(terms)

    @property
    def q_team(self) -> int:
        return self.n_outcomes * len(self.team_random_terms())

    @property
    def q_facility(self) -> int:
        return self.n_outcomes * len(self.facility_random_terms())

    @property
    def n_fixed_unconstrained(self) -> int:
        return self.n_outcomes * len(self.fixed_terms())

    @property
    def n_fixed(self) -> int:
        return self.n_fixed_unconstrained - len(self.equality_constraints)

    def raw_position(self, ref: CoefRef) -> int:
        """Position of a coefficient in the unconstrained (raw) layout."""
        terms = self.fixed_terms()
        if not 0 <= ref.outcome < self.n_outcomes:
            raise InvalidConstraint(f"outcome {ref.outcome} out of range")
        key = (ref.term, ref.index)
        try:
            pos = terms.index(key)
        except ValueError:
            raise InvalidConstraint(f"coefficient {ref.label()} is not in the model") from None
        return ref.outcome * len(terms) + pos

    def _validate_constraints(self) -> None:
        # union-find; every constraint must merge two previously separate groups
        parent = list(range(self.n_fixed_unconstrained))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.equality_constraints:
            ia, ib = self.raw_position(a), self.raw_position(b)
            if ia == ib:
                raise InvalidConstraint(f"constraint references the same coefficient twice: {a.label()}")
            ra, rb = find(ia), find(ib)
            if ra == rb:
                raise InvalidConstraint(
                    f"redundant constraint {a.label()}={b.label()}: already forced equal")
            parent[max(ra, rb)] = min(ra, rb)

    def n_free_parameters(self) -> int:
        """Fixed effects plus covariance parameters (unit effects excluded)."""

        def cov_params(dim, structure):
            if dim == 0:
                return 0
            return 1 if structure == POOLED_DIAGONAL else dim * (dim + 1) // 2

        return (self.n_fixed
                + cov_params(self.n_outcomes, self.cov_patient)
                + cov_params(self.q_team, self.cov_team)
                + cov_params(self.q_facility, self.cov_facility))

    def to_dict(self) -> dict:
        return {
            "n_outcomes": self.n_outcomes,
            "patient_predictors": [
                {"index": p.index, "random_over_team": p.random_over_team,
                 "random_over_facility": p.random_over_facility}
                for p in self.patient_predictors
            ],
            "team_predictors": [
                {"index": t.index, "random_over_facility": t.random_over_facility}
                for t in self.team_predictors
            ],
            "facility_predictors": list(self.facility_predictors),
            "random_intercept_team": self.random_intercept_team,
            "random_intercept_facility": self.random_intercept_facility,
            "equality_constraints": [
                [{"outcome": r.outcome, "term": r.term, "index": r.index} for r in pair]
                for pair in self.equality_constraints
            ],
            "cov_patient": self.cov_patient,
            "cov_team": self.cov_team,
            "cov_facility": self.cov_facility,
            "response_transform": self.response_transform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["equality_constraints"] = [tuple(pair) for pair in d.get("equality_constraints", [])]
        return cls(**d)


def default_ladder(n_patient_predictors: int, n_team_predictors: int,
                   n_facility_predictors: int, n_outcomes: int = 2,
                   cov: str = UNSTRUCTURED,
                   response_transform: str = "identity") -> tuple[ModelSpec, ...]:
    """Six nested models, from the unconditional random-intercept model up to
    the full specification with predictors and random slopes at every level."""
    if min(n_patient_predictors, n_team_predictors, n_facility_predictors) < 1:
        raise UsageError("default ladder needs at least one predictor per level")
    common = dict(n_outcomes=n_outcomes, cov_patient=cov, cov_team=cov,
                  cov_facility=cov, response_transform=response_transform)
    pp = lambda **kw: tuple(PatientPredictor(i, **kw) for i in range(n_patient_predictors))
    tp = lambda **kw: tuple(TeamPredictor(i, **kw) for i in range(n_team_predictors))
    fp = tuple(range(n_facility_predictors))
    return (
        ModelSpec(**common),
        ModelSpec(patient_predictors=pp(), **common),
        ModelSpec(patient_predictors=pp(random_over_team=True, random_over_facility=True),
                  **common),
        ModelSpec(patient_predictors=pp(random_over_team=True, random_over_facility=True),
                  team_predictors=tp(), **common),
        ModelSpec(patient_predictors=pp(random_over_team=True, random_over_facility=True),
                  team_predictors=tp(random_over_facility=True), **common),
        ModelSpec(patient_predictors=pp(random_over_team=True, random_over_facility=True),
                  team_predictors=tp(random_over_facility=True),
                  facility_predictors=fp, **common),
    )
