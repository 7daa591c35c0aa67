"""Batch command-line entry point: simulate, fit, ladder, predict.

Every command is deterministic given its flags and seed, writes a manifest next
to its outputs, and maps module errors onto distinct exit codes with a JSON
error line on stderr. HBMV_THREADS caps chain parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from ._version import __version__
from .data import load_dataset, write_dataset
from .diagnostics import compare_models
from .errors import HbmvError, NonNestedLadderWarning, UnknownUnit, UsageError
from .fit import fit_model, load_fit, save_fit, write_manifest
from .modelspec import ModelSpec, PatientPredictor, TeamPredictor, UNSTRUCTURED
from .predict import PredictionRequest, posterior_predict
from .sampler import McmcConfig
from .synthetic import CovariateModel, GroundTruth, generate


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="patient CSV (patient_id, team_id, facility_id, y_*, x_*)")
    p.add_argument("--team-data", required=True, help="team CSV (team_id, facility_id, z_*)")
    p.add_argument("--facility-data", required=True, help="facility CSV (facility_id, w_*)")


def _add_mcmc_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int, default=50_000)
    p.add_argument("--burnin", type=int, default=10_000)
    p.add_argument("--thin", type=int, default=25)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transform", choices=["identity", "log"], default=None,
                   help="override the spec's response transform")
    p.add_argument("--no-standardize", action="store_true",
                   help="skip standardization of continuous covariates")


def _config(args) -> McmcConfig:
    return McmcConfig(n_iterations=args.iterations, n_burnin=args.burnin,
                      thin=args.thin, n_chains=args.chains, seed=args.seed)


def _load_spec(path: str | None, n_outcomes: int, transform: str | None) -> ModelSpec:
    if path is None:
        spec = ModelSpec(n_outcomes=n_outcomes)  # unconditional model
    else:
        spec = ModelSpec.from_dict(json.loads(Path(path).read_text()))
    if transform is not None and transform != spec.response_transform:
        spec = ModelSpec.from_dict({**spec.to_dict(), "response_transform": transform})
    return spec


def _count_outcomes(patients_csv: str) -> int:
    header = pd.read_csv(patients_csv, nrows=0)
    return sum(1 for c in header.columns if c.startswith("y_") and c[2:].isdigit())


def cmd_fit(args) -> int:
    dataset = load_dataset(args.data, args.team_data, args.facility_data)
    spec = _load_spec(args.spec, _count_outcomes(args.data), args.transform)
    result = fit_model(dataset, spec, config=_config(args),
                       standardize=not args.no_standardize)
    save_fit(result, args.out, command="fit")
    d = result.summary.dic
    print(f"wrote {args.out}: DIC={d.dic:.1f} (Dbar={d.dbar:.1f}, pD={d.p_d:.1f}), "
          f"{result.summary.n_draws} retained draws")
    return 0


def default_truth(n_facilities: int = 20, teams_per_facility: int = 5,
                  patients_per_team: int = 30) -> GroundTruth:
    """Built-in demo truth: two workload outcomes, one predictor per level,
    random intercepts and patient-slope effects at team and facility level."""
    spec = ModelSpec(
        n_outcomes=2,
        patient_predictors=(PatientPredictor(0, random_over_team=True,
                                             random_over_facility=True),),
        team_predictors=(TeamPredictor(0),),
        cov_patient=UNSTRUCTURED, cov_team=UNSTRUCTURED, cov_facility=UNSTRUCTURED,
    )
    sigma_team = np.diag([0.168, 0.08, 0.05, 0.04]).astype(float)
    sigma_team[0, 2] = sigma_team[2, 0] = 0.3 * np.sqrt(0.168 * 0.05)
    sigma_fac = np.diag([0.218, 0.06, 0.16, 0.05]).astype(float)
    sigma_fac[0, 2] = sigma_fac[2, 0] = 0.3 * np.sqrt(0.218 * 0.16)
    return GroundTruth(
        spec=spec,
        gamma=np.array([10.0, 1.0, 0.8, 6.0, 0.6, -0.5]),
        sigma_patient=np.array([[0.609, 0.35], [0.35, 0.79]]),
        sigma_team=sigma_team,
        sigma_facility=sigma_fac,
        n_facilities=n_facilities,
        teams_per_facility=teams_per_facility,
        patients_per_team=patients_per_team,
        patient_covariates=(CovariateModel("normal"),),
        team_covariates=(CovariateModel("normal"),),
        facility_covariates=(CovariateModel("normal"),),
    )


def cmd_simulate(args) -> int:
    if args.truth:
        truth = GroundTruth.from_dict(json.loads(Path(args.truth).read_text()))
    else:
        truth = default_truth()
    overrides = {}
    if args.facilities is not None:
        overrides["n_facilities"] = args.facilities
    if args.teams is not None:
        overrides["teams_per_facility"] = args.teams
    if args.patients is not None:
        overrides["patients_per_team"] = args.patients
    if overrides:
        truth = GroundTruth.from_dict({**truth.to_dict(), **overrides})

    dataset, ledger = generate(truth, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = write_dataset(dataset, out)
    (out / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "truth_ledger.json").write_text(
        json.dumps(ledger.to_dict(), indent=2, sort_keys=True) + "\n")
    write_manifest(out, "simulate", truth.spec, args.seed,
                   {"facilities": args.facilities, "teams": args.teams,
                    "patients": args.patients, "truth": args.truth},
                   [Path(f).name for f in files.values()]
                   + ["truth.json", "truth_ledger.json", "manifest.json"])
    print(f"wrote {out}: {len(dataset.patients)} patients, "
          f"{len(dataset.teams)} teams, {len(dataset.facilities)} facilities")
    return 0


def cmd_ladder(args) -> int:
    dataset = load_dataset(args.data, args.team_data, args.facility_data)
    doc = json.loads(Path(args.ladder).read_text())
    entries = doc["models"] if isinstance(doc, dict) else doc
    if len(entries) < 2:
        raise UsageError("ladder file must list at least two model specs")
    models = []
    for i, entry in enumerate(entries):
        if isinstance(entry, dict) and "spec" in entry:
            models.append((str(entry.get("id", f"model_{i + 1}")),
                           ModelSpec.from_dict(entry["spec"])))
        else:
            models.append((f"model_{i + 1}", ModelSpec.from_dict(entry)))

    _warn_if_not_nested(models)
    # duplicate-run methodology: exactly two chains per model
    config = McmcConfig(n_iterations=args.iterations, n_burnin=args.burnin,
                        thin=args.thin, n_chains=2, seed=args.seed)
    transform = args.transform
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for model_id, spec in models:
        if transform is not None and transform != spec.response_transform:
            spec = ModelSpec.from_dict({**spec.to_dict(), "response_transform": transform})
        result = fit_model(dataset, spec, config=config,
                           standardize=not args.no_standardize)
        save_fit(result, out / model_id, command="ladder")
        d1, d2 = (r.dic for r in result.summary.dic_per_chain[:2])
        rows.append((model_id, d1, d2, spec.n_free_parameters()))
        print(f"{model_id}: DIC runs ({d1:.1f}, {d2:.1f}), "
              f"{spec.n_free_parameters()} free parameters")

    report = compare_models(rows)
    (out / "comparison.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_manifest(out, "ladder", None, args.seed,
                   {"iterations": args.iterations, "burnin": args.burnin,
                    "thin": args.thin, "ladder": args.ladder},
                   ["comparison.json", "manifest.json"]
                   + [f"{mid}/" for mid, _ in models])
    print(f"selected: {report.selected}")
    return 0


def _warn_if_not_nested(models) -> None:
    """Nesting is verifiable when each model's term sets contain the previous
    model's; otherwise warn and proceed on DIC alone."""
    from .design import fixed_effect_labels, random_term_labels

    def term_sets(spec):
        _, merged, _ = fixed_effect_labels(spec)
        return (set(merged), set(random_term_labels(spec, "team")),
                set(random_term_labels(spec, "facility")))

    ordered = sorted(models, key=lambda m: m[1].n_free_parameters())
    prev = term_sets(ordered[0][1])
    for _, spec in ordered[1:]:
        cur = term_sets(spec)
        if not all(p <= c for p, c in zip(prev, cur)):
            warnings.warn(NonNestedLadderWarning(
                "ladder models are not verifiably nested; DIC comparison only"))
            return
        prev = cur


def cmd_predict(args) -> int:
    loaded = load_fit(args.fit_dir)
    ctx = loaded.context
    req_df = pd.read_csv(args.requests)
    x_cols = [c for c in req_df.columns if c.startswith("x_")]
    if len(x_cols) != ctx.patient_dim:
        raise UsageError(
            f"requests file has {len(x_cols)} x_* columns, model expects {ctx.patient_dim}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    P = ctx.n_outcomes
    cols = ["request", "team_id", "facility_id"]
    for p in range(P):
        cols += [f"y{p + 1}_mean", f"y{p + 1}_sd", f"y{p + 1}_lo", f"y{p + 1}_hi"]
    rows = []
    rng = np.random.default_rng(args.seed)
    for i, row in req_df.iterrows():
        team_id = _clean_id(row.get("team_id"))
        fac_id = _clean_id(row.get("facility_id"))
        if team_id is not None and team_id not in ctx.team_ids:
            if not args.new_unit:
                raise UnknownUnit(f"unknown team id {team_id!r} (use --new-unit for new teams)")
            team_id = None
        if fac_id is not None and fac_id not in ctx.facility_ids:
            if not args.new_unit:
                raise UnknownUnit(f"unknown facility id {fac_id!r} (use --new-unit for new facilities)")
            fac_id = None
        if (team_id is None or fac_id is None) and not args.new_unit:
            raise UsageError("request omits a unit id; pass --new-unit to predict for new units")
        request = PredictionRequest(
            patient_covariates=row[x_cols].to_numpy(dtype=float),
            team_id=team_id, facility_id=fac_id)
        summary = posterior_predict(loaded.chains, ctx, request, rng=rng,
                                    draws_per_state=args.draws_per_state, mass=args.mass)
        rec = [i, team_id or "new", fac_id or "new"]
        for p in range(P):
            rec += [summary.mean[p], summary.sd[p],
                    summary.interval_low[p], summary.interval_high[p]]
        rows.append(rec)
    pd.DataFrame(rows, columns=cols).to_csv(out / "predictions.csv", index=False)
    write_manifest(out, "predict", ctx.spec, args.seed,
                   {"fit_dir": str(args.fit_dir), "requests": str(args.requests),
                    "new_unit": bool(args.new_unit), "mass": args.mass,
                    "draws_per_state": args.draws_per_state},
                   ["predictions.csv", "manifest.json"])
    print(f"wrote {out / 'predictions.csv'} ({len(rows)} predictions)")
    return 0


def _clean_id(value) -> str | None:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return None
    s = str(value).strip()
    return s if s and s.lower() not in ("new", "nan") else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbmv",
        description="Three-level multivariate Bayesian workload model")
    parser.add_argument("--version", action="version", version=f"hbmv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model and dump chains + summary")
    _add_data_args(p_fit)
    p_fit.add_argument("--spec", default=None, help="model spec JSON (default: unconditional)")
    _add_mcmc_args(p_fit)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset from ground truth")
    p_sim.add_argument("--truth", default=None, help="ground-truth JSON (default: built-in demo)")
    p_sim.add_argument("--facilities", type=int, default=None)
    p_sim.add_argument("--teams", type=int, default=None, help="teams per facility")
    p_sim.add_argument("--patients", type=int, default=None, help="patients per team")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_lad = sub.add_parser("ladder", help="fit a nested model ladder twice each and compare DIC")
    _add_data_args(p_lad)
    p_lad.add_argument("--ladder", required=True, help="JSON list of model specs")
    _add_mcmc_args(p_lad)
    p_lad.add_argument("--out", required=True)
    p_lad.set_defaults(func=cmd_ladder)

    p_pred = sub.add_parser("predict", help="posterior-predictive portfolios for request profiles")
    p_pred.add_argument("--fit-dir", required=True)
    p_pred.add_argument("--requests", required=True, help="CSV with x_* (and team_id/facility_id)")
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--new-unit", action="store_true",
                        help="treat unknown/missing unit ids as new units")
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--draws-per-state", type=int, default=2)
    p_pred.add_argument("--mass", type=float, default=0.95)
    p_pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HbmvError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
