"""Fit orchestration and on-disk artifacts.

A fit directory holds one CSV per chain (one row per retained draw, flattened
parameter layout plus deviance), a structured JSON layout sidecar, a prediction
context, the fit summary (JSON plus ICC and level-table CSVs), and a manifest
recording spec hash, seed, and config. Outputs contain no timestamps, so
re-running with identical inputs reproduces every file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ._version import __version__
from .data import PanelDataset, apply_transform, validate_hierarchy
from .design import DesignStructure, PredictionContext, build_design
from .diagnostics import FitSummary, summarize
from .errors import DimensionMismatch, MissingRandomIntercept, UsageError
from .modelspec import ModelSpec
from .sampler import ChainSamples, McmcConfig, Priors, run_chains


@dataclass(eq=False)
class FitResult:
    design: DesignStructure
    chains: list[ChainSamples]
    summary: FitSummary
    config: McmcConfig
    priors: Priors
    standardize: bool


def spec_hash(spec: ModelSpec) -> str:
    blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def fit_model(dataset: PanelDataset, spec: ModelSpec, config: McmcConfig | None = None,
              priors: Priors | None = None, standardize: bool = True,
              mass: float = 0.95) -> FitResult:
    """Validate, transform, build the design, run all chains, summarize."""
    config = config or McmcConfig()
    priors = priors or Priors()
    validate_hierarchy(dataset)
    dataset = apply_transform(dataset, spec)
    design = build_design(dataset, spec, standardize=standardize)
    chains = run_chains(design, dataset, priors, config)
    summary = summarize(chains, design, mass=mass)
    return FitResult(design=design, chains=chains, summary=summary,
                     config=config, priors=priors, standardize=standardize)


# ---------------------------------------------------------------------------
# chain dump layout

def _sigma_entries(dim: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def chain_layout(design: DesignStructure) -> dict:
    """Column layout of a chain CSV; serialized as the JSON sidecar."""
    cols: list[str] = [f"gamma:{lbl}" for lbl in design.fixed_labels]
    cols += [f"team[{tid}]:{term}" for tid in design.team_ids
             for term in design.team_term_labels]
    cols += [f"facility[{fid}]:{term}" for fid in design.facility_ids
             for term in design.facility_term_labels]
    out_labels = [f"y{p + 1}" for p in range(design.n_outcomes)]
    sigma_cols = {}
    for name, labels in (("sigma_patient", out_labels),
                         ("sigma_team", list(design.team_term_labels)),
                         ("sigma_facility", list(design.facility_term_labels))):
        entries = _sigma_entries(len(labels))
        sigma_cols[name] = entries
        cols += [f"{name}[{labels[i]},{labels[j]}]" for i, j in entries]
    cols.append("deviance")
    return {
        "columns": cols,
        "n_outcomes": design.n_outcomes,
        "fixed_labels": list(design.fixed_labels),
        "team_ids": list(design.team_ids),
        "team_term_labels": list(design.team_term_labels),
        "facility_ids": list(design.facility_ids),
        "facility_term_labels": list(design.facility_term_labels),
        "sigma_entries": {k: [list(e) for e in v] for k, v in sigma_cols.items()},
    }


def _chain_frame(chain: ChainSamples, design: DesignStructure) -> pd.DataFrame:
    n = len(chain)
    blocks = [chain.gamma]
    if design.q_team:
        blocks.append(chain.team_effects.reshape(n, -1))
    if design.q_facility:
        blocks.append(chain.facility_effects.reshape(n, -1))
    for draws, dim in ((chain.sigma_patient, design.n_outcomes),
                       (chain.sigma_team, design.q_team),
                       (chain.sigma_facility, design.q_facility)):
        entries = _sigma_entries(dim)
        if entries:
            idx = np.array(entries)
            blocks.append(draws[:, idx[:, 0], idx[:, 1]])
    blocks.append(chain.deviance[:, None])
    data = np.concatenate([b for b in blocks if b.shape[1]], axis=1) \
        if blocks else np.empty((n, 0))
    return pd.DataFrame(data, columns=chain_layout(design)["columns"])


def _context_dict(ctx: PredictionContext) -> dict:
    return {
        "spec": ctx.spec.to_dict(),
        "transform": ctx.transform,
        "fixed_labels": list(ctx.fixed_labels),
        "raw_to_merged": ctx.raw_to_merged.tolist(),
        "team_ids": list(ctx.team_ids),
        "facility_ids": list(ctx.facility_ids),
        "team_facility_idx": ctx.team_facility_idx.tolist(),
        "team_covariates": ctx.team_covariates.tolist(),
        "facility_covariates": ctx.facility_covariates.tolist(),
        "standardization": {
            level: {str(c): list(ms) for c, ms in rec.items()}
            for level, rec in ctx.standardization.items() if isinstance(rec, dict)
        },
        "patient_dim": ctx.patient_dim,
        "team_term_labels": list(ctx.team_term_labels),
        "facility_term_labels": list(ctx.facility_term_labels),
    }


def _context_from_dict(d: dict) -> PredictionContext:
    spec = ModelSpec.from_dict(d["spec"])
    std = {level: {int(c): tuple(ms) for c, ms in rec.items()}
           for level, rec in d["standardization"].items()}
    std["patient_dim"] = d["patient_dim"]
    return PredictionContext(
        spec=spec,
        transform=d["transform"],
        fixed_labels=tuple(d["fixed_labels"]),
        raw_to_merged=np.asarray(d["raw_to_merged"], dtype=np.intp),
        n_fixed=len(d["fixed_labels"]),
        team_term_labels=tuple(d["team_term_labels"]),
        facility_term_labels=tuple(d["facility_term_labels"]),
        team_ids=tuple(d["team_ids"]),
        facility_ids=tuple(d["facility_ids"]),
        team_facility_idx=np.asarray(d["team_facility_idx"], dtype=np.intp),
        team_covariates=np.asarray(d["team_covariates"], dtype=float).reshape(
            len(d["team_ids"]), -1) if d["team_covariates"] else np.zeros((len(d["team_ids"]), 0)),
        facility_covariates=np.asarray(d["facility_covariates"], dtype=float).reshape(
            len(d["facility_ids"]), -1) if d["facility_covariates"]
        else np.zeros((len(d["facility_ids"]), 0)),
        standardization=std,
        patient_dim=int(d["patient_dim"]),
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_manifest(out: Path, command: str, spec: ModelSpec | None, seed: int,
                   config: dict, files: list[str]) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "spec_hash": spec_hash(spec) if spec is not None else None,
        "seed": seed,
        "config": config,
        "files": sorted(files),
        "version": __version__,
    })


def _icc_frame(summary: FitSummary) -> pd.DataFrame:
    rows = []
    if summary.icc_table:
        for outcome, shares in summary.icc_table.items():
            for level in ("patient", "team", "facility"):
                lo, hi = summary.icc_hpd[outcome][level]
                rows.append({"outcome": outcome, "level": level,
                             "share": shares[level], "hpd_low": lo, "hpd_high": hi})
    return pd.DataFrame(rows, columns=["outcome", "level", "share", "hpd_low", "hpd_high"])


def _level_tables_frame(summary: FitSummary, design: DesignStructure) -> pd.DataFrame:
    """Per level: one intercept-variance row per outcome with the correlation
    rows for each outcome pair in between."""
    rows = []
    P = design.n_outcomes
    out_labels = [f"y{p + 1}" for p in range(P)]
    for level in ("patient", "team", "facility"):
        names = []
        for p in range(P):
            if level == "patient":
                names.append(f"sigma_patient[{out_labels[p]},{out_labels[p]}]")
            else:
                try:
                    slot = design.intercept_slot(level, p)
                except MissingRandomIntercept:
                    names.append(None)
                    continue
                labels = design.team_term_labels if level == "team" \
                    else design.facility_term_labels
                names.append(f"sigma_{level}[{labels[slot]},{labels[slot]}]")
        if any(n is None for n in names):
            continue
        corr = summary.correlations.get(level)
        for p in range(P):
            s = summary.params[names[p]]
            rows.append({"level": level, "row": "intercept_variance",
                         "label": out_labels[p], "estimate": s.mean,
                         "hpd_low": s.hpd_low, "hpd_high": s.hpd_high})
            if corr is not None:
                for q in range(p + 1, P):
                    rows.append({"level": level, "row": "correlation",
                                 "label": f"{out_labels[p]}:{out_labels[q]}",
                                 "estimate": float(corr.mean[p, q]),
                                 "hpd_low": float(corr.hpd_low[p, q]),
                                 "hpd_high": float(corr.hpd_high[p, q])})
    return pd.DataFrame(rows, columns=["level", "row", "label", "estimate",
                                       "hpd_low", "hpd_high"])


def save_fit(result: FitResult, out_dir, command: str = "fit") -> dict[str, str]:
    """Write chain dumps, layout sidecar, prediction context, summary, and
    manifest into `out_dir`; returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    design = result.design
    files: dict[str, str] = {}

    layout = chain_layout(design)
    _write_json(out / "chain_layout.json", layout)
    files["chain_layout"] = "chain_layout.json"

    for chain in result.chains:
        name = f"chain_{chain.chain_index}.csv"
        _chain_frame(chain, design).to_csv(out / name, index=False)
        files[f"chain_{chain.chain_index}"] = name

    _write_json(out / "context.json", _context_dict(design.prediction_context()))
    files["context"] = "context.json"

    cfg = result.config
    summary_doc = result.summary.to_dict()
    summary_doc["config"] = {"n_iterations": cfg.n_iterations, "n_burnin": cfg.n_burnin,
                             "thin": cfg.thin, "n_chains": cfg.n_chains, "seed": cfg.seed}
    summary_doc["spec"] = design.spec.to_dict()
    summary_doc["standardize"] = result.standardize
    _write_json(out / "summary.json", summary_doc)
    files["summary"] = "summary.json"

    _icc_frame(result.summary).to_csv(out / "icc.csv", index=False)
    files["icc"] = "icc.csv"
    _level_tables_frame(result.summary, design).to_csv(out / "level_tables.csv", index=False)
    files["level_tables"] = "level_tables.csv"

    write_manifest(out, command, design.spec, cfg.seed,
                   summary_doc["config"], list(files.values()) + ["manifest.json"])
    files["manifest"] = "manifest.json"
    return files


@dataclass(eq=False)
class LoadedFit:
    chains: list[ChainSamples]
    context: PredictionContext
    config: McmcConfig
    summary: dict


def load_fit(fit_dir) -> LoadedFit:
    """Rebuild chains and the prediction context from a fit directory."""
    d = Path(fit_dir)
    for required in ("manifest.json", "chain_layout.json", "context.json"):
        if not (d / required).exists():
            raise UsageError(f"{d} is not a fit directory (missing {required})")
    manifest = json.loads((d / "manifest.json").read_text())
    layout = json.loads((d / "chain_layout.json").read_text())
    context = _context_from_dict(json.loads((d / "context.json").read_text()))
    summary = json.loads((d / "summary.json").read_text()) if (d / "summary.json").exists() else {}

    cfg_d = manifest["config"]
    config = McmcConfig(n_iterations=cfg_d["n_iterations"], n_burnin=cfg_d["n_burnin"],
                        thin=cfg_d["thin"], n_chains=cfg_d["n_chains"], seed=cfg_d["seed"])

    P = layout["n_outcomes"]
    L = len(layout["fixed_labels"])
    team_ids, t_terms = layout["team_ids"], layout["team_term_labels"]
    fac_ids, f_terms = layout["facility_ids"], layout["facility_term_labels"]
    J, qt, K, qf = len(team_ids), len(t_terms), len(fac_ids), len(f_terms)

    chains = []
    for idx in range(config.n_chains):
        path = d / f"chain_{idx}.csv"
        if not path.exists():
            raise UsageError(f"missing chain dump {path}")
        df = pd.read_csv(path)
        if list(df.columns) != layout["columns"]:
            raise DimensionMismatch(f"{path}: columns do not match chain_layout.json")
        arr = df.to_numpy(dtype=float)
        n = arr.shape[0]
        pos = 0

        def take(count):
            nonlocal pos
            block = arr[:, pos:pos + count]
            pos += count
            return block

        gamma = take(L)
        u = take(J * qt).reshape(n, J, qt)
        v = take(K * qf).reshape(n, K, qf)

        def sym_block(dim, name):
            entries = layout["sigma_entries"][name]
            flat = take(len(entries))
            full = np.zeros((n, dim, dim))
            for c, (i, j) in enumerate(entries):
                full[:, i, j] = flat[:, c]
                full[:, j, i] = flat[:, c]
            return full

        sig_e = sym_block(P, "sigma_patient")
        sig_t = sym_block(qt, "sigma_team")
        sig_f = sym_block(qf, "sigma_facility")
        dev = take(1)[:, 0]
        chains.append(ChainSamples(config=config, chain_index=idx, gamma=gamma,
                                   team_effects=u, facility_effects=v,
                                   sigma_patient=sig_e, sigma_team=sig_t,
                                   sigma_facility=sig_f, deviance=dev))
    return LoadedFit(chains=chains, context=context, config=config, summary=summary)
