"""Command-line interface.

Three subcommands:

    select     run the selection pipeline on a survival CSV
    simulate   run a simulation scenario (preset name or key=value file)
    knockoffs  emit the augmented design [X, X~] for a survival CSV

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from ._rng import draw_subseed, keyed_rng
from .coxnet import SurvivalDataset, cross_validate, standardize_design
from .errors import (
    BadEventValue,
    ConfigError,
    CoxFdrError,
    DataError,
    MissingColumn,
    NonNumericCell,
    NonPositiveTime,
    NumericalError,
)
from .filter import KNOCKOFF, KNOCKOFF_PLUS, knockoff_threshold, lcd_statistics
from .knockoffs import build_sampler, equicorrelated_s, fit_moments, sample_knockoffs
from .simbench import COX_LASSO, aggregate_report, load_scenario, run_scenario

SCHEMA_VERSION = 1

_S_CV_BASELINE = 0
_S_CV_KNOCKOFF = 1
_S_KNOCKOFF = 2


@dataclass
class RunConfig:
    command: str
    input_path: str = None
    scenario_path: str = None
    q: float = 0.2
    threshold: str = "both"
    folds: int = 10
    seed: int = 0
    output_path: str = None
    format: str = "csv"
    force_s_zero: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.command not in ("select", "simulate", "knockoffs"):
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command in ("select", "knockoffs") and not self.input_path:
            raise ConfigError(f"{self.command} requires --input")
        if self.command == "simulate" and not self.scenario_path:
            raise ConfigError("simulate requires --scenario")
        if not 0.0 < self.q < 1.0:
            raise ConfigError(f"--q must lie in (0, 1), got {self.q}")
        if self.threshold not in ("knockoff", "plus", "both"):
            raise ConfigError(f"--threshold must be knockoff, plus, or both, got {self.threshold!r}")
        if self.folds < 2:
            raise ConfigError("--folds must be at least 2")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"--format must be csv or json, got {self.format!r}")
        if not self.output_path:
            raise ConfigError("--out is required")


@dataclass
class SelectionReport:
    seed: int
    q: float
    folds: int
    lambda_chosen: float
    censoring_rate: float
    selections: dict           # method -> list of covariate names
    thresholds: dict           # method -> threshold value (lasso: None)
    warnings: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parse_cell(raw, row, col):
    txt = raw.strip()
    if not txt:
        raise NonNumericCell(row, col)
    try:
        return float(txt)
    except ValueError:
        raise NonNumericCell(row, col) from None


def load_csv(path):
    """Survival dataset from a CSV with `time`, `event`, and numeric covariates."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in ("time", "event"):
            if required not in header:
                raise MissingColumn(required)
        t_idx = header.index("time")
        e_idx = header.index("event")
        cov_idx = [i for i in range(len(header)) if i not in (t_idx, e_idx)]
        names = [header[i] for i in cov_idx]

        times, events, rows = [], [], []
        for rownum, record in enumerate(reader, start=2):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != len(header):
                raise DataError(f"{path}: row {rownum} has {len(record)} fields, expected {len(header)}")
            t = _parse_cell(record[t_idx], rownum, "time")
            if t <= 0.0:
                raise NonPositiveTime(rownum)
            ev = _parse_cell(record[e_idx], rownum, "event")
            if ev not in (0.0, 1.0):
                raise BadEventValue(rownum)
            times.append(t)
            events.append(ev)
            rows.append([_parse_cell(record[i], rownum, header[i]) for i in cov_idx])
    x = np.asarray(rows, dtype=float)
    return SurvivalDataset(np.asarray(times), np.asarray(events), x, names)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _fit_knockoff_pipeline(data, config):
    """Shared select-path plumbing: returns (sampler, augmented dataset)."""
    moments = fit_moments(data.design)
    s = np.zeros(moments.p) if config.force_s_zero else equicorrelated_s(moments)
    sampler = build_sampler(moments, s)
    ko_seed = draw_subseed(keyed_rng(config.seed, _S_KNOCKOFF))
    aug = sample_knockoffs(sampler, data.design, ko_seed)
    return sampler, aug


def cmd_select(config):
    """Full pipeline on a real dataset: lasso baseline + both thresholds."""
    data = load_csv(config.input_path)
    warnings = []
    censoring_rate = 1.0 - float(data.delta.mean())

    base = SurvivalDataset(data.y, data.delta, standardize_design(data.design), data.names)
    fit_base = cross_validate(
        base, config.folds, rng_seed=draw_subseed(keyed_rng(config.seed, _S_CV_BASELINE))
    )
    sel_lasso = [data.names[j] for j in np.flatnonzero(fit_base.chosen_coefs != 0.0)]
    if fit_base.cv_empty_fold_warnings:
        warnings.append(f"{fit_base.cv_empty_fold_warnings} baseline CV folds had no test events")

    _, aug = _fit_knockoff_pipeline(data, config)
    ko_names = list(data.names) + [f"{nm}__ko" for nm in data.names]
    augset = SurvivalDataset(data.y, data.delta, standardize_design(aug.z), ko_names)
    fit_aug = cross_validate(
        augset, config.folds, rng_seed=draw_subseed(keyed_rng(config.seed, _S_CV_KNOCKOFF))
    )
    stats = lcd_statistics(fit_aug, fit_aug.chosen_lambda, aug.p)
    if fit_aug.cv_empty_fold_warnings:
        warnings.append(f"{fit_aug.cv_empty_fold_warnings} knockoff CV folds had no test events")
    if not fit_aug.converged[fit_aug.chosen_lambda]:
        warnings.append("augmented fit not fully converged at the chosen lambda")

    selections = {COX_LASSO: sel_lasso}
    thresholds = {COX_LASSO: None}
    wanted = {"knockoff": (KNOCKOFF,), "plus": (KNOCKOFF_PLUS,), "both": (KNOCKOFF, KNOCKOFF_PLUS)}
    for kind in wanted[config.threshold]:
        res = knockoff_threshold(stats.w, config.q, plus=(kind == KNOCKOFF_PLUS))
        selections[kind] = [data.names[j] for j in res.selected]
        thresholds[kind] = float(res.threshold)

    return SelectionReport(
        seed=config.seed,
        q=config.q,
        folds=config.folds,
        lambda_chosen=float(fit_aug.lambda_grid[fit_aug.chosen_lambda]),
        censoring_rate=censoring_rate,
        selections=selections,
        thresholds=thresholds,
        warnings=warnings,
    )


def cmd_simulate(config, n_jobs=None):
    scenario = load_scenario(config.scenario_path)
    report = run_scenario(scenario, n_jobs=n_jobs or config.n_jobs)
    return report


def cmd_knockoffs(config):
    """Augmented-design CSV: standardized originals plus `__ko` columns.

    `time` and `event` pass through untouched; sampling never reads them.
    """
    data = load_csv(config.input_path)
    _, aug = _fit_knockoff_pipeline(data, config)
    header = ["time", "event"] + list(data.names) + [f"{nm}__ko" for nm in data.names]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i in range(data.n):
        row = [_num(data.y[i]), _num(data.delta[i])]
        row += [_num(v) for v in aug.z[i]]
        writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _num(v):
    return format(float(v), ".12g")


def _selection_report_json(report):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "seed": report.seed,
        "q": report.q,
        "folds": report.folds,
        "lambda_chosen": report.lambda_chosen,
        "censoring_rate": report.censoring_rate,
        "methods": {
            method: {
                "selected": report.selections[method],
                "threshold": report.thresholds[method],
            }
            for method in report.selections
        },
        "warnings": report.warnings,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _selection_report_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "covariate", "threshold", "lambda_chosen"])
    for method, names in report.selections.items():
        thr = report.thresholds[method]
        thr_txt = "" if thr is None else _num(thr)
        if names:
            for nm in names:
                writer.writerow([method, nm, thr_txt, _num(report.lambda_chosen)])
        else:
            writer.writerow([method, "", thr_txt, _num(report.lambda_chosen)])
    return buf.getvalue()


def _scenario_report_json(report):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {k: getattr(report.scenario, k) for k in (
            "n", "p", "beta_case", "cov_dist", "rho", "t_dof", "baseline",
            "censoring", "target_rate", "gamma", "q", "replications", "seed", "folds",
        )},
        "censoring_param": report.censoring_param,
        "achieved_censoring": report.achieved_censoring,
        "replications_included": report.n_included,
        "replications_excluded": [list(e) for e in report.excluded],
        "empirical_fdr": report.empirical_fdr,
        "empirical_power": report.empirical_power,
        "empirical_mfdr": report.empirical_mfdr,
        "mean_runtime_seconds": report.mean_runtime,
    }
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="coxfdr",
        description="FDR-controlled feature selection for Cox survival models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--q", type=float, default=0.2, help="target FDR level (default 0.2)")
        sp.add_argument("--threshold", choices=["knockoff", "plus", "both"], default="both")
        sp.add_argument("--folds", type=int, default=10,
                        help="CV folds (default 10; 5 recommended for n < 200)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, dest="output_path")
        sp.add_argument("--format", choices=["csv", "json"], default="csv")

    sp = sub.add_parser("select", help="run the selection pipeline on a survival CSV")
    sp.add_argument("--input", required=True, dest="input_path")
    add_common(sp)

    sp = sub.add_parser("simulate", help="run a simulation scenario")
    sp.add_argument("--scenario", required=True, dest="scenario_path",
                    help="preset name or path to a key=value scenario file")
    sp.add_argument("--jobs", type=int, default=1, dest="n_jobs")
    add_common(sp)

    sp = sub.add_parser("knockoffs", help="emit the augmented design for a survival CSV")
    sp.add_argument("--input", required=True, dest="input_path")
    sp.add_argument("--force-s-zero", action="store_true",
                    help="debug: force s = 0 so knockoffs equal the standardized originals")
    add_common(sp)
    return parser


def _config_from_args(args):
    return RunConfig(
        command=args.command,
        input_path=getattr(args, "input_path", None),
        scenario_path=getattr(args, "scenario_path", None),
        q=args.q,
        threshold=args.threshold,
        folds=args.folds,
        seed=args.seed,
        output_path=args.output_path,
        format=args.format,
        force_s_zero=getattr(args, "force_s_zero", False),
        n_jobs=getattr(args, "n_jobs", 1),
    )


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _config_from_args(args)

    if config.command == "select":
        report = cmd_select(config)
        text = _selection_report_json(report) if config.format == "json" else _selection_report_csv(report)
        _write(config.output_path, text)
        n_lasso = len(report.selections[COX_LASSO])
        print(f"select: wrote {config.output_path} "
              f"(lasso selected {n_lasso}, censoring rate {report.censoring_rate:.3f})")
    elif config.command == "simulate":
        report = cmd_simulate(config)
        if config.format == "json":
            text = _scenario_report_json(report)
        else:
            text = aggregate_report([report]).csv
        _write(config.output_path, text)
        print(f"simulate: wrote {config.output_path} "
              f"({report.n_included}/{report.scenario.replications} replications)")
    else:
        text = cmd_knockoffs(config)
        _write(config.output_path, text)
        print(f"knockoffs: wrote {config.output_path}")
    return 0


def main(argv=None):
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CoxFdrError as exc:  # pragma: no cover - catch-all for new subtypes
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
