"""Command-line surface for reproducible runs.

Subcommands: ``fit`` (one dataset, one chain, summary outputs),
``simulate`` (replicated method comparison), ``sensitivity`` (prior
grid refits), ``mortality`` (rate Monte Carlo from saved draws), and
``summarize`` (re-summarize saved draws).  Every run writes its
outputs under ``--out`` only, plus a ``run_manifest.json`` recording
the command, resolved configuration, seeds, input digests, and output
digests; re-running with the same inputs and seed reproduces every
output byte for byte (the manifest itself carries timestamps).

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.  Failures print a single machine-parsable line to
standard error: ``markedmse: error code=<n> kind=<kind>
message=<json-quoted text>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analytics import (
    RhoSpec,
    augmented_correlation,
    expected_missing_mark,
    mortality_rate_mc,
    read_arrivals_csv,
    reporting_prob_by_stratum,
    reporting_prob_given_mark,
    summarize_totals,
    write_correlation_csv,
    write_missing_mark_csv,
    write_mortality_csv,
    write_reporting_csv,
    write_stratum_reporting_csv,
    write_totals_csv,
)
from .data import collapse_lists, parse_incident_csv, stratify
from .errors import ConfigurationError, DataError, NumericalError
from .experiments import (
    DESK_MCMC,
    FULL_MCMC,
    METHODS,
    SETTINGS,
    derive_chain_seed,
    prior_grid,
    run_replication_study,
    run_sensitivity,
)
from .sampler import MCMCSettings, ModelConfig, run_chain
from .storage import load_draws, save_draws, write_trace_csv

__all__ = ["main", "build_parser", "read_config_file", "build_configs"]

logger = logging.getLogger(__name__)

OUT_ENV_VAR = "MARKEDMSE_OUT"

_ERROR_EXITS = (
    (ConfigurationError, 2, "configuration"),
    (DataError, 3, "data"),
    (NumericalError, 4, "numerical"),
)


# ------------------------------------------------------ config files


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text):
    if text.strip().lower() in ("", "none"):
        return None
    return float(text)


_MODEL_KEYS = {
    "n_clusters": int,
    "a_p": float,
    "b_p": float,
    "c0": float,
    "C0": float,
    "m0": _parse_optional_float,
    "s0_sq": _parse_optional_float,
    "a_alpha": float,
    "b_alpha": float,
    "fixed_alpha": _parse_optional_float,
    "a_lambda": float,
    "b_lambda": float,
}

_MCMC_KEYS = {
    "iterations": int,
    "burn_in": int,
    "thin": int,
    "seed": int,
    "target_accept": float,
    "adapt_rate": float,
    "adapt_decay": float,
    "init_step": float,
    "mark_clamp": float,
    "keep_params": _parse_bool,
    "keep_imputed": _parse_bool,
}


def read_config_file(source):
    """Read a flat key=value config file.

    Lines are ``key = value``; blank lines and ``#`` comments are
    ignored.  Keys mirror the model and chain option names
    (case-sensitive); unknown or duplicate keys are configuration
    errors.

    Returns
    -------
    dict of str to str
        Raw values, uncoerced.
    """
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    raw = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"config line {line_no}: expected key = value, got {line.strip()!r}"
            )
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _MODEL_KEYS and key not in _MCMC_KEYS:
            raise ConfigurationError(f"config line {line_no}: unknown key {key!r}")
        if key in raw:
            raise ConfigurationError(f"config line {line_no}: duplicate key {key!r}")
        raw[key] = value
    return raw


def build_configs(raw, seed=None, mcmc_defaults=None, **forced):
    """Coerce raw config values into (ModelConfig, MCMCSettings).

    Parameters
    ----------
    raw : dict of str to str
    seed : int, optional
        Overrides the config file's seed (CLI flag wins).
    mcmc_defaults : MCMCSettings, optional
        Base settings the file's keys are applied on top of.
    **forced
        Final keyword overrides for the chain settings (e.g. a fit run
        forcing keep_params on).
    """
    model_kwargs = {}
    mcmc_kwargs = {}
    for key, value in raw.items():
        caster = _MODEL_KEYS.get(key) or _MCMC_KEYS.get(key)
        try:
            coerced = caster(value)
        except ValueError as exc:
            raise ConfigurationError(f"config key {key}: {exc}") from exc
        if key in _MODEL_KEYS:
            model_kwargs[key] = coerced
        else:
            mcmc_kwargs[key] = coerced
    if seed is not None:
        mcmc_kwargs["seed"] = int(seed)
    mcmc_kwargs.update(forced)
    config = ModelConfig(**model_kwargs)
    base = mcmc_defaults if mcmc_defaults is not None else MCMCSettings()
    settings = dataclasses.replace(base, **mcmc_kwargs)
    return config, settings


# --------------------------------------------------------- plumbing


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _sanitize(value):
    """Make a value JSON-safe: NaN/inf to None, dataclasses to dicts."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _sanitize(dataclasses.asdict(value))
    if isinstance(value, dict):
        return {str(k): _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _sanitize(value.item())
    return value


def _write_json(payload, dest):
    dest.write_text(
        json.dumps(_sanitize(payload), indent=2, sort_keys=True) + "\n"
    )


def _resolve_out(args):
    out = args.out or os.environ.get(OUT_ENV_VAR)
    if not out:
        raise ConfigurationError(
            f"no output directory: pass --out or set {OUT_ENV_VAR}"
        )
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


class _Run:
    """Collects inputs/outputs for the manifest as a command runs."""

    def __init__(self, command, args, out):
        self.command = command
        self.argv = list(getattr(args, "_argv", []))
        self.out = out
        self.started = _utc_now()
        self.inputs = {}
        self.outputs = []
        self.config = {}
        self.seed = None

    def add_input(self, path):
        path = Path(path)
        self.inputs[str(path)] = _sha256(path)

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def add_output_dir(self, name):
        self.outputs.append(name)

    def write_manifest(self):
        listed = []
        for name in self.outputs:
            target = self.out / name
            if target.is_dir():
                for child in sorted(target.rglob("*")):
                    if child.is_file():
                        listed.append((str(child.relative_to(self.out)), _sha256(child)))
            elif target.exists():
                listed.append((name, _sha256(target)))
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "artifact_version": __version__,
            "config": self.config,
            "root_seed": self.seed,
            "inputs": self.inputs,
            "outputs": {name: digest for name, digest in listed},
            "started": self.started,
            "finished": _utc_now(),
        }
        _write_json(manifest, self.out / "run_manifest.json")


# ------------------------------------------------------- arg parsing


def _parse_collapse(text):
    """'1+3,2,4' -> ((0, 2), (1,), (3,)) with 1-based input indices."""
    groups = []
    for chunk in text.split(","):
        members = []
        for token in chunk.split("+"):
            token = token.strip()
            if not token.isdigit() or int(token) < 1:
                raise ConfigurationError(
                    f"collapse groups must be 1-based list numbers, got {token!r}"
                )
            members.append(int(token) - 1)
        if not members:
            raise ConfigurationError("empty collapse group")
        groups.append(tuple(members))
    return tuple(groups)


def _parse_rho(text):
    """'uniform' | 'beta[:a,b]' | 'grid:v1,v2,...' -> RhoSpec."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    if name == "uniform":
        if rest:
            raise ConfigurationError("uniform rho takes no parameters")
        return RhoSpec.uniform()
    if name == "beta":
        if not rest:
            return RhoSpec.beta()
        parts = rest.split(",")
        if len(parts) != 2:
            raise ConfigurationError("beta rho needs two parameters, e.g. beta:1.3,2.8")
        try:
            a, b = (float(p) for p in parts)
        except ValueError as exc:
            raise ConfigurationError(f"bad beta parameters {rest!r}") from exc
        return RhoSpec.beta(a, b)
    if name == "grid":
        if not rest:
            raise ConfigurationError("grid rho needs values, e.g. grid:0,0.1,0.2")
        try:
            values = [float(p) for p in rest.split(",")]
        except ValueError as exc:
            raise ConfigurationError(f"bad grid values {rest!r}") from exc
        return RhoSpec.grid(values)
    raise ConfigurationError(
        f"rho must be uniform, beta:a,b, or grid:v1,v2,..., got {text!r}"
    )


def _parse_marks_grid(text):
    try:
        values = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"bad mark grid {text!r}") from exc
    return values


def build_parser():
    parser = argparse.ArgumentParser(
        prog="markedmse",
        description="Stratified mark-augmented multiple-systems estimation.",
    )
    parser.add_argument("--version", action="version", version=f"markedmse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")
        p.add_argument("--quiet", action="store_true", help="log errors only")
        p.add_argument("--seed", type=int, default=None, help="root seed")

    fit = sub.add_parser("fit", help="fit the latent-class model to one dataset")
    fit.add_argument("--data", required=True, help="incident CSV")
    fit.add_argument(
        "--stratify",
        choices=("single", "year", "month"),
        default="single",
        help="stratification of the incidents (default: single)",
    )
    fit.add_argument("--collapse", help="merge lists, e.g. 1+3,2,4 (1-based)")
    fit.add_argument("--config", help="key=value config file")
    common(fit)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run the replicated method comparison")
    sim.add_argument(
        "--settings",
        default=",".join(SETTINGS),
        help=f"comma list from {{{','.join(SETTINGS)}}} (default: all)",
    )
    sim.add_argument(
        "--methods",
        default=",".join(METHODS),
        help="comma list of estimators (default: all)",
    )
    sim.add_argument("--replicates", type=int, default=20)
    sim.add_argument(
        "--preset",
        choices=("desk", "paper"),
        default="desk",
        help="chain length preset for the mixture method",
    )
    sim.add_argument("--config", help="key=value config file (model priors)")
    sim.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    sens = sub.add_parser("sensitivity", help="re-fit one dataset across the prior grid")
    sens.add_argument("--data", required=True, help="incident CSV")
    sens.add_argument(
        "--stratify", choices=("single", "year", "month"), default="single"
    )
    sens.add_argument("--collapse", help="merge lists, e.g. 1+3,2,4 (1-based)")
    sens.add_argument(
        "--grid",
        choices=("full", "baseline-only"),
        default="full",
        help="full 108-cell grid or just the baseline cell",
    )
    sens.add_argument("--config", help="key=value config file (chain settings only)")
    sens.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(sens)
    sens.set_defaults(func=cmd_sensitivity)

    mort = sub.add_parser("mortality", help="mortality-rate Monte Carlo from saved draws")
    mort.add_argument("--draws", required=True, help="draws directory from a fit run")
    mort.add_argument("--arrivals", required=True, help="two-column stratum,arrivals CSV")
    mort.add_argument(
        "--rho",
        required=True,
        help="uniform | beta:a,b | grid:v1,v2,... interception assumption",
    )
    mort.add_argument("--samples", type=int, default=250_000)
    common(mort)
    mort.set_defaults(func=cmd_mortality)

    summ = sub.add_parser("summarize", help="re-summarize saved draws")
    summ.add_argument("--draws", required=True, help="draws directory from a fit run")
    summ.add_argument("--data", help="incident CSV for completed-data correlations")
    summ.add_argument("--stratify", choices=("single", "year", "month"), default="single")
    summ.add_argument("--collapse", help="merge lists, e.g. 1+3,2,4 (1-based)")
    summ.add_argument("--marks", help="comma list of marks for the reporting curve")
    summ.add_argument(
        "--weighting",
        choices=("rate", "equal", "observed"),
        default="rate",
        help="cross-stratum weighting for the reporting curve",
    )
    common(summ)
    summ.set_defaults(func=cmd_summarize)
    return parser


def _load_dataset(run, args):
    path = Path(args.data)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    run.add_input(path)
    ingested = parse_incident_csv(path)
    if ingested.n_rejected:
        logger.warning(
            "%d row(s) rejected while reading %s", ingested.n_rejected, path
        )
    dataset = ingested.dataset
    if getattr(args, "collapse", None):
        dataset = collapse_lists(dataset, _parse_collapse(args.collapse))
    return stratify(dataset, args.stratify)


# ----------------------------------------------------------- commands


def cmd_fit(args):
    out = _resolve_out(args)
    run = _Run("fit", args, out)
    dataset = _load_dataset(run, args)
    raw = {}
    if args.config:
        raw = read_config_file(args.config)
        run.add_input(args.config)
    # keep_params on by default so reporting probabilities can be
    # summarized; the config file may switch it off.
    config, settings = build_configs(
        raw,
        seed=args.seed,
        mcmc_defaults=dataclasses.replace(DESK_MCMC, keep_params=True),
    )
    root_seed = settings.seed
    run.seed = root_seed
    # The chain runs on the first child of the root seed, matching the
    # sensitivity runner's cell 0 so a baseline-only grid reproduces
    # this fit exactly.
    settings = dataclasses.replace(settings, seed=derive_chain_seed(root_seed, 0))
    logger.info(
        "fitting %d incidents in %d strata (seed %d)",
        dataset.m, dataset.n_strata, root_seed,
    )
    draws = run_chain(dataset, config, settings)
    run.config = {
        "model": draws.config,
        "mcmc": dict(draws.settings, seed=root_seed),
        "stratify": args.stratify,
        "collapse": args.collapse,
    }

    save_draws(draws, out / "draws")
    run.add_output_dir("draws")
    write_trace_csv(draws, run.path("trace.csv"))
    totals = summarize_totals(draws, dataset)
    write_totals_csv(totals, run.path("totals.csv"))
    missing = expected_missing_mark(draws)
    write_missing_mark_csv(missing, run.path("missing_mark.csv"))
    report = {
        "command": "fit",
        "root_seed": root_seed,
        "chain_seed": settings.seed,
        "config": run.config,
        "alpha_acceptance": list(draws.alpha_acceptance),
        "n_clamped": draws.n_clamped,
        "totals": totals,
        "missing_mark": missing,
    }
    if draws.has_params:
        reporting = reporting_prob_by_stratum(draws)
        write_stratum_reporting_csv(reporting, run.path("reporting_by_stratum.csv"))
        report["reporting_by_stratum"] = reporting
    _write_json(report, run.path("report.json"))
    run.write_manifest()
    logger.info("fit outputs written to %s", out)
    return 0


def cmd_simulate(args):
    out = _resolve_out(args)
    run = _Run("simulate", args, out)
    names = [s.strip().upper() for s in args.settings.split(",") if s.strip()]
    unknown = [n for n in names if n not in SETTINGS]
    if unknown:
        raise ConfigurationError(f"unknown settings: {', '.join(unknown)}")
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    raw = {}
    if args.config:
        raw = read_config_file(args.config)
        run.add_input(args.config)
    bad = [k for k in raw if k not in _MODEL_KEYS]
    if bad:
        raise ConfigurationError(
            "simulate config sets model priors only; chain length comes "
            f"from --preset (offending keys: {', '.join(bad)})"
        )
    config, _ = build_configs(raw)
    mcmc = DESK_MCMC if args.preset == "desk" else FULL_MCMC
    root_seed = 20240 if args.seed is None else args.seed
    run.seed = root_seed
    run.config = {
        "settings": names,
        "methods": methods,
        "replicates": args.replicates,
        "preset": args.preset,
        "model": config.as_dict(),
        "jobs": args.jobs,
    }
    study = run_replication_study(
        [SETTINGS[n] for n in names],
        methods=methods,
        replicates=args.replicates,
        config=config,
        mcmc=mcmc,
        root_seed=root_seed,
        jobs=args.jobs,
        out_dir=out,
    )
    run.outputs.extend(["replicates.csv", "summary.csv"])
    _write_json(
        {
            "command": "simulate",
            "root_seed": root_seed,
            "config": run.config,
            "summaries": study.summaries,
        },
        run.path("report.json"),
    )
    run.write_manifest()
    logger.info("study outputs written to %s", out)
    return 0


def cmd_sensitivity(args):
    out = _resolve_out(args)
    run = _Run("sensitivity", args, out)
    dataset = _load_dataset(run, args)
    raw = {}
    if args.config:
        raw = read_config_file(args.config)
        run.add_input(args.config)
    bad = [k for k in raw if k in _MODEL_KEYS]
    if bad:
        raise ConfigurationError(
            "the sensitivity grid sets the model priors; the config file "
            f"may only set chain keys (offending: {', '.join(bad)})"
        )
    _, mcmc = build_configs(raw, mcmc_defaults=DESK_MCMC)
    grid = prior_grid()
    if args.grid == "baseline-only":
        grid = [cell for cell in grid if cell[0].is_baseline]
    root_seed = 31101 if args.seed is None else args.seed
    run.seed = root_seed
    run.config = {
        "grid": args.grid,
        "n_cells": len(grid),
        "mcmc": dataclasses.asdict(mcmc),
        "stratify": args.stratify,
        "collapse": args.collapse,
    }
    rows = run_sensitivity(
        dataset,
        grid=grid,
        mcmc=mcmc,
        root_seed=root_seed,
        jobs=args.jobs,
        out_dir=out,
    )
    run.outputs.append("sensitivity.csv")
    _write_json(
        {
            "command": "sensitivity",
            "root_seed": root_seed,
            "config": run.config,
            "cells": rows,
        },
        run.path("report.json"),
    )
    run.write_manifest()
    logger.info("sensitivity outputs written to %s", out)
    return 0


def _load_saved_draws(run, directory):
    path = Path(directory)
    if not path.is_dir():
        raise DataError(f"draws directory not found: {path}")
    draws = load_draws(path)
    for child in sorted(path.iterdir()):
        if child.is_file():
            run.add_input(child)
    return draws


def cmd_mortality(args):
    out = _resolve_out(args)
    run = _Run("mortality", args, out)
    draws = _load_saved_draws(run, args.draws)
    arrivals_path = Path(args.arrivals)
    arrivals = read_arrivals_csv(arrivals_path)
    run.add_input(arrivals_path)
    rho = _parse_rho(args.rho)
    if args.samples < 1:
        raise ConfigurationError("samples must be positive")
    seed = 0 if args.seed is None else args.seed
    run.seed = seed
    run.config = {"rho": args.rho, "samples": args.samples, "arrivals": arrivals}
    result = mortality_rate_mc(draws, arrivals, rho, samples=args.samples, rng=seed)
    write_mortality_csv(result, run.path("mortality.csv"))
    _write_json(
        {
            "command": "mortality",
            "root_seed": seed,
            "config": run.config,
            "rates": result.rows,
        },
        run.path("report.json"),
    )
    run.write_manifest()
    logger.info("mortality outputs written to %s", out)
    return 0


def cmd_summarize(args):
    out = _resolve_out(args)
    run = _Run("summarize", args, out)
    draws = _load_saved_draws(run, args.draws)
    dataset = None
    if args.data:
        dataset = _load_dataset(run, args)
    run.seed = draws.settings.get("seed")
    run.config = {"weighting": args.weighting, "marks": args.marks}

    totals = summarize_totals(draws, dataset)
    write_totals_csv(totals, run.path("totals.csv"))
    missing = expected_missing_mark(draws)
    write_missing_mark_csv(missing, run.path("missing_mark.csv"))
    report = {
        "command": "summarize",
        "config": run.config,
        "totals": totals,
        "missing_mark": missing,
    }
    if draws.has_params:
        reporting = reporting_prob_by_stratum(draws)
        write_stratum_reporting_csv(reporting, run.path("reporting_by_stratum.csv"))
        report["reporting_by_stratum"] = reporting
    if args.marks:
        curve = reporting_prob_given_mark(
            draws, _parse_marks_grid(args.marks), weighting=args.weighting
        )
        write_reporting_csv(curve, run.path("reporting_curve.csv"))
        report["reporting_curve"] = {
            "y_values": curve.y_values,
            "weighting": curve.weighting,
            "aggregate_median": list(curve.aggregate_median),
            "aggregate_lo": list(curve.aggregate_lo),
            "aggregate_hi": list(curve.aggregate_hi),
        }
    if dataset is not None and draws.imputed is not None:
        correlation = augmented_correlation(draws, dataset)
        write_correlation_csv(correlation, run.path("correlation.csv"))
        report["correlation"] = {
            "labels": correlation.labels,
            "matrix": [list(map(float, row)) for row in correlation.matrix],
            "n_evaluations": correlation.n_evaluations,
        }
    _write_json(report, run.path("report.json"))
    run.write_manifest()
    logger.info("summaries written to %s", out)
    return 0


# --------------------------------------------------------------- main


def main(argv=None):
    """Entry point; returns the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigurationError, DataError, NumericalError) as exc:
        for exc_type, code, kind in _ERROR_EXITS:
            if isinstance(exc, exc_type):
                print(
                    f"markedmse: error code={code} kind={kind} "
                    f"message={json.dumps(str(exc))}",
                    file=sys.stderr,
                )
                return code
        raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
