"""Command-line pipeline: ``crashsev describe|fit|tests|synth --config <path>``.

Exit codes: 0 success, 2 configuration or schema error, 3 missing
prerequisite (input file or fit results), 4 I/O failure, 5 estimation
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import reports
from .config import RunConfig, load_config, resolve_workers
from .domain import descriptive_stats, partition_dataset
from .errors import (ConfigError, ConsistencyError, CrashsevError, ParseError, RowError,
                     SchemaError)
from .estimate import FitResult, fit, refine_specification
from .inference import marginal_effects_average, random_parameter_shares
from .ingest import parse_dataset, write_dataset
from .modeltests import battery_from_fits, fit_all, pooled_datasets
from .synth import simulate_dataset

logger = logging.getLogger("crashsev")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_IO, EXIT_ESTIMATION = 0, 2, 3, 4, 5


class MissingPrerequisite(CrashsevError):
    pass


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_data(cfg: RunConfig, strict: bool):
    if not cfg.input.exists():
        raise MissingPrerequisite(f"input file {cfg.input} does not exist")
    data = parse_dataset(cfg.input, cfg.schema, strict=strict)
    report = data.info["parse"]
    logger.info("read %d row(s) from %s, kept %d", report.rows_read, cfg.input,
                report.rows_kept)
    return data


def cmd_describe(cfg: RunConfig, strict=False, **_) -> int:
    data = _load_data(cfg, strict)
    part = partition_dataset(data)
    stats = {k: descriptive_stats(d) for k, d in part.segments.items() if len(d)}
    out = cfg.output
    if "markdown" in cfg.formats:
        _write(out / "describe.md", reports.describe_markdown(stats, part.excluded, data.kinds))
    if "csv" in cfg.formats:
        _write(out / "describe.csv", reports.describe_csv(stats, part.excluded))
    for k, s in stats.items():
        print(f"{k.label}: {s.n} crashes")
    print(f"excluded (dawn/dusk): {part.excluded}")
    return EXIT_OK


def summarize(name, fit_result: FitResult, dataset, cfg: RunConfig) -> reports.FitSummary:
    est = cfg.estimation
    eff = marginal_effects_average(dataset, fit_result, est.marginal_effects)
    ret = refine_specification(fit_result, est.retention_confidence)
    return reports.FitSummary(name, fit_result, eff, random_parameter_shares(fit_result),
                              ret.flags, est.retention_confidence, ret.threshold)


def _fit_jobs(cfg: RunConfig, data):
    part = partition_dataset(data)
    jobs = {name: (d, cfg.pooled_spec) for name, d in pooled_datasets(part.segments).items()}
    jobs.update({k.label: (d, cfg.spec_for(k)) for k, d in part.segments.items()})
    return jobs


def cmd_fit(cfg: RunConfig, strict=False, workers=1, **_) -> int:
    data = _load_data(cfg, strict)
    jobs = _fit_jobs(cfg, data)
    est = cfg.estimation

    def fitter(d, spec):
        return fit(d, spec, est.n_draws, est.discard, covariance=est.covariance)

    results = fit_all(jobs, fitter, workers)
    summaries, failures = [], {}
    for name, res in results.items():
        if isinstance(res, Exception):
            failures[name] = str(res)
            logger.error("fit failed for %s: %s", name, res)
            continue
        try:
            s = summarize(name, res, jobs[name][0], cfg)
        except CrashsevError as exc:
            failures[name] = str(exc)
            logger.error("post-estimation failed for %s: %s", name, exc)
            continue
        summaries.append(s)
        _write(cfg.output / "fits" / f"{name}.json", reports.json_text(s.to_dict()))
    out = cfg.output
    if "markdown" in cfg.formats:
        _write(out / "fit_report.md", reports.fit_markdown(summaries, failures))
    if "csv" in cfg.formats:
        _write(out / "coefficients.csv", reports.coefficients_csv(summaries))
        _write(out / "marginal_effects.csv", reports.effects_csv(summaries))
        _write(out / "random_shares.csv", reports.shares_csv(summaries))
        _write(out / "model_stats.csv", reports.model_stats_csv(summaries))
    for s in summaries:
        print(f"{s.name}: n={s.fit.n_obs} LL={s.fit.ll_converged:.2f} rho2={s.fit.rho2:.3f}")
    if failures:
        for name in failures:
            print(f"{name}: FAILED", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_tests(cfg: RunConfig, strict=False, **_) -> int:
    data = _load_data(cfg, strict)
    part = partition_dataset(data)
    needed = list(pooled_datasets(part.segments)) + [k.label for k in part.segments]
    fit_dir = cfg.output / "fits"
    missing = [n for n in needed if not (fit_dir / f"{n}.json").exists()]
    if missing:
        raise MissingPrerequisite(f"fit result(s) missing in {fit_dir}: {missing}; "
                                  "run the fit command first")
    fits = {}
    for n in needed:
        doc = json.loads((fit_dir / f"{n}.json").read_text(encoding="utf-8"))
        fits[n] = FitResult.from_dict(doc["fit"])
    sizes = {n: len(d) for n, d in pooled_datasets(part.segments).items()}
    sizes.update({k.label: len(d) for k, d in part.segments.items()})
    stale = [n for n in needed if fits[n].n_obs != sizes[n]]
    if stale:
        raise MissingPrerequisite(f"fit result(s) {stale} do not match the current input "
                                  "data; rerun the fit command")
    pooled = {n: fits[n] for n in pooled_datasets(part.segments)}
    seg_fits = {k: fits[k.label] for k in part.segments}
    report = battery_from_fits(pooled, seg_fits, dict(part.segments),
                               cfg.estimation.test_confidence)
    out = cfg.output
    if "markdown" in cfg.formats:
        _write(out / "tests.md", reports.tests_markdown(report))
    if "csv" in cfg.formats:
        _write(out / "tests_partition.csv", reports.partition_csv(report))
        _write(out / "tests_transfer.csv", reports.transfer_csv(report))
    _write(out / "tests.json", reports.json_text(report.to_dict()))
    if report.nothing_to_compare:
        print(report.note)
    for r in report.partition:
        if r.result is not None:
            print(f"{r.label}: LR={r.result.statistic:.2f} df={r.result.df} "
                  f"{r.result.comment}")
        else:
            print(f"{r.label}: {r.note}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig, out_dir=None, **_) -> int:
    if cfg.synth is None:
        raise ConfigError(f"{cfg.path}: no 'synth' section")
    target = cfg.synth.output or cfg.input
    if out_dir is not None:
        target = Path(out_dir) / target.name
    data = simulate_dataset(cfg.synth.dgp, cfg.synth.n)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, target, cfg.schema.severity, cfg.schema.area, cfg.schema.lighting)
    print(json.dumps({"output": str(target), "n": cfg.synth.n,
                      "true_parameters": cfg.synth.dgp.to_dict()}, indent=2))
    return EXIT_OK


COMMANDS = {"describe": cmd_describe, "fit": cmd_fit, "tests": cmd_tests, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crashsev", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--draws", type=int, help="Halton draws per observation")
    p.add_argument("--discard", type=int, help="leading Halton elements discarded")
    p.add_argument("--workers", type=int,
                   help="parallel fits (default: $CRASHSEV_WORKERS, then the config, then 1)")
    p.add_argument("--strict", action="store_true", help="fail on the first bad input row")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        if not args.config.exists():
            raise ConfigError(f"{args.config}: configuration file not found")
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(output=args.out if args.command != "synth" else None,
                                 n_draws=args.draws, discard=args.discard)
        workers = resolve_workers(args.workers, cfg.workers)
        return COMMANDS[args.command](cfg, strict=args.strict, workers=workers,
                                      out_dir=args.out)
    except (ConfigError, SchemaError, ParseError, RowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CrashsevError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
