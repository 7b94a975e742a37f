"""Command-line entry point: ``tzsim {simulate,sweep,fit-chain,validate}``.

Exit codes: 0 success, 2 invalid config or input, 3 runtime failure,
4 sweep self-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backhaul import fit_chain, read_log, validate_chain
from .config import ConfigError, ScenarioConfig, echo_config, load_config
from .experiment import (
    monotonicity_violations,
    run_experiment,
    series_csv,
    summary_dict,
    sweep_csv,
    sweep_long_csv,
    sweep_summary_csv,
    threshold_sweep,
    write_json,
    write_text,
)
from .mobility import write_snapshots
from .trust_zone import write_jsonl

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_SELF_CHECK = 4

log = logging.getLogger("tzsim")


class UsageError(ValueError):
    pass


def _csv_list(text: str, convert, what: str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError(f"--{what} needs at least one value")
    try:
        return [convert(t) for t in items]
    except ValueError as exc:
        raise UsageError(f"--{what}: {exc}") from None


def _threshold(text: str) -> float | None:
    if text == "disabled":
        return None
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"threshold {text} outside [0, 1]")
    return value


def _out_dir(args, cfg: ScenarioConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.output.dir if cfg is not None else "out")


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps(echo_config(cfg), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = _out_dir(args, cfg)
    result = run_experiment(cfg, cfg.seed)
    write_json(out / "resolved_config.json", echo_config(cfg))
    write_text(out / "series.csv", series_csv(result.metrics))
    write_json(out / "summary.json", summary_dict(result, cfg))
    write_jsonl(out / "audit.jsonl", result.trust_zone.central_log + result.trust_zone.audit_buffer)
    write_json(out / "motion_model.json", result.model.to_dict())
    write_snapshots(out / "final_world.csv", [result.world])
    m = result.metrics
    log.info("seed %d: %d CSSO reports, %d sync units -> %s", cfg.seed, m.csso_reports_total, m.sync_traffic_total, out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    thresholds = _csv_list(args.thresholds, _threshold, "thresholds") if args.thresholds is not None else list(cfg.sync.thresholds)
    seeds = _csv_list(args.seeds, int, "seeds") if args.seeds is not None else [cfg.seed]
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    try:
        rows = threshold_sweep(cfg, seeds, thresholds, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args, cfg)
    unit = cfg.sync.traffic_unit
    doc = echo_config(cfg)
    doc["derived"]["sweep"] = {"seeds": seeds, "thresholds": ["disabled" if t is None else t for t in thresholds]}
    write_json(out / "resolved_config.json", doc)
    write_text(out / "sweep.csv", sweep_csv(rows, unit))
    write_text(out / "sweep_long.csv", sweep_long_csv(rows, unit))
    write_text(out / "sweep_summary.csv", sweep_summary_csv(rows, unit))
    if args.self_check:
        problems = monotonicity_violations(rows)
        if problems:
            for p in problems:
                print(f"self-check: {p}", file=sys.stderr)
            return EXIT_SELF_CHECK
    return EXIT_OK


def cmd_fit_chain(args) -> int:
    try:
        states = read_log(args.log)
    except OSError as exc:
        raise UsageError(f"cannot read {args.log}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"{args.log}: {exc}") from None
    if args.smoothing < 0:
        raise UsageError("--smoothing must be >= 0")
    try:
        chain = fit_chain(states, args.smoothing)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = validate_chain(chain, strict=False)
    if not result:
        raise RuntimeError(f"fitted chain failed validation: {result.message}")
    out = Path(args.out) if args.out else Path("out")
    out.mkdir(parents=True, exist_ok=True)
    chain.dump(out / "chain.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tzsim", description="Trust Zone edge-cloud reliability simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=False):
        p.add_argument("--config", help="scenario JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: config output.dir)")
        if seeds:
            p.add_argument("--thresholds", help="comma list, e.g. disabled,0.2,0.05")
            p.add_argument("--seeds", help="comma list of seeds, e.g. 0,1,2")
            p.add_argument("--self-check", action="store_true", help="exit 4 if a seed breaks monotonicity")
            p.add_argument("--workers", type=int, default=1, help="parallel seed workers")

    p = sub.add_parser("simulate", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="threshold sweep under common random numbers")
    common(p, seeds=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit-chain", help="fit a transition matrix from a state log")
    p.add_argument("log", help="text file, one state index (1-9) per line")
    p.add_argument("--smoothing", type=float, default=0.0, help="pseudo-count on permitted transitions")
    p.add_argument("--out", help="output directory for chain.json (default: out)")
    p.set_defaults(func=cmd_fit_chain)

    p = sub.add_parser("validate", help="resolve and validate a config, print it")
    p.add_argument("--config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
