"""``trapscope`` command-line interface."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, synth
from .errors import ConfigurationError, StageError, TrapscopeError, ValidationError
from .panel import load_panel
from .pipeline import RunConfig, canonical_json, compare_countries, comparison_csv, run_pipeline
from .states import fit_dimension

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2, 3


def _years(text):
    try:
        a, b = text.split(":")
        return [int(a), int(b)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected START:END, got {text!r}") from exc


def _csv_list(cast):
    def parse(text):
        return [cast(x) for x in text.split(",") if x.strip()]
    return parse


def _load_configs(path) -> list[dict]:
    """A config file holds one run, a list of runs, or ``{"countries": [...], ...shared}``."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict) and "countries" in data:
        shared = {k: v for k, v in data.items() if k != "countries"}
        runs = [{**shared, **c} for c in data["countries"]]
    elif isinstance(data, list):
        runs = data
    else:
        runs = [data]
    for r in runs:
        r.setdefault("base_dir", str(path.parent))
    return runs


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if getattr(args, "input", None):
        cfg["input"] = args.input
    if getattr(args, "schema", None):
        cfg["schema"] = json.loads(Path(args.schema).read_text(encoding="utf-8"))
    if getattr(args, "country", None):
        cfg["country"] = args.country
    if getattr(args, "state_space", None):
        cfg["state_space"] = args.state_space
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "dims", None):
        by_name = {d["name"]: d for d in cfg.get("dimensions", [])}
        cfg["dimensions"] = [by_name.get(n, {"name": n, **_default_binning(n)}) for n in args.dims]
    periods = dict(cfg.get("periods", {}))
    if getattr(args, "pre", None):
        periods = {"pre": args.pre, **{k: v for k, v in periods.items() if k != "pre"}}
    if getattr(args, "during", None):
        periods["during"] = args.during
    if periods:
        cfg["periods"] = periods
    if getattr(args, "period", None):
        if args.period not in cfg.get("periods", {}):
            raise ValidationError("period", f"unknown period {args.period!r}")
        cfg["periods"] = {args.period: cfg["periods"][args.period]}
    params = dict(cfg.get("parameters", {}))
    for name, key in (("epsilon", "epsilon"), ("rate", "k"), ("norm", "norm"), ("eta", "eta"), ("order", "order"),
                      ("horizon", "horizon"), ("percentile", "percentile"), ("boosts", "boosts"),
                      ("bootstrap", "bootstrap_replicates"), ("connectivity", "connectivity"),
                      ("weighting", "weighting"), ("escape_horizon", "escape_horizon")):
        value = getattr(args, name, None)
        if value is not None:
            params[key] = value
    cfg["parameters"] = params
    return cfg


def _default_binning(name):
    if name == "health":
        return {"binning": "ordinal", "levels": [1, 2, 3, 4, 5]}
    if name == "education":
        return {"binning": "ordinal"}
    return {"binning": "percentile", "k": 5}


def _selected(args) -> list[dict]:
    runs = _load_configs(args.config) if args.config else [{}]
    if getattr(args, "countries", None) and args.countries != "all":
        wanted = set(args.countries.split(","))
        runs = [r for r in runs if r.get("country") in wanted]
        if not runs:
            raise ValidationError("countries", f"no configured country in {sorted(wanted)}")
    return [_apply_overrides(r, args) for r in runs]


def _run_stages(args, stages):
    written = []
    for cfg in _selected(args):
        cfg["stages"] = stages
        config = RunConfig.from_dict(cfg)
        out = Path(args.out) if args.out else config.resolve(config.out)
        single_csv = out.suffix == ".csv"
        artifacts = run_pipeline(config, out_dir=out.parent if single_csv else out, write=not single_csv)
        if single_csv:
            name = f"{stages[0]}.csv"
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(artifacts.get(name, ""), encoding="utf-8")
            written.append(str(out))
        else:
            written += [str(out / config.country / n) for n in sorted(artifacts)]
        if len(stages) == 1 and args.print:
            sys.stdout.write(artifacts[f"{stages[0]}.json"])
    # with --print stdout carries only the artifact
    return None if getattr(args, "print", False) and len(stages) == 1 else {"written": written}


def cmd_stage(args):
    return _run_stages(args, [args.command])


def cmd_run(args):
    stages = None
    results = []
    for cfg in _selected(args):
        config = RunConfig.from_dict(cfg)
        stages = config.stages
        out = Path(args.out) if args.out else config.resolve(config.out)
        artifacts = run_pipeline(config, out_dir=out)
        results += [str(out / config.country / n) for n in sorted(artifacts)]
    return {"written": results, "stages": stages}


def cmd_bins(args):
    if args.input and not args.config:
        panel, _ = load_panel(args.input, {"dimensions": [args.dim]})
        sample = [o.values[args.dim] for o in panel.observations if o.is_complete([args.dim])]
        spec = fit_dimension(sample, args.dim, args.mode, args.k)
        body = {"dimension": spec.to_dict(), "observations": len(sample)}
        text = canonical_json(body)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text, encoding="utf-8")
        sys.stdout.write(text)
        return None
    args.dims = args.dims or [args.dim]
    return _run_stages(args, ["bins"])


def cmd_synth(args):
    if args.fixture:
        path = synth.write_fixture(args.out)
        return {"written": [str(path)]}
    P, space, order = synth.build_kernel(args.kernel, k=args.k, seed=args.seed, depth=args.depth)
    spec = synth.SynthSpec(space=space, P=P, households=args.households, waves=args.waves, seed=args.seed,
                           start_year=args.start_year, missingness=args.missingness, order=order)
    panel, truth = synth.generate_panel(spec)
    path = synth.write_synth(args.out or ".", panel, truth, name=args.name)
    return {"written": [str(path)], "transitions": len(truth.transition_log())}


def cmd_compare(args):
    runs = _selected(args)
    deprivation = json.loads(Path(args.deprivation).read_text(encoding="utf-8")) if args.deprivation else None
    rows = compare_countries(runs, deprivation=deprivation, workers=args.workers)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.json").write_text(canonical_json({"version": __version__, "rows": rows}), encoding="utf-8")
    (out / "compare.csv").write_text(comparison_csv(rows), encoding="utf-8")
    return {"written": [str(out / "compare.json"), str(out / "compare.csv")], "countries": len(rows)}


def _common(p, stage=True):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--input", help="panel CSV (overrides the config)")
    p.add_argument("--schema", help="JSON column mapping")
    p.add_argument("--country", help="country code used for the output directory")
    p.add_argument("--countries", help="comma-separated codes from a multi-country config, or 'all'")
    p.add_argument("--state-space", dest="state_space", help="saved state-space JSON to reuse")
    p.add_argument("--dims", type=_csv_list(str), help="comma-separated dimension names")
    p.add_argument("--pre", type=_years, help="pre-shock window START:END")
    p.add_argument("--during", type=_years, help="shock window START:END")
    p.add_argument("--period", help="restrict to one configured period label")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (or a .csv path for a single grid)")
    if stage:
        p.add_argument("--print", action="store_true", help="also print the JSON artifact")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trapscope", description=__doc__)
    parser.add_argument("--version", action="version", version=f"trapscope {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a panel")
    _common(p)
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("bins", help="fit bin edges")
    _common(p)
    p.add_argument("--dim", default="income")
    p.add_argument("--mode", default="percentile", choices=["equidistant", "percentile", "ordinal"])
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_bins)

    p = sub.add_parser("estimate", help="estimate transition matrices")
    _common(p)
    p.add_argument("--order", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 disables)")
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("landscape", help="potential landscape, fixed points, basins, curl")
    _common(p)
    p.add_argument("--connectivity", type=int, choices=[4, 8])
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("metrics", help="mixing time, Shorrocks, entropy rate, MFPT")
    _common(p)
    p.add_argument("--all", action="store_true", help="report every metric (the default)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--rate", type=float, help="transform rate k")
    p.add_argument("--norm", choices=["tv", "l1", "l2"])
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("escape", help="escape time from the lowest-welfare states")
    _common(p)
    p.add_argument("--from", dest="from_set", default="lowest", choices=["lowest"])
    p.add_argument("--to", dest="to_set", default="complement", choices=["complement"])
    p.add_argument("--horizon", dest="escape_horizon", type=int)
    p.add_argument("--weighting", choices=["stationary", "uniform"])
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("shock", help="recovery time, MFPT ratio and net mobility change")
    _common(p)
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("intervene", help="intervention arms and retention curves")
    _common(p)
    p.add_argument("--percentile", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--boosts", type=_csv_list(float))
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("run", help="run the stages listed in a config")
    _common(p, stage=False)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="cross-country summary table")
    _common(p, stage=False)
    p.add_argument("--deprivation", help="JSON map of country code to external deprivation rate")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic panel")
    p.add_argument("--kernel", default="double-well",
                   choices=["random-stochastic", "double-well", "factorized", "interaction", "order-2"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--households", type=int, default=1000)
    p.add_argument("--waves", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-year", dest="start_year", type=int, default=2010)
    p.add_argument("--missingness", type=float, default=0.0)
    p.add_argument("--depth", type=float, default=2.0)
    p.add_argument("--name", default="panel")
    p.add_argument("--fixture", action="store_true", help="regenerate the bundled fixture instead")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def _error(exc, code):
    body = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, StageError):
        body["stage"] = exc.stage
        body["cause"] = type(exc.cause).__name__
    if isinstance(exc, ValidationError):
        body["field"] = exc.field
    sys.stderr.write(json.dumps(body, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command not in ("synth",) and not args.config and not getattr(args, "input", None):
            raise ValidationError("input", "pass --config or --input")
        result = args.func(args)
    except ConfigurationError as exc:
        return _error(exc, EXIT_CONFIG)
    except StageError as exc:
        return _error(exc, EXIT_STAGE)
    except (TrapscopeError, OSError, ValueError, KeyError) as exc:
        return _error(exc, EXIT_FAILURE)
    if result is not None:
        sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
