"""Command line: ``lightcone {build,verify,run,fit,threshold}``.

Exit codes: 0 success, 1 a hard verification check failed, 2 invalid config or
arguments, 3 memory budget exceeded, 4 the cone would leave the position box,
5 malformed trajectory or short fit window.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from lightcone import __version__
from lightcone.budget import BudgetError
from lightcone.config import ConfigError, ExperimentConfig, load_config, preset
from lightcone.io import CSVFormatError, write_json

log = logging.getLogger("lightcone")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_BUDGET, EXIT_CONE, EXIT_FIT = 0, 1, 2, 3, 4, 5


def _configs(args) -> list[ExperimentConfig]:
    if args.preset and args.config:
        raise ConfigError("give either --config or --preset, not both")
    if args.preset:
        return [preset(p) for p in args.preset]
    if not args.config:
        raise ConfigError("--config PATH (or --preset NAME) is required")
    return [load_config(p) for p in args.config]


def _out_dir(args, cfg: ExperimentConfig, many: bool) -> Path:
    base = Path(args.out) if args.out else Path(cfg["io"]["out"])
    return base / cfg["run"]["name"] if many else base


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2, default=str))


def _run_one(cfg_data: dict, out: str) -> dict:
    from lightcone.config import validate
    from lightcone.pipeline import cmd_run

    cfg = validate(cfg_data)
    res = cmd_run(cfg, out)
    keys = ("c", "slope", "decays", "bounded", "expected_fail")
    return {"out": str(res.out), "config_hash": cfg.hash, "files": res.files,
            "decay": [{k: d[k] for k in keys} for d in res.fits["decay"]]}


def do_build(args) -> int:
    from lightcone.pipeline import cmd_build

    cfgs = _configs(args)
    for cfg in cfgs:
        _emit(cmd_build(cfg, _out_dir(args, cfg, len(cfgs) > 1)))
    return EXIT_OK


def do_verify(args) -> int:
    from lightcone.pipeline import cmd_verify

    seed = _configs(args)[0]["seed"] if (args.config or args.preset) else 0
    report = cmd_verify(args.suite, seed)
    data = {"version": __version__, "seed": seed, **report.as_dict()}
    if args.out:
        write_json(Path(args.out) / f"verify_{args.suite}.json", data)
    for c in report.checks:
        flag = "ok  " if c.ok else ("FAIL" if c.hard else "warn")
        print(f"{flag} {c.name}: measured {c.measured:.6g} {c.relation} {c.bound:.6g}")
    print(f"suite {args.suite}: {'passed' if report.passed else 'FAILED'}")
    return EXIT_OK if report.passed else EXIT_CHECK


def do_run(args) -> int:
    cfgs = _configs(args)
    many = len(cfgs) > 1
    jobs = [(cfg.data, str(_out_dir(args, cfg, many))) for cfg in cfgs]
    if many:
        names = [cfg["run"]["name"] for cfg in cfgs]
        if len(set(names)) != len(names):
            raise ConfigError("several configs share a run.name; their outputs would collide")
    if args.jobs > 1 and many:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    _emit(results if many else results[0])
    return EXIT_OK


def do_fit(args) -> int:
    from lightcone.pipeline import cmd_fit

    _emit(cmd_fit(args.trajectory, args.probe, args.out))
    return EXIT_OK


def do_threshold(args) -> int:
    from lightcone.pipeline import cmd_threshold

    cfgs = _configs(args)
    for cfg in cfgs:
        rep = cmd_threshold(cfg, _out_dir(args, cfg, len(cfgs) > 1))
        _emit({"threshold": rep["threshold"], "decay": {k: rep["decay"][k] for k in
                                                          ("weighted_norm_ratio", "tail_slope", "admissible")}})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightcone", description="Photon light-cone numerics.")
    parser.add_argument("--version", action="version", version=f"lightcone {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", action="append", metavar="PATH", help="YAML config (repeatable)")
            p.add_argument("--preset", action="append", metavar="NAME",
                           help="built-in config: free, diagnostic, interacting, tiny (repeatable)")
        p.add_argument("--out", metavar="DIR", help="output directory (default: io.out of the config)")

    p = sub.add_parser("build", help="assemble operators and export them as COO text")
    common(p)
    p.set_defaults(func=do_build)

    p = sub.add_parser("verify", help="run a verification suite")
    common(p)
    p.add_argument("--suite", default="all", choices=["fock", "grid", "model", "all"])
    p.set_defaults(func=do_verify)

    p = sub.add_parser("run", help="propagate, probe and fit")
    common(p)
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel runs when several configs are given")
    p.set_defaults(func=do_run)

    p = sub.add_parser("fit", help="replay the fits from a persisted trajectory")
    p.add_argument("trajectory", help="trajectory CSV")
    p.add_argument("probe", help="probe JSON written by run")
    common(p, config=False)
    p.set_defaults(func=do_fit)

    p = sub.add_parser("threshold", help="ionisation-threshold ladder and decay report")
    common(p)
    p.set_defaults(func=do_threshold)
    return parser


def main(argv=None) -> int:
    from lightcone.pipeline import ConeBoxError
    from lightcone.probe import ProbeError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ConeBoxError as exc:
        print(f"cone outside box: {exc}", file=sys.stderr)
        return EXIT_CONE
    except (CSVFormatError, ProbeError) as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
