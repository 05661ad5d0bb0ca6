"""Command-line entry point: run, check, plot and describe scenarios.

Exit codes: 0 all asserted diagnostics pass, 1 a diagnostic failed,
2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import yaml

from .config import ConfigError, bundled_names, read_scenario_text, parse_config
from .plots import emit_plots
from .runner import execute, run_scenario, write_json

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("spinhydro")


def _error_report(exc: BaseException, code: int, out_dir: Path | None) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("key", "line", "time", "position"):
        value = getattr(exc, attr, None)
        if value is not None:
            doc[attr] = value.tolist() if hasattr(value, "tolist") else value
    if code == EXIT_RUNTIME and log.isEnabledFor(logging.INFO):
        doc["traceback"] = traceback.format_exception(type(exc), exc, exc.__traceback__)
    print(json.dumps(doc, indent=2, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            write_json(doc, out_dir / "error.json")
        except OSError:
            pass
    return code


def _load(ref: str):
    text, source = read_scenario_text(ref)
    return parse_config(text), source


def _summary_line(name: str, d: dict) -> str:
    status = {True: "pass", False: "FAIL", None: "info"}[d["pass"]]
    op = ">=" if d["compare"] == "min" else "<="
    return f"  {status:4s}  {name:22s} {d['value']:.3e}  ({op} {d['tol']:.1e})"


def cmd_run(args) -> int:
    cfg, source = _load(args.config)
    out = Path(args.out or cfg.output["dir"])
    try:
        res = run_scenario(cfg, out, args.workers, source)
    except Exception as exc:
        return _error_report(exc, EXIT_RUNTIME, out)
    print(f"{cfg.name}: {'PASS' if res.passed else 'FAIL'}  -> {out}")
    for name, d in res.diagnostics.items():
        print(_summary_line(name, d))
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_check(args) -> int:
    cfg, _ = _load(args.config)
    try:
        res = execute(cfg, args.workers or 1, identities_only=True)
    except Exception as exc:
        return _error_report(exc, EXIT_RUNTIME, None)
    print(json.dumps(json.loads(json.dumps(res.report(), default=float)), indent=2, sort_keys=True))
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_plot(args) -> int:
    out = Path(args.out_dir)
    try:
        written = emit_plots(out, args.dest)
    except Exception as exc:
        return _error_report(exc, EXIT_RUNTIME, None)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_describe(args) -> int:
    if args.config is None:
        for name in bundled_names():
            print(name)
        return EXIT_OK
    cfg, source = _load(args.config)
    doc = cfg.resolved()
    doc["config_hash"] = cfg.config_hash()
    print(f"# source: {source}")
    print(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinhydro",
        description="Spin-augmented quantum hydrodynamics scenarios.",
        epilog="bundled scenarios: " + ", ".join(bundled_names()),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evolve a scenario and write all outputs")
    p.add_argument("config", help="YAML file or bundled scenario name")
    p.add_argument("--out", help="output directory (default from the config)")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="identity diagnostics only; prints the report as JSON")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="column files and SVGs from a finished run directory")
    p.add_argument("out_dir")
    p.add_argument("--dest", help="where to write (default OUT_DIR/plots)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("describe", help="print the resolved config, or list bundled scenarios")
    p.add_argument("config", nargs="?")
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error_report(exc, EXIT_CONFIG, out)
    except Exception as exc:
        return _error_report(exc, EXIT_RUNTIME, out)


if __name__ == "__main__":
    sys.exit(main())
