"""``dsent`` command line.

Exit codes: 0 clean, 1 alerts found, 2 input error, 3 training error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .anomaly import LabeledAttackInBaseline, TooShort, train_baseline
from .config import ConfigError, load_config
from .pipeline import dumps_alerts, run
from .report import render_report
from .signatures import SignatureError, load_signatures
from .simulate import InvalidSpec, dumps_manifest, load_scenario, simulate
from .trace import TraceError, load_trace, write_trace

EXIT_CLEAN, EXIT_ALERTS, EXIT_INPUT, EXIT_TRAIN = 0, 1, 2, 3

log = logging.getLogger("dhcp_sentinel")


def _err(msg: str) -> None:
    print(f"dsent: {msg}", file=sys.stderr)


def _read_trace(path: str):
    with open(path, encoding="utf-8") as fh:
        return load_trace(fh)


def cmd_simulate(args) -> int:
    try:
        with open(args.spec, "rb") as fh:
            spec = load_scenario(fh)
        if args.seed is not None:
            from dataclasses import replace
            spec = replace(spec, seed=args.seed)
        trace = simulate(spec)
    except (OSError, InvalidSpec) as exc:
        _err(f"scenario: {exc}")
        return EXIT_INPUT
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        write_trace(trace, fh)
    manifest_path = out.with_name(out.name + ".manifest.json")
    manifest_path.write_text(dumps_manifest(spec, trace), encoding="utf-8")
    print(f"wrote {len(trace)} events to {out} (manifest {manifest_path})")
    return EXIT_CLEAN


def cmd_train(args) -> int:
    try:
        trace = _read_trace(args.benign_trace)
    except (OSError, TraceError) as exc:
        _err(f"trace: {exc}")
        return EXIT_INPUT
    try:
        model = train_baseline(trace, args.window, args.k_sigma)
    except LabeledAttackInBaseline as exc:
        _err(f"LabeledAttackInBaseline: {exc}")
        return EXIT_TRAIN
    except TooShort as exc:
        _err(f"TooShort: {exc}")
        return EXIT_TRAIN
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INPUT
    Path(args.out_model).write_text(model.dumps(), encoding="utf-8")
    print(f"trained on {len(trace)} events; model written to {args.out_model}")
    return EXIT_CLEAN


def cmd_analyze(args) -> int:
    try:
        config = load_config(args.config)
        trace = _read_trace(args.trace)
    except (OSError, TraceError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    result = run(trace, config)
    fmt = args.format or config.report_format
    rendered = render_report(result.report, fmt)
    if args.alerts_out:
        with open(args.alerts_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_alerts(result.alerts))
    if args.report_out:
        Path(args.report_out).write_bytes(rendered)
    else:
        sys.stdout.write(rendered.decode("utf-8"))
    return EXIT_ALERTS if result.alerts else EXIT_CLEAN


def cmd_rules(args) -> int:
    try:
        with open(args.signature_file, "rb") as fh:
            db = load_signatures(fh)
    except OSError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except SignatureError as exc:
        _err(f"{args.signature_file}: {exc}")
        return EXIT_INPUT
    for sig_id in db.ids:
        print(sig_id)
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsent", description="rogue-DHCP-aware multi-layer IDS")
    p.add_argument("-v", "--verbose", action="store_true", help="log safe-offer forwarding and debug detail")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a labeled trace from a scenario file")
    s.add_argument("spec")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="learn pick-detect thresholds from a benign trace")
    t.add_argument("benign_trace")
    t.add_argument("out_model")
    t.add_argument("--window", type=float, default=5.0, help="window length in seconds")
    t.add_argument("--k-sigma", type=float, default=3.0, dest="k_sigma")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="run the detection pipeline over a trace")
    a.add_argument("trace")
    a.add_argument("--config", default=None, help="config file (default: $DSENT_CONFIG or built-in)")
    a.add_argument("--alerts-out", default=None)
    a.add_argument("--report-out", default=None)
    a.add_argument("--format", choices=("text", "json"), default=None)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("rules", help="signature database tools")
    rsub = r.add_subparsers(dest="rules_command", required=True)
    v = rsub.add_parser("validate", help="check a signature file and list the resulting ids")
    v.add_argument("signature_file")
    v.set_defaults(func=cmd_rules)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_CLEAN
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
