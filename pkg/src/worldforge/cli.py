"""worldforge command line: generate, eval, validate.

Exit codes: 0 success, 1 validation failure, 2 partial scene failures,
3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import pipeline


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="job config file (YAML or JSON)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY.PATH=VALUE",
                   help="override a config field, e.g. recipe.pile.body_count=20")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worldforge",
        description="Procedural synthetic-scene generator with ground-truth annotations")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset from a job config")
    _add_config_args(gen)
    gen.add_argument("--resume", action="store_true",
                     help="skip scenes already completed in the manifest")

    ev = sub.add_parser("eval", help="mean end-point error between two flow trees")
    ev.add_argument("--pred", required=True, help="directory of predicted .flo files")
    ev.add_argument("--gt", required=True, help="directory of ground-truth .flo files")
    ev.add_argument("--out", help="optional path for the JSON report")

    val = sub.add_parser("validate", help="validate a job config and exit")
    _add_config_args(val)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("generate", "validate"):
        try:
            cfg = pipeline.load_config(args.config, args.overrides)
        except pipeline.ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        if args.command == "validate":
            print("config ok")
            return 0
        try:
            manifest = pipeline.run_generate(cfg, resume=args.resume)
        except OSError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return 3
        failed = [s for s in manifest["scenes"] if s["status"] != "ok"]
        for s in manifest["scenes"]:
            line = f"scene {s['index']:4d}  {s['status']}"
            if s["status"] != "ok":
                line += f"  ({s.get('error', 'unknown error')})"
            print(line)
        print(f"{len(manifest['scenes']) - len(failed)}/{len(manifest['scenes'])} "
              f"scenes ok -> {cfg.output_root}")
        return 2 if failed else 0

    # eval
    try:
        report = pipeline.run_eval(args.pred, args.gt)
    except pipeline.MissingPair as exc:
        print(f"missing pair: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    for row in report["pairs"]:
        print(f"{row['frame']}: epe {row['epe']:.6f}")
    print(f"mean epe over {report['count']} frames: {report['mean_epe']:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
