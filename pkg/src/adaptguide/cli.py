"""Command-line entry point.

Errors are reported on stderr as one JSON object ``{"error": code, "message": ...}``
and the process exits with the error's status.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .campaign import Campaign, emit_schedule_csv
from .exceptions import AdaptGuideError, ConfigError
from .io import CampaignConfig, load_config, load_structure, write_structure
from .metrics import MetricReport, evaluate_structure

IO_EXIT = 6
USAGE_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("E_USAGE", f"{self.prog}: {message}", USAGE_EXIT)
        sys.exit(USAGE_EXIT)


def _config(args):
    cfg = load_config(args.config) if args.config else CampaignConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_generate(args):
    cfg = _config(args)
    g = cfg.guidance
    theta = (args.alpha if args.alpha is not None else g.alpha,
             args.beta if args.beta is not None else g.beta)
    camp = Campaign(cfg, cfg.output_dir, trace=args.trace)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for j, (state, trace) in enumerate(camp.generate(theta, iteration=0)):
        path = out / f"design{j:02d}.json"
        write_structure(state, path)
        if trace is not None:
            camp._write_trace(0, j, trace)
        rep = evaluate_structure(state, camp.reference, cfg.metrics)
        rows.append({"file": str(path), **rep.as_dict()})
    _write_csv(rows, out / "metrics.csv")
    print(json.dumps({"designs": len(rows), "theta": list(theta), "out": str(out)}))
    return 0


def cmd_campaign(args, resume=False):
    cfg = _config(args)
    records = Campaign(cfg, cfg.output_dir, trace=args.trace).run(resume=resume)
    best = min(records, key=lambda r: r["loss"])
    print(json.dumps({"iterations": len(records), "best_theta": best["theta"],
                      "best_loss": best["loss"], "log": str(Path(cfg.output_dir) / "campaign.jsonl")}))
    return 0


def cmd_metrics(args):
    cfg = load_config(args.config) if args.config else CampaignConfig()
    reference = load_structure(args.reference, cfg.annotations) if args.reference else None
    rows = []
    for f in args.files:
        rep = evaluate_structure(load_structure(f, cfg.annotations), reference, cfg.metrics)
        rows.append({"file": f, **rep.as_dict()})
    if args.out:
        _write_csv(rows, args.out)
    else:
        _write_csv(rows, sys.stdout)
    return 0


def cmd_schedule(args):
    cfg = load_config(args.config) if args.config else CampaignConfig()
    g = cfg.guidance
    params = g.with_shape(args.alpha if args.alpha is not None else g.alpha,
                          args.beta if args.beta is not None else g.beta)
    T = args.T if args.T is not None else cfg.schedule.T
    if T < 2:
        raise ConfigError("T must be at least 2")
    emit_schedule_csv(params, T, args.out or sys.stdout)
    return 0


def _write_csv(rows, dest):
    header = ["file"] + [f.name for f in dataclasses.fields(MetricReport)]
    if hasattr(dest, "write"):
        writer = csv.DictWriter(dest, header, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return
    with open(dest, "w", newline="") as fh:
        _write_csv(rows, fh)


def build_parser():
    p = _Parser(prog="adaptguide", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=_seed)
        sp.add_argument("--trace", action="store_true", help="write per-step JSON-lines traces")
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("generate", help="sample one batch at a fixed (alpha, beta)")
    common(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=float)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("campaign", help="run the full optimisation loop")
    common(sp)
    sp.set_defaults(func=cmd_campaign)

    sp = sub.add_parser("resume", help="continue a campaign from its log")
    common(sp)
    sp.set_defaults(func=lambda a: cmd_campaign(a, resume=True))

    sp = sub.add_parser("metrics", help="score structure files, one CSV row each")
    sp.add_argument("files", nargs="+")
    sp.add_argument("--config")
    sp.add_argument("--reference", help="reference structure for RMSD")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("schedule", help="emit the temporal profile as CSV")
    sp.add_argument("--config")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--T", type=int)
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_schedule)
    return p


def _fail(code, message, status):
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AdaptGuideError as exc:
        return _fail(exc.code, str(exc), exc.exit_status)
    except OSError as exc:
        return _fail("E_IO", str(exc), IO_EXIT)


if __name__ == "__main__":
    sys.exit(main())
