"""statenet command line: generate traces, run experiments, check acceptance, inspect inputs.

Exit codes: 0 success, 1 usage or configuration error, 2 an acceptance
threshold was missed.  Tables go to ``--out-dir``, else ``$STATENET_OUT``,
else ``./out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import AXES, ConfigError, load_spec, spec_from_dict, tomllib
from .workload.generator import CalibrationError, TraceParams, gen_trace, trace_statistics
from .workload.trace import TraceParseError, read_trace, write_trace

OUT_ENV = "STATENET_OUT"

GROUPS = {
    "search": ("search-iterations",),
    "bandwidth": ("bandwidth-vs-prefix", "bandwidth-vs-cache", "verkle-bandwidth"),
    "latency": ("propagation-latency",),
    "storage": ("storage-savings",),
    "protocol": ("protocol-convergence",),
}


class UsageError(Exception):
    pass


def out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get(OUT_ENV) or "out")


def _values(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            out.append(int(part))
        except ValueError:
            out.append(float(part))
    return out


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _flag_dict(args, group: str) -> dict:
    """Spec fields given on the command line (only those actually set)."""
    d: dict = {"sim": {}, "trace": {}, "options": {}}
    kind = args.kind or GROUPS[group][0]
    d["kind"] = kind
    if args.name:
        d["name"] = args.name
    for flag, key in (("seed", "seed"), ("nodes", "nodes"), ("k", "k"), ("fanout", "fanout"), ("alpha", "alpha"), ("width", "width"), ("mode", "mode")):
        v = getattr(args, flag)
        if v is not None:
            d["sim"][key] = v
    if args.prefix_len is not None:
        d["sim"]["prefix_lens"] = args.prefix_len
    if args.trace:
        d["trace"]["file"] = args.trace
    if args.trace_seed is not None:
        d["trace"]["seed"] = args.trace_seed
    for opt in args.option or []:
        if "=" not in opt:
            raise UsageError(f"--option expects key=value, got {opt!r}")
        k, v = opt.split("=", 1)
        d["options"][k] = json.loads(v) if v[:1] in "0123456789-[{tf" else v
    if args.axis or args.values:
        d["sweep"] = {"axis": args.axis or AXES[kind][0], "values": _values(args.values) if args.values else []}
    return d


def cmd_run(args) -> int:
    from .acceptance import run_all
    from .experiments import run_experiment

    if args.group == "all-acceptance":
        dest = out_dir(args)
        results = run_all(progress=lambda r: print(r.line, flush=True))
        for r in results:
            for name, text in r.outputs.items():
                dest.mkdir(parents=True, exist_ok=True)
                suffix = "" if "." in name else (".csv" if text.startswith("#") else ".json")
                (dest / f"{name}{suffix}").write_text(text)
        summary = {str(r.number): {"passed": r.passed, "detail": r.detail, "seconds": round(r.seconds, 1)} for r in results}
        dest.mkdir(parents=True, exist_ok=True)
        (dest / "acceptance.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        failed = [r.number for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
        return 2 if failed else 0

    d = _flag_dict(args, args.group)
    base = None
    if args.config:
        load_spec(args.config)  # validates the file on its own
        base = Path(args.config).parent
        d = _merge(d, tomllib.loads(Path(args.config).read_text()))
    if "sweep" not in d or not d["sweep"].get("values"):
        raise UsageError("give --values (and optionally --axis) or a --config with a [sweep] table")
    spec = spec_from_dict({k: v for k, v in d.items() if v != {} or k == "sim"}, base)
    if spec.kind not in GROUPS[args.group]:
        raise UsageError(f"'run {args.group}' cannot run a {spec.kind} experiment")
    table = run_experiment(spec)
    csv_path, man = table.write(out_dir(args))
    sys.stdout.write(table.to_csv())
    print(f"wrote {csv_path} and {man}", file=sys.stderr)
    return 0


def cmd_gen_trace(args) -> int:
    params = TraceParams(
        width=args.width,
        accounts=args.accounts,
        blocks=args.blocks,
        txs_per_block=args.txs_per_block,
        **({"low_touch_target": None} if args.no_locality_check else {}),
    )
    trace, report = gen_trace(params, args.seed)
    dest = Path(args.output) if args.output else out_dir(args) / "trace.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, dest)
    print(json.dumps({"path": str(dest), "ops": len(trace), **report.__dict__}, indent=2, sort_keys=True, default=float))
    return 0


def cmd_inspect(args) -> int:
    if args.what == "trace":
        trace = read_trace(args.path)
        stats = trace_statistics(trace)
        print(json.dumps({"width": trace.width, "ops": len(trace), "blocks": trace.n_blocks, **stats}, indent=2, sort_keys=True))
    else:
        spec = load_spec(args.path)
        print(json.dumps({"digest": spec.digest(), **spec.to_dict()}, indent=2, sort_keys=True, default=list))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="statenet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"statenet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="generate a calibrated synthetic access trace")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--accounts", type=int, default=TraceParams.accounts)
    g.add_argument("--blocks", type=int, default=TraceParams.blocks)
    g.add_argument("--txs-per-block", type=int, default=TraceParams.txs_per_block)
    g.add_argument("--no-locality-check", action="store_true", help="skip the low-touch calibration target (small traces)")
    g.add_argument("-o", "--output", help="trace file (default: <out-dir>/trace.csv)")
    g.add_argument("--out-dir")
    g.set_defaults(func=cmd_gen_trace)

    r = sub.add_parser("run", help="run an experiment or the whole acceptance suite")
    r.add_argument("group", choices=[*GROUPS, "all-acceptance"])
    r.add_argument("-c", "--config", help="experiment TOML; its values override flags")
    r.add_argument("--kind", choices=sorted(AXES), help="experiment kind within the group")
    r.add_argument("--name")
    r.add_argument("--axis")
    r.add_argument("--values", help="comma-separated sweep values")
    r.add_argument("--seed", type=int)
    r.add_argument("--nodes", type=int)
    r.add_argument("--k", type=int)
    r.add_argument("--fanout", type=int)
    r.add_argument("--alpha", type=int)
    r.add_argument("--width", type=int)
    r.add_argument("--prefix-len", type=int)
    r.add_argument("--mode", choices=["merkle", "verkle"])
    r.add_argument("--trace", help="trace file instead of generated workload")
    r.add_argument("--trace-seed", type=int)
    r.add_argument("--option", action="append", metavar="KEY=VALUE", help="experiment option (repeatable)")
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("inspect", help="summarize a trace file or an experiment config")
    i.add_argument("what", choices=["trace", "config"])
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.func(args)
    except (UsageError, ConfigError, CalibrationError, TraceParseError, FileNotFoundError) as e:
        print(f"statenet: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
