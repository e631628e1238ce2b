"""Command-line entry point: ``fedstat <command> [options]``.

Exit codes: 0 success, 1 other library error, 2 input/parse error,
3 privacy precondition (a group too small for k), 4 refused privacy-violating
method, 5 failed audit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import warnings
from pathlib import Path

from .binning import DEFAULT_K, ExtremePolicy, GroupedSample
from .errors import FedStatError, InsufficientData, PrivacyViolation
from .join import ReleaseTranscript, audit_transcript
from .ranktests import mwu_combined
from .runtime import make_federation, run_mwu_protocol, run_quantile_protocol, run_table_protocol
from . import simulation as sim

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_PRIVACY, EXIT_FORBIDDEN, EXIT_AUDIT = 0, 1, 2, 3, 4, 5


class InputError(Exception):
    pass


def version_string() -> str:
    from . import __version__

    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


# --- input ---------------------------------------------------------------


def read_dataset(path: str):
    """Rows ``center, [group,] value`` -> list of GroupedSample in first-seen order.

    Without a ``group`` column every value goes to ``x``.
    """
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as e:
        raise InputError(str(e)) from e
    with fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "center" not in cols or "value" not in cols:
            raise InputError("input needs 'center' and 'value' columns")
        has_group = "group" in cols
        data = {}
        for line, row in enumerate(reader, start=2):
            try:
                v = float(row["value"])
            except (TypeError, ValueError):
                raise InputError(f"line {line}: cannot parse value {row['value']!r}") from None
            if not math.isfinite(v):
                raise InputError(f"line {line}: non-finite value")
            g = row["group"].strip() if has_group else "x"
            if g not in ("x", "y"):
                raise InputError(f"line {line}: group must be x or y, got {g!r}")
            data.setdefault(row["center"].strip(), {"x": [], "y": []})[g].append(v)
    if not data:
        raise InputError("input has no rows")
    return [GroupedSample(d["x"], d["y"], cid) for cid, d in data.items()]


def _policy(args) -> ExtremePolicy:
    return ExtremePolicy(args.policy, args.low, args.high)


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(args, coord, release=None):
    if not args.dump_transcript:
        return
    doc = {"k": coord.k, "messages": coord.wire_log()}
    if release is not None:
        doc["transcript"] = release.to_list()
    Path(args.dump_transcript).write_text(json.dumps(doc, indent=1) + "\n")


# --- commands ------------------------------------------------------------


def cmd_build_table(args):
    centers = read_dataset(args.input)
    coord = make_federation(centers, args.k, args.seed)
    res = run_table_protocol(coord, _policy(args), order=args.order)
    _dump(args, coord, res.transcript)
    if args.format == "csv":
        text = res.table.to_csv()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        _emit(res.table.to_dict(), args.out)
    return EXIT_OK


def cmd_test(args):
    centers = read_dataset(args.input)
    if args.method == "combined":
        res = mwu_combined(centers, args.sided)
        _emit(res.to_dict(), args.out)
        return EXIT_OK
    coord = make_federation(centers, args.k, args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_mwu_protocol(coord, args.method, args.sided, _policy(args))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _dump(args, coord)
    _emit(res.to_dict(), args.out)
    return EXIT_OK


def cmd_quantiles(args):
    centers = read_dataset(args.input)
    coord = make_federation(centers, args.k, args.seed,
                            forbid_privacy_violating=args.forbid_privacy_violating)
    est, extra = run_quantile_protocol(coord, args.method, args.p, args.group, _policy(args))
    doc = {"method": args.method, "group": args.group, "estimates": []}
    for e in est:
        d = e.to_dict()
        if math.isinf(d["value"]):
            d["value"] = "+inf" if d["value"] > 0 else "-inf"
        doc["estimates"].append(d)
    fit = extra[0] if isinstance(extra, tuple) else extra
    if fit is not None:
        doc["fit"] = {"lambda": fit.lmbda, "location": fit.location, "scale": fit.scale,
                      "at_boundary": fit.at_boundary}
    release = extra[1].transcript if isinstance(extra, tuple) else None
    _dump(args, coord, release)
    _emit(doc, args.out)
    return EXIT_OK


def _load_config(path, seed):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read config: {e}") from e
    if seed is not None:
        cfg["seed"] = seed
    try:
        return sim.config_from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise InputError(f"bad config: {e}") from e


def _write_sim(out, cfg, records, summary):
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "records.csv").write_text(sim.records_csv(records))
    (d / "summary.csv").write_text(sim.summary_csv(summary))
    meta = {"seed": cfg.seed, "version": version_string(), "config": sim.config_to_dict(cfg)}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_simulate_tests(args):
    cfg = _load_config(args.config, args.seed)
    if not isinstance(cfg, sim.TestSimConfig):
        raise InputError("config is not a testing config")
    recs = sim.run_testing_experiment(cfg, args.threads)
    _write_sim(args.out, cfg, recs, sim.summarize_pvalues(recs))
    return EXIT_OK


def cmd_simulate_quantiles(args):
    cfg = _load_config(args.config, args.seed)
    if not isinstance(cfg, sim.GammaSimConfig):
        raise InputError("config is not a quantile (Gamma) config")
    recs = sim.run_quantile_experiment(cfg, args.threads)
    _write_sim(args.out, cfg, recs, sim.summarize(recs, cfg.r, cfg.L))
    return EXIT_OK


def cmd_audit(args):
    try:
        doc = json.loads(Path(args.transcript).read_text())
        records = ReleaseTranscript.from_list(doc.get("transcript", []))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise InputError(f"cannot read transcript: {e}") from e
    k = args.k if args.k is not None else int(doc.get("k", DEFAULT_K))
    rep = audit_transcript(records, k)
    _emit({"passed": rep.passed, "k": rep.k, "n_records": rep.n_records,
           "offending": [r.to_dict() for r in rep.offending]}, args.out)
    return EXIT_OK if rep.passed else EXIT_AUDIT


# --- parser --------------------------------------------------------------


def _probs(text):
    try:
        ps = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad probability list {text!r}") from None
    if not ps or any(not 0 < p < 1 for p in ps):
        raise argparse.ArgumentTypeError("probabilities must lie in (0, 1)")
    return ps


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedstat", description="Federated summary statistics.")
    ap.add_argument("--version", action="version", version=f"fedstat {version_string()}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--dump-transcript", metavar="PATH", help="write all wire messages as JSON")
    common.add_argument("--out", help="output file (directory for simulations); default stdout")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, help="CSV with columns center,[group,]value")
    data.add_argument("--k", type=int, default=DEFAULT_K)
    data.add_argument("--policy", choices=("buffer", "infinite", "natural"), default="buffer",
                      help="how the outer table limits are set")
    data.add_argument("--low", type=float, default=-math.inf, help="lower limit for --policy natural")
    data.add_argument("--high", type=float, default=math.inf, help="upper limit for --policy natural")

    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-table", parents=[common, data], help="build the federated summary table")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--order", choices=("size-desc", "given"), default="size-desc",
                   help="join order of the centers")
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("test", parents=[common, data], help="federated Mann-Whitney test")
    p.add_argument("--method", choices=("sum", "weighted", "fisher", "fedtable", "combined"),
                   default="weighted")
    p.add_argument("--sided", choices=("two", "greater", "less"), default="two")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("quantiles", parents=[common, data], help="federated quantile estimates")
    p.add_argument("--method", choices=("loss", "yj-table", "yj-mle", "yj-mle-grid"), default="yj-mle")
    p.add_argument("--p", type=_probs, default=list(sim.PROBS), help="comma-separated levels")
    p.add_argument("--group", choices=("x", "y", "all"), default="x")
    p.add_argument("--forbid-privacy-violating", action="store_true",
                   help="refuse methods that release raw values")
    p.set_defaults(func=cmd_quantiles)

    for name, fn in (("simulate-tests", cmd_simulate_tests), ("simulate-quantiles", cmd_simulate_quantiles)):
        p = sub.add_parser(name, parents=[common], help="Monte-Carlo bench")
        p.add_argument("--config", required=True, help="JSON config")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.set_defaults(func=fn)

    p = sub.add_parser("audit", parents=[common], help="check a dumped transcript for k-anonymity")
    p.add_argument("--transcript", required=True)
    p.add_argument("--k", type=int, default=None, help="override k recorded in the transcript")
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command.startswith("simulate") and not args.out:
        print("error: --out directory is required", file=sys.stderr)
        return EXIT_PARSE
    seed_given = args.seed
    if not args.command.startswith("simulate"):
        args.seed = 0 if seed_given is None else seed_given
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except InsufficientData as e:
        print(f"error: privacy precondition failed: {e}", file=sys.stderr)
        return EXIT_PRIVACY
    except PrivacyViolation as e:
        print(f"error: refused: {e}", file=sys.stderr)
        return EXIT_FORBIDDEN
    except (FedStatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
