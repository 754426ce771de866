"""Command-line entry point: ``pve-infer infer`` and ``pve-infer simulate``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys

import numpy as np

from .core import NoiseModel, as_data_matrix, center_reduce, compute_svd, sample_pve
from .distributions import estimate_sigma2
from .errors import DimensionError, PveInferError
from .inference import InferenceReport, analyze
from .selection import DEFAULT_GRID_SIZE
from .simulate import EXPERIMENTS, SimConfig, run_experiment

SCHEMA_VERSION = "1.0"

_NUM = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

_interval = {
    "type": "array",
    "items": {"type": ["number", "null"]},
    "minItems": 2,
    "maxItems": 2,
}
_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_trunc = {
    "type": "array",
    "maxItems": 2,
    "items": {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 2, "maxItems": 2},
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "input", "settings", "scree", "reports"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "input": {
            "type": "object",
            "required": ["path", "n", "p", "centered", "transposed"],
            "properties": {
                "path": {"type": "string"},
                "n": {"type": "integer", "minimum": 1},
                "p": {"type": "integer", "minimum": 1},
                "centered": {"type": "boolean"},
                "transposed": {"type": "boolean"},
            },
        },
        "settings": {
            "type": "object",
            "required": ["rule", "alpha", "alpha1", "alpha2", "c", "seed", "sigma2", "sigma_source"],
            "properties": {
                "rule": {"enum": ["derivative", "zg", "none"]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "alpha1": {"type": "number"},
                "alpha2": {"type": "number"},
                "c": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "sigma2": {"type": "number", "exclusiveMinimum": 0},
                "sigma_source": {"enum": ["known", "estimated"]},
            },
        },
        "scree": {
            "type": "object",
            "required": ["singular_values", "sample_pve", "r_selected", "truncation_sets"],
            "properties": {
                "singular_values": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "sample_pve": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "r_selected": {"type": "integer", "minimum": 1},
                "truncation_sets": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["k", "intervals"],
                        "properties": {"k": {"type": "integer"}, "intervals": _trunc},
                    },
                },
            },
        },
        "reports": {
            "type": "array",
            "items": {
                "oneOf": [
                    {
                        "type": "object",
                        "required": ["k", "p_value", "pve_interval", "sample_pve", "delta_interval",
                                     "denom_interval", "pve_mle", "truncation_set"],
                        "properties": {
                            "k": {"type": "integer", "minimum": 1},
                            "rule": {"type": "string"},
                            "r_selected": {"type": "integer"},
                            "alphas": _pair,
                            "sample_pve": {"type": "number", "minimum": 0, "maximum": 1},
                            "p_value": {"type": "number", "minimum": 0, "maximum": 1},
                            "delta_interval": _interval,
                            "num_sq_interval": _interval,
                            "denom_interval": _interval,
                            "pve_interval": {
                                "type": "array",
                                "items": {"type": "number", "minimum": 0, "maximum": 1},
                                "minItems": 2,
                                "maxItems": 2,
                            },
                            "pve_interval_raw": _interval,
                            "pve_interval_degenerate": {"type": "boolean"},
                            "delta_mle": {"type": ["number", "null"]},
                            "pve_mle": {"type": ["number", "null"]},
                            "pve_mle_degenerate": {"type": "boolean"},
                            "truncation_set": _trunc,
                        },
                    },
                    {
                        "type": "object",
                        "required": ["k", "error"],
                        "properties": {"k": {"type": "integer"}, "error": {"type": "string"}},
                        "additionalProperties": False,
                    },
                ]
            },
        },
    },
}


class CsvParseError(PveInferError, ValueError):
    def __init__(self, path, line, column, message):
        self.line, self.column = line, column
        super().__init__(f"{path}: line {line}, column {column}: {message}")


def read_matrix(path: str, header: bool = False) -> np.ndarray:
    """Parse a comma-separated numeric file. Blank lines are skipped."""
    if path == "-":
        text = sys.stdin.read()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    rows = []
    width = None
    for line_no, cells in enumerate(csv.reader(io.StringIO(text)), start=1):
        if header and line_no == 1:
            continue
        if not cells or all(not c.strip() for c in cells):
            continue
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise CsvParseError(path, line_no, min(len(cells), width) + 1,
                                f"expected {width} fields, found {len(cells)}")
        row = []
        for col_no, cell in enumerate(cells, start=1):
            token = cell.strip()
            if not _NUM.fullmatch(token):
                raise CsvParseError(path, line_no, col_no, f"not a decimal number: {cell!r}")
            value = float(token)
            if not math.isfinite(value):
                raise CsvParseError(path, line_no, col_no, f"value out of range: {cell!r}")
            row.append(value)
        rows.append(row)
    if not rows:
        raise CsvParseError(path, 1, 1, "no data rows")
    return np.array(rows, dtype=float)


def _seed(value):
    if value is not None:
        return value
    # Record fresh entropy so the run can be replayed.
    return int(np.random.SeedSequence().entropy % (2**63))


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _finite(obj.item())
    return _finite(obj)


def build_report(x: np.ndarray, path: str, args) -> dict:
    """Run the full pipeline on ``x`` and return the JSON-ready report."""
    transposed = bool(args.transpose)
    if transposed:
        x = x.T
    if x.shape[0] < 2:
        raise DimensionError("need at least two rows")
    if x.shape[0] < x.shape[1]:
        raise DimensionError(
            f"matrix has n={x.shape[0]} rows < p={x.shape[1]} columns; rows must be "
            "observations, pass --transpose if they are variables"
        )
    x = as_data_matrix(x)
    n, p = x.shape
    if args.center:
        x = center_reduce(x)
        if x.shape[0] < x.shape[1]:
            raise DimensionError(f"centering leaves {x.shape[0]} rows < p={p} columns")
    if args.estimate_sigma:
        noise = estimate_sigma2(compute_svd(x).s, *x.shape)
    else:
        noise = NoiseModel(args.sigma ** 2, "known")
    seed = _seed(args.seed)
    pair, svd1, r, reports = analyze(
        x, noise, rule=args.rule, alpha=args.alpha, alpha_split=args.alpha_split, c=args.c,
        seed=seed, grid_size=args.grid_size,
    )
    records = [rep.to_dict() if isinstance(rep, InferenceReport) else rep for rep in reports]
    return _clean({
        "schema_version": SCHEMA_VERSION,
        "input": {"path": path, "n": n, "p": p, "centered": bool(args.center),
                  "transposed": transposed},
        "settings": {
            "rule": args.rule, "alpha": args.alpha, "alpha_split": args.alpha_split,
            "alpha1": args.alpha_split * args.alpha, "alpha2": (1 - args.alpha_split) * args.alpha,
            "c": args.c, "seed": seed, "sigma2": noise.sigma2, "sigma_source": noise.source,
        },
        "scree": {
            "singular_values": svd1.s.tolist(),
            "sample_pve": [sample_pve(svd1.s, k) for k in range(1, svd1.p + 1)],
            "r_selected": r,
            "truncation_sets": [
                {"k": rec["k"], "intervals": rec["truncation_set"]}
                for rec in records if "truncation_set" in rec
            ],
        },
        "reports": records,
    })


INFER_CSV_COLUMNS = [
    "k", "singular_value", "sample_pve", "selected", "p_value", "pve_lower", "pve_upper",
    "pve_interval_degenerate", "delta_lower", "delta_upper", "denom_lower", "denom_upper",
    "delta_mle", "pve_mle", "truncation_set", "error",
]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: dict) -> str:
    """One row per component; inference columns are empty for unselected ``k``."""
    by_k = {rec["k"]: rec for rec in report["reports"]}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(INFER_CSV_COLUMNS)
    scree = report["scree"]
    for k, (s, pve) in enumerate(zip(scree["singular_values"], scree["sample_pve"]), start=1):
        rec = by_k.get(k, {})
        iv = rec.get("pve_interval") or [None, None]
        d = rec.get("delta_interval") or [None, None]
        den = rec.get("denom_interval") or [None, None]
        trunc = rec.get("truncation_set")
        trunc_s = ";".join(f"[{_fmt(lo)},{'inf' if hi is None else _fmt(hi)}]"
                           for lo, hi in trunc) if trunc else None
        writer.writerow([_fmt(v) for v in (
            k, s, pve, k <= scree["r_selected"], rec.get("p_value"), iv[0], iv[1],
            rec.get("pve_interval_degenerate"), d[0], d[1], den[0], den[1],
            rec.get("delta_mle"), rec.get("pve_mle"), trunc_s, rec.get("error"),
        )])
    return buf.getvalue()


def _write(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_infer(args) -> int:
    if (args.sigma is None) == (not args.estimate_sigma):
        print("error: give exactly one of --sigma or --estimate-sigma", file=sys.stderr)
        return 2
    if args.sigma is not None and not args.sigma > 0:
        print("error: --sigma must be positive", file=sys.stderr)
        return 2
    try:
        x = read_matrix(args.input, header=args.header)
        report = build_report(x, args.input, args)
    except (OSError, PveInferError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.format == "csv":
        text = report_csv(report)
    else:
        text = json.dumps(report, indent=2) + "\n"
    _write(text, args.output)
    return 0


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def summary_csv(result) -> str:
    cols: list[str] = []
    for rec in result.summary:
        cols.extend(c for c in rec if c not in cols)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for rec in result.summary:
        writer.writerow([_fmt(_finite(rec.get(c))) for c in cols])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    overrides = {
        "n": args.n, "p": args.p, "rank": args.rank, "sigma_grid": args.sigma_grid,
        "rule": args.rule, "reps": args.reps, "alpha": args.alpha, "alpha_split": args.alpha_split,
        "c": args.c, "seed": args.seed, "alpha_grid": args.alpha_grid,
        "sigma_mode": "estimated" if args.estimate_sigma else None,
        "with_mle": args.with_mle or None, "grid_size": args.grid_size,
    }
    try:
        config = SimConfig.for_experiment(args.experiment, **overrides)
        result = run_experiment(args.experiment, config)
    except (PveInferError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write(summary_csv(result) if args.format == "csv" else result.to_json(), args.output)
    if args.rows:
        _write(result.rows_csv(), args.rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pve-infer",
        description="Selective inference for the proportion of variance explained by "
                    "principal components selected with an elbow rule.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    inf = sub.add_parser("infer", help="p-values and PVE intervals for a data matrix")
    inf.add_argument("input", help="CSV file of an n x p numeric matrix ('-' for stdin)")
    inf.add_argument("--rule", choices=["derivative", "zg", "none"], default="zg")
    inf.add_argument("--alpha", type=float, default=0.1)
    inf.add_argument("--alpha-split", type=float, default=0.75,
                     help="share of alpha spent on the numerator interval")
    inf.add_argument("--c", type=float, default=1.0, help="thinning constant")
    noise = inf.add_mutually_exclusive_group()
    noise.add_argument("--sigma", type=float, help="known noise standard deviation")
    noise.add_argument("--estimate-sigma", action="store_true",
                       help="estimate the noise level from the median singular value")
    inf.add_argument("--center", action="store_true", help="remove column means first")
    inf.add_argument("--header", action="store_true", help="skip the first line")
    inf.add_argument("--transpose", action="store_true", help="treat rows as variables")
    inf.add_argument("--seed", type=int)
    inf.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    inf.add_argument("--output", "-o")
    inf.add_argument("--format", choices=["json", "csv"], default="json")
    inf.set_defaults(func=cmd_infer)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("experiment", choices=EXPERIMENTS)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--sigma-grid", type=_floats)
    sim.add_argument("--alpha-grid", type=_floats)
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--rank", type=int)
    sim.add_argument("--rule", choices=["derivative", "zg", "none"])
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--alpha-split", type=float)
    sim.add_argument("--c", type=float)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--estimate-sigma", action="store_true")
    sim.add_argument("--with-mle", action="store_true")
    sim.add_argument("--grid-size", type=int)
    sim.add_argument("--output", "-o", help="summary file (default stdout)")
    sim.add_argument("--rows", help="write per-replicate rows as CSV here")
    sim.add_argument("--format", choices=["json", "csv"], default="json")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
