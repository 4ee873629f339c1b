"""Command line: batch estimation from CSV files and simulation studies.

Exit codes: 0 success, 1 input error, 2 fit did not converge (the report is
still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .errors import MixedCorrError
from .estimator import FitConfig, fit
from .model import KIND_PEARSON, KIND_POLYCHORIC, KIND_POLYSERIAL, VariableSpec, ingest
from .moments import CUSTOM, MAX_SET, MIN_SET, build_system
from .normal import LegendreOrder
from .simulation import SimDesign, run_study

SCHEMA_VERSION = 1

_MISSING = {"", "na", "nan", "null", "none", "."}


class _InputError(Exception):
    pass


@dataclass(frozen=True)
class FitRequest:
    """Resolved fit request: column typing, fit options and output target."""

    data: str
    continuous: tuple  # column names
    ordinal: tuple  # (name, categories-or-None-to-infer) pairs
    method: str = "two-step"
    system: str = "max"
    pairs: str | None = None
    legendre: int = 3
    covariance: str = "corrected"
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        names = list(self.continuous) + [nm for nm, _ in self.ordinal]
        if not names:
            raise _InputError("at least one of --continuous / --ordinal is required")
        if len(set(names)) != len(names):
            raise _InputError("column sets must be disjoint")

    @staticmethod
    def from_args(args) -> "FitRequest":
        continuous = tuple(s.strip() for s in args.continuous.split(",") if s.strip())
        return FitRequest(
            data=args.data,
            continuous=continuous,
            ordinal=tuple(_parse_ordinal_arg(args.ordinal)),
            method=args.method,
            system=args.system,
            pairs=args.pairs,
            legendre=args.legendre,
            covariance=args.cov,
            out=args.out,
            format=args.format,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedcorr",
        description="Mixed correlation matrix estimation by iterative GMM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate correlations from a CSV file")
    p_fit.add_argument("--data", required=True, help="CSV file with a header row")
    p_fit.add_argument("--continuous", default="", help="comma list of continuous columns")
    p_fit.add_argument(
        "--ordinal",
        default="",
        help="comma list of ordinal columns as name:categories or name (inferred)",
    )
    p_fit.add_argument("--method", choices=["two-step", "one-step"], default="two-step")
    p_fit.add_argument("--system", choices=["max", "min"], default="max")
    p_fit.add_argument(
        "--pairs",
        default=None,
        help="restrict to coefficients, e.g. 'Y1:X2,X1:X2' (implies a custom system)",
    )
    p_fit.add_argument("--legendre", type=int, choices=[2, 3], default=3)
    p_fit.add_argument("--cov", choices=["paper", "corrected"], default="corrected")
    p_fit.add_argument("--out", default=None, help="report path (stdout when omitted)")
    p_fit.add_argument("--format", choices=["json", "csv"], default="json")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study from a design file")
    p_sim.add_argument("--design", required=True, help="study design JSON")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    return parser


def _read_csv(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise _InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _InputError(f"{path}: empty file (header row required)") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise _InputError(
                    f"{path} line {lineno}: expected {len(header)} cells, got {len(row)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell.lower() in _MISSING:
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise _InputError(
                        f"{path} line {lineno}: column {name!r} has non-numeric cell {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise _InputError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _parse_ordinal_arg(arg):
    out = []
    for item in filter(None, (s.strip() for s in arg.split(","))):
        if ":" in item:
            name, spec = item.split(":", 1)
            spec = spec.strip().lower()
            if spec == "infer":
                out.append((name.strip(), None))
            else:
                try:
                    out.append((name.strip(), int(spec)))
                except ValueError:
                    raise _InputError(
                        f"--ordinal entry {item!r}: categories must be an integer or 'infer'"
                    ) from None
        else:
            out.append((item, None))
    return out


def _recode_ordinal(name, col, declared):
    """Map ordinal labels to dense codes 1..s.

    With a declared category count the distinct integer labels are recoded
    in sorted order and their number must equal the declaration. Inferred
    columns are taken literally as codes 1..max with no gaps allowed.
    """
    observed = col[~np.isnan(col)]
    if observed.size == 0:
        raise _InputError(f"ordinal column {name!r} has no observed values")
    if np.any(observed != np.round(observed)):
        raise _InputError(f"ordinal column {name!r} has non-integer labels")
    labels = np.unique(observed.astype(np.int64))
    if declared is not None:
        if labels.size > declared:
            raise _InputError(
                f"ordinal column {name!r}: {labels.size} distinct labels exceed s={declared}"
            )
        if labels.size < declared:
            raise MixedCorrError(
                f"EmptyCategory: ordinal column {name!r} has {labels.size} distinct "
                f"labels but s={declared} categories were declared"
            )
        mapping = {int(lab): k for k, lab in enumerate(labels, start=1)}
        s = declared
    else:
        if labels[0] < 1:
            raise _InputError(
                f"ordinal column {name!r}: inferred coding requires integer labels >= 1"
            )
        s = int(labels[-1])
        expected = np.arange(1, s + 1)
        missing = sorted(set(expected) - set(labels))
        if missing:
            raise MixedCorrError(
                f"EmptyCategory: ordinal column {name!r} has no observations in "
                f"category {missing[0]} (codes run 1..{s})"
            )
        mapping = {k: k for k in range(1, s + 1)}
    recoded = col.copy()
    mask = ~np.isnan(col)
    recoded[mask] = [mapping[int(v)] for v in col[mask]]
    return recoded, s, mapping


def _parse_pairs(arg, names):
    pos = {nm: i for i, nm in enumerate(names)}
    pairs = []
    for item in filter(None, (s.strip() for s in arg.split(","))):
        parts = [p.strip() for p in item.split(":")]
        if len(parts) != 2 or not all(parts):
            raise _InputError(f"--pairs entry {item!r}: expected 'name:name'")
        for p in parts:
            if p not in pos:
                raise _InputError(f"--pairs entry {item!r}: unknown column {p!r}")
        if parts[0] == parts[1]:
            raise _InputError(f"--pairs entry {item!r}: a pair needs two distinct columns")
        pairs.append((pos[parts[0]], pos[parts[1]]))
    return pairs


def _pair_label(c, idx_a, idx_b):
    a, b = sorted((idx_a, idx_b))
    if b < c:
        return (KIND_PEARSON, b + 1, a + 1)
    if a < c:
        return (KIND_POLYSERIAL, a + 1, b - c + 1)
    return (KIND_POLYCHORIC, b - c + 1, a - c + 1)


def _json_float(v):
    # strict JSON has no Infinity/NaN tokens
    v = float(v)
    return v if np.isfinite(v) else None


def _fit_report(request, data, system, cfg, res, recode_maps):
    variables = []
    for sp in data.specs:
        entry = {"name": sp.name, "kind": "ordinal" if sp.is_ordinal else "continuous"}
        if sp.is_ordinal:
            entry["categories"] = sp.categories
            entry["recode_map"] = {str(k): v for k, v in recode_maps[sp.name].items()}
        variables.append(entry)

    included = [system.all_coefficients.index(lab) for lab in res.coefficients]
    se = res.se()
    coefficients = [
        {
            "kind": kind,
            "var_i": ni,
            "var_j": nj,
            "estimate": float(res.r_hat.values[pos]),
            "se": float(se[pos]),
        }
        for (kind, ni, nj), (_, i, j), pos in zip(
            res.coefficient_names, res.coefficients, included
        )
    ]
    var_r = res.var_r[np.ix_(included, included)]
    thresholds = {
        sp.name: [float(v) for v in res.a_hat[j]]
        for j, sp in enumerate(s for s in data.specs if s.is_ordinal)
    }
    d = res.diagnostics
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "data": request.data,
            "continuous": [sp.name for sp in data.specs if not sp.is_ordinal],
            "ordinal": {
                sp.name: sp.categories for sp in data.specs if sp.is_ordinal
            },
            "method": cfg.method,
            "system": system.mode,
            "pairs": request.pairs,
            "legendre": cfg.order.value,
            "covariance": cfg.covariance,
            "format": request.format,
        },
        "n_rows_used": data.n,
        "n_rows_dropped": data.dropped_rows,
        "variables": variables,
        "thresholds": thresholds,
        "coefficients": coefficients,
        "var_r": var_r.tolist(),
        # wall time deliberately left out: rerunning an identical request
        # must produce an identical report
        "diagnostics": {
            "converged": d.converged,
            "outer_iterations": d.outer_iterations,
            "final_diff": _json_float(d.final_diff),
            "final_loss": _json_float(d.final_loss),
            "final_grad_norm": _json_float(d.final_grad_norm),
            "weight_conditions": [_json_float(c) for c in d.weight_conditions],
            "weight_pseudo_inverse": d.weight_pseudo_inverse,
            "r_matrix_psd": d.r_matrix_psd,
        },
    }


def _write_fit_report(report, res, fmt, out):
    if fmt == "json":
        text = json.dumps(report, indent=2, sort_keys=True)
    else:
        lines = ["kind,var_i,var_j,estimate,se"]
        for coef in report["coefficients"]:
            lines.append(
                f"{coef['kind']},{coef['var_i']},{coef['var_j']},"
                f"{coef['estimate']!r},{coef['se']!r}"
            )
        for name, cuts in report["thresholds"].items():
            for k, v in enumerate(cuts, start=1):
                lines.append(f"threshold,{name},{k},{v!r},")
        text = "\n".join(lines)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def cmd_fit(request: FitRequest) -> int:
    names = list(request.continuous) + [nm for nm, _ in request.ordinal]

    header, table = _read_csv(request.data)
    col_index = {nm: i for i, nm in enumerate(header)}
    for nm in names:
        if nm not in col_index:
            raise _InputError(f"{request.data}: no column named {nm!r} in header")

    cols = []
    specs = []
    recode_maps = {}
    for nm in request.continuous:
        cols.append(table[:, col_index[nm]])
        specs.append(VariableSpec(nm))
    for nm, declared in request.ordinal:
        recoded, s, mapping = _recode_ordinal(nm, table[:, col_index[nm]], declared)
        cols.append(recoded)
        specs.append(VariableSpec(nm, categories=s))
        recode_maps[nm] = mapping

    data = ingest(np.column_stack(cols), specs)

    if request.pairs:
        pair_idx = _parse_pairs(request.pairs, names)
        labels = [_pair_label(len(request.continuous), a, b) for a, b in pair_idx]
        system = build_system(specs, CUSTOM, pairs=labels)
    else:
        system = build_system(specs, MAX_SET if request.system == "max" else MIN_SET)

    cfg = FitConfig(
        method=request.method,
        order=LegendreOrder(request.legendre),
        covariance=request.covariance,
        system_mode=system.mode,
    )
    res = fit(data, system, cfg)
    report = _fit_report(request, data, system, cfg, res, recode_maps)
    _write_fit_report(report, res, request.format, request.out)
    return 0 if res.diagnostics.converged else 2


def _format_table(design, report) -> str:
    labels = ["rho_%s[%d,%d]" % ("yy" if k == KIND_PEARSON else "yx" if k == KIND_POLYSERIAL else "xx", i, j)
              for k, i, j in report.labels]
    width = max(7, max(len(s) for s in labels) + 1)
    lines = [
        f"study: {design.name}   method: {design.fit.method} IGMM   "
        f"n={design.n}  N={design.replications}  failures={report.failures}  "
        f"time={report.wall_time:.2f}s",
        "MEAN x 1e-4; COVR, MCOV x 1e-6",
        "      " + "".join(s.rjust(width) for s in labels),
    ]

    def fmt(v, scale):
        return format(int(round(v * scale)), "d").rjust(width)

    lines.append("MEAN  " + "".join(fmt(v, 1e4) for v in report.mean))
    for tag, mat in (("COVR", report.covr), ("MCOV", report.mcov)):
        for r in range(mat.shape[0]):
            prefix = tag if r == 0 else "    "
            lines.append(
                f"{prefix:<6}" + "".join(fmt(mat[r, c], 1e6) for c in range(r + 1))
            )
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    try:
        with open(args.design, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise _InputError(f"cannot open {args.design}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _InputError(f"{args.design}: invalid JSON ({exc})") from exc
    try:
        design = SimDesign.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise _InputError(f"{args.design}: invalid design ({exc})") from exc
    if args.seed is not None:
        design = replace(design, seed=args.seed)

    workers = args.threads
    if workers is None:
        env = os.environ.get("MIXEDCORR_THREADS")
        workers = int(env) if env else None

    report = run_study(design, workers=workers)

    os.makedirs(args.out, exist_ok=True)
    doc_out = {
        "schema_version": SCHEMA_VERSION,
        "design": design.to_dict(),
        "report": report.to_dict(),
    }
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc_out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = _format_table(design, report)
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(FitRequest.from_args(args))
        return cmd_simulate(args)
    except (_InputError, MixedCorrError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
