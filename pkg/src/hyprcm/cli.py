"""Command-line front end: model files in, CSV/JSON tables plus a manifest out.

Every table row carries the run digest, a sha256 over the subcommand, the
canonical model dictionary, the parameters, the seed and the tool version.
Timestamps, thread counts and output paths live only in the manifest, so
equal digests mean byte-identical data files.

Exit status: 0 success, 1 results flagged (divergent, vacuous or failed
rows), 2 usage or parse errors.
"""
import argparse
import csv
import datetime
import hashlib
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import models as mdl
from . import percolation as perc
from . import spectral
from . import thresholds as thr


class UsageError(Exception):
    pass


# -- serialization -----------------------------------------------------------

def fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def to_json(v):
    """JSON text with floats at 17 significant digits and non-finite values as strings."""
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        s = fmt_float(v)
        return s if math.isfinite(v) else json.dumps(s)
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(to_json(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, (dict, list, tuple)):
        return to_json(v)
    return str(v)


def render(rows, columns, fmt):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
        return buf.getvalue()
    lines = [to_json({c: row.get(c) for c in columns}) for row in rows]
    return "[\n" + ",\n".join(lines) + "\n]\n"


def read_table(path):
    """Parse a table written by this module back into a list of dicts of strings/values."""
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        return json.loads(text)
    return list(csv.DictReader(io.StringIO(text)))


def digest(payload):
    return hashlib.sha256(to_json(payload).encode("utf-8")).hexdigest()


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- argument helpers --------------------------------------------------------

def parse_grid(text):
    """'start:stop:num' (linear), 'geom:start:stop:num' (log-spaced) or a comma list."""
    try:
        parts = text.split(":")
        if parts[0] == "geom" and len(parts) == 4:
            return [float(x) for x in np.geomspace(float(parts[1]), float(parts[2]), int(parts[3]))]
        if len(parts) == 3:
            return [float(x) for x in np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))]
        if len(parts) == 1:
            return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        pass
    raise UsageError(f"bad grid {text!r}: use start:stop:num, geom:start:stop:num or a comma list")


def _load(args):
    if not args.model:
        raise UsageError(f"{args.cmd} needs --model")
    try:
        return mdl.load_model(args.model)
    except mdl.UnknownMarkError as exc:
        raise UsageError(f"{args.model}: {exc}") from None
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise UsageError(f"{args.model}: {type(exc).__name__}: {exc}") from None
    except Exception as exc:  # yaml errors
        if type(exc).__module__.startswith("yaml"):
            raise UsageError(f"{args.model}: malformed YAML: {exc}") from None
        raise


def _at_L(model, L):
    if L == model.L:
        return model
    try:
        return model.with_L(L)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _Ls(args, model):
    return parse_grid(args.grid) if args.grid else [model.L]


# -- subcommands -------------------------------------------------------------
# each returns (rows, columns, params, model_or_None, flagged)

def cmd_qd(args):
    if args.dim is None:
        raise UsageError("qd needs --dim")
    if not args.grid:
        raise UsageError("qd needs --grid")
    grid = np.asarray(parse_grid(args.grid))
    if args.rho:
        if np.any((grid < 0) | (grid >= 1)):
            raise UsageError("rho grid must lie in [0, 1)")
        r = 2.0 * np.arctanh(grid)
    else:
        if np.any(grid < 0):
            raise UsageError("r grid must be nonnegative")
        r = grid
    try:
        ev = spectral.QdEvaluator(args.dim, order=args.order, adaptive=False) if args.order \
            else spectral.evaluator(args.dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    env = spectral.envelope_ratio(args.dim, r, ev)
    rows = []
    if args.s:
        q = ev.q_complex(r, args.s)
        cols = ["rho", "r", "q_real", "q_imag", "envelope"] if args.rho else ["r", "q_real", "q_imag", "envelope"]
        for i in range(len(r)):
            rows.append({"rho": grid[i], "r": r[i], "q_real": q[i].real, "q_imag": q[i].imag, "envelope": env[i]})
    else:
        q = ev.q(r)
        cols = ["rho", "r", "q", "envelope"] if args.rho else ["r", "q", "envelope"]
        for i in range(len(r)):
            rows.append({"rho": grid[i], "r": r[i], "q": q[i], "envelope": env[i]})
    params = {"dim": args.dim, "grid": [float(x) for x in grid], "rho": bool(args.rho), "s": args.s,
              "order": ev.order}
    return rows, cols, params, None, False


NORM_COLUMNS = ["L", "norm_2to2", "residual", "iterations", "norm_1to1", "norm_HS", "degree_norm_2to2",
                "ratio", "phi_norm_over_L", "kernel_norm", "notes"]


def cmd_norms(args):
    model = _load(args)
    Ls = _Ls(args, model)
    rows, flagged = [], False
    kn = mdl.kernel_norm_analytic(model.base.kernel) if isinstance(model.base, mdl.WeightDependent) else math.nan
    for L in Ls:
        m = _at_L(model, L)
        rep = spectral.spectral_report(m)
        dn = rep.degree_norm_2to2
        ratio = rep.norm_2to2 / dn if 0 < dn < math.inf else math.nan
        rows.append({"L": m.L, "norm_2to2": rep.norm_2to2, "residual": rep.residual, "iterations": rep.iterations,
                     "norm_1to1": rep.norm_1to1, "norm_HS": rep.norm_HS, "degree_norm_2to2": dn,
                     "ratio": ratio, "phi_norm_over_L": rep.norm_2to2 / m.L, "kernel_norm": kn,
                     "notes": "; ".join(rep.notes)})
        flagged |= not (math.isfinite(rep.norm_2to2) and math.isfinite(dn))
    return rows, NORM_COLUMNS, {"grid": Ls}, model, flagged


CERTIFY_COLUMNS = ["L", "theta", "eps", "norm_2to2", "norm_1to1", "norm_HS", "degree_norm_2to2", "residual",
                   "lambda_u_lower", "lambda_c_upper", "gap_certified", "vacuous", "triangle", "variant",
                   "suggested_L", "notes"]


def _angles(args):
    theta = thr.DEFAULT_THETA if args.theta is None else args.theta
    eps = thr.DEFAULT_EPS if args.eps is None else args.eps
    try:
        thr._check_angles(theta, eps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return theta, eps


def certify_row(model, theta, eps, scan=False):
    rep = spectral.spectral_report(model)
    if scan:
        best = thr.scan_angles(model, D=rep.degree)
        if best is not None:
            theta, eps = best[1], best[2]
    try:
        tb = thr.certify_nonuniqueness(model, theta, eps, report=rep)
    except (ValueError, thr.NoValidSetsError) as exc:
        return {"L": model.L, "theta": theta, "eps": eps, "lambda_c_upper": math.inf,
                "lambda_u_lower": math.nan, "gap_certified": False, "vacuous": True,
                "notes": f"{type(exc).__name__}: {exc}"}
    md = tb.metadata
    return {"L": model.L, "theta": tb.theta, "eps": tb.eps, "norm_2to2": md["norm_2to2"],
            "norm_1to1": md["norm_1to1"], "norm_HS": md["norm_HS"], "degree_norm_2to2": md["degree_norm_2to2"],
            "residual": md["residual"], "lambda_u_lower": tb.lambda_u_lower, "lambda_c_upper": tb.lambda_c_upper,
            "gap_certified": tb.gap_certified, "vacuous": tb.vacuous, "triangle": md.get("triangle", math.nan),
            "variant": md.get("variant", ""), "suggested_L": md.get("suggested_L"),
            "notes": "; ".join(md["notes"] + ([md["precondition"]] if "precondition" in md else []))}


def cmd_certify(args):
    model = _load(args)
    theta, eps = _angles(args)
    Ls = _Ls(args, model)
    rows = [certify_row(_at_L(model, L), theta, eps, args.scan_angles) for L in Ls]
    flagged = any(r["vacuous"] or not math.isfinite(r["lambda_c_upper"]) for r in rows)
    params = {"grid": Ls, "theta": theta, "eps": eps, "scan_angles": bool(args.scan_angles)}
    return rows, CERTIFY_COLUMNS, params, model, flagged


CHECK_COLUMNS = ["condition", "verdict", "kind", "evidence"]


def cmd_check(args):
    model = _load(args)
    Ls = _Ls(args, model)
    rows = thr.check_assumptions(model, Ls, R=args.R if args.R is not None else 1.0)
    out = [{**r, "evidence": to_json(r["evidence"])} for r in rows]
    flagged = any(r["verdict"] == "undecidable" for r in rows)
    return out, CHECK_COLUMNS, {"grid": Ls, "R": args.R if args.R is not None else 1.0}, model, flagged


SWEEP_COLUMNS = perc.REPLICA_COLUMNS + [c for c in perc.AGGREGATE_COLUMNS if c not in perc.REPLICA_COLUMNS]


def _bound_columns(theta, eps):
    def annotate(m):
        row = certify_row(m, theta, eps)
        return {"lambda_c_upper": row["lambda_c_upper"], "lambda_u_lower": row["lambda_u_lower"]}
    return annotate


def cmd_sweep(args):
    model = _load(args)
    if not args.grid:
        raise UsageError("sweep needs --grid with the intensities")
    if args.R is None or args.R_core is None:
        raise UsageError("sweep needs --R and --R-core")
    lambdas = parse_grid(args.grid)
    Ls = parse_grid(args.L) if args.L else [model.L]
    for L in Ls:
        _at_L(model, L)
    R_shell = args.R_shell if args.R_shell is not None else 0.5 * (args.R_core + args.R)
    try:
        cfg = perc.PercConfig(model, lambdas[0], args.R, args.R_core, R_shell, replicas=args.replicas,
                              seed=args.seed)
    except (ValueError, OverflowError) as exc:
        raise UsageError(str(exc)) from None
    theta, eps = _angles(args)
    annotate = _bound_columns(theta, eps) if args.bounds else None
    reps, aggs = perc.sweep(cfg, lambdas, Ls, threads=args.threads, annotate=annotate)
    flagged = any(r["error"] for r in aggs)
    params = {"grid": lambdas, "L": Ls, "R": args.R, "R_core": args.R_core, "R_shell": R_shell,
              "replicas": args.replicas, "bounds": bool(args.bounds), "theta": theta, "eps": eps}
    return reps + aggs, SWEEP_COLUMNS, params, model, flagged


def cmd_appendix(args):
    d = args.dim if args.dim is not None else 3
    Ls = parse_grid(args.grid) if args.grid else [2.0, 4.0, 8.0, 16.0]
    rows = []
    try:
        if args.example == "annulus":
            lam = args.lam
            for L in Ls:
                a_L = math.exp(-args.a_exp * L * (d - 1))
                e = mdl.example_scaling_expected_degree(L, d, lam, a_L)
                bound = lam * mdl.hg.sphere_area(d - 1) * 2.0 * a_L * math.exp(L * (d - 1))
                rows.append({"L": L, "a_L": a_L, "expected_degree": e, "bound": bound})
            cols = ["L", "a_L", "expected_degree", "bound"]
            flagged = any(r["expected_degree"] > r["bound"] for r in rows)
            params = {"example": "annulus", "dim": d, "grid": Ls, "lam": lam, "a_exp": args.a_exp}
        else:
            R = args.R if args.R is not None else 1.0
            base = mdl.many_annuli_model(d, max(Ls[0], R), R, args.depth)
            series = mdl.check_ratio_condition(base, R, Ls)
            for L, s in zip(Ls, series):
                rows.append({"L": L, "a_L": base.scaling.with_L(L).a_L, "truncated": s["truncated"],
                             "total": s["total"], "ratio": s["ratio"], "undefined": s["undefined"]})
            cols = ["L", "a_L", "truncated", "total", "ratio", "undefined"]
            flagged = any(r["undefined"] for r in rows)
            params = {"example": "many-annuli", "dim": d, "grid": Ls, "R": R, "depth": args.depth}
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return rows, cols, params, None, flagged


COMMANDS = {"qd": cmd_qd, "norms": cmd_norms, "certify": cmd_certify, "check": cmd_check,
            "sweep": cmd_sweep, "appendix": cmd_appendix}


# -- entry point -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hyprcm", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"hyprcm {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", help="YAML model file")
        sp.add_argument("--out", help="output file (stdout if omitted; manifest written beside it)")
        sp.add_argument("--format", choices=["csv", "json"], help="default: from --out suffix, else csv")
        sp.add_argument("--grid", help="start:stop:num, geom:start:stop:num or comma list")
        sp.add_argument("--seed", type=int, default=0)

    def angles(sp):
        sp.add_argument("--theta", type=float, help="frustum angle (default pi/2)")
        sp.add_argument("--eps", type=float, help="cap angle (default pi/12)")

    sp = sub.add_parser("qd", help="tabulate Q_d and its decay envelope")
    common(sp, model=False)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--rho", action="store_true", help="grid is in ball coordinates")
    sp.add_argument("--s", type=float, default=0.0, help="spectral parameter")
    sp.add_argument("--order", type=int, help="fixed Gauss-Legendre order per panel")

    sp = sub.add_parser("norms", help="operator norms over an L grid")
    common(sp)

    sp = sub.add_parser("certify", help="threshold bounds and the gap certificate over an L grid")
    common(sp)
    angles(sp)
    sp.add_argument("--scan-angles", action="store_true", help="pick the best (theta, theta/2) per L")

    sp = sub.add_parser("check", help="assumption verdicts")
    common(sp)
    sp.add_argument("--R", type=float, help="truncation radius of the ratio diagnostic")

    sp = sub.add_parser("sweep", help="Monte-Carlo sweep over intensities (and L)")
    common(sp)
    angles(sp)
    sp.add_argument("--L", help="L grid (default: the model's L)")
    sp.add_argument("--R", type=float, help="sampling ball radius")
    sp.add_argument("--R-core", dest="R_core", type=float)
    sp.add_argument("--R-shell", dest="R_shell", type=float)
    sp.add_argument("--replicas", type=int, default=10)
    sp.add_argument("--threads", type=int, help=f"worker threads (default ${perc.THREADS_ENV}, else the CPU count)")
    sp.add_argument("--bounds", action="store_true", help="add lambda_c / lambda_u bound columns")

    sp = sub.add_parser("appendix", help="scaling counterexamples")
    sp.add_argument("example", choices=["annulus", "many-annuli"])
    common(sp, model=False)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--a-exp", dest="a_exp", type=float, default=2.0, help="a_L = exp(-a_exp L (d-1))")
    sp.add_argument("--R", type=float)
    sp.add_argument("--depth", type=int, default=40)
    return p


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = _now()
    try:
        rows, cols, params, model, flagged = COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"hyprcm {args.cmd}: {exc}", file=sys.stderr)
        return 2
    payload = {"subcommand": args.cmd, "model": model.to_dict() if model is not None else None,
               "params": params, "seed": args.seed, "version": __version__}
    dg = digest(payload)
    for r in rows:
        r["digest"] = dg
    cols = cols + ["digest"]
    fmt = args.format or ("json" if args.out and args.out.endswith(".json") else "csv")
    text = render(rows, cols, fmt)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        manifest = {**payload, "digest": dg, "format": fmt, "columns": cols, "rows": len(rows),
                    "threads": perc.thread_count(getattr(args, "threads", None)),
                    "started": started, "finished": _now(),
                    "outputs": [os.path.abspath(args.out)], "model_file": args.__dict__.get("model")}
        with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
            fh.write(to_json(manifest) + "\n")
    else:
        sys.stdout.write(text)
    if flagged:
        print(f"hyprcm {args.cmd}: flagged results present (divergent, vacuous or failed rows)", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
