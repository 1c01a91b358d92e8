"""Command line interface: ``margeff <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime or
statistical errors, which are reported on stderr as
``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .errors import DataError, MargeffError
from .estimand import as_estimand, from_expression
from .glm import FAMILIES, fit_glm
from .learners import DEFAULT_CV_FOLDS, fit_best_learner, learners_from_config
from .plugin import TrialData, estimate_marginal_effect
from .power import PowerInputs, _result, find_samplesize, repeat_power_curve
from .prognostic import estimate_with_prognostic_score
from .simulate import glm_data, make_spec

logger = logging.getLogger("margeff")


# --- CSV ----------------------------------------------------------------------


def read_csv(path) -> dict[str, np.ndarray]:
    """Read a header-first numeric CSV into ordered float columns."""
    with open(path, encoding="utf-8-sig", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: file is empty", code="EMPTY_INPUT")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"{path}: duplicate column names {', '.join(dup)}", code="DUPLICATE_COLUMN")
    if any(not h for h in header):
        raise DataError(f"{path}: empty column name in header", code="EMPTY_HEADER")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows", code="EMPTY_INPUT")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i} has {len(row)} cells, header has {len(header)}", code="RAGGED_ROW")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at line {i}", code="NON_NUMERIC") from None
    return {h: values[:, j].copy() for j, h in enumerate(header)}


def _fmt(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_csv(data, fh):
    cols = list(data)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(cols)
    arrays = [np.asarray(data[c]) for c in cols]
    for i in range(len(arrays[0]) if arrays else 0):
        writer.writerow([_fmt(a[i]) for a in arrays])


def _column_ref(text):
    path, sep, col = text.rpartition(":")
    if not sep or not path or not col:
        raise argparse.ArgumentTypeError(f"expected FILE:COLUMN, got {text!r}")
    return path, col


def _load_column(ref):
    path, col = ref
    data = read_csv(path)
    if col not in data:
        raise DataError(f"{path}: no column {col!r}", code="MISSING_COLUMN")
    return data[col]


# --- argument types -----------------------------------------------------------


def _prob(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _arm1_value(text):
    """``x`` for a fixed value or ``scale:x`` to multiply the control estimate."""
    if text.startswith("scale:"):
        factor = float(text.split(":", 1)[1])
        return ("scale", factor)
    return ("value", float(text))


def _as_arm1(spec):
    if spec is None:
        return None
    kind, x = spec
    if kind == "scale":
        return lambda control: x * control
    return x


def _ns(text):
    parts = text.split(":")
    try:
        if len(parts) == 3:
            a, b, step = (int(p) for p in parts)
            ns = list(range(a, b + 1, step))
        else:
            ns = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step or a comma list, got {text!r}") from None
    if not ns or min(ns) < 1:
        raise argparse.ArgumentTypeError(f"invalid sample sizes {text!r}")
    return ns


def _coef(text):
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, value = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value, got {part!r}")
        out[name.strip()] = float(value)
    return out


def _var(text):
    name, sep, gen = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=generator(...), got {text!r}")
    return name.strip(), gen.strip()


# --- parser -------------------------------------------------------------------


def _add_estimand(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--estimand", default="ate", choices=["ate", "rate_ratio", "odds_ratio"])
    g.add_argument("--estimand-expr", help="expression in psi1 and psi0, e.g. 'psi1/sqrt(psi0)*2-1'")


def _add_power_options(p):
    p.add_argument("--target-effect", type=float, required=True)
    p.add_argument("--exposure-prob", type=_prob, required=True)
    p.add_argument("--var1", type=_arm1_value, help="x or scale:x (default: copy control variance)")
    p.add_argument("--kappa1-sq", type=_arm1_value, help="x or scale:x (default: copy control MSE)")
    p.add_argument("--margin", type=float)
    p.add_argument("--alpha", type=_prob, default=0.05)
    p.add_argument("--tolerance", type=float, default=1e-6)
    _add_estimand(p)


def _add_estimate_options(p):
    p.add_argument("--data", required=True, help="trial CSV")
    p.add_argument("--formula", required=True)
    p.add_argument("--exposure-indicator", required=True)
    p.add_argument("--exposure-prob", type=_prob, required=True)
    p.add_argument("--family", default="gaussian", choices=FAMILIES)
    _add_estimand(p)
    p.add_argument("--cv-variance", action="store_true")
    p.add_argument("--cv-folds", type=_pos_int, default=10)
    p.add_argument("--level", type=_prob, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="margeff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbosity", type=int, choices=[0, 1, 2], default=1)
    parser.add_argument("--threads", type=_pos_int, help="worker cap (default: $MARGEFF_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate data from a GLM")
    p.add_argument("--expr", required=True, help="linear predictor, e.g. 'Y ~ b0+b1*log(X)+b2*A'")
    p.add_argument("--coef", type=_coef, default={}, help="b0=1,b1=3,...")
    p.add_argument("--var", type=_var, action="append", default=[], help="NAME=uniform(lo,hi)|bernoulli(p)|normal(m,s)|constant(c)")
    p.add_argument("--family", default="gaussian", choices=FAMILIES)
    p.add_argument("--link")
    p.add_argument("--n", type=_pos_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dispersion", type=float, default=1.0)
    p.add_argument("--nb-theta", type=float)
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("estimate", help="plug-in marginal effect estimate")
    _add_estimate_options(p)

    p = sub.add_parser("estimate-prog", help="estimate with prognostic score adjustment")
    _add_estimate_options(p)
    p.add_argument("--data-hist", required=True, help="historical control CSV")
    p.add_argument("--prog-formula")
    p.add_argument("--cv-prog-folds", type=_pos_int, default=DEFAULT_CV_FOLDS)
    p.add_argument("--learners", help="JSON learner list")

    p = sub.add_parser("power", help="approximate power or required sample size")
    p.add_argument("--response-csv", type=_column_ref, required=True, metavar="FILE:COL")
    p.add_argument("--predictions-csv", type=_column_ref, required=True, metavar="FILE:COL")
    _add_power_options(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--samplesize", type=_pos_int)
    g.add_argument("--desired-power", type=_prob)
    p.add_argument("--out", help="JSON output path (default stdout)")

    p = sub.add_parser("power-curve", help="power curves over sample sizes for several models")
    p.add_argument("--models", required=True, help="JSON model configuration")
    p.add_argument("--ns", type=_ns, required=True, metavar="a:b:step")
    p.add_argument("--n-iter", type=_pos_int, default=20)
    p.add_argument("--desired-power", type=_prob, default=0.9)
    _add_power_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.add_argument("--svg", help="write an SVG plot here")
    p.add_argument("--summary", help="write a JSON summary here")
    return parser


# --- helpers ------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _emit(text: str, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(obj, path):
    _emit(json.dumps(_clean(obj), indent=2) + "\n", path)


def _estimand(args):
    return from_expression(args.estimand_expr) if args.estimand_expr else as_estimand(args.estimand)


def _power_options(args):
    return dict(
        var1=_as_arm1(args.var1),
        kappa1_squared=_as_arm1(args.kappa1_sq),
        estimand=_estimand(args),
        margin=args.margin,
        alpha=args.alpha,
        tolerance=args.tolerance,
    )


# --- subcommands --------------------------------------------------------------


def cmd_simulate(args):
    spec = make_spec(
        args.expr,
        args.coef,
        dict(args.var),
        args.family,
        link=args.link,
        n=args.n,
        seed=args.seed,
        dispersion=args.dispersion,
        nb_theta=args.nb_theta,
    )
    data = glm_data(spec)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(data, fh)
    else:
        write_csv(data, sys.stdout)


def _trial(args):
    data = read_csv(args.data)
    return TrialData(data, args.exposure_indicator, args.exposure_prob)


def cmd_estimate(args):
    res = estimate_marginal_effect(
        args.formula,
        _trial(args),
        args.family,
        _estimand(args),
        args.cv_variance,
        args.cv_folds,
        seed=args.seed,
        level=args.level,
    )
    _emit_json(res.to_dict(), args.out)


def cmd_estimate_prog(args):
    learners = learners_from_config(args.learners) if args.learners else None
    res = estimate_with_prognostic_score(
        args.formula,
        _trial(args),
        read_csv(args.data_hist),
        args.family,
        _estimand(args),
        args.prog_formula,
        args.cv_prog_folds,
        learners,
        args.cv_variance,
        args.cv_folds,
        seed=args.seed,
        level=args.level,
    )
    _emit_json(res.to_dict(), args.out)


def cmd_power(args):
    inputs = PowerInputs.from_data(
        _load_column(args.response_csv),
        _load_column(args.predictions_csv),
        args.target_effect,
        args.exposure_prob,
        samplesize=args.samplesize,
        **_power_options(args),
    )
    if args.desired_power is not None:
        n = find_samplesize(inputs, args.desired_power)
        out = _result(inputs, n).to_dict()
        out["desired_power"] = args.desired_power
    else:
        out = _result(inputs, inputs.samplesize).to_dict()
    _emit_json(out, args.out)


def _load_dataset(source, base_dir, seed):
    if "csv" in source:
        return read_csv(os.path.join(base_dir, source["csv"]))
    if "simulate" in source:
        return _simulator(source["simulate"])(int(source["simulate"].get("n", 1000)), seed)
    raise DataError("dataset source needs 'csv' or 'simulate'", code="BAD_CONFIG")


def _simulator(cfg):
    def generate(n, rng_or_seed):
        seed = rng_or_seed if isinstance(rng_or_seed, int) else int(rng_or_seed.integers(0, 2**31 - 1))
        spec = make_spec(
            cfg["expr"],
            cfg.get("coef", {}),
            cfg.get("vars", {}),
            cfg.get("family", "gaussian"),
            n=int(n),
            seed=seed,
            dispersion=float(cfg.get("dispersion", 1.0)),
            nb_theta=cfg.get("nb_theta"),
        )
        return glm_data(spec)

    return generate


def load_model_config(path, seed=0):
    """Fit the models described in a power-curve JSON config.

    Returns ``(models, test_data_generator, response)``.
    """
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    try:
        train = _load_dataset(cfg["train"], base, int(cfg["train"].get("seed", seed)))
        generator = _simulator(cfg["test"]["simulate"])
        entries = cfg["models"]
    except KeyError as exc:
        raise DataError(f"model config missing key {exc}", code="BAD_CONFIG") from None
    models = {}
    for entry in entries:
        kind = entry.get("type", "glm")
        if kind == "glm":
            models[entry["name"]] = fit_glm(entry["formula"], train, entry.get("family", "gaussian"))
        elif kind == "super_learner":
            learners = entry.get("learners")
            if isinstance(learners, str):
                learners = os.path.join(base, learners)
            learners = learners_from_config(learners) if learners is not None else None
            models[entry["name"]] = fit_best_learner(
                entry["formula"], train, int(entry.get("cv_folds", DEFAULT_CV_FOLDS)), learners, seed=seed
            )
        else:
            raise DataError(f"unknown model type {kind!r}", code="BAD_CONFIG")
    return models, generator, cfg.get("response", "Y")


def cmd_power_curve(args):
    models, generator, response = load_model_config(args.models, args.seed)
    table = repeat_power_curve(
        models,
        generator,
        args.ns,
        args.n_iter,
        args.target_effect,
        args.exposure_prob,
        desired_power=args.desired_power,
        response=response,
        seed=args.seed,
        **_power_options(args),
    )
    _emit(table.to_csv(), args.out)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(table.to_svg())
    if args.summary:
        _emit_json({"desired_power": args.desired_power, "reached": table.reached}, args.summary)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "estimate-prog": cmd_estimate_prog,
    "power": cmd_power,
    "power-curve": cmd_power_curve,
}


def _configure(verbosity):
    level = {0: logging.ERROR, 1: logging.WARNING, 2: logging.INFO}[verbosity]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)
    if verbosity == 0:
        warnings.simplefilter("ignore")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure(args.verbosity)
    if args.threads:
        os.environ["MARGEFF_THREADS"] = str(args.threads)
    try:
        COMMANDS[args.command](args)
    except MargeffError as exc:
        _error(exc.code, str(exc))
        return 1
    except OSError as exc:
        _error("IO_ERROR", str(exc))
        return 1
    return 0


def _error(code, message):
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
