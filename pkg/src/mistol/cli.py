"""Command-line front end.

Subcommands: tolerance (radius and danger diagnostics), risk (CSV risk
curves), estimate (fits and compromise estimates on a data file), simulate
(Monte Carlo studies from a config file), select (model-selection
probabilities and detection power). Exit codes: 0 success, 2 usage or
config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys

import numpy as np

from . import estimators as rules
from . import mcstudy, risk, tolerance
from .models import Design, MODEL_BUILDERS, get_model
from .numerics import NumericsError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

DEFAULT_RISK_SPECS = (
    "wide",
    "narrow",
    "eb",
    "qhat:eps=0.05",
    "pretest:m=1",
    "efron_morris:m=0.502",
    "atan:m=0.502",
)


class UsageError(Exception):
    pass


def _echo_config(ns: argparse.Namespace):
    skip = {"func"}
    for key in sorted(vars(ns)):
        if key in skip:
            continue
        print(f"config: {key}={getattr(ns, key)}", file=sys.stderr)


def _model_from_args(ns) -> "object":
    """Resolve the model from --model or a [model] config section."""
    path = getattr(ns, "model_config", None)
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise UsageError(f"cannot read model config {path!r}")
        if "model" not in parser:
            raise UsageError("model config needs a [model] section")
        section = parser["model"]
        if "family" not in section:
            raise UsageError("model config needs family= inside [model]")
        family = section["family"]
        kwargs = {}
        for key, raw in section.items():
            if key == "family":
                continue
            try:
                kwargs[key] = float(raw)
            except ValueError:
                raise UsageError(f"model parameter {key}={raw!r} is not numeric") from None
        try:
            return get_model(family, **kwargs)
        except (KeyError, TypeError) as exc:
            raise UsageError(str(exc)) from None
    if not getattr(ns, "model", None):
        raise UsageError("a model is required (--model or --model-config)")
    try:
        return get_model(ns.model)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def _parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must look like start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"non-numeric grid endpoint in {text!r}") from None
    if step <= 0.0 or stop < start:
        raise UsageError("grid needs step > 0 and stop >= start")
    count = int(round((stop - start) / step)) + 1
    return np.linspace(start, stop, count)


def _parse_estimators(specs) -> list:
    out = []
    for spec in specs:
        try:
            out.append(rules.parse_estimator(spec))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return out


def _write_csv(fh, header, matrix):
    fh.write(",".join(header) + "\n")
    for row in matrix:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# tolerance


def cmd_tolerance(ns) -> int:
    model = _model_from_args(ns)
    if ns.m is not None and model.name != "two-sample":
        raise UsageError("--m sets the first group size of the two-sample model only")
    if model.name == "two-sample":
        design = model.default_design(ns.n, m=ns.m)
    else:
        design = model.default_design(ns.n)
    report = tolerance.tolerance_report(model, design)
    lines = list(report.lines())
    if ns.estimand is not None:
        try:
            geom = risk.limit_geometry(model, design, ns.estimand)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
        lines.append(f"estimand: {ns.estimand}")
        lines.append(f"bias slope b: {geom.bias_slope!r}")
        lines.append(f"narrow sd tau0: {geom.tau0!r}")
        lines.append(f"wide sd tau: {geom.tau!r}")
        lines.append(f"bias-to-noise rho: {geom.rho!r}")
    for line in lines:
        print(line)
    if ns.out:
        with open(ns.out, "w", newline="") as fh:
            fh.write("key,value\n")
            for line in lines:
                key, _, value = line.partition(": ")
                fh.write(f"{key},{value}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# risk curves


def _parse_loss(text: str):
    if text == "l2":
        return "l2", None
    if text.startswith("l1:"):
        try:
            rho = float(text[3:])
        except ValueError:
            raise UsageError(f"bad rho in loss spec {text!r}") from None
        if rho < 0.0:
            raise UsageError("rho must be nonnegative")
        return "l1", rho
    raise UsageError(f"loss must be l2 or l1:<rho>, got {text!r}")


def cmd_risk(ns) -> int:
    specs = ns.estimator or list(DEFAULT_RISK_SPECS)
    ests = _parse_estimators(specs)
    grid = _parse_grid(ns.grid)
    loss, rho = _parse_loss(ns.loss)
    header, matrix = risk.risk_table(ests, grid, loss=loss, rho=rho)
    if ns.out:
        with open(ns.out, "w", newline="") as fh:
            _write_csv(fh, header, matrix)
    else:
        _write_csv(sys.stdout, header, matrix)
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimation on a data file


def _read_data(path: str):
    ys = []
    rows = []
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot open data file: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            pieces = text.replace(",", " ").split()
            try:
                values = [float(p) for p in pieces]
            except ValueError:
                raise UsageError(
                    f"data file line {lineno}: could not parse {text!r}"
                ) from None
            ys.append(values[-1])
            rows.append(values[:-1])
    if not ys:
        raise UsageError("data file holds no observations")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise UsageError("data file rows have inconsistent column counts")
    y = np.asarray(ys, dtype=float)
    if width == {0}:
        return y, Design(len(ys))
    return y, Design(len(ys), np.asarray(rows, dtype=float))


def cmd_estimate(ns) -> int:
    model = _model_from_args(ns)
    ests = _parse_estimators(ns.estimator or ["eb"])
    estimand_name = ns.estimand or model.default_estimand
    y, design = _read_data(ns.data)
    try:
        estimand = model.estimand(estimand_name, design)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    try:
        narrow = rules.fit_narrow(model, y, design)
        wide = rules.fit_wide(model, y, design)
    except rules.FitError as exc:
        trail = "; ".join(f"loglik={l!r} grad={g!r}" for l, g in exc.trace[-3:])
        raise NumericsError(f"fit failed: {exc} [{trail}]") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    geom = risk.limit_geometry(model, design, estimand, theta=narrow.theta)
    n = design.n
    gamma0 = float(np.asarray(model.gamma0, dtype=float)[0])
    gamma_hat = float(wide.gamma[0])
    zn = rules.z_statistic(gamma_hat, gamma0, geom.kappa, n)
    mu_n = estimand(narrow.theta, model.gamma0)
    mu_w = estimand(wide.theta, wide.gamma)
    radius = geom.kappa / math.sqrt(n)
    inside = abs(gamma_hat - gamma0) <= radius
    print(f"model: {model.name}")
    print(f"estimand: {estimand_name}")
    print(f"n: {n}")
    print(f"narrow theta: {tuple(float(v) for v in narrow.theta)!r}")
    print(f"narrow loglik: {narrow.loglik!r}")
    print(f"wide theta: {tuple(float(v) for v in wide.theta)!r}")
    print(f"wide gamma: {gamma_hat!r}")
    print(f"wide loglik: {wide.loglik!r}")
    print(f"kappa_hat: {geom.kappa!r}")
    print(f"tolerance radius kappa_hat/sqrt(n): {radius!r}")
    print(f"z_statistic: {zn!r}")
    print(f"mu_narrow: {mu_n!r}")
    print(f"mu_wide: {mu_w!r}")
    for est in ests:
        value = rules.compromise_estimate(mu_n, mu_w, zn, est)
        print(f"mu[{est.spec_string()}]: {value!r}")
    verdict = "inside" if inside else "outside"
    print(
        f"verdict: estimated departure {abs(gamma_hat - gamma0)!r} is {verdict} "
        f"the tolerance region"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulation studies


_STUDY_KEYS = {
    "kind",
    "model",
    "estimand",
    "delta",
    "n",
    "replications",
    "seed",
    "estimators",
    "kappa_method",
    "level",
    "workers",
    "out",
    "m",
}


def _study_config_from_file(ns) -> tuple:
    parser = configparser.ConfigParser()
    read = parser.read(ns.config)
    if not read:
        raise UsageError(f"cannot read config file {ns.config!r}")
    if "study" not in parser:
        raise UsageError("config needs a [study] section")
    section = parser["study"]
    problems = []
    for key in section:
        if key not in _STUDY_KEYS:
            problems.append(f"unknown key {key!r} in [study]")
    kind = section.get("kind", "")
    if kind not in {"mse", "kappa", "coverage"}:
        problems.append(f"kind must be mse, kappa or coverage, got {kind!r}")
    model_name = section.get("model", "")
    model_kwargs = {}
    if "model" in parser:
        for key, raw in parser["model"].items():
            if key == "family":
                model_name = raw
                continue
            try:
                model_kwargs[key] = float(raw)
            except ValueError:
                problems.append(f"model parameter {key}={raw!r} is not numeric")
    if not model_name:
        problems.append("a model name is required ([study] model= or [model] family=)")
    elif model_name not in MODEL_BUILDERS:
        problems.append(f"unknown model {model_name!r}")
    seed_text = section.get("seed", "")
    seed = ns.seed
    if seed is None and seed_text:
        try:
            seed = int(seed_text)
        except ValueError:
            problems.append(f"seed must be an integer, got {seed_text!r}")
    if seed is None:
        problems.append("a seed is required (config seed= or --seed)")

    def parse_list(key, cast, fallback):
        raw = section.get(key, "")
        if not raw:
            return fallback
        try:
            return tuple(cast(part) for part in raw.split(",") if part.strip())
        except ValueError:
            problems.append(f"{key} must be a comma list, got {raw!r}")
            return fallback

    deltas = parse_list("delta", float, (0.0,))
    n_list = parse_list("n", int, (500,))
    estimator_specs = tuple(
        part.strip()
        for part in section.get("estimators", "narrow,wide").split(",")
        if part.strip()
    )
    for spec in estimator_specs:
        if spec == "debias":
            continue
        try:
            rules.parse_estimator(spec)
        except ValueError as exc:
            problems.append(str(exc))
    try:
        replications = int(section.get("replications", "2000"))
    except ValueError:
        problems.append("replications must be an integer")
        replications = 2000
    try:
        level = float(section.get("level", "0.90"))
    except ValueError:
        problems.append("level must be a number")
        level = 0.90
    workers = ns.workers
    if workers is None:
        try:
            workers = int(section.get("workers", "1"))
        except ValueError:
            problems.append("workers must be an integer")
            workers = 1
    kappa_method = section.get("kappa_method", "score-cov")
    if kappa_method not in mcstudy.KAPPA_METHODS:
        problems.append(f"unknown kappa_method {kappa_method!r}")
    if problems:
        raise UsageError("config errors: " + "; ".join(problems))

    model = get_model(model_name, **model_kwargs)
    design_factory = None
    if "m" in section and model.name == "two-sample":
        first = int(section["m"])
        design_factory = lambda n: model.default_design(n, m=first)
    try:
        config = mcstudy.StudyConfig(
            model=model,
            estimand=section.get("estimand") or None,
            delta_grid=deltas,
            n_list=n_list,
            replications=replications,
            seed=seed,
            estimators=estimator_specs,
            kappa_method=kappa_method,
            level=level,
            workers=workers,
            design_factory=design_factory,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = ns.out or section.get("out", "study")
    return kind, config, out


def cmd_simulate(ns) -> int:
    kind, config, out = _study_config_from_file(ns)
    if kind == "kappa":
        study = mcstudy.kappa_by_simulation(config)
        path = out + ".csv"
        with open(path, "w", newline="") as fh:
            fh.write("method,n,replications,failures,kappa,se\n")
            fh.write(
                f"{study.method},{study.n},{study.replications},{study.failures},"
                f"{study.kappa!r},{study.se!r}\n"
            )
        print(f"kappa ({study.method}, n={study.n}): {study.kappa!r} +/- {study.se!r}")
        print(f"written: {path}")
        return EXIT_OK
    if kind == "mse":
        result = mcstudy.finite_sample_mse(config)
    else:
        result = mcstudy.coverage_study(config)
    csv_path = result.to_csv(out + ".csv")
    manifest_path = result.write_manifest(out + "-manifest.txt")
    for n, cross in result.crossings:
        print(f"narrow/wide nMSE crossing at n={n}: delta={cross!r}")
    for n, kap, se in result.kappa_rows:
        print(f"plug-in kappa at n={n}: {kap!r} +/- {se!r}")
    print(f"written: {csv_path}")
    print(f"written: {manifest_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selection probabilities


def cmd_select(ns) -> int:
    try:
        qs = [int(part) for part in ns.q.split(",") if part.strip()]
        levels = [float(part) for part in ns.level.split(",") if part.strip()]
    except ValueError:
        raise UsageError("q must be comma-separated integers, level comma floats") from None
    if any(q < 1 for q in qs):
        raise UsageError("q must be at least 1")
    a = float(ns.a)
    ncp = a * a
    print(f"departure size a: {a!r} (noncentrality {ncp!r})")
    for q in qs:
        parts = [f"q={q}"]
        parts.append(f"narrow_prob_aic={tolerance.aic_narrow_prob(ncp, q)!r}")
        if ns.n is not None:
            parts.append(
                f"narrow_prob_schwarz={tolerance.schwarz_narrow_prob(ncp, q, ns.n)!r}"
            )
        for level in levels:
            parts.append(f"power@{level:g}={tolerance.detection_power(a, level, q)!r}")
        print(" ".join(parts))
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mistol",
        description="Tolerance radii, compromise estimators and risk curves "
        "for narrow-versus-wide parametric models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tol = sub.add_parser("tolerance", help="radius and danger diagnostics")
    tol.add_argument("--model")
    tol.add_argument("--model-config")
    tol.add_argument("--n", type=int, required=True)
    tol.add_argument("--m", type=int, help="first group size (two-sample only)")
    tol.add_argument("--estimand")
    tol.add_argument("--out")
    tol.set_defaults(func=cmd_tolerance)

    rk = sub.add_parser("risk", help="risk curves as CSV")
    rk.add_argument("--estimator", action="append")
    rk.add_argument("--grid", default="0:5:0.05")
    rk.add_argument("--loss", default="l2")
    rk.add_argument("--out")
    rk.set_defaults(func=cmd_risk)

    est = sub.add_parser("estimate", help="fits and compromises on a data file")
    est.add_argument("--model")
    est.add_argument("--model-config")
    est.add_argument("--data", required=True)
    est.add_argument("--estimand")
    est.add_argument("--estimator", action="append")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="Monte Carlo study from a config file")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--workers", type=int)
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    sel = sub.add_parser("select", help="model-selection probabilities and power")
    sel.add_argument("--a", type=float, default=0.0)
    sel.add_argument("--q", default="1,2,3,4")
    sel.add_argument("--level", default="0.01,0.05,0.1,0.2")
    sel.add_argument("--n", type=int)
    sel.set_defaults(func=cmd_select)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    _echo_config(ns)
    try:
        return ns.func(ns)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
