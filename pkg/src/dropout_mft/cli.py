"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 infeasible physics,
4 acceptance failure, 5 I/O failure. Errors are also written to stderr as a
one-line JSON record.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import activations as acts
from . import criticality_lab as lab
from . import landau
from . import scheduler as sch
from .errors import InvalidArgument, MFTError
from .finite_width import SimConfig, simulate
from .mft import (
    ChannelParams,
    build_channel,
    critical_sigma_w,
    variance_fixed_point,
)

OUT_DIR_ENV = "DROPOUT_MFT_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_ACCEPTANCE, EXIT_IO = 0, 2, 3, 4, 5


class AcceptanceFailure(Exception):
    pass


class MissingInput(OSError):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _resolve(path: str | None, default_name: str) -> Path:
    base = Path(os.environ.get(OUT_DIR_ENV, "."))
    p = Path(path) if path else Path(default_name)
    return p if p.is_absolute() else base / p


def _config_record(args) -> dict:
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _csv_text(args, header, rows, extra_comments=()) -> str:
    buf = io.StringIO()
    buf.write(f"# dropout-mft {__version__} {args.command}\n")
    buf.write(f"# config={json.dumps(_jsonable(_config_record(args)), sort_keys=True)}\n")
    for line in extra_comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_doc(args, payload: dict) -> str:
    return _dumps({"command": args.command, "config": _config_record(args), "version": __version__, "result": payload})


def _params(args) -> ChannelParams:
    act = acts.get_activation(args.activation)
    if args.sigma_w_sq is None:
        sw = critical_sigma_w(act, args.sigma_b_sq, args.rho)
    else:
        sw = args.sigma_w_sq
    return ChannelParams(sw, args.sigma_b_sq, args.rho, act)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InvalidArgument(f"expected a comma-separated list of numbers, got {text!r}") from None


# --- commands --------------------------------------------------------------


def cmd_fixed_point(args) -> int:
    if args.config:
        try:
            params = ChannelParams.from_json(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config is not valid JSON: {exc}") from None
    else:
        params = _params(args)
    vfp = variance_fixed_point(params)
    ch = build_channel(params)
    fp = ch.fixed_point(args.seed_c)
    payload = {
        "params": params.to_dict(),
        "q_star": vfp.q,
        "variance_status": vfp.status.value,
        "h": ch.h,
        "chi": ch.chi,
        "t": ch.chi - 1.0,
        "g": ch.g,
        "kappa": ch.kappa,
        "class": ch.smoothness.value,
        "c_star": fp.c_star,
        "m": fp.m,
        "slope": fp.slope,
        "xi": fp.xi,
        "converged": fp.converged,
        "iterations": fp.iterations,
    }
    path = _write(_resolve(args.out, "fixed_point.json"), _json_doc(args, payload))
    print(path)
    return EXIT_OK


def cmd_phase_diagram(args) -> int:
    act = acts.get_activation(args.activation)
    sws = np.geomspace(args.sigma_w_min, args.sigma_w_max, args.n_sigma_w)
    rows = []
    for rho in _floats(args.rho_values):
        for sw in sws:
            p = ChannelParams(float(sw), args.sigma_b_sq, rho, act)
            try:
                ch = build_channel(p)
                fp = ch.fixed_point()
                rows.append([float(sw), args.sigma_b_sq, rho, ch.q, ch.chi, ch.h, fp.c_star, fp.m, fp.xi, "ok"])
            except MFTError as exc:
                rows.append([float(sw), args.sigma_b_sq, rho, "", "", "", "", "", "", type(exc).__name__])
    header = ["sigma_w_sq", "sigma_b_sq", "rho", "q_star", "chi", "h", "c_star", "m", "xi", "status"]
    path = _write(_resolve(args.out, "phase_diagram.csv"), _csv_text(args, header, rows))
    print(path)
    return EXIT_OK


def cmd_exponents(args) -> int:
    if args.all:
        rep = lab.exponent_report(sigma_b_sq=args.sigma_b_sq)
        text = f"# dropout-mft {__version__} exponents\n"
        text += f"# config={json.dumps(_jsonable(_config_record(args)), sort_keys=True)}\n"
        path = _write(_resolve(args.out, "exponents.csv"), text + rep.to_csv())
        print(path)
        return EXIT_OK if rep.all_passed else EXIT_ACCEPTANCE
    if not args.exponent:
        raise InvalidArgument("give --exponent NAME or --all")
    fit = lab.measure(args.exponent, args.activation, sigma_b_sq=args.sigma_b_sq)
    text = f"# dropout-mft {__version__} exponents\n"
    text += f"# config={json.dumps(_jsonable(_config_record(args)), sort_keys=True)}\n"
    path = _write(_resolve(args.out, f"{args.exponent}_{args.activation}.csv"), text + lab.sweep_csv(fit))
    print(path)
    return EXIT_OK


def cmd_collapse(args) -> int:
    act = acts.get_activation(args.activation)
    from . import acceptance

    if act.is_kinked:
        ts = _floats(args.t_values) if args.t_values else acceptance.KINKED_COLLAPSE_T
        hs = _floats(args.h_values) if args.h_values else acceptance.KINKED_COLLAPSE_H
    else:
        ts = _floats(args.t_values) if args.t_values else acceptance.SMOOTH_COLLAPSE_T
        hs = _floats(args.h_values) if args.h_values else acceptance.SMOOTH_COLLAPSE_H
    res = lab.collapse_sweep(act, ts, hs, args.sigma_b_sq)
    buf = io.StringIO()
    buf.write(f"# dropout-mft {__version__} collapse\n")
    buf.write(f"# config={json.dumps(_jsonable(_config_record(args)), sort_keys=True)}\n")
    res.write_csv(buf, [f"class={res.kind.value} max_abs_residual={res.max_abs_residual!r}"])
    path = _write(_resolve(args.out, f"collapse_{act.name}.csv"), buf.getvalue())
    print(path)
    return EXIT_OK


def cmd_hermite(args) -> int:
    act = acts.get_activation(args.activation)
    spec = acts.hermite_coeffs(act, args.q, args.n_max)
    payload = {
        "activation": act.name,
        "q": args.q,
        "coeffs": list(spec.coeffs),
        "sum_sq": spec.sum_sq,
        "mean_degree": spec.mean_degree,
        "rayleigh_quotient": acts.rayleigh_quotient(act, args.q),
    }
    if args.n_max >= 60:
        cls = acts.classify_universality(spec)
        payload["classification"] = {
            "class": cls.smoothness.value,
            "tail_slope": cls.tail_slope,
            "r_squared": cls.r_squared,
            "degenerate": cls.degenerate,
        }
    if args.format == "csv":
        rows = [[n, a] for n, a in enumerate(spec.coeffs)]
        text = _csv_text(args, ["n", "a_n"], rows, [f"sum_sq={spec.sum_sq!r} mean_degree={spec.mean_degree!r}"])
        path = _write(_resolve(args.out, f"hermite_{act.name}.csv"), text)
    else:
        path = _write(_resolve(args.out, f"hermite_{act.name}.json"), _json_doc(args, payload))
    print(path)
    return EXIT_OK


def cmd_schedule(args) -> int:
    prof = sch.schedule_library(args.kind, args.h_bar, args.h_max, args.depth)
    cls = args.cls
    if cls == "smooth":
        act = acts.get_activation(args.activation or "tanh")
        if args.g is None:
            raise InvalidArgument("the smooth class needs --g")
        coeff = sch.smooth_coeff(args.g)
    else:
        act = acts.get_activation(args.activation or "relu")
        coeff = sch.kinked_coeff()
    if act is acts.RELU and args.sigma_b_sq == 0.0:
        params = ChannelParams(2.0, 0.0, 1.0, act)
    else:
        params = ChannelParams(critical_sigma_w(act, args.sigma_b_sq, 1.0), args.sigma_b_sq, 1.0, act)
    keep = [sch.h_to_keep_prob(h, params) for h in prof.h_per_layer]
    payload = {
        "label": prof.label,
        "L": prof.L,
        "h_bar": prof.h_bar,
        "h_max": prof.h_max,
        "h_per_layer": list(prof.h_per_layer),
        "keep_prob_per_layer": keep,
        "xi_eff": sch.xi_eff(prof, cls, coeff),
        "class": cls,
        "keep_prob_params": params.to_dict(),
    }
    path = _write(_resolve(args.out, f"schedule_{args.kind}.json"), _json_doc(args, payload))
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    params = _params(args)
    res = simulate(SimConfig(params, args.width, args.depth, args.c0, args.trials, args.seed))
    q_th, c_th = res.theory()
    z = res.z_scores()
    rows = []
    for ell in range(args.depth):
        rows.append([ell + 1, res.q_hat[ell], res.q_se[ell], q_th[ell + 1], res.c_hat[ell], res.c_se[ell], c_th[ell + 1], z[ell]])
    header = ["layer", "q_hat", "q_se", "q_theory", "c_hat", "c_se", "c_theory", "z"]
    ok = bool(np.all(np.abs(np.nan_to_num(z)) <= 3.0))
    text = _csv_text(args, header, rows, [f"params={params.to_json()}", f"all_within_3se={ok}"])
    path = _write(_resolve(args.out, "validation.csv"), text)
    print(path)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def cmd_report(args) -> int:
    from . import acceptance

    cache = _resolve(args.out, "report.json")
    if args.no_compute:
        if not cache.exists():
            raise MissingInput(f"missing upstream report {cache}; rerun without --no-compute")
        doc = json.loads(cache.read_text())
        failed = [c["number"] for c in doc["criteria"] if not c["passed"]]
        print(cache)
        return EXIT_OK if not failed else EXIT_ACCEPTANCE
    numbers = [int(x) for x in _floats(args.criteria)] if args.criteria else None
    results = acceptance.run(numbers)
    failed = [r.number for r in results if not r.passed]
    doc = {
        "version": __version__,
        "status": "pass" if not failed else "partial_failure",
        "failed": failed,
        # runtimes are left out so reruns are byte-identical
        "criteria": [{"number": r.number, "title": r.title, "passed": r.passed, "details": r.details} for r in results],
    }
    _write(cache, _dumps(doc))
    for r in results:
        print(f"criterion {r.number} ({r.title}): {'PASS' if r.passed else 'FAIL'}")
    print(cache)
    return EXIT_OK if not failed else EXIT_ACCEPTANCE


# --- parser ----------------------------------------------------------------


def _theory_flags(p, sigma_w_default=None):
    p.add_argument("--activation", default="relu", help="registered activation name")
    p.add_argument("--sigma-w-sq", type=float, default=sigma_w_default, help="weight variance (default: critical)")
    p.add_argument("--sigma-b-sq", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=1.0, help="keep probability")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropout-mft", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixed-point", help="fixed point, field and susceptibilities at one theory point")
    _theory_flags(p)
    p.add_argument("--config", help="JSON theory point {activation, sigma_w_sq, sigma_b_sq, rho}")
    p.add_argument("--seed-c", type=float, default=0.99, help="initial correlation for the fixed-point search")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fixed_point)

    p = sub.add_parser("phase-diagram", help="fixed points over a sigma_w^2 x rho grid")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--sigma-b-sq", type=float, default=lab.SIGMA_B_SQ)
    p.add_argument("--sigma-w-min", type=float, default=0.5)
    p.add_argument("--sigma-w-max", type=float, default=4.0)
    p.add_argument("--n-sigma-w", type=int, default=40)
    p.add_argument("--rho-values", default="1.0,0.99,0.9")
    p.add_argument("--out")
    p.set_defaults(func=cmd_phase_diagram)

    p = sub.add_parser("exponents", help="critical exponents from the full recursion")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--exponent", choices=lab.EXPONENTS)
    p.add_argument("--all", action="store_true", help="all exponents for tanh and ReLU")
    p.add_argument("--sigma-b-sq", type=float, default=lab.SIGMA_B_SQ)
    p.add_argument("--out")
    p.set_defaults(func=cmd_exponents)

    p = sub.add_parser("collapse", help="two-parameter scaling collapse")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--t-values", help="comma-separated reduced temperatures")
    p.add_argument("--h-values", help="comma-separated fields")
    p.add_argument("--sigma-b-sq", type=float, default=lab.SIGMA_B_SQ)
    p.add_argument("--out")
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("hermite", help="Hermite spectrum and universality diagnostic")
    p.add_argument("--activation", default="relu")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--n-max", type=int, default=120)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_hermite)

    p = sub.add_parser("schedule", help="depth profile, keep probabilities and xi_eff")
    p.add_argument("--kind", choices=sch.KINDS, default="step_early")
    p.add_argument("--h-bar", type=float, default=0.1)
    p.add_argument("--h-max", type=float, default=0.2)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--class", dest="cls", choices=("smooth", "kinked"), default="kinked")
    p.add_argument("--g", type=float, help="smooth-class curvature g")
    p.add_argument("--activation", help="activation used to convert fields to keep probabilities")
    p.add_argument("--sigma-b-sq", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("validate", help="finite-width Monte Carlo against the Gaussian channel")
    _theory_flags(p)
    p.add_argument("--width", type=int, default=4096)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--c0", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="run the acceptance criteria and write one JSON summary")
    p.add_argument("--criteria", help="comma-separated subset, e.g. 1,3,5")
    p.add_argument("--no-compute", action="store_true", help="only read a previous report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def _error(exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MFTError as exc:
        return _error(exc, exc.exit_code)
    except OSError as exc:
        return _error(exc, EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
