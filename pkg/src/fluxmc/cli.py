"""Command-line entry point: ``fluxmc <command> [options]``.

Exit codes: 0 success, 1 config error, 2 numerical failure,
3 solver non-convergence beyond the configured failure policy.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .ensemble import load_store, read_store_header, run_ensemble, save_store
from .errors import ConfigError, EnsembleFailureError, FluxMCError, StoreError
from .functional import (CSV_COLUMNS, functional_report, write_reports_json,
                         write_timeseries_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SOLVER = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config leaf by dotted path (repeatable)")
    p.add_argument("--seed", type=int, help="ensemble.master_seed")
    p.add_argument("--workers", type=int, help="ensemble.workers")
    p.add_argument("--out", help="output directory (output.dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("toy2d", "2-D toy study: analytic vs Monte Carlo covariance"),
                        ("factors", "inflation/deflation factor table"),
                        ("synthetic", "synthetic inversion with per-period functional UQ"),
                        ("coverage", "coverage simulation of the MC confidence intervals"),
                        ("report", "functional UQ report from a saved ensemble")]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "factors":
            p.add_argument("--M", dest="M_list", type=int, nargs="+", help="ensemble sizes")
            p.add_argument("--alpha", type=float)
        if name == "report":
            p.add_argument("--ensemble", required=True, help=".ens file")
    ens = sub.add_parser("ensemble", help="run or inspect ensemble files")
    ens_sub = ens.add_subparsers(dest="action", required=True)
    run = ens_sub.add_parser("run", help="run an ensemble and save it as .ens")
    _common(run)
    run.add_argument("--output", help="path of the .ens file (default OUT/ensemble.ens)")
    info = ens_sub.add_parser("info", help="print the header of an .ens file")
    info.add_argument("path")
    return parser


def _config(args, command: str) -> dict:
    base = "synthetic" if command in ("ensemble", "report") else command
    cfg = ex.load_config(base, args.config, args.overrides)
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("ensemble", {})["master_seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.setdefault("ensemble", {})["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        cfg.setdefault("output", {})["dir"] = args.out
    return cfg


def _outdir(cfg) -> Path:
    d = Path(cfg.get("output", {}).get("dir", "out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(obj, path: Path):
    clean = {k: v for k, v in obj.items() if not k.startswith("_")}
    path.write_text(json.dumps(clean, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not serializable: {type(o)}")


def _fmt_matrix(name, mat):
    rows = "\n".join("  [" + ", ".join(f"{v: .6g}" for v in row) + "]" for row in mat)
    return f"{name} =\n{rows}"


def cmd_toy2d(args) -> int:
    cfg = _config(args, "toy2d")
    res = ex.toy2d(cfg)
    out = _outdir(cfg)
    for w in res["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    for key in ("Sigma", "Sigma_cMAP", "Sigma_hat", "Gamma", "Cov_theta", "Gamma_hat"):
        print(_fmt_matrix(key, res[key]))
    verdict = "within" if res["within_bound"] else "EXCEEDS"
    print(f"operator-norm relative error {res['relative_error']:.6g} ({verdict} bound {res['bound']})")
    _dump(res, out / "toy2d.json")
    save_store(res["_store"], out / "toy2d.ens")
    return EXIT_OK


def cmd_factors(args) -> int:
    cfg = _config(args, "factors")
    fac = cfg.get("factors", {})
    M_list = args.M_list or fac.get("M", list(ex.TABLE2_M))
    alpha = args.alpha if args.alpha is not None else float(fac.get("alpha", 0.05))
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    rows = ex.factors_table(M_list, alpha)
    out = _outdir(cfg)
    lines = ["M,L,R"] + [f"{r['M']},{r['L']:.10f},{r['R']:.10f}" for r in rows]
    (out / "factors.csv").write_text("\n".join(lines) + "\n")
    print(f"{'M':>10}  {'L':>8}  {'R':>8}")
    for r in rows:
        print(f"{r['M']:>10}  {r['L']:8.4f}  {r['R']:8.4f}")
    return EXIT_OK


def cmd_synthetic(args) -> int:
    cfg = _config(args, "synthetic")
    res = ex.synthetic_inversion(cfg)
    out = _outdir(cfg)
    save_store(res["_store"], out / "ensemble.ens")
    write_reports_json(res["reports"], out / "reports.json")
    write_timeseries_csv(res["reports"], out / "timeseries.csv")
    runs = int(cfg.get("calibration", {}).get("runs", 0))
    if runs:
        res["calibration"] = ex.synthetic_calibration(cfg, runs)
    _dump({k: v for k, v in res.items() if k != "reports"}, out / "summary.json")
    print(f"{'label':<12}{'phi_map':>10}{'sigma_hat':>11}{'nominal':>22}{'inflated':>22}{'%red':>8}")
    for r in res["reports"]:
        nom = f"[{r.nominal_interval[0]:.4g}, {r.nominal_interval[1]:.4g}]"
        inf = f"[{r.inflated_interval[0]:.4g}, {r.inflated_interval[1]:.4g}]"
        red = "" if r.reduction_point is None else f"{100 * r.reduction_point:.1f}"
        print(f"{r.label:<12}{r.phi_map:>10.4g}{r.sigma_hat:>11.4g}{nom:>22}{inf:>22}{red:>8}")
    if "cross_path_max_rel_error" in res:
        print(f"analytic vs variational members: max relative difference "
              f"{res['cross_path_max_rel_error']:.3g}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _config(args, "coverage")
    res = ex.coverage(cfg)
    _dump(res, _outdir(cfg) / "coverage.json")
    for key in ("variance_ci", "sd_ci", "endpoint_brackets"):
        print(f"{key:<18} coverage {res[key]['coverage']:.4f} +/- {res[key]['stderr']:.4f}")
    print(f"pivot KS statistic {res['pivot_ks']['statistic']:.4g}, p = {res['pivot_ks']['pvalue']:.4g}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    if args.action == "info":
        print(json.dumps(read_store_header(args.path), indent=2))
        return EXIT_OK
    cfg = _config(args, "ensemble")
    op, prior, noise, mu = ex.build_problem(cfg)
    store = run_ensemble(ex.ensemble_config(cfg, op, prior, noise, mu))
    path = Path(args.output) if args.output else _outdir(cfg) / "ensemble.ens"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_store(store, path)
    print(f"wrote {store.M} members (m={store.m}) to {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args, "report")
    store = load_store(args.ensemble)
    op, prior, noise, mu = ex.build_problem(cfg)
    if store.m != op.m:
        raise ConfigError(f"ensemble has m={store.m}, config problem has m={op.m}")
    uq = cfg.get("uq", {})
    y = ex.observations(cfg, op, noise, mu)
    solver = cfg.get("ensemble", {}).get("solver", "variational")
    c_central, _ = ex.central_inversion(op, noise, prior, mu, y, cfg, solver)
    reports = []
    for spec in ex.functional_specs(cfg, op.m):
        phi_map = float(spec.effective_weights(mu) @ c_central)
        reports.append(functional_report(store, spec, phi_map, float(uq.get("alpha", 0.05)),
                                         float(uq.get("gamma", 0.05)), prior=prior,
                                         prior_convention=uq.get("prior_convention", "model")))
    out = _outdir(cfg)
    write_reports_json(reports, out / "reports.json")
    write_timeseries_csv(reports, out / "timeseries.csv")
    print(",".join(CSV_COLUMNS[:5]))
    for r in reports:
        print(f"{r.label},{r.phi_map:.6g},{r.sigma_hat:.6g},{r.L:.6g},{r.R:.6g}")
    return EXIT_OK


COMMANDS = {"toy2d": cmd_toy2d, "factors": cmd_factors, "synthetic": cmd_synthetic,
            "coverage": cmd_coverage, "ensemble": cmd_ensemble, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnsembleFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (StoreError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FluxMCError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
