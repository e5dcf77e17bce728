"""Command-line experiment runner.

Every command writes its outputs, a ``summary.json`` and a ``manifest.json`` into
``<outdir>/<command>-<timestamp>/``.  The manifest holds the fully resolved
configuration and output hashes but no timestamps, so ``--manifest`` replays a run
and reproduces every file byte for byte.

Exit codes: 0 success, 1 a verification assertion failed, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .coefficients import build_coefficient_table
from .config import SCHEMA, ExperimentConfig, load_config, parse_value
from .errors import SASolverError
from .models import GaussianMixtureData, GMMOracle
from .schedules import GridKind, make_time_grid
from .solver import SolverConfig, ddim_solve, initial_state, sa_solve
from .stochasticity import TauSchedule, ddim_tau_schedule
from . import verification as V

OUTDIR_ENV = "SASOLVER_OUTDIR"
COMMANDS = ("coeffs", "sample", "convergence", "marginals", "inequality", "perturbed", "ddim-equiv")

# flag -> config key
FLAGS = {
    "--schedule": "schedule.kind", "--beta-min": "schedule.beta_min", "--beta-max": "schedule.beta_max",
    "--sigma-min": "schedule.sigma_min", "--sigma-max": "schedule.sigma_max",
    "--grid": "grid.kind", "--M": "grid.M", "--rho": "grid.rho",
    "--tau": "tau.value", "--tau-pieces": "tau.pieces",
    "--sp": "solver.sp", "--sc": "solver.sc", "--coeff-mode": "coeff.mode",
    "--batch": "run.batch", "--seed": "run.seed",
    "--weights": "model.weights", "--means": "model.means", "--variances": "model.variances",
    "--epsilon": "model.perturb_epsilon", "--perturb-seed": "model.perturb_seed",
    "--levels": "verify.levels", "--L": "verify.L", "--M0": "verify.M0", "--n-paths": "verify.n_paths",
    "--dim": "verify.dim", "--n-samples": "verify.n_samples", "--taus": "verify.taus",
    "--epsilons": "verify.epsilons", "--n-boot": "verify.n_boot", "--n-intervals": "verify.n_intervals",
    "--eta": "verify.eta", "--assert": "verify.assert",
}


# -- output helpers ------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue().encode("utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")


def _run_dir(base: Path, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S-%f")
    path = base / f"{command}-{stamp}"
    k = 1
    while path.exists():
        path = base / f"{command}-{stamp}-{k}"
        k += 1
    path.mkdir(parents=True)
    return path


# -- commands --------------------------------------------------------------------
# each returns (files: {name: bytes}, summary: dict, passed: bool | None)


def cmd_coeffs(cfg: ExperimentConfig):
    """Tabulate predictor and corrector weights for one grid."""
    s = cfg.schedule()
    grid, ts = cfg.grid(s), cfg.tau(s)
    sp, sc = cfg["solver.sp"], cfg["solver.sc"]
    table = build_coefficient_table(s, ts, grid, sp, sc, cfg["coeff.mode"])
    lams = grid.lambdas(s)
    files = {}

    def dump(name, coeffs, width):
        header = ["i", "t_i", "t_next", "lambda_i", "state_decay"] + [f"b_{k}" for k in range(width)] + \
                 ["noise_std", "mode"]
        rows = []
        for i, c in enumerate(coeffs):
            w = list(c.model_weights) + [None] * (width - len(c.model_weights))
            rows.append([i, grid.times[i], grid.times[i + 1], lams[i], c.state_decay, *w, c.noise_std,
                         c.mode.value])
        files[name] = csv_bytes(header, rows)

    dump("coeffs.csv", table.predictor, sp)
    if table.corrector is not None:
        dump("coeffs_corrector.csv", table.corrector, sc + 1)
    return files, {"steps": grid.M, "checksum": table.checksum()}, None


def cmd_sample(cfg: ExperimentConfig):
    """Draw samples from the mixture oracle with the stochastic Adams solver."""
    s = cfg.schedule()
    grid, ts = cfg.grid(s), cfg.tau(s)
    model = cfg.model(s)
    rec = sa_solve(model, s, ts, grid, cfg.solver(), batch=cfg["run.batch"])
    header = [f"x{k}" for k in range(model.dim)]
    files = {"samples.csv": csv_bytes(header, rec.final_state.tolist())}
    summary = {"nfe_count": rec.nfe_count, "coefficient_checksum": rec.coefficient_checksum,
               "batch": rec.final_state.shape[0], "steps": grid.M}
    return files, summary, None


def _expected_slope(sp, sc, tau_max):
    if tau_max > 0:
        return None
    return sc + 1 if sc > 0 else sp


def cmd_convergence(cfg: ExperimentConfig):
    """Estimate the strong convergence order against a fine-grid reference."""
    s = cfg.schedule()
    ts = cfg.tau(s)
    dim = cfg["verify.dim"]
    mean = np.broadcast_to(np.array(cfg["verify.affine_mean"]), (dim,))
    model = GMMOracle(GaussianMixtureData.gaussian(mean, cfg["verify.affine_variance"], dim), s)
    base = make_time_grid(s, GridKind(cfg["grid.kind"]), cfg["verify.M0"], rho=cfg["grid.rho"])
    levels = list(range(1, cfg["verify.levels"] + 1))
    rep = V.strong_order(model, s, ts, base, cfg.solver(), levels, cfg["verify.n_paths"], cfg["verify.L"])
    expected = _expected_slope(cfg["solver.sp"], cfg["solver.sc"], ts.max_value)
    if expected is None:
        passed = 0.75 <= rep.slope <= 1.6
        target = "[0.75, 1.6]"
    else:
        passed = abs(rep.slope - expected) <= 0.35
        target = f"{expected} +/- 0.35"
    rows = [[r["h"], r["error_l1"], r["error_l2"], r["error_end"]] for r in rep.rows()]
    files = {"convergence.csv": csv_bytes(["h", "error_l1", "error_l2", "error_end"], rows)}
    summary = {"slope": rep.slope, "slope_end": rep.slope_end, "slope_drop_largest": rep.slope_drop_largest,
               "target": target, "pass": passed}
    return files, summary, passed


def cmd_marginals(cfg: ExperimentConfig):
    """KS test of solver marginals against the exact law for several taus."""
    s = cfg.schedule()
    grid = cfg.grid(s)
    rows = V.marginal_invariance(cfg.data(), s, cfg["verify.taus"], grid, cfg["verify.n_samples"], cfg.solver())
    files = {"marginals.csv": csv_bytes(["tau", "ks", "critical", "pass"],
                                        [[r["tau"], r["ks"], r["critical"], r["pass"]] for r in rows])}
    passed = all(r["pass"] for r in rows)
    return files, {"pass": passed, "max_ks": max(r["ks"] for r in rows)}, passed


def cmd_inequality(cfg: ExperimentConfig):
    """Scan random intervals for the data vs noise variance inequality."""
    from .schedules import NoiseSchedule
    schedules = [cfg.schedule()] if cfg["schedule.kind"] != "all" else \
        [NoiseSchedule.vp_linear(), NoiseSchedule.vp_cosine(), NoiseSchedule.ve(), NoiseSchedule.edm()]
    res = V.variance_inequality_scan(schedules, None, cfg["verify.n_intervals"], cfg["run.seed"])
    keys = ["schedule", "tau", "t_i", "t_next", "data_var", "noise_var", "margin"]
    files = {"inequality.csv": csv_bytes(keys, [[r[k] for k in keys] for r in res["rows"]])}
    summary = {k: res[k] for k in ("n", "violations", "min_margin", "pass")}
    return files, summary, res["pass"]


def cmd_perturbed(cfg: ExperimentConfig):
    """W1 error under a perturbed score, swept over epsilon and tau."""
    s = cfg.schedule()
    grid = cfg.grid(s)
    taus, eps = cfg["verify.taus"], cfg["verify.epsilons"]
    rows = V.perturbed_score_sweep(cfg.data(), s, eps, taus, grid, cfg["verify.n_samples"], cfg.solver(),
                                   perturb_seed=cfg["model.perturb_seed"], n_boot=cfg["verify.n_boot"])
    keys = ["epsilon", "tau", "w1", "se", "se_vs_first_tau"]
    files = {"w1.csv": csv_bytes(keys, [[r[k] for k in keys] for r in rows])}
    summary: dict = {}
    passed = None
    if taus and taus[0] == 0.0 and 1.0 in taus:
        e = max(eps)
        w0 = next(r for r in rows if r["epsilon"] == e and r["tau"] == 0.0)
        w1 = next(r for r in rows if r["epsilon"] == e and r["tau"] == 1.0)
        margin = w0["w1"] - w1["w1"]
        passed = bool(margin >= 3 * w1["se_vs_first_tau"])
        summary = {"epsilon": e, "w1_tau0": w0["w1"], "w1_tau1": w1["w1"], "margin": margin,
                   "se_diff": w1["se_vs_first_tau"], "pass": passed}
    return files, summary, passed


def cmd_ddim_equiv(cfg: ExperimentConfig):
    """Compare the one-step solver with DDIM(eta) step by step."""
    s = cfg.schedule()
    grid = cfg.grid(s)
    eta = cfg["verify.eta"]
    model = cfg.model(s)
    seed, batch = cfg["run.seed"], cfg["run.batch"]
    x0 = initial_state(s, grid.times[0], seed, np.arange(batch), model.dim)
    ts = ddim_tau_schedule(s, grid, eta)
    sa = sa_solve(model, s, ts, grid, SolverConfig(1, 0, "quadrature", seed, record_trajectory=True),
                  x_init=x0)
    dd = ddim_solve(model, s, grid, eta, x0, seed, record_trajectory=True)
    dev = np.max(np.abs(sa.trajectory - dd), axis=(1, 2))
    files = {"deviation.csv": csv_bytes(["i", "t", "max_abs_deviation"],
                                        [[i, grid.times[i], dev[i]] for i in range(dev.size)])}
    passed = bool(dev.max() <= 1e-10)
    return files, {"eta": eta, "max_deviation": float(dev.max()), "pass": passed}, passed


HANDLERS = {"coeffs": cmd_coeffs, "sample": cmd_sample, "convergence": cmd_convergence,
            "marginals": cmd_marginals, "inequality": cmd_inequality, "perturbed": cmd_perturbed,
            "ddim-equiv": cmd_ddim_equiv}


# -- argument handling ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--manifest", help="replay a previous run from its manifest.json")
    common.add_argument("--outdir", help=f"base output directory (default ${OUTDIR_ENV} or ./runs)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="set any config key, e.g. --set tau.fill=0.5")
    for flag, key in FLAGS.items():
        common.add_argument(flag, dest=key, default=argparse.SUPPRESS, metavar="X", help=f"sets {key}")
    p = argparse.ArgumentParser(prog="sasolver", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__doc__.splitlines()[0])
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.manifest:
        data = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if data.get("command") != args.command:
            raise SASolverError(f"manifest is for {data.get('command')!r}, not {args.command!r}")
        return ExperimentConfig.from_json(data["config"])
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in SCHEMA:
        if key in vars(args):
            overrides[key] = parse_value(key, getattr(args, key))
    for item in args.set:
        if "=" not in item:
            raise SASolverError(f"--set needs KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = parse_value(k.strip(), v)
    return cfg.update(overrides)


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        files, summary, passed = HANDLERS[args.command](cfg)
    except (SASolverError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"sasolver {args.command}: error: {exc}", file=sys.stderr)
        return 2

    base = Path(args.outdir or os.environ.get(OUTDIR_ENV) or "runs")
    out = _run_dir(base, args.command)
    files["summary.json"] = json_bytes(summary)
    for name, data in files.items():
        (out / name).write_bytes(data)
    manifest = {
        "command": args.command,
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config": cfg.to_json(),
        "outputs": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())},
    }
    (out / "manifest.json").write_bytes(json_bytes(manifest))
    print(out)
    for k, v in summary.items():
        print(f"  {k}: {_fmt(v) if not isinstance(v, str) else v}")
    if passed is False and cfg["verify.assert"]:
        print(f"sasolver {args.command}: assertion failed", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
