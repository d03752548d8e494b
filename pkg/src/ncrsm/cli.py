"""Command-line entry point: simulate, identify, evaluate, smooth, benchmark.

Exit codes: 0 success, 1 invalid input or unmet benchmark criteria,
2 numerical divergence. Diagnostics go to standard error, data to files.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .em import EmConfig, run
from .estep import FilterDivergenceError, e_step
from .io import (
    IDENTIFY_KEYS,
    SIM_KEYS,
    ParseError,
    RunManifest,
    Timer,
    env_seed,
    file_sha256,
    load_config,
    load_params,
    model_from_config,
    params_from_dict,
    read_trajectory,
    save_params,
    save_report,
    write_trajectory,
)
from .metrics import match_rate, param_error, rel_state_error
from .model import Dims, validate
from .simulate import TrajectoryDivergenceError, simulate_model

log = logging.getLogger("ncrsm")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2


def _manifest(command, config, seeds, inputs, outputs, timer, stop=None, assumptions=None):
    return RunManifest(
        tool_version=__version__, command=command, config=config, seeds=seeds,
        input_hashes={str(p): file_sha256(p) for p in inputs},
        output_files=[str(p) for p in outputs], wall_clock_s=round(timer.elapsed, 3),
        stop_reason=stop, assumptions=assumptions or {},
    )


def _check_data_dims(traj, dims):
    got = (traj.y.shape[1], traj.x_c0.size, traj.x_aT1.size)
    want = (dims.n_y, dims.n_xc, dims.n_xa)
    if got != want:
        raise ValueError(f"data has (n_y, n_xc, n_xa) = {got}, expected {want}")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, SIM_KEYS)
    base = Path(args.config).parent
    params = model_from_config(cfg, base)
    report = validate(params, allow_psd=True)
    if not report.ok:
        raise ValueError(f"invalid model: {report}")
    d = params.dims
    seed = env_seed(cfg.get("seed", 0))
    T = int(cfg.get("T", 1000))
    x_c0 = np.asarray(cfg.get("x_c0", np.zeros(d.n_xc)), dtype=float)
    x_aT1 = np.asarray(cfg.get("x_aT1", np.zeros(d.n_xa)), dtype=float)
    cap = float(cfg.get("state_cap", 1e6))
    out = Path(args.out)
    with Timer() as timer:
        traj = simulate_model(params, T, seed=seed, x_c0=x_c0, x_aT1=x_aT1, state_cap=cap)
    data, truth = out.with_suffix(".csv"), out.with_suffix(".truth.json")
    write_trajectory(traj, data)
    save_params(params, truth)
    assumptions = {}
    if "x_c0" not in cfg or "x_aT1" not in cfg:
        assumptions["boundary_states"] = "zero where not given"
    _manifest("simulate", cfg, {"seed": seed}, [args.config], [data, truth], timer,
              assumptions=assumptions).write(out.with_suffix(".manifest.json"))
    log.info("wrote %s (T=%d) and %s", data, T, truth)
    return EXIT_OK


def cmd_identify(args) -> int:
    dims = Dims.parse(args.dims)
    cfg = load_config(args.config, IDENTIFY_KEYS) if args.config else {}
    em_cfg = dict(cfg.get("em", {}))
    if "seed" in cfg:
        em_cfg.setdefault("seed", cfg["seed"])
    try:
        config = EmConfig.from_dict(em_cfg).with_env_seed()
    except TypeError as exc:
        raise ValueError(f"bad EM config: {exc}") from None
    if "init_model" in cfg:
        m = cfg["init_model"]
        init = load_params(Path(args.config).parent / m) if isinstance(m, str) else params_from_dict(m)
        config = EmConfig.from_dict({**em_cfg, "init_scheme": "user-supplied"}).with_env_seed()
        from dataclasses import replace

        config = replace(config, init_params=init)
    traj = read_trajectory(args.data, dims.n_xc, dims.n_xa)
    _check_data_dims(traj, dims)
    out = Path(args.out)
    with Timer() as timer:
        rep = run(traj.y, (traj.x_c0, traj.x_aT1), dims, config)
    report_path, params_path = out.with_suffix(".report.json"), out.with_suffix(".params.json")
    save_report(rep, report_path)
    save_params(rep.final_params, params_path)
    inputs = [args.data] + ([args.config] if args.config else [])
    _manifest("identify", config.to_dict(), {"seed": config.seed}, inputs, [report_path, params_path], timer,
              stop=rep.stop_reason,
              assumptions={"q_expectation": "filtered means plus covariance trace terms, cross-time errors ignored"},
              ).write(out.with_suffix(".manifest.json"))
    log.info("stop reason %s after %d iterations, log-likelihood %.10g",
             rep.stop_reason, rep.n_iters, rep.final_loglik)
    return EXIT_DIVERGED if rep.stop_reason == "divergence" else EXIT_OK


def cmd_evaluate(args) -> int:
    truth = load_params(args.truth)
    est = load_params(args.estimate)
    err = param_error(truth, est)
    rows = [{"metric": "err_inf_" + r["matrix"], "mode": r["mode"], "value": r["err_inf"]} for r in err.table()]
    if args.data:
        d = est.dims
        traj = read_trajectory(args.data, d.n_xc, d.n_xa)
        a, f = e_step(est, traj.y, traj.x_c0, traj.x_aT1)
        if traj.seq_true is not None:
            rows.append({"metric": "match_rate_c", "mode": 0, "value": match_rate(traj.seq_true.s_c, a.s_c_hat, d.m_c)})
            rows.append({"metric": "match_rate_a", "mode": 0, "value": match_rate(traj.seq_true.s_a, a.s_a_hat, d.m_a)})
        if traj.has_truth:
            rows.append({"metric": "delta_c", "mode": 0, "value": rel_state_error(traj.x_c_true, f.x_c_hat)})
            rows.append({"metric": "delta_a", "mode": 0, "value": rel_state_error(traj.x_a_true, f.x_a_hat)})
    out = Path(args.out) if args.out else Path(args.estimate).with_suffix(".metrics.csv")
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("metric", "mode", "value"))
        w.writeheader()
        for r in rows:
            w.writerow({**r, "value": repr(float(r["value"]))})
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_smooth(args) -> int:
    params = load_params(args.model)
    d = params.dims
    traj = read_trajectory(args.data, d.n_xc, d.n_xa)
    _check_data_dims(traj, d)
    a, f = e_step(params, traj.y, traj.x_c0, traj.x_aT1)
    y_hat = (np.einsum("tij,tj->ti", params.C_c[a.s_c_hat], f.x_c_hat)
             + np.einsum("tij,tj->ti", params.C_a[a.s_a_hat], f.x_a_hat))
    header = (["t"] + [f"yhat_{i + 1}" for i in range(d.n_y)] + [f"xc_hat_{i + 1}" for i in range(d.n_xc)]
              + [f"xa_hat_{i + 1}" for i in range(d.n_xa)] + ["sc_hat", "sa_hat"])
    lines = [",".join(header)]
    for t in range(traj.T):
        vals = [repr(float(v)) for v in (*y_hat[t], *f.x_c_hat[t], *f.x_a_hat[t])]
        lines.append(",".join([str(t + 1), *vals, str(a.s_c_hat[t] + 1), str(a.s_a_hat[t] + 1)]))
    Path(args.out).write_text("\n".join(lines) + "\n")
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .acceptance import SUITES, run_suite

    if args.suite not in SUITES:
        raise ValueError(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}")
    results = run_suite(SUITES[args.suite], diagnostics=not args.no_diagnostics, jobs=args.jobs,
                        emit=lambda s: print(s, flush=True))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ncrsm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="per-iteration progress on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a trajectory from a model config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="estimate parameters with EM")
    p.add_argument("--data", required=True)
    p.add_argument("--dims", required=True, help="n_y,n_xc,n_xa,m_c,m_a")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="compare an estimate with the true model")
    p.add_argument("--truth", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("smooth", help="state estimates and fitted outputs for a fixed model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("benchmark", help="run acceptance criteria")
    p.add_argument("--suite", default="acceptance")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-diagnostics", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        logging.getLogger("ncrsm").setLevel(logging.INFO)
        logging.getLogger("ncrsm.em").setLevel(logging.WARNING)
        logging.getLogger("ncrsm.metrics").setLevel(logging.ERROR)
    try:
        return args.func(args)
    except (TrajectoryDivergenceError, FilterDivergenceError, FloatingPointError) as exc:
        log.error("numerical divergence: %s", exc)
        return EXIT_DIVERGED
    except (ParseError, ValueError, KeyError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
