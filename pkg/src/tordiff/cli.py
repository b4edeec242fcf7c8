"""Command-line interface: simulation, fitting, density grids, the KL
benchmark, the relative-efficiency Monte Carlo, and the evolutionary
HMM workflows.  Exit codes: 0 success, 2 configuration error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evo, io
from .bench import Scenario, run_re_experiment
from .diffusion import WNParams
from .exceptions import ConfigError, NumericError
from .fpe import FpeConfig, GridDensity, _grid_points, kl_curves, solve_fpe, smoothed_tpd
from .inference import FitConfig, fit_mle
from .torus import wrap
from .tpd import TpdKind, simulate_euler
from .tpd import _euler_log_tpd, _so_log_tpd, _wou_log_tpd

__all__ = ["main"]


def _default_threads():
    env = os.environ.get("TORDIFF_THREADS")
    if env is not None:
        return int(env)
    return os.cpu_count() or 1


def _add_global_flags(p):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (default: TORDIFF_THREADS or all cores)")
    p.add_argument("--out", type=str, default=None,
                   help="output path (default: stdout)")


def _add_param_flags(p):
    p.add_argument("--p", type=int, choices=(1, 2), default=2,
                   help="torus dimension")
    p.add_argument("--alpha", type=float, help="drift strength (p=1)")
    p.add_argument("--mu", type=float, help="mean angle (p=1)")
    p.add_argument("--sigma", type=float, help="diffusion std dev (p=1)")
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=1.0)
    p.add_argument("--alpha3", type=float, default=0.0)
    p.add_argument("--mu1", type=float, default=0.0)
    p.add_argument("--mu2", type=float, default=0.0)
    p.add_argument("--sigma1", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)


def _params_from_args(args) -> WNParams:
    if args.p == 1:
        return WNParams(
            alpha=[1.0 if args.alpha is None else args.alpha],
            mu=[0.0 if args.mu is None else args.mu],
            sigma=[1.0 if args.sigma is None else args.sigma],
        )
    return WNParams(
        alpha=[args.alpha1, args.alpha2, args.alpha3],
        mu=[args.mu1, args.mu2],
        sigma=[args.sigma1, args.sigma2],
    )


def _angles(text, p):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != p:
        raise ConfigError(f"expected {p} comma-separated angles, got {text!r}")
    return wrap(np.array(vals))


def _emit(args, text):
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _threads(args):
    return args.threads if args.threads is not None else _default_threads()


# --- subcommands ------------------------------------------------------------


def _cmd_simulate(args):
    params = _params_from_args(args)
    theta0 = params.mu if args.theta0 is None else _angles(args.theta0, params.p)
    traj = simulate_euler(
        params, theta0, args.delta, args.n,
        refine_m=args.refine, seed=args.seed,
    )
    _emit(args, io.trajectory_to_csv(traj))
    return 0


def _cmd_fit(args):
    traj = io.trajectory_from_csv(Path(args.traj).read_text())
    fix_sigma = None
    if args.fix_sigma is not None:
        fix_sigma = tuple(float(v) for v in args.fix_sigma.split(","))
        if len(fix_sigma) != traj.p:
            raise ConfigError("--fix-sigma must match the trajectory dimension")
    cfg = FitConfig(
        kind=args.kind,
        include_stationary_start=not args.no_stationary_start,
        fix_sigma=fix_sigma,
    )
    res = fit_mle(traj, cfg)
    _emit(args, io.fit_result_to_json(res, kind=TpdKind.parse(args.kind).value))
    return 0


def _cmd_tpd_grid(args):
    params = _params_from_args(args)
    cfg = FpeConfig(mx=args.mx, my=args.my, mt_per_unit=args.mt_per_unit,
                    sigma0=args.sigma0)
    theta_s = _angles(args.theta_s, params.p)
    if args.kind == "pde":
        grid = solve_fpe(params, theta_s, args.t, cfg)
    elif args.smooth:
        grid = smoothed_tpd(args.kind, params, theta_s, args.t, cfg.sigma0, cfg)
    else:
        kern = {
            TpdKind.EULER: _euler_log_tpd,
            TpdKind.SHOJI_OZAKI: _so_log_tpd,
            TpdKind.WOU: _wou_log_tpd,
        }[TpdKind.parse(args.kind)]
        pts = _grid_points(cfg, params.p)
        vals = np.exp(
            kern(pts, np.broadcast_to(theta_s, pts.shape), params, args.t,
                 params.truncation())
        )
        if params.p == 2:
            vals = vals.reshape(cfg.mx, cfg.my)
        grid = GridDensity(vals)
    _emit(args, io.grid_to_csv(grid))
    return 0


def _cmd_kl_curves(args):
    params = _params_from_args(args)
    cfg = FpeConfig(mx=args.mx, my=args.my, mt_per_unit=args.mt_per_unit,
                    sigma0=args.sigma0)
    kinds = [TpdKind.parse(k) for k in args.kinds.split(",")]
    ts = [float(v) for v in args.t_grid.split(",")]
    rows = kl_curves(params, kinds, ts, cfg, outer_n=args.outer,
                     n_jobs=_threads(args))
    lines = [io.CSV_HEADER, "t,kind,divergence"]
    for t, kind, d in rows:
        lines.append(f"{t!r},{kind},{d!r}")
    _emit(args, "\n".join(lines) + "\n")
    return 0


def _cmd_re_bench(args):
    scn = io.scenario_from_json(Path(args.scenario).read_text())
    if args.paper_scale:
        scn = Scenario(
            params=scn.params, delta_list=scn.delta_list, n_obs=scn.n_obs,
            replicates=1000, kinds=scn.kinds, seed=scn.seed,
        )
    table = run_re_experiment(scn, n_jobs=_threads(args))
    _emit(args, io.retable_to_csv(table))
    return 0


def _cmd_hmm_train(args):
    pairs = evo.load_pairs_jsonl(Path(args.data).read_text())
    if args.init is not None:
        init = evo.model_from_json(Path(args.init).read_text())
    else:
        init = evo.random_model(args.states, n_aa=args.n_aa, n_ss=args.n_ss,
                                seed=args.seed)
    res = evo.stem_train(
        init, pairs, iters=args.iters, seed=args.seed,
        prior_rate=args.prior_rate, mh_steps=args.mh_steps,
    )
    _emit(args, evo.model_to_json(res.model))
    if args.log_out:
        Path(args.log_out).write_text(
            "\n".join(repr(v) for v in res.loglik_trace) + "\n"
        )
    return 0


def _cmd_hmm_loglik(args):
    model = evo.model_from_json(Path(args.model).read_text())
    pairs = evo.load_pairs_jsonl(Path(args.data).read_text())
    vals = [evo.pair_loglik(model, p, args.t) for p in pairs]
    _emit(args, json.dumps(
        {"t": args.t, "loglik": vals, "total": float(np.sum(vals))}, indent=2
    ) + "\n")
    return 0


def _cmd_hmm_predict(args):
    model = evo.model_from_json(Path(args.model).read_text())
    pairs = evo.load_pairs_jsonl(Path(args.data).read_text())
    if not (0 <= args.pair < len(pairs)):
        raise ConfigError(f"--pair {args.pair} out of range")
    draws = evo.predict_missing_chain(
        model, pairs[args.pair], args.prior_rate, args.n_samples,
        seed=args.seed,
    )
    _emit(args, json.dumps(
        {"pair": args.pair, "n_samples": args.n_samples,
         "x_b_samples": draws.tolist()}, indent=2
    ) + "\n")
    return 0


def _cmd_hmm_time_posterior(args):
    model = evo.model_from_json(Path(args.model).read_text())
    pairs = evo.load_pairs_jsonl(Path(args.data).read_text())
    if not (0 <= args.pair < len(pairs)):
        raise ConfigError(f"--pair {args.pair} out of range")
    ts = evo.mh_time_posterior(
        model, pairs[args.pair], args.prior_rate, args.n_samples,
        seed=args.seed,
    )
    lines = [io.CSV_HEADER, "t"] + [repr(float(v)) for v in ts]
    _emit(args, "\n".join(lines) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tordiff",
        description="Toroidal diffusions: simulation, inference, benchmarks, "
                    "and the evolutionary pair HMM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a WN trajectory to CSV")
    _add_param_flags(p)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--refine", type=int, default=10,
                   help="internal Euler steps per observation")
    p.add_argument("--theta0", type=str, default=None,
                   help="start point, comma separated (default: mu)")
    _add_global_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit WN parameters to a trajectory CSV")
    p.add_argument("--traj", type=str, required=True)
    p.add_argument("--kind", type=str, default="wou")
    p.add_argument("--fix-sigma", type=str, default=None,
                   help="known sigma, comma separated")
    p.add_argument("--no-stationary-start", action="store_true")
    _add_global_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("tpd-grid", help="density grid CSV for a tpd kind or the PDE")
    _add_param_flags(p)
    p.add_argument("--kind", type=str, required=True,
                   help="euler | so | wou | pde")
    p.add_argument("--theta-s", type=str, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--mx", type=int, default=240)
    p.add_argument("--my", type=int, default=240)
    p.add_argument("--mt-per-unit", type=int, default=1500)
    p.add_argument("--sigma0", type=float, default=0.1)
    p.add_argument("--smooth", action="store_true",
                   help="smooth the approximation over the initial blob")
    _add_global_flags(p)
    p.set_defaults(func=_cmd_tpd_grid)

    p = sub.add_parser("kl-curves", help="stationary-weighted KL divergence table")
    _add_param_flags(p)
    p.add_argument("--kinds", type=str, default="euler,so,wou")
    p.add_argument("--t-grid", type=str, required=True)
    p.add_argument("--mx", type=int, default=240)
    p.add_argument("--my", type=int, default=240)
    p.add_argument("--mt-per-unit", type=int, default=1500)
    p.add_argument("--sigma0", type=float, default=0.1)
    p.add_argument("--outer", type=int, default=12,
                   help="outer quadrature nodes per axis")
    _add_global_flags(p)
    p.set_defaults(func=_cmd_kl_curves)

    p = sub.add_parser("re-bench", help="relative-efficiency Monte Carlo")
    p.add_argument("--scenario", type=str, required=True)
    p.add_argument("--paper-scale", action="store_true",
                   help="restore 1000 replicates")
    _add_global_flags(p)
    p.set_defaults(func=_cmd_re_bench)

    p = sub.add_parser("hmm-train", help="train the pair HMM by stochastic EM")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--init", type=str, default=None)
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--n-aa", type=int, default=4)
    p.add_argument("--n-ss", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--prior-rate", type=float, default=0.1)
    p.add_argument("--mh-steps", type=int, default=100)
    p.add_argument("--log-out", type=str, default=None,
                   help="write the training log to a file")
    _add_global_flags(p)
    p.set_defaults(func=_cmd_hmm_train)

    p = sub.add_parser("hmm-loglik", help="pair log-likelihoods at a fixed time")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--t", type=float, required=True)
    _add_global_flags(p)
    p.set_defaults(func=_cmd_hmm_loglik)

    p = sub.add_parser("hmm-predict", help="sample the missing angle chain")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--prior-rate", type=float, default=0.1)
    _add_global_flags(p)
    p.set_defaults(func=_cmd_hmm_predict)

    p = sub.add_parser("hmm-time-posterior",
                       help="posterior samples of the evolutionary time")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--prior-rate", type=float, default=0.1)
    _add_global_flags(p)
    p.set_defaults(func=_cmd_hmm_time_posterior)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
