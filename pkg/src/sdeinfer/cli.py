"""Command-line front end.

Subcommands: simulate, estimate, evaluate, interacting, spde.  Exit codes:
0 success, 1 configuration error, 2 numerical failure.  Every output
directory receives a run manifest (config hash, seed, versions) sufficient
to re-run the experiment exactly; outputs carry no timestamps so identical
config + seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

W2_TIME_FRACTIONS = (0.25, 0.5, 1.0)  # of the horizon T


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config/usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdeinfer",
                     description="Learn SDE drift and noise structure "
                                 "from trajectory data")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker thread cap for numba/BLAS")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config (INI)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the simulation seed")

    p_sim = sub.add_parser("simulate", help="generate trajectories")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate drift/covariance")
    common(p_est)
    p_est.add_argument("--trajectories", required=True,
                       help="trajectory file from 'simulate'")
    p_est.set_defaults(func=cmd_estimate)

    p_eval = sub.add_parser("evaluate", help="replay and compute all metrics")
    common(p_eval)
    p_eval.add_argument("--trajectories", required=True)
    p_eval.add_argument("--estimate", required=True,
                        help="drift estimate file")
    p_eval.set_defaults(func=cmd_evaluate)

    p_int = sub.add_parser("interacting",
                           help="agent system: simulate + learn the kernel")
    common(p_int)
    p_int.set_defaults(func=cmd_interacting)

    p_spde = sub.add_parser("spde", help="spectral heat-equation estimation")
    p_spde.add_argument("--mode", choices=("constant", "piecewise"),
                        default="constant")
    p_spde.add_argument("--modes", default="1,2,5,10,20",
                        help="comma list of mode counts N")
    p_spde.add_argument("--theta", type=float, default=2.0)
    p_spde.add_argument("--theta1", type=float, default=2.0)
    p_spde.add_argument("--theta2", type=float, default=4.0)
    p_spde.add_argument("--sigma", type=float, default=None)
    p_spde.add_argument("--dt", type=float, default=0.001)
    p_spde.add_argument("--T", type=float, default=1.0)
    p_spde.add_argument("--M", default="1", help="comma list of trajectory counts")
    p_spde.add_argument("--seeds", type=int, default=1,
                        help="number of seeds per cell")
    p_spde.add_argument("--seed", type=int, default=0, help="base seed")
    p_spde.add_argument("--out", default="out")
    p_spde.set_defaults(func=cmd_spde)
    return parser


def _write_manifest(outdir, command, cfg_text, seed, extra=None):
    import numpy
    import scipy

    from . import __version__

    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "sdeinfer": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "run_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(args, config):
    out = args.out if args.out else config.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    from .config import load_config
    from .simulate import euler_maruyama, export_csv, write_trajectories

    config = load_config(args.config)
    model = config.model()
    sim = config.sim(seed_override=args.seed)
    bundle = euler_maruyama(model, sim)
    out = _outdir(args, config)
    traj_path = os.path.join(out, "trajectories.sdet")
    write_trajectories(traj_path, bundle)
    if config.export_csv:
        export_csv(os.path.join(out, "trajectories.csv"), bundle)
    _write_manifest(out, "simulate", config.raw_text, sim.seed,
                    {"trajectories": os.path.basename(traj_path)})
    print(f"wrote {traj_path} (M={bundle.count}, L={bundle.grid.length}, "
          f"d={bundle.dim})")
    return 0


def _build_basis(config, bundle):
    from .basis import build_domain, make_basis

    spec, pad = config.basis()
    domain = build_domain(bundle, pad)
    spec = type(spec)(spec.kind, spec.degree, spec.knots_per_dim, domain)
    return make_basis(spec)


def cmd_estimate(args) -> int:
    from .covariance import (estimate_constant, estimate_state_dependent,
                             write_covariance_estimate)
    from .config import load_config
    from .drift import EstimatedCov, cov_from_model, estimate_drift, \
        export_drift_csv, write_drift_estimate
    from .simulate import read_trajectories

    config = load_config(args.config)
    model = config.model()
    opts = config.estimate_options()
    bundle = read_trajectories(args.trajectories)
    if bundle.dim != model.dim:
        from .config import ConfigError
        raise ConfigError(
            f"trajectory file dimension {bundle.dim} != model dim {model.dim}"
        )
    out = _outdir(args, config)
    basis = _build_basis(config, bundle)
    outputs = {}

    cov_est = None
    if opts["mode"] in ("covariance", "both") or opts["covariance"] == "estimate":
        if opts["covariance_form"] == "constant":
            cov_est = estimate_constant(bundle)
        else:
            cov_est = estimate_state_dependent(bundle, basis)
        cov_path = os.path.join(out, "covariance_estimate.sdec")
        write_covariance_estimate(cov_path, cov_est)
        outputs["covariance_estimate"] = os.path.basename(cov_path)
        print(f"wrote {cov_path} (form={cov_est.form})")

    if opts["mode"] in ("drift", "both"):
        if opts["covariance"] == "estimate":
            cov = EstimatedCov(cov_est)
        else:
            cov = cov_from_model(model)
        est = estimate_drift(bundle, basis, cov, solver=opts["solver"])
        est_path = os.path.join(out, "drift_estimate.sdee")
        write_drift_estimate(est_path, est)
        export_drift_csv(os.path.join(out, "drift_grid.csv"), est,
                         f_true=model)
        outputs["drift_estimate"] = os.path.basename(est_path)
        print(f"wrote {est_path} (n={basis.n}, d={est.dim}, "
              f"regularized={est.regularized})")

    seed = config.sim(seed_override=args.seed).seed
    _write_manifest(out, "estimate", config.raw_text, seed, outputs)
    return 0


def _summary_rows(basis_n, degree, l2, traj, w2_by_time):
    rows = [
        ("n_basis", basis_n),
        ("degree", degree),
        ("rel_l2_rho", f"{l2:.9g}"),
        ("traj_err_mean", f"{traj.mean:.9g}"),
        ("traj_err_std", f"{traj.std:.9g}"),
    ]
    for t, w in w2_by_time:
        rows.append((f"w2_t{t:g}", f"{w:.9g}"))
    return rows


def _write_summary(out, rows):
    csv_path = os.path.join(out, "summary.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(str(k) for k, _ in rows) + "\n")
        fh.write(",".join(str(v) for _, v in rows) + "\n")
    txt_path = os.path.join(out, "summary.txt")
    width = max(len(str(k)) for k, _ in rows)
    with open(txt_path, "w") as fh:
        for k, v in rows:
            fh.write(f"{str(k):<{width}}  {v}\n")
    return csv_path, txt_path


def cmd_evaluate(args) -> int:
    from .config import load_config
    from .drift import read_drift_estimate
    from .metrics import (EmpiricalRho, l2_rho_error, snapshot,
                          trajectory_error, wasserstein2)
    from .simulate import read_trajectories, replay

    config = load_config(args.config)
    model = config.model()
    bundle = read_trajectories(args.trajectories)
    if bundle.noise is None:
        print("error: trajectory file has no recorded noise; re-run "
              "'simulate' with record_noise = true", file=sys.stderr)
        return 1
    est = read_drift_estimate(args.estimate)
    out = _outdir(args, config)

    replayed = replay(model, bundle, est)
    rho = EmpiricalRho.from_bundle(bundle)
    l2 = l2_rho_error(model, est, rho)
    traj = trajectory_error(bundle, replayed)
    T = bundle.grid.horizon
    w2_by_time = []
    for frac in W2_TIME_FRACTIONS:
        t = frac * T
        w2_by_time.append((t, wasserstein2(snapshot(bundle, t),
                                           snapshot(replayed, t))))

    rows = _summary_rows(est.basis.n, est.basis.spec.degree,
                         l2.relative, traj, w2_by_time)
    csv_path, txt_path = _write_summary(out, rows)

    # plot-ready overlays: first few trajectories, original vs replayed
    overlay = os.path.join(out, "trajectory_overlay.csv")
    with open(overlay, "w", newline="") as fh:
        d = bundle.dim
        header = ["m", "t"] + [f"x{k+1}" for k in range(d)] \
            + [f"xhat{k+1}" for k in range(d)]
        fh.write(",".join(header) + "\n")
        for m in range(min(5, bundle.count)):
            for l in range(bundle.grid.length):
                vals = [str(m), f"{bundle.grid.times[l]:.12g}"]
                vals += [f"{v:.12g}" for v in bundle.states[m, l]]
                vals += [f"{v:.12g}" for v in replayed.states[m, l]]
                fh.write(",".join(vals) + "\n")

    seed = config.sim(seed_override=args.seed).seed
    _write_manifest(out, "evaluate", config.raw_text, seed,
                    {"summary": os.path.basename(csv_path)})
    with open(txt_path) as fh:
        print(fh.read(), end="")
    return 0


def cmd_interacting(args) -> int:
    import numpy as np

    from .config import load_config
    from .interacting import (learn_kernel, pairwise_distance_range,
                              replay_agents, simulate_agents)
    from .metrics import trajectory_error

    config = load_config(args.config)
    system = config.agents()
    sim = config.sim(seed_override=args.seed)
    out = _outdir(args, config)

    bundle = simulate_agents(system, sim)
    ke = learn_kernel(bundle, system.count, system.agent_dim,
                      config.kernel_basis(), system.sigma)

    lo, hi = pairwise_distance_range(bundle, system.count, system.agent_dim)
    rs = np.linspace(lo, hi, 200)
    phi_true = system.phi.evaluate(rs[:, None])
    phi_fit = ke(rs)
    kcsv = os.path.join(out, "kernel.csv")
    with open(kcsv, "w", newline="") as fh:
        fh.write("r,phi,phi_hat\n")
        for r, a, b in zip(rs, phi_true, phi_fit):
            fh.write(f"{r:.12g},{a:.12g},{b:.12g}\n")

    rows = [("n_basis", ke.basis.n), ("degree", ke.basis.spec.degree),
            ("r_min", f"{lo:.9g}"), ("r_max", f"{hi:.9g}")]
    if bundle.noise is not None:
        replayed = replay_agents(system, bundle, ke)
        traj = trajectory_error(bundle, replayed)
        rows += [("traj_err_mean", f"{traj.mean:.9g}"),
                 ("traj_err_std", f"{traj.std:.9g}")]
    csv_path, txt_path = _write_summary(out, rows)
    _write_manifest(out, "interacting", config.raw_text, sim.seed,
                    {"kernel": os.path.basename(kcsv)})
    with open(txt_path) as fh:
        print(fh.read(), end="")
    return 0


def cmd_spde(args) -> int:
    import numpy as np

    from .spde import (SpdeSpec, compute_coupling, estimate_theta_constant,
                       estimate_theta_piecewise, simulate_modes)

    modes = [int(v) for v in str(args.modes).split(",")]
    Ms = [int(v) for v in str(args.M).split(",")]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"spde_{args.mode}.csv")
    with open(path, "w", newline="") as fh:
        if args.mode == "constant":
            sigma = args.sigma if args.sigma is not None else 0.1
            fh.write("N,M,seed,theta_hat,abs_error\n")
            for N in modes:
                for M in Ms:
                    for s in range(args.seeds):
                        spec = SpdeSpec.constant_heat(
                            N, theta=args.theta, sigma=sigma,
                            T=args.T, dt=args.dt, M=M)
                        b = simulate_modes(spec, args.seed + s)
                        th = estimate_theta_constant(b, spec)
                        fh.write(f"{N},{M},{args.seed + s},{th:.9g},"
                                 f"{abs(th - args.theta):.9g}\n")
        else:
            sigma = args.sigma if args.sigma is not None else 0.5
            fh.write("N,M,seed,theta1_hat,theta2_hat,rel_l2_error\n")
            for N in modes:
                spec = SpdeSpec.piecewise_heat(
                    N, args.theta1, args.theta2, sigma=sigma,
                    T=args.T, dt=args.dt, M=Ms[0])
                coupling = compute_coupling(spec)
                for M in Ms:
                    spec = SpdeSpec.piecewise_heat(
                        N, args.theta1, args.theta2, sigma=sigma,
                        T=args.T, dt=args.dt, M=M)
                    for s in range(args.seeds):
                        b = simulate_modes(spec, args.seed + s)
                        t1, t2 = estimate_theta_piecewise(b, spec, coupling)
                        rel = float(np.hypot(t1 - args.theta1, t2 - args.theta2)
                                    / np.hypot(args.theta1, args.theta2))
                        fh.write(f"{N},{M},{args.seed + s},{t1:.9g},"
                                 f"{t2:.9g},{rel:.9g}\n")
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except Exception as err:  # map to documented exit codes
        from .config import ConfigError
        from .basis import BasisError
        from .expr import ExprDomainError, ExprSyntaxError
        from .model import ModelError

        config_like = (ConfigError, ExprSyntaxError, BasisError, ModelError,
                       FileNotFoundError)
        code = 1 if isinstance(err, config_like) else 2
        kind = "config error" if code == 1 else "numerical failure"
        print(f"error ({kind}): {err}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
