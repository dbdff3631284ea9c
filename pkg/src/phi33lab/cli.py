"""Command-line surface: reproducible experiment runs writing CSV/JSON."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _common(sub):
    sub.add_argument("--N", type=int, default=2)
    sub.add_argument("--kind", choices=("cube", "ball", "smooth"), default="cube")
    sub.add_argument("--sigma", type=float, default=0.1)
    sub.add_argument("--A", type=float, default=10.0)
    sub.add_argument("--gamma", type=float, default=3.0)
    sub.add_argument("--dt", type=float, default=1e-3)
    sub.add_argument("--T", type=float, default=1.0)
    sub.add_argument("--paths", type=int, default=256)
    sub.add_argument("--samples", type=int, default=1000)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--workers", type=int, default=1,
                     help="sample-pool chunking; results are worker-count independent")
    sub.add_argument("--out", type=str, default=".")
    sub.add_argument("--config", type=str, default=None,
                     help="TOML file with defaults, overridden by flags")


def _int_list(s):
    return [int(x) for x in s.split(",") if x != ""]


def _float_list(s):
    return [float(x) for x in s.split(",") if x != ""]


def build_parser():
    ap = argparse.ArgumentParser(
        prog="phi33",
        description="Spectral Monte-Carlo laboratory for the renormalized "
                    "quadratic Gibbs measure and its damped-wave dynamics on T^3.")
    sp = ap.add_subparsers(dest="command", required=True)

    s = sp.add_parser("sigma-n", help="renormalization constant sigma_N")
    _common(s)
    s.add_argument("--N-list", type=_int_list, default=None)

    s = sp.add_parser("alpha-n", help="second renormalization constant alpha_N")
    _common(s)

    s = sp.add_parser("sample-gff", help="free-field samples to a field container")
    _common(s)
    s.add_argument("--s", dest="s_reg", type=float, default=1.0)

    s = sp.add_parser("sample-gibbs", help="Gibbs samples via the exact-law sampler")
    _common(s)
    s.add_argument("--step", type=float, default=0.02)
    s.add_argument("--snapshot-every", type=int, default=0)

    s = sp.add_parser("objects", help="enhanced-data norms for a batch of seeds")
    _common(s)
    s.add_argument("--steps", type=int, default=32)
    s.add_argument("--theta", type=float, default=0.1)
    s.add_argument("--c0", type=float, default=0.0)

    s = sp.add_parser("regularity-fit", help="terminal spectral slopes of the tower")
    _common(s)
    s.add_argument("--steps", type=int, default=16)

    s = sp.add_parser("variational", help="drift optimization of the objective")
    _common(s)
    s.add_argument("--intervals", type=int, default=8)
    s.add_argument("--iterations", type=int, default=100)

    s = sp.add_parser("witness-scan", help="non-normalizability witness scan")
    _common(s)
    s.add_argument("--sigma-list", type=_float_list, default=[0.0, 1.0, 10.0, 50.0])
    s.add_argument("--M", dest="m_list", type=_int_list, default=[4, 8, 16])

    s = sp.add_parser("simulate", help="integrate the truncated flow")
    _common(s)
    s.add_argument("--record-every", type=int, default=10)

    s = sp.add_parser("invariance-test", help="Gibbs invariance of the flow")
    _common(s)
    s.add_argument("--mala-step", type=float, default=0.02)

    s = sp.add_parser("norms", help="log N divergence / potential scan")
    _common(s)
    s.add_argument("--N-list", type=_int_list, default=[8, 16, 32, 64])
    return ap


def _apply_toml(args):
    if args.config:
        try:
            import tomllib
        except ImportError:            # python 3.10
            import tomli as tomllib
        with open(args.config, "rb") as fh:
            table = tomllib.load(fh)
        for k, v in table.items():
            k = k.replace("-", "_")
            if hasattr(args, k) and f"--{k.replace('_','-')}" not in sys.argv:
                setattr(args, k, v)
    return args


def _config_dict(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != "config"}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        args = _apply_toml(args)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return _dispatch(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, RuntimeError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args) -> int:
    from . import experiments as ex
    from . import serialization as io
    from .gibbs import GibbsParams
    os.makedirs(args.out, exist_ok=True)
    cfg = _config_dict(args)
    out = lambda name: os.path.join(args.out, name)

    if args.command == "sigma-n":
        ns = args.N_list or [args.N]
        res = ex.sigma_scaling(ns, args.kind)
        for row in res["rows"]:
            print(row["sigma_n"])
        io.write_csv(out("sigma_n.csv"), res["rows"], cfg)
        return EXIT_OK

    p = GibbsParams(sigma=args.sigma, A=args.A, gamma=args.gamma,
                    N=args.N, kind=args.kind)

    if args.command == "alpha-n":
        from .gibbs import alpha_n
        val = alpha_n(p)
        print(val)
        io.write_json(out("alpha_n.json"), {"alpha_n": val}, cfg)
        return EXIT_OK

    if args.command == "sample-gff":
        from .fields import sample_mu_s
        from .spectral import SpectralGrid
        f = sample_mu_s(SpectralGrid(args.N), args.s_reg, args.seed,
                        batch=(args.samples,))
        io.save_field(out("gff_samples.sfld"), f, cfg)
        print(out("gff_samples.sfld"))
        return EXIT_OK

    if args.command == "sample-gibbs":
        from .gibbs import sample_rho_mala
        from .spectral import SpectralField, project
        fields, info = sample_rho_mala(p, args.samples, args.seed, step=args.step)
        rows = []
        for i in range(fields.coeff.shape[0]):
            u = SpectralField(fields.grid, fields.coeff[i])
            from .gibbs import energy, _wick_integrals
            w2, w3 = _wick_integrals(u, p)
            rows.append({"index": i, "seed": args.seed, "energy": float(energy(u, p)),
                         "wick2": float(w2), "wick3": float(w3),
                         "acceptance": info["acceptance"]})
        io.write_csv(out("gibbs_chain.csv"), rows, cfg)
        if args.snapshot_every:
            io.save_field(out("gibbs_samples.sfld"), fields, cfg)
        print(f"acceptance {info['acceptance']:.3f} iat {info['iat_wick2']:.2f}")
        return EXIT_OK

    if args.command == "objects":
        from .objects import build_enhanced_data
        from .spectral import SpectralGrid
        rows = []
        for s in range(args.samples):
            data = build_enhanced_data(SpectralGrid(args.N), args.N,
                                       args.seed, n_steps=args.steps,
                                       theta=args.theta, c0=args.c0, sample=s)
            row = {"seed": args.seed, "sample": s, "N": args.N}
            row.update(data.norms())
            rows.append(row)
        io.write_csv(out("enhanced_norms.csv"), rows, cfg)
        print(out("enhanced_norms.csv"))
        return EXIT_OK

    if args.command == "regularity-fit":
        res = ex.smoothing_slope_scan(args.N, args.samples, args.seed,
                                      n_steps=args.steps)
        summary = {"psi_slope": res["psi_fit"][0], "psi_se": res["psi_fit"][1],
                   "obj20_slope": res["obj20_fit"][0], "obj20_se": res["obj20_fit"][1]}
        io.write_json(out("regularity.json"), summary, cfg)
        print(json.dumps(summary))
        return EXIT_OK

    if args.command == "variational":
        from .variational import optimize_drift
        drift, trace, (val, se) = optimize_drift(
            p, args.intervals, args.paths, args.iterations, args.seed)
        io.write_json(out("variational.json"),
                      {"objective": val, "se": se, "trace": trace}, cfg)
        print(f"objective {val:.4f} +- {se:.4f}")
        return EXIT_OK

    if args.command == "witness-scan":
        from .variational import witness_scan
        res = witness_scan(args.sigma_list, args.m_list, p, args.paths, args.seed)
        io.write_csv(out("witness_scan.csv"), res["rows"], cfg)
        io.write_json(out("witness_fits.json"),
                      {str(k): v for k, v in res["fits"].items()}, cfg)
        for sig, fit in res["fits"].items():
            print(f"sigma={sig}: slope {fit['slope']:.4g} +- {fit['slope_se']:.4g}")
        return EXIT_OK

    if args.command == "simulate":
        from .dynamics import FieldPair, FlowConfig, simulate
        from .fields import sample_mu_s
        from .spectral import SpectralGrid
        fc = FlowConfig(p, dt=args.dt, T=args.T)
        u0 = sample_mu_s(fc.grid, 1.0, args.seed)
        v0 = sample_mu_s(fc.grid, 0.0, args.seed + 1)
        res = simulate(FieldPair(u0, v0), fc, args.seed, record_every=args.record_every)
        rows = []
        for i, t in enumerate(res["times"]):
            row = {"t": float(t)}
            row.update({k: float(v[i]) for k, v in res["series"].items()})
            rows.append(row)
        io.write_csv(out("trajectory.csv"), rows, cfg)
        print(out("trajectory.csv"))
        return EXIT_OK

    if args.command == "invariance-test":
        from .dynamics import FlowConfig, invariance_test
        fc = FlowConfig(p, dt=args.dt, T=args.T)
        rep = invariance_test(p, fc, args.samples, args.seed, mala_step=args.mala_step)
        io.write_json(out("invariance.json"), rep, cfg)
        for k, r in rep["observables"].items():
            print(f"{k}: dmean {r['mean_diff']:+.4g} (se {r['mean_se']:.3g}) "
                  f"ks_p {r['ks_p']:.3f} pass {r['mean_pass'] and r['var_pass']}")
        print("all_pass", rep["all_pass"])
        return EXIT_OK

    if args.command == "norms":
        scan = ex.wick_norm_potential_scan(args.N_list, args.samples, args.seed,
                                           sigma=args.sigma, A=args.A,
                                           gamma=args.gamma, kind=args.kind)
        fit = ex.fit_log_divergence(scan)
        rows = [{"N": N, "h_norm_mean": float(np.mean(scan[N]["h_norm_samples"])),
                 "g_std": float(np.std(scan[N]["g_samples"], ddof=1)),
                 "sigma_n": scan[N]["sigma_n"]} for N in sorted(scan)]
        io.write_csv(out("norms.csv"), rows, cfg)
        io.write_json(out("norms_fit.json"), fit, cfg)
        print(json.dumps(fit))
        return EXIT_OK

    raise ValueError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
