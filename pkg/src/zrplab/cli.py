"""Command-line entry points: env | analytic | jackson | sim | exp.

Configs are single JSON documents; outputs are CSV tables plus JSON
reports.  The exit code is nonzero iff any verdict in an experiment run
failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments, harris, jackson
from .analytic import build_flux_table
from .disorder import parse_disorder
from .environment import Environment, check_slow_site_density, environment_from_spec
from .rates import RateFunction


def _cmd_env_gen(args) -> int:
    spec = {
        "kind": args.kind,
        "c": args.c,
        "window": [args.window[0], args.window[1]],
        "seed": args.seed,
    }
    if args.kind == "constant":
        spec["value"] = args.value
    else:
        spec["q"] = args.q
    env = environment_from_spec(spec)
    env.save(args.out)
    print(f"wrote {env.n_sites} sites to {args.out}")
    return 0


def _cmd_env_check(args) -> int:
    env = Environment.load(args.path)
    eps = [float(e) for e in args.epsilons.split(",")]
    n_max = max(-env.x_min, 1)
    grid = sorted({max(n_max // 8, 1), max(n_max // 2, 1), max(n_max - 1, 1)})
    report = check_slow_site_density(env, eps, grid)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _cmd_analytic_build(args) -> int:
    g = RateFunction(values=tuple(args.g_values or ()), kind=args.g_kind)
    ft = build_flux_table(g, parse_disorder(args.q), args.c, args.p)
    ft.save(args.out)
    print(
        f"rho_c={ft.rho_c:.8g} v0={ft.v0:.8g} holdsH={ft.holds_H} margin={ft.margin:.4g}"
    )
    return 0


def _cmd_jackson_solve(args) -> int:
    env = Environment.load(args.env)
    result = jackson.barrier_construction(
        env, args.epsilon, args.delta, args.p, F=tuple(args.sites)
    )
    result.traffic_augmented.save(args.out)
    summary = {
        "lambda_F": result.lambda_F,
        "n_sources": len(result.S_augmented),
        "recurrent": result.traffic_augmented.recurrent,
    }
    Path(args.out).with_suffix(".json").write_text(json.dumps(summary))
    print(json.dumps(summary))
    return 0


def _cmd_sim_run(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        cfg["seed"] = args.seed
    env = environment_from_spec(cfg["env"])
    g_obj = cfg.get("g", {"kind": "constant-rate", "g_values": []})
    g = RateFunction(values=tuple(g_obj.get("g_values", ())), kind=g_obj["kind"])
    window = (env.x_min, env.x_max)
    seed = int(cfg.get("seed", 0))
    T = float(cfg["horizon"])
    p = float(cfg["p"])
    init = cfg.get("init", {"kind": "empty"})
    rng = np.random.default_rng(seed)
    if init["kind"] == "empty":
        config = harris.empty_configuration(window, right=harris.SINK)
        alpha = env.alpha
    elif init["kind"] == "source":
        config, alpha = harris.make_source_process(
            env,
            g,
            int(init["x_t"]),
            fill=init.get("fill"),
            u_field=rng.uniform(size=env.n_sites),
        )
    elif init["kind"] == "product":
        config, alpha = harris.make_equilibrium_process(
            env, g, float(init["lambda"]), rng.uniform(size=env.n_sites)
        )
    else:
        raise ValueError(f"unknown init kind {init['kind']!r}")

    stream = harris.generate_events(seed, window, T, p)
    snap_times = [float(t) for t in cfg.get("snapshots", [T])]
    paths = []
    for pd in cfg.get("currents", []):
        if pd["kind"] == "fixed":
            paths.append(harris.fixed_path(int(pd["x0"])))
        else:
            paths.append(harris.drift_path(int(pd["x0"]), float(pd["v"])))
    trajs, extras = harris._run_engine(
        [config], [alpha], g, stream, T, snapshot_times=snap_times, paths=paths
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "snapshots.csv", "w") as fh:
        fh.write("time,site,occupancy\n")
        for t, counts in trajs[0].snapshots.items():
            for x, n in zip(config.sites, counts):
                occ = "inf" if config.source_mask[x - config.x_min] else int(n)
                fh.write(f"{t},{x},{occ}\n")
    ledgers = [
        {
            "path": {"kind": p_.kind, "x0": p_.x0, "v": p_.v},
            "count": float(extras["gamma_jump"][0, i] + extras["gamma_path"][0, i]),
            "jump_part": float(extras["gamma_jump"][0, i]),
            "path_part": float(extras["gamma_path"][0, i]),
        }
        for i, p_ in enumerate(paths)
    ]
    (out / "currents.json").write_text(json.dumps(ledgers, indent=2))
    print(f"{extras['n_events']} events; outputs in {out}")
    return 0


def _cmd_exp_run(args) -> int:
    text = Path(args.config).read_text()
    spec = experiments.ExperimentSpec.from_json(text)
    if args.seed is not None:
        spec.seed = args.seed
    if args.replicas is not None:
        spec.replicas = args.replicas
    obs = spec.observables
    if spec.scenario == "convergence":
        reports = experiments.run_convergence_experiment(spec)
    elif spec.scenario == "source-hydro":
        reports = experiments.run_source_hydro_experiment(spec, obs.get("v_list", [0.49]))
    elif spec.scenario == "local-equilibrium":
        reports = experiments.run_local_equilibrium_experiment(spec, obs.get("v", 0.49))
    elif spec.scenario == "slow-site-current":
        reports = experiments.run_slow_site_current_experiment(
            spec, obs.get("epsilon", 0.1)
        )
    else:
        raise ValueError(f"unknown scenario {spec.scenario!r}")
    payload = [r.to_dict() for r in reports]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "reports.json").write_text(json.dumps(payload, indent=2))
        with open(out / "reports.csv", "w") as fh:
            fh.write("observable,distance,tolerance,passed\n")
            for r in reports:
                fh.write(f"{r.observable},{r.distance},{r.tolerance},{int(r.passed)}\n")
    for r in reports:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.observable}: "
              f"distance={r.distance:.6g} tol={r.tolerance:.6g}")
    return 0 if all(r.passed for r in reports) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="zrp")
    sub = parser.add_subparsers(dest="group", required=True)

    env_p = sub.add_parser("env").add_subparsers(dest="cmd", required=True)
    gen = env_p.add_parser("gen")
    gen.add_argument("--kind", default="sparse-defect",
                     choices=["iid", "sparse-defect", "constant"])
    gen.add_argument("--c", type=float, required=True)
    gen.add_argument("--q", default="power:0.5,1,1")
    gen.add_argument("--value", type=float, default=1.0)
    gen.add_argument("--window", type=int, nargs=2, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_env_gen)
    chk = env_p.add_parser("check")
    chk.add_argument("path")
    chk.add_argument("--epsilons", default="0.3,0.5")
    chk.add_argument("--out")
    chk.set_defaults(func=_cmd_env_check)

    ana_p = sub.add_parser("analytic").add_subparsers(dest="cmd", required=True)
    bld = ana_p.add_parser("build")
    bld.add_argument("--g-kind", default="constant-rate")
    bld.add_argument("--g-values", type=float, nargs="*")
    bld.add_argument("--c", type=float, required=True)
    bld.add_argument("--p", type=float, required=True)
    bld.add_argument("--q", required=True)
    bld.add_argument("--out", required=True)
    bld.set_defaults(func=_cmd_analytic_build)

    jak_p = sub.add_parser("jackson").add_subparsers(dest="cmd", required=True)
    slv = jak_p.add_parser("solve")
    slv.add_argument("--env", required=True)
    slv.add_argument("--p", type=float, required=True)
    slv.add_argument("--epsilon", type=float, required=True)
    slv.add_argument("--delta", type=float, required=True)
    slv.add_argument("--sites", type=int, nargs="*", default=[0])
    slv.add_argument("--out", required=True)
    slv.set_defaults(func=_cmd_jackson_solve)

    sim_p = sub.add_parser("sim").add_subparsers(dest="cmd", required=True)
    run = sim_p.add_parser("run")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", required=True)
    run.set_defaults(func=_cmd_sim_run)

    exp_p = sub.add_parser("exp").add_subparsers(dest="cmd", required=True)
    erun = exp_p.add_parser("run")
    erun.add_argument("--config", required=True)
    erun.add_argument("--seed", type=int)
    erun.add_argument("--replicas", type=int)
    erun.add_argument("--out")
    erun.set_defaults(func=_cmd_exp_run)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
