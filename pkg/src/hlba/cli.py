"""Command-line interface: ``hlba simulate | fit-pmwg | fit-dtsmc | marglik | summarize``.

Exit status: 0 success, 2 usage error, 3 invalid data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_trials, save_trials
from .diagnostics import summarize
from .dtsmc import SmcConfig, run_dtsmc
from .errors import DataValidationError, DegenerateWeightsError, ParameterDomainError
from .marglik import ESTIMATORS, evidence_report, logml_ti1, logml_ti2
from .model import GroupParams, HyperConfig, ModelDesign, cov_to_corr, reference_group_params
from .pmwg import PmwgConfig, run_pmwg
from .results import (load_draws, read_manifest, save_chain, save_cloud, save_effects, save_trace, write_json,
                      write_meta, write_table)
from .simulate import ExperimentDesign, simulate_dataset

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
DEFAULT_FLOOR = 1e-10

log = logging.getLogger("hlba")


class UsageError(Exception):
    pass


def replicate_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(30, r)).generate_state(1, dtype=np.uint32)[0])


def _design(args) -> ModelDesign:
    floor = args.density_floor if args.density_floor and args.density_floor > 0 else None
    return ModelDesign.variant(args.thresholds, density_floor=floor)


def _variant_group(n_thresholds: int) -> GroupParams:
    """Reference group parameters restricted to a threshold variant (first/last thresholds kept)."""
    g = reference_group_params()
    keep_b = {1: [0], 2: [0, 2], 3: [0, 1, 2]}[n_thresholds]
    idx = keep_b + [3, 4, 5, 6]
    return GroupParams(g.mu[idx], g.sigma[np.ix_(idx, idx)], g.a[idx])


def _load_group(path, design: ModelDesign) -> GroupParams:
    spec = json.loads(Path(path).read_text())
    try:
        g = GroupParams(np.array(spec["mu"], dtype=float), np.array(spec["sigma"], dtype=float),
                        np.array(spec.get("a", np.ones(len(spec["mu"]))), dtype=float))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: invalid group parameters ({exc})") from None
    if g.dim != design.dim:
        raise UsageError(f"{path}: group has dimension {g.dim}, the {design.n_thresholds}-threshold model needs {design.dim}")
    return g


def _merge_config_file(args, parser):
    if getattr(args, "config", None) is None:
        return
    values = json.loads(Path(args.config).read_text())
    defaults = {a.dest: a.default for a in parser._actions}
    for k, v in values.items():
        key = k.replace("-", "_")
        if key not in defaults:
            raise UsageError(f"{args.config}: unknown option {k!r}")
        # flags given on the command line win over the file
        if getattr(args, key) == defaults[key]:
            setattr(args, key, v)


def _manifest(command: str, config: dict, seed) -> dict:
    return {"version": __version__, "command": command, "config": config, "seed": seed}


# --- commands ------------------------------------------------------------

def cmd_simulate(args) -> None:
    design = ModelDesign.variant(args.thresholds)
    group = _load_group(args.group, design) if args.group else _variant_group(args.thresholds)
    exp = ExperimentDesign(args.subjects, args.trials_per_condition, design, group)
    data, alpha = simulate_dataset(exp, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"subjects": args.subjects, "trials_per_condition": args.trials_per_condition,
              "thresholds": args.thresholds, "group_file": args.group}
    man = _manifest("simulate", config, args.seed)
    save_trials(data, out / "trials.csv", comment=json.dumps(man, sort_keys=True, separators=(",", ":")))
    write_json(out / "truth.json", {
        **man,
        "param_names": design.param_names,
        "mu": group.mu.tolist(),
        "sigma": group.sigma.tolist(),
        "alpha": {str(int(sid)): alpha[j].tolist() for j, sid in enumerate(data.subject_ids)},
    })
    print(f"wrote {data.n_trials} trials for {data.n_subjects} subjects to {out}")


def _pmwg_config(args) -> PmwgConfig:
    per_stage = [args.r_burnin, args.r_adapt, args.r_sampling]
    if args.particles is not None and any(r is not None for r in per_stage):
        raise UsageError("--particles conflicts with --r-burnin/--r-adapt/--r-sampling")
    base = args.particles if args.particles is not None else 100
    R = [base if r is None else r for r in per_stage]
    return PmwgConfig(R_burnin=R[0], R_adapt=R[1], R_sampling=R[2], n_burnin=args.burnin, n_adapt=args.adapt,
                      n_sampling=args.sampling, w_mix=args.w_mix, epsilon=args.epsilon,
                      temperature=args.temperature, seed=args.seed, workers=args.workers)


def _result_config(config_dict: dict, design: ModelDesign, data_path) -> dict:
    cfg = {k: v for k, v in config_dict.items() if k != "workers"}
    return {"sampler": cfg, "design": design.to_dict(), "data": str(data_path)}


def cmd_fit_pmwg(args) -> None:
    config = _pmwg_config(args)
    design = _design(args)
    data = load_trials(args.data)
    chain = run_pmwg(data, design, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rc = _result_config(config.to_dict(), design, args.data)
    man = _manifest("fit-pmwg", rc, config.seed)
    save_chain(chain, out / "draws.csv", man)
    if args.save_effects:
        save_effects(chain.alpha, chain.param_names, out / "effects.csv", man)
    write_meta(out / "meta.json", "fit-pmwg", {**rc, "workers": config.workers, "adapted": chain.adapted}, config.seed)
    print(f"wrote {len(chain)} iterations to {out}")


def _smc_config(args, seed: int) -> SmcConfig:
    ess_target = None if args.ess_fraction is None else args.ess_fraction * args.M
    return SmcConfig(M=args.M, R=args.particles, L=args.moves, ess_target=ess_target, grid_size=args.grid,
                     a_switch=args.a_switch, w_mix=args.w_mix, epsilon=args.epsilon, resampling=args.resampling,
                     seed=seed, workers=args.workers)


def cmd_fit_dtsmc(args) -> None:
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    design = _design(args)
    data = load_trials(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_id = f"thresholds={args.thresholds}"
    per_rep = []
    base = _smc_config(args, args.seed)
    rc = _result_config(base.to_dict(), design, args.data)
    rc["replicates"] = args.replicates
    for r in range(args.replicates):
        seed_r = replicate_seed(args.seed, r)
        cfg = _smc_config(args, seed_r)
        cloud = run_dtsmc(data, design, cfg)
        rdir = out / f"rep{r}"
        rdir.mkdir(exist_ok=True)
        man = _manifest("fit-dtsmc", {**rc, "replicate": r}, seed_r)
        save_cloud(cloud, rdir / "cloud.csv", man)
        save_trace(cloud.trace, rdir / "trace.csv", man)
        if args.save_effects:
            save_effects(cloud.alpha, cloud.param_names, rdir / "effects.csv", man, index_name="entry")
        est = {name: f(cloud.trace) for name, f in ESTIMATORS.items()}
        est["ti1_pre"] = logml_ti1(cloud.trace, "pre")
        est["ti2_pre"] = logml_ti2(cloud.trace, "pre")
        per_rep.append({"replicate": r, "seed": seed_r, "stages": len(cloud.trace) - 1, **est})
        print(f"replicate {r}: {len(cloud.trace) - 1} stages, log-ml standard={est['standard']:.3f} "
              f"ti1={est['ti1']:.3f} ti2={est['ti2']:.3f}")
    report = evidence_report(model_id, {k: [p[k] for p in per_rep] for k in ESTIMATORS})
    write_json(out / "evidence.json", {**_manifest("fit-dtsmc", rc, args.seed), "model_id": model_id,
                                       "replicates": per_rep, "report": report})
    write_meta(out / "meta.json", "fit-dtsmc", {**rc, "workers": args.workers}, args.seed)


def cmd_marglik(args) -> None:
    rows = []
    for run in args.runs:
        path = Path(run) / "evidence.json" if Path(run).is_dir() else Path(run)
        if not path.exists():
            raise UsageError(f"no evidence.json in {run}")
        ev = json.loads(path.read_text())
        reps = ev["replicates"]
        rows += evidence_report(ev["model_id"], {k: [p[k] for p in reps] for k in ESTIMATORS})
    rows.sort(key=lambda r: (r["estimator"], -r["log_ml"]))
    if args.out:
        write_json(args.out, {"version": __version__, "command": "marglik", "runs": list(args.runs), "report": rows})
    print(f"{'estimator':10s} {'model':16s} {'log-ml':>14s} {'sd':>10s} {'n':>3s}")
    for r in rows:
        print(f"{r['estimator']:10s} {r['model_id']:16s} {r['log_ml']:14.3f} {r['replicate_sd']:10.3f} {r['n_replicates']:3d}")


def _load_run_draws(run: Path):
    if (run / "draws.csv").exists():
        return load_draws(run / "draws.csv"), read_manifest(run / "draws.csv")
    clouds = sorted(run.glob("rep*/cloud.csv"))
    if not clouds:
        raise UsageError(f"{run} contains neither draws.csv nor rep*/cloud.csv")
    parts = [load_draws(c) for c in clouds]
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    first.mu, first.sigma, first.a = cat("mu"), cat("sigma"), cat("a")
    first.weights = cat("weights") / len(parts)
    return first, read_manifest(clouds[0])


def cmd_summarize(args) -> None:
    run = Path(args.run)
    draws, manifest = _load_run_draws(run)
    if len(draws.mu) == 0:
        raise UsageError("no draws to summarize")
    rows = summarize(draws, weights=draws.weights)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    man = {"version": __version__, "command": "summarize", "source": str(run),
           "source_manifest": manifest}
    header = ["parameter", "mean", "sd", "q2.5", "q50", "q97.5", "iact"]
    write_table(out / "summary.csv", header,
                ([r.label, r.mean, r.sd, r.q025, r.q50, r.q975, "" if r.iact is None else float(r.iact)] for r in rows),
                man)
    w = draws.weights if draws.weights is not None else np.full(len(draws.mu), 1.0 / len(draws.mu))
    corr = np.einsum("t,tij->ij", w, cov_to_corr(draws.sigma))
    names = draws.param_names
    write_table(out / "correlations.csv", ["parameter", *names],
                ([n, *map(float, corr[i])] for i, n in enumerate(names)), man)
    for r in rows:
        if r.label.startswith(("mu[", "E[")):
            tail = "" if r.iact is None else f"  iact={r.iact:.2f}"
            print(f"{r.label:12s} {r.mean:10.4f} ({r.sd:.4f}){tail}")


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hlba", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log sampler progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common_fit(q):
        q.add_argument("--data", required=True, help="trial CSV (subject,condition,choice,rt)")
        q.add_argument("--out", required=True, help="output directory")
        q.add_argument("--thresholds", type=int, choices=(1, 2, 3), default=3, help="number of free thresholds")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--workers", type=int, default=1)
        q.add_argument("--w-mix", type=float, default=0.9)
        q.add_argument("--epsilon", type=float, default=1.0)
        q.add_argument("--density-floor", type=float, default=DEFAULT_FLOOR,
                       help="per-trial density floor (0 disables)")
        q.add_argument("--save-effects", action="store_true", help="also write per-subject random effects")
        q.add_argument("--config", help="JSON file of option values (command-line flags take precedence)")

    q = sub.add_parser("simulate", help="simulate a synthetic experiment")
    q.add_argument("--subjects", type=int, required=True)
    q.add_argument("--trials-per-condition", type=int, required=True)
    q.add_argument("--thresholds", type=int, choices=(1, 2, 3), default=3)
    q.add_argument("--group", help="JSON with true mu and sigma (default: built-in reference values)")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--config")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("fit-pmwg", help="fit by particle Metropolis-within-Gibbs")
    common_fit(q)
    q.add_argument("--burnin", type=int, default=500)
    q.add_argument("--adapt", type=int, default=500)
    q.add_argument("--sampling", type=int, default=10_000)
    q.add_argument("--particles", type=int, help="particles in every stage")
    q.add_argument("--r-burnin", type=int)
    q.add_argument("--r-adapt", type=int)
    q.add_argument("--r-sampling", type=int)
    q.add_argument("--temperature", type=float, default=1.0)
    q.set_defaults(func=cmd_fit_pmwg)

    q = sub.add_parser("fit-dtsmc", help="fit by density-tempered SMC and estimate the evidence")
    common_fit(q)
    q.add_argument("--M", type=int, default=250, help="cloud size")
    q.add_argument("--particles", type=int, default=100, help="particles per conditional MC step")
    q.add_argument("--moves", type=int, default=10, help="PMwG iterations per temperature")
    q.add_argument("--ess-fraction", type=float, default=None, help="target ESS as a fraction of M (0.8)")
    q.add_argument("--grid", type=int, default=1000)
    q.add_argument("--a-switch", type=float, default=0.1)
    q.add_argument("--resampling", choices=("multinomial", "systematic"), default="multinomial")
    q.add_argument("--replicates", type=int, default=1)
    q.set_defaults(func=cmd_fit_dtsmc)

    q = sub.add_parser("marglik", help="aggregate replicate evidence across runs")
    q.add_argument("runs", nargs="+", help="fit-dtsmc output directories")
    q.add_argument("--out", help="write the report as JSON")
    q.set_defaults(func=cmd_marglik)

    q = sub.add_parser("summarize", help="posterior summary tables")
    q.add_argument("run", help="fit-pmwg or fit-dtsmc output directory")
    q.add_argument("--out", help="output directory (default: the run directory)")
    q.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _merge_config_file(args, sub)
        return args.func(args) or 0
    except UsageError as exc:
        print(f"hlba {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"hlba {args.command}: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ParameterDomainError as exc:
        print(f"hlba {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateWeightsError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hlba {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"hlba {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
