"""Command-line entry points binding one JSON config document to the pipeline.

Subcommands: gen-data, train, attack, sweep, report. Every run is driven
by a single self-describing config file whose content is echoed into the
metadata sidecar of each produced artifact. Unknown config keys are
rejected and all referenced paths are checked before any work starts, so
a failed run never leaves partial outputs behind.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 solver
failure, 5 training divergence.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from advpower import __version__
from advpower.attacks import UncertaintyModel, format_target, parse_target
from advpower.harness import (
    AttackSpec,
    ExperimentPlan,
    ModelHandle,
    evaluate_instance,
    load_results,
    run_sweep,
    save_results,
    uncertainty_sweep,
)
from advpower.network import (
    LossSpec,
    NetworkSpec,
    TrainConfig,
    TrainingDivergence,
    load_model,
    save_model,
    train,
    write_train_log,
)
from advpower.solver import (
    SolverConfig,
    SolverFailure,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from advpower.system import SystemConfig, rate_per_ue

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SOLVER = 4
EXIT_DIVERGED = 5


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


_SCHEMA = {
    "system": {"num_subcarriers", "num_ues", "total_power", "noise_power"},
    "dataset": {"count", "distribution", "seed", "path"},
    "solver": {"num_starts", "max_iters", "smoothing_schedule", "step_size",
               "convergence_tol", "rng_seed"},
    "model": {"hidden_sizes", "loss", "mape_c", "path", "train"},
    "model.train": {"learning_rate", "beta1", "beta2", "eps", "batch_size",
                    "epochs", "rng_seed", "train_fraction"},
    "attack": {"kinds", "targets", "rhos", "epsilon", "e_obs", "e_exec",
               "surrogate", "surrogate_path", "surrogate_seed", "seed",
               "fgm_sign", "fgm_reference"},
    "harness": {"test_size", "master_seed", "output_path", "noise_seeds",
                "uncertainty_table"},
    "harness.uncertainty_table": {"rho", "ue", "error_ratios", "noise_seeds"},
}


def _check_keys(mapping, schema_key):
    allowed = _SCHEMA[schema_key]
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{schema_key}]: {sorted(unknown)}")


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise MissingArtifact(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = set(doc) - set(s for s in _SCHEMA if "." not in s)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, content in doc.items():
        if not isinstance(content, dict):
            raise ConfigError(f"section [{section}] must be an object")
        _check_keys(content, section)
    if "train" in doc.get("model", {}):
        _check_keys(doc["model"]["train"], "model.train")
    if "uncertainty_table" in doc.get("harness", {}):
        _check_keys(doc["harness"]["uncertainty_table"], "harness.uncertainty_table")
    return doc


def _require(doc, section):
    if section not in doc:
        raise ConfigError(f"config is missing the [{section}] section")
    return doc[section]


def _system_config(doc) -> SystemConfig:
    sec = _require(doc, "system")
    try:
        return SystemConfig(
            num_subcarriers=int(sec.get("num_subcarriers", 4)),
            num_ues=int(sec.get("num_ues", 3)),
            total_power=float(sec.get("total_power", 10.0)),
            noise_power=sec.get("noise_power"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [system] section: {exc}") from exc


def _solver_config(doc) -> SolverConfig:
    sec = doc.get("solver", {})
    try:
        kwargs = {}
        if "num_starts" in sec:
            kwargs["num_starts"] = int(sec["num_starts"])
        if "max_iters" in sec:
            kwargs["max_iters"] = int(sec["max_iters"])
        if "smoothing_schedule" in sec:
            kwargs["smoothing_schedule"] = tuple(sec["smoothing_schedule"])
        if "step_size" in sec:
            kwargs["step_size"] = float(sec["step_size"])
        if "convergence_tol" in sec:
            kwargs["convergence_tol"] = float(sec["convergence_tol"])
        if "rng_seed" in sec:
            kwargs["rng_seed"] = int(sec["rng_seed"])
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad [solver] section: {exc}") from exc


def _train_config(doc, seed_override=None) -> TrainConfig:
    sec = _require(doc, "model").get("train", {})
    try:
        kwargs = {k: sec[k] for k in _SCHEMA["model.train"] if k in sec}
        if seed_override is not None:
            kwargs["rng_seed"] = seed_override
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [model.train] section: {exc}") from exc


def _loss_spec(doc) -> LossSpec:
    sec = _require(doc, "model")
    try:
        return LossSpec(sec.get("loss", "custom"), float(sec.get("mape_c", 10.0)))
    except ValueError as exc:
        raise ConfigError(f"bad loss: {exc}") from exc


def _network_spec(doc, config: SystemConfig) -> NetworkSpec:
    sec = _require(doc, "model")
    hidden = tuple(sec.get("hidden_sizes", (1024, 1024, 1024, 512)))
    try:
        return NetworkSpec(config.num_subcarriers, config.num_ues, hidden,
                           config.total_power)
    except ValueError as exc:
        raise ConfigError(f"bad [model] section: {exc}") from exc


def _dataset_path(doc) -> str:
    sec = _require(doc, "dataset")
    if "path" not in sec:
        raise ConfigError("[dataset] needs a path")
    return sec["path"]


def _model_path(doc) -> str:
    sec = _require(doc, "model")
    if "path" not in sec:
        raise ConfigError("[model] needs a path")
    return sec["path"]


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _need_file(path, what):
    if not os.path.exists(path):
        raise MissingArtifact(f"{what} not found: {path}")


def _attack_section(doc):
    sec = doc.get("attack", {})
    kinds = tuple(sec.get("kinds", ("scaling", "analytical", "fgm")))
    targets = tuple(parse_target(t) for t in sec.get("targets", ("single:1", "all")))
    rhos = tuple(float(r) for r in sec.get("rhos", (0.0, 0.02, 0.05, 0.10)))
    return sec, kinds, targets, rhos


def _load_models(doc, config):
    """BS model plus the adversary's surrogate per the attack section."""
    model_path = _model_path(doc)
    _need_file(model_path, "model file")
    params, spec = load_model(model_path)
    if (spec.num_subcarriers, spec.num_ues) != (config.num_subcarriers, config.num_ues):
        raise ConfigError("model dimensions do not match the [system] section")
    bs = ModelHandle(params, spec, provenance="bs")
    sec = doc.get("attack", {})
    mode = sec.get("surrogate", "independent")
    if mode == "shared":
        return bs, ModelHandle(params, spec, provenance="shared-with-bs")
    if mode != "independent":
        raise ConfigError("attack.surrogate must be 'independent' or 'shared'")
    surrogate_path = sec.get("surrogate_path")
    if not surrogate_path:
        raise ConfigError("attack.surrogate_path is required for the independent mode")
    _need_file(surrogate_path, "surrogate model file")
    s_params, s_spec = load_model(surrogate_path)
    if s_spec.size != spec.size:
        raise ConfigError("surrogate dimensions do not match the BS model")
    return bs, ModelHandle(s_params, s_spec, provenance="independently-trained")


def cmd_gen_data(doc, args):
    config = _system_config(doc)
    solver = _solver_config(doc)
    sec = _require(doc, "dataset")
    count = int(sec.get("count", 1000))
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    path = _dataset_path(doc)
    _ensure_parent(path)
    ds = generate_dataset(config, count=count, solver=solver, rng_seed=seed,
                          distribution=sec.get("distribution", "uniform"))
    ds.meta["config_echo"] = doc
    ds.meta["cli"] = {"command": "gen-data", "seed": seed, "threads": args.threads,
                      "deterministic": args.deterministic}
    save_dataset(ds, path)
    print(f"wrote {len(ds)} instances to {path}")
    print(f"mean oracle min rate: {ds.min_rates.mean():.6f}")
    print(f"resampled: {ds.meta['resampled']}, degenerate: {ds.meta['degenerate_count']}")
    return EXIT_OK


def cmd_train(doc, args):
    config = _system_config(doc)
    ds_path = _dataset_path(doc)
    _need_file(ds_path, "dataset file")
    _need_file(ds_path + ".meta.json", "dataset sidecar")
    dataset = load_dataset(ds_path)
    spec = _network_spec(doc, config)
    loss = _loss_spec(doc)
    tc = _train_config(doc, seed_override=args.seed)
    model_path = _model_path(doc)
    _ensure_parent(model_path)

    params, log = train(spec, loss, tc, dataset)
    save_model(params, spec, model_path)
    write_train_log(log, model_path + ".log")
    _write_json(model_path + ".meta.json",
                {"config_echo": doc, "loss": loss.kind, "epochs": tc.epochs,
                 "final_val_normalized_min_rate": log[-1][2],
                 "cli": {"command": "train", "seed": tc.rng_seed,
                         "threads": args.threads, "deterministic": args.deterministic}})
    print(f"saved model to {model_path} (loss={loss.kind})")
    print(f"final held-out normalized min rate: {log[-1][2]:.4f}")

    sec = doc.get("attack", {})
    if sec.get("surrogate", "independent") == "independent" and sec.get("surrogate_path"):
        s_seed = int(sec.get("surrogate_seed", tc.rng_seed + 1))
        s_params, _ = train(spec, loss, replace(tc, rng_seed=s_seed), dataset)
        _ensure_parent(sec["surrogate_path"])
        save_model(s_params, spec, sec["surrogate_path"])
        print(f"saved surrogate to {sec['surrogate_path']} (seed {s_seed})")
    return EXIT_OK


def cmd_attack(doc, args):
    config = _system_config(doc)
    ds_path = _dataset_path(doc)
    _need_file(ds_path, "dataset file")
    dataset = load_dataset(ds_path)
    bs, surrogate = _load_models(doc, config)
    sec, kinds, targets, rhos = _attack_section(doc)
    if args.target is not None:
        targets = (parse_target(args.target),)
    index = args.instance
    if not 0 <= index < len(dataset):
        raise ConfigError(f"--instance {index} out of range (dataset has {len(dataset)})")
    instance = dataset[index]
    unc = UncertaintyModel(float(sec.get("e_obs", 0.0)), float(sec.get("e_exec", 0.0)),
                           rng_seed=int(sec.get("seed", 0)))

    print(f"instance {index}: oracle min rate {instance.oracle_min_rate:.6f}")
    baseline = evaluate_instance(config, bs, surrogate, instance, None)
    print(f"no attack: achieved min {baseline.achieved_min:.6f} "
          f"normalized {baseline.normalized:.4f}")
    for kind in kinds:
        for target in targets:
            for rho in rhos:
                attack = AttackSpec(kind, target, rho,
                                    epsilon=float(sec.get("epsilon", 1e-3)),
                                    fgm_sign=int(sec.get("fgm_sign", 1)),
                                    fgm_reference=sec.get("fgm_reference", "surrogate"))
                out = evaluate_instance(config, bs, surrogate, instance, attack, unc)
                transmitted = rate_per_ue(config, out.reported, out.allocation)
                link = rate_per_ue(config, instance.gains, out.allocation)
                achieved = np.where(out.outage, 0.0, transmitted)
                print(f"\n== {kind} target={format_target(target)} rho={rho} ==")
                print("delta:")
                print(np.array2string(out.delta, precision=6))
                print("reported gains:")
                print(np.array2string(out.reported, precision=6))
                print("allocation:")
                print(np.array2string(out.allocation, precision=6))
                for j in range(config.num_ues):
                    print(f"UE {j + 1}: transmitted {transmitted[j]:.6f} "
                          f"link {link[j]:.6f} achieved {achieved[j]:.6f}"
                          f"{'  (outage)' if out.outage[j] else ''}")
                print(f"achieved min {out.achieved_min:.6f} "
                      f"normalized {out.normalized:.4f}")
    return EXIT_OK


def cmd_sweep(doc, args):
    config = _system_config(doc)
    ds_path = _dataset_path(doc)
    _need_file(ds_path, "dataset file")
    dataset = load_dataset(ds_path)
    bs, surrogate = _load_models(doc, config)
    sec, kinds, targets, rhos = _attack_section(doc)
    hsec = _require(doc, "harness")
    if "output_path" not in hsec:
        raise ConfigError("[harness] needs an output_path")
    out_path = hsec["output_path"]
    _ensure_parent(out_path)

    master_seed = int(args.seed if args.seed is not None else hsec.get("master_seed", 0))
    train_fraction = float(doc.get("model", {}).get("train", {}).get("train_fraction", 0.5))
    n_train = max(1, int(round(len(dataset) * train_fraction)))
    test = dataset.subset(np.arange(n_train, len(dataset)))
    if len(test) == 0:
        raise ConfigError("no held-out instances after the training split")

    plan = ExperimentPlan(
        attack_kinds=kinds, targets=targets, rhos=rhos,
        uncertainty=UncertaintyModel(float(sec.get("e_obs", 0.0)),
                                     float(sec.get("e_exec", 0.0)),
                                     rng_seed=(master_seed,)),
        test_size=int(hsec.get("test_size", 500)),
        master_seed=master_seed,
        epsilon=float(sec.get("epsilon", 1e-3)),
        fgm_sign=int(sec.get("fgm_sign", 1)),
        fgm_reference=sec.get("fgm_reference", "surrogate"),
    )
    rows, skipped = run_sweep(plan, config, bs, surrogate, test)
    if "uncertainty_table" in hsec:
        usec = hsec["uncertainty_table"]
        cap = min(len(test), plan.test_size)
        rows += uncertainty_sweep(
            config, bs, surrogate, test.subset(np.arange(cap)),
            rho=float(usec.get("rho", 0.10)),
            ue=int(usec.get("ue", 1)) - 1,
            error_ratios=tuple(usec.get("error_ratios", (0.05, 0.10, 0.15, 0.20))),
            noise_seeds=int(usec.get("noise_seeds", hsec.get("noise_seeds", 10))),
            base_seed=master_seed,
            epsilon=float(sec.get("epsilon", 1e-3)))
    save_results(rows, out_path, meta={
        "config_echo": doc, "skipped_instances": skipped,
        "package_version": __version__,
        "cli": {"command": "sweep", "seed": master_seed, "threads": args.threads,
                "deterministic": args.deterministic},
    })
    print(f"wrote {len(rows)} result rows to {out_path} (skipped {skipped})")
    return EXIT_OK


def cmd_report(doc, args):
    hsec = _require(doc, "harness")
    if "output_path" not in hsec:
        raise ConfigError("[harness] needs an output_path")
    rows = load_results(hsec["output_path"])
    plain = [r for r in rows if r.e_obs == 0.0 and r.e_exec == 0.0]
    noisy = [r for r in rows if r.e_obs > 0.0 or r.e_exec > 0.0]

    if plain:
        rhos = sorted({r.rho for r in plain if r.attack != "none"})
        print("normalized minimum rate by attack (columns: rho)")
        header = f"{'attack':<12}{'target':<10}" + "".join(f"{r:>10.3f}" for r in rhos)
        print(header)
        print("-" * len(header))
        base = [r for r in plain if r.attack == "none"]
        if base:
            print(f"{'none':<12}{'-':<10}" + f"{base[0].mean_normalized_min_rate:>10.4f}")
        seen = []
        for r in plain:
            key = (r.attack, r.target)
            if r.attack != "none" and key not in seen:
                seen.append(key)
        for attack, target in seen:
            cells = {r.rho: r for r in plain if (r.attack, r.target) == (attack, target)}
            line = f"{attack:<12}{target:<10}"
            for rho in rhos:
                row = cells.get(rho)
                line += f"{row.mean_normalized_min_rate:>10.4f}" if row else f"{'-':>10}"
            print(line)

    if noisy:
        ratios = sorted({r.e_obs or r.e_exec for r in noisy})
        print("\nuncertainty impact (analytical attack)")
        header = f"{'error on':<16}" + "".join(f"{e:>10.0%}" for e in ratios)
        print(header)
        print("-" * len(header))
        for label, pick in (("channel gain", lambda r: r.e_obs > 0),
                            ("channel change", lambda r: r.e_exec > 0)):
            cells = {r.e_obs or r.e_exec: r for r in noisy if pick(r)}
            line = f"{label:<16}"
            for e in ratios:
                row = cells.get(e)
                line += f"{row.mean_normalized_min_rate:>10.4f}" if row else f"{'-':>10}"
            print(line)
    return EXIT_OK


def _write_json(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, path)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="advpower",
        description="max-min power allocation, DNN regression and gain attacks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("gen-data", cmd_gen_data), ("train", cmd_train),
                     ("attack", cmd_attack), ("sweep", cmd_sweep),
                     ("report", cmd_report)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config document")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap (execution is single-threaded)")
        p.add_argument("--deterministic", action="store_true",
                       help="force the deterministic single-threaded path")
        if name == "attack":
            p.add_argument("--instance", type=int, default=0)
            p.add_argument("--target", default=None,
                           help="override: single:J (1-based), best or all")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc = load_config(args.config)
        return args.fn(doc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
