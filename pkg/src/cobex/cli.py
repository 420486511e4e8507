"""Command-line front end: gen-data, train, eval, benchmark, report.

Runs are laid out as ``<out>/<method>/<seed>/`` with a manifest, the
selected checkpoint, the per-iteration training trace, and the held-out
evaluation. Reports are byte-reproducible for a fixed seed: no timestamps
or absolute paths are written.
"""

import argparse
import json
import os
import sys

from cobex import constraints as constraints_mod
from cobex import evaluation, policy, synthenv, trainers
from cobex.data import empirical_prior, load_dataset, save_dataset
from cobex.errors import CobexError, ConfigError, DivergenceError
from cobex.objectives import DomainPrior

OUTPUT_ROOT_ENV = "COBEX_RUNS_ROOT"

METHODS = ("ips", "quadratic", "minimax", "metagrad")

# hyperparameters selected per benchmark by the reference sweeps; used when
# no explicit flag is given
SELECTED_HYPERPARAMS = {
    ("quadratic", "global"): {"w": 10.0},
    ("quadratic", "critical"): {"w": 1000.0},
    ("quadratic", "explore"): {"w": 1000.0},
    ("minimax", "global"): {"eta": 0.1, "gamma": 1.0},
    ("minimax", "critical"): {"eta": 0.1, "gamma": 0.999},
    ("minimax", "explore"): {"eta": 1.0, "gamma": 1.0},
}

QUADRATIC_SWEEP = (0.1, 1.0, 10.0, 100.0, 1000.0)
MINIMAX_ETA_SWEEP = (1.0, 0.1, 0.01)
MINIMAX_GAMMA_SWEEP = (1.0, 0.999, 0.995)


def default_out(name):
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return os.path.join(root, name)


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args):
    spec = synthenv.EnvSpec(
        seed=args.seed,
        n_domains=args.domains,
        zipf_exponent=args.zipf,
        d_context=args.d_context,
        d_candidate=args.d_candidate,
        min_candidates=args.min_candidates,
        max_candidates=args.max_candidates,
        temperature=args.temperature,
    )
    env = synthenv.gen_env(spec)
    fractions = tuple(float(x) for x in args.splits.split(","))
    train, val, test = synthenv.gen_dataset(env, args.samples, fractions)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(train, os.path.join(args.out, "train.jsonl"))
    save_dataset(val, os.path.join(args.out, "validation.jsonl"))
    save_dataset(test, os.path.join(args.out, "test.jsonl"))
    policy.save_checkpoint(env.logging_params,
                           os.path.join(args.out, "logging_policy.npz"),
                           fingerprint=env.fingerprint)
    from dataclasses import asdict

    _write_json(os.path.join(args.out, "env.json"), {
        "spec": {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in asdict(spec).items()},
        "fingerprint": env.fingerprint,
        "domains": env.domain_names,
        "sizes": {"train": len(train), "validation": len(val), "test": len(test)},
    })
    print(f"wrote {len(train)}/{len(val)}/{len(test)} samples to {args.out} "
          f"(fingerprint {env.fingerprint})")
    return 0


def _load_splits(data_dir):
    train = load_dataset(os.path.join(data_dir, "train.jsonl"))
    val = load_dataset(os.path.join(data_dir, "validation.jsonl"))
    test = load_dataset(os.path.join(data_dir, "test.jsonl"))
    return train, val, test


def method_hyperparams(method, bench_name, args=None):
    """Method hyperparameters: explicit flags win over per-benchmark defaults."""
    hp = dict(SELECTED_HYPERPARAMS.get((method, bench_name), {}))
    if method == "quadratic":
        hp.setdefault("w", 10.0)
        if args is not None and args.w is not None:
            hp["w"] = args.w
    elif method == "minimax":
        hp.setdefault("eta", 0.1)
        hp.setdefault("gamma", 1.0)
        hp["tau"] = 1.0
        hp["xi"] = 1.0
        if args is not None:
            for key in ("eta", "gamma", "tau", "xi"):
                val = getattr(args, key, None)
                if val is not None:
                    hp[key] = val
    elif method == "metagrad":
        hp.setdefault("lam", 1.0)
        hp.setdefault("eta_inner", 0.01)
        hp.setdefault("uv_lr", 0.05)
        if args is not None:
            if args.lam is not None:
                hp["lam"] = args.lam
            if args.eta_inner is not None:
                hp["eta_inner"] = args.eta_inner
            if args.uv_lr is not None:
                hp["uv_lr"] = args.uv_lr
    return hp


def run_training(method, train, val, bench, seed, epochs, batch_size, lr, hp,
                 log_every=10):
    """Train one (method, seed) run and select the best epoch checkpoint."""
    init = policy.init_policy(seed, policy.default_dims(train.d_context,
                                                        train.d_candidate))
    opt = trainers.Optimizer("adam", lr=lr)
    common = dict(bench=bench, epochs=epochs, batch_size=batch_size, seed=seed,
                  log_every=log_every)
    if method == "ips":
        params, report = trainers.train_ips(train, init, opt, **common)
    elif method == "quadratic":
        params, report = trainers.train_quadratic(train, init, opt,
                                                  weight=hp["w"], **common)
    elif method == "minimax":
        cfg = trainers.MinimaxConfig(eta=hp["eta"], gamma=hp["gamma"],
                                     tau=hp["tau"], xi=hp["xi"])
        params, report = trainers.train_minimax(train, init, opt, cfg, **common)
    elif method == "metagrad":
        cfg = trainers.MetaGradConfig(eta_inner=hp["eta_inner"], lam=hp["lam"])
        prior = DomainPrior(empirical_prior(train))
        opt_uv = trainers.Optimizer("adam", lr=hp["uv_lr"])
        params, report = trainers.train_metagrad(train, init, opt, opt_uv, cfg,
                                                 prior=prior, **common)
    else:
        raise ConfigError(f"unknown method {method!r}")
    selection = trainers.select_best(report.epoch_snapshots, val, bench)
    return params, report, selection


def _save_run(out_dir, method, seed, bench, hp, args_info, report, selection,
              fingerprint):
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "checkpoint.npz")
    policy.save_checkpoint(selection.params, ckpt, fingerprint=fingerprint)
    report.checkpoint_path = "checkpoint.npz"
    report.to_csv(os.path.join(out_dir, "train_report.csv"))
    manifest = {
        "method": method,
        "seed": seed,
        "benchmark": bench.name,
        "hyperparams": hp,
        "config": args_info,
        "fingerprint": fingerprint,
        "selected_epoch": selection.epoch,
        "validation_macro_violation": selection.macro_violation,
        "validation_reward": selection.reward,
        "checkpoint": "checkpoint.npz",
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return ckpt


def cmd_train(args):
    train, val, _ = _load_splits(args.data)
    bench = constraints_mod.load_benchmark(args.benchmark)
    hp = method_hyperparams(args.method, bench.name, args)
    out_dir = args.out or os.path.join(default_out("train"), args.method,
                                       str(args.seed))
    try:
        _, report, selection = run_training(
            args.method, train, val, bench, args.seed, args.epochs,
            args.batch_size, args.lr, hp, log_every=args.log_every)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    args_info = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "lr": args.lr, "log_every": args.log_every}
    _save_run(out_dir, args.method, args.seed, bench, hp, args_info, report,
              selection, train.fingerprint)
    print(f"{args.method} seed={args.seed}: best epoch {selection.epoch}, "
          f"validation macro violation {selection.macro_violation:.4f} "
          f"-> {out_dir}")
    return 0


def cmd_eval(args):
    params, ckpt_fingerprint = policy.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    bench = constraints_mod.load_benchmark(args.benchmark)
    mismatch = bool(ckpt_fingerprint and dataset.fingerprint
                    and ckpt_fingerprint != dataset.fingerprint)
    if mismatch:
        print("warning: checkpoint and dataset fingerprints differ",
              file=sys.stderr)
    result = evaluation.evaluate(dataset, params, bench, method=args.method,
                                 seed=args.seed, fingerprint=ckpt_fingerprint,
                                 fingerprint_mismatch=mismatch)
    _write_json(args.out, result.to_dict())
    print(f"reward {result.reward:.4f} macro {result.macro_violation:.4f} "
          f"micro {result.micro_violation:.4f} -> {args.out}")
    return 0


def sweep_candidates(method):
    if method == "quadratic":
        return [{"w": w} for w in QUADRATIC_SWEEP]
    if method == "minimax":
        return [{"eta": e, "gamma": g, "tau": 1.0, "xi": 1.0}
                for e in MINIMAX_ETA_SWEEP for g in MINIMAX_GAMMA_SWEEP]
    return []


def _hp_tag(hp):
    return "_".join(f"{k}{hp[k]:g}" for k in sorted(hp)) or "default"


def run_sweep(method, train, val, bench, seed, epochs, batch_size, lr,
              out_dir=None, log_every=50):
    """Grid-search a method's hyperparameters by validation macro violation."""
    best_hp, best_key = None, None
    results = []
    for hp in sweep_candidates(method):
        full = dict(method_hyperparams(method, bench.name))
        full.update(hp)
        _, report, selection = run_training(method, train, val, bench, seed,
                                            epochs, batch_size, lr, full,
                                            log_every=log_every)
        key = (selection.macro_violation, -selection.reward)
        results.append({"hyperparams": full,
                        "validation_macro_violation": selection.macro_violation,
                        "validation_reward": selection.reward})
        if best_key is None or key < best_key:
            best_key, best_hp = key, full
        if out_dir is not None:
            sweep_dir = os.path.join(out_dir, method, "sweep", _hp_tag(hp))
            os.makedirs(sweep_dir, exist_ok=True)
            _write_json(os.path.join(sweep_dir, "result.json"), results[-1])
    return best_hp, results


def cmd_benchmark(args):
    train, val, test = _load_splits(args.data)
    bench = constraints_mod.load_benchmark(args.benchmark)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    seeds = [int(s) for s in args.seeds.split(",")]
    out_dir = args.out or default_out(bench.name)
    os.makedirs(out_dir, exist_ok=True)
    args_info = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "lr": args.lr, "log_every": args.log_every}
    results = {}
    failures = []
    for method in methods:
        if args.sweep:
            hp, sweep_results = run_sweep(method, train, val, bench,
                                          args.sweep_seed, args.epochs,
                                          args.batch_size, args.lr, out_dir)
            if sweep_results:
                _write_json(os.path.join(out_dir, method, "sweep", "summary.json"),
                            {"selected": hp, "results": sweep_results})
        else:
            hp = method_hyperparams(method, bench.name, args)
        method_results = []
        for seed in seeds:
            run_dir = os.path.join(out_dir, method, str(seed))
            try:
                _, report, selection = run_training(
                    method, train, val, bench, seed, args.epochs,
                    args.batch_size, args.lr, hp, log_every=args.log_every)
            except DivergenceError as exc:
                failures.append(f"{method} seed={seed}: {exc}")
                continue
            _save_run(run_dir, method, seed, bench, hp, args_info, report,
                      selection, train.fingerprint)
            result = evaluation.evaluate(test, selection.params, bench,
                                         method=method, seed=seed,
                                         fingerprint=train.fingerprint)
            _write_json(os.path.join(run_dir, "eval.json"), result.to_dict())
            method_results.append(result)
            print(f"{method} seed={seed}: reward {result.reward:.4f} "
                  f"macro {result.macro_violation:.4f}")
        if method_results:
            results[method] = method_results
    baseline = "ips" if "ips" in results else methods[0]
    report = evaluation.compare(results, baseline=baseline, benchmark=bench.name)
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(f"report -> {os.path.join(out_dir, 'report.csv')}")
    if failures:
        for f in failures:
            print(f"FAILED: {f}", file=sys.stderr)
        return 4
    return 0


def cmd_report(args):
    """Assemble a comparison report from completed run directories."""
    results = {}
    bench_name = ""
    for method in sorted(os.listdir(args.runs)):
        method_dir = os.path.join(args.runs, method)
        if not os.path.isdir(method_dir) or method not in METHODS:
            continue
        method_results = []
        for seed_name in sorted(os.listdir(method_dir),
                                key=lambda s: (len(s), s)):
            eval_path = os.path.join(method_dir, seed_name, "eval.json")
            if not os.path.exists(eval_path):
                continue
            with open(eval_path, "r", encoding="utf-8") as fh:
                method_results.append(evaluation.EvalResult.from_dict(json.load(fh)))
            manifest_path = os.path.join(method_dir, seed_name, "manifest.json")
            if os.path.exists(manifest_path):
                with open(manifest_path, "r", encoding="utf-8") as fh:
                    bench_name = json.load(fh).get("benchmark", bench_name)
        if method_results:
            results[method] = method_results
    if not results:
        print(f"error: no completed runs under {args.runs}", file=sys.stderr)
        return 2
    baseline = args.baseline if args.baseline in results else next(iter(results))
    report = evaluation.compare(results, baseline=baseline, benchmark=bench_name)
    with open(args.out, "w", encoding="utf-8") as fh:
        if args.out.endswith(".json"):
            fh.write(report.to_json() + "\n")
        else:
            fh.write(report.to_csv())
    print(f"report -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cobex",
        description="constrained off-policy bandit training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic logged dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--domains", type=int, default=8)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--d-context", type=int, default=16)
    p.add_argument("--d-candidate", type=int, default=8)
    p.add_argument("--min-candidates", type=int, default=2)
    p.add_argument("--max-candidates", type=int, default=8)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--splits", default="0.85,0.10,0.05")
    p.set_defaults(func=cmd_gen_data)

    def add_train_flags(p, with_method=True):
        p.add_argument("--data", required=True, help="directory from gen-data")
        p.add_argument("--benchmark", required=True,
                       help="builtin name (global/critical/explore) or path")
        p.add_argument("--epochs", type=int, default=32)
        p.add_argument("--batch-size", type=int, default=512)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--log-every", type=int, default=10)
        if with_method:
            p.add_argument("--method", required=True, choices=METHODS)
        p.add_argument("--w", type=float, default=None,
                       help="quadratic penalty weight")
        p.add_argument("--eta", type=float, default=None,
                       help="minimax max-player learning rate")
        p.add_argument("--gamma", type=float, default=None,
                       help="minimax max-player lr decay")
        p.add_argument("--tau", type=float, default=None,
                       help="minimax max-player update period")
        p.add_argument("--xi", type=float, default=None,
                       help="minimax update period decay")
        p.add_argument("--lam", type=float, default=None,
                       help="metagrad meta balance weight")
        p.add_argument("--eta-inner", type=float, default=None,
                       help="metagrad inner step size")
        p.add_argument("--uv-lr", type=float, default=None,
                       help="metagrad dual-weight optimizer lr")

    p = sub.add_parser("train", help="train one method on one seed")
    add_train_flags(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="a .jsonl dataset file")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark",
                       help="train all methods x seeds and emit a report")
    add_train_flags(p, with_method=False)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--seeds", default="1,2,3,4")
    p.add_argument("--sweep", action="store_true",
                   help="grid-search hyperparameters before the final seeds")
    p.add_argument("--sweep-seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="assemble a report from finished runs")
    p.add_argument("--runs", required=True)
    p.add_argument("--baseline", default="ips")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CobexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
