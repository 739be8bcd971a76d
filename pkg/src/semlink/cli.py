"""Command-line harness: data generation, training, evaluation, sweeps, reports.

Every invocation writes a config snapshot (JSON with all effective
parameters) next to its output; result rows reference it through their
run_id prefix. Flags override config-file values, which override defaults.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .channel import SnrScenario
from .config import (
    DEFAULTS,
    default_seed,
    load_config_file,
    new_invocation_id,
    snapshot,
    write_snapshot,
)
from .dataio import generate_dataset, load_dataset, load_image_dir, save_dataset
from .errors import NumericError, ProtocolError, StateError, TrainingFailure
from .matching import load_matching, save_matching
from .perception import (
    load_perception,
    occluded_accuracy,
    pretrain_full_model,
    save_perception,
)
from .protocol import Method, RoundConfig, evaluate
from .results import RunRecord, aggregate, format_report, read_results, write_results
from .trainer import TrainConfig, train_all_variants, train_matching

_METHOD_NAMES = [m.value for m in Method]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _bool_flag(parser, name: str) -> None:
    parser.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None)


def _params(args, keys: list[str]) -> dict:
    file_cfg = load_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is None:
            value = file_cfg.get(key, DEFAULTS.get(key))
        out[key] = value
    return out


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if getattr(args, "config", None):
        file_cfg = load_config_file(args.config)
        if "seed" in file_cfg:
            return int(file_cfg["seed"])
    return default_seed()


def _split_path(data: str, split: str) -> str:
    return os.path.join(data, f"{split}.slds") if os.path.isdir(data) else data


def _scenario(args, params: dict) -> SnrScenario:
    return SnrScenario(args.scenario, params["gamma_min_db"], params["gamma_max_db"])


def _load_bundle(args, method: Method):
    bundle = load_perception(args.perception)
    if method in (Method.SEMANTIC_ONLY, Method.JOINT):
        if not getattr(args, "matching", None):
            raise ValueError(f"method {method.value!r} needs --matching CHECKPOINT")
        load_matching(args.matching, bundle)
    return bundle


def _eval_records(bundle, samples, cfg: RoundConfig, params, seeds, invocation,
                  row_offset=0, round_hook=None) -> list[RunRecord]:
    res = evaluate(bundle, samples, cfg, params["n_rounds"], seeds,
                   n_devices=params["n_devices"], n_groups=params["n_groups"],
                   p=params["p_occlusion"], patch_scale=params["patch_scale"],
                   patch_mode=params["patch_mode"], round_hook=round_hook)
    q = bundle.gw.query_dim if cfg.method in (Method.SEMANTIC_ONLY, Method.JOINT) else 0
    return [
        RunRecord(run_id=f"{invocation}-{row_offset + k}", method=cfg.method.value,
                  scenario=cfg.scenario.kind, noisy_query=cfg.noisy_query,
                  noisy_data=cfg.noisy_data, query_size=q, rho=cfg.rho,
                  seed=sm.seed, accuracy=sm.accuracy,
                  avg_connections=sm.avg_connections, n_rounds=sm.n_rounds)
        for k, sm in enumerate(res.per_seed)
    ]


def _dump_hook(args):
    graphs = getattr(args, "dump_graphs", None)
    matrices = getattr(args, "dump_matrices", None)
    if not graphs and not matrices:
        return None
    limit = args.dump_limit if args.dump_limit is not None else DEFAULTS["dump_limit"]
    for d in (graphs, matrices):
        if d:
            os.makedirs(d, exist_ok=True)

    def hook(seed, r, graph):
        if r >= limit:
            return
        if graphs:
            with open(os.path.join(graphs, f"graph_s{seed}_r{r}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["src", "dst", "weight"])
                for src, dst, weight in graph.edges:
                    w.writerow([src, dst, repr(weight)])
        if matrices and graph.matrix is not None:
            with open(os.path.join(matrices, f"matrix_s{seed}_r{r}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                for row in graph.matrix.normalized:
                    w.writerow([repr(v) for v in row])

    return hook


def cmd_gen_data(args) -> int:
    params = _params(args, ["n_train", "n_test"])
    seed = _seed(args)
    os.makedirs(args.out, exist_ok=True)
    if args.from_images:
        samples = load_image_dir(args.from_images)
        split = int(0.8 * len(samples))
        train, test = samples[:split], samples[split:]
    else:
        train = generate_dataset(params["n_train"], seed)
        test = generate_dataset(params["n_test"], seed + 1_000_000)
    save_dataset(os.path.join(args.out, "train.slds"), train)
    save_dataset(os.path.join(args.out, "test.slds"), test)
    inv = new_invocation_id()
    write_snapshot(args.out, snapshot("gen-data", {**params, "seed": seed}, inv))
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    params = _params(args, ["pretrain_epochs", "pretrain_lr", "pretrain_target_acc",
                            "batch_size", "patch_scale"])
    seed = _seed(args)
    train = load_dataset(_split_path(args.data, "train"))
    test = load_dataset(_split_path(args.data, "test"))
    rng = np.random.default_rng(seed)
    bundle = pretrain_full_model(train, test, params["pretrain_epochs"],
                                 params["pretrain_lr"], rng,
                                 batch_size=params["batch_size"],
                                 target_acc=params["pretrain_target_acc"],
                                 log=print)
    save_perception(args.out, bundle)
    from .perception import accuracy
    clean = accuracy(bundle, test)
    occluded = occluded_accuracy(bundle, test, params["patch_scale"],
                                 np.random.default_rng(seed + 1))
    inv = new_invocation_id()
    write_snapshot(os.path.dirname(args.out), snapshot("pretrain", {**params, "seed": seed}, inv))
    print(f"saved {args.out}: clean accuracy {clean:.4f}, occluded (p=1) {occluded:.4f}")
    return 0


def _train_config(args, params, link_aware: bool, noisy_query, noisy_data) -> TrainConfig:
    return TrainConfig(
        epochs=params["epochs"], steps_per_epoch=params["steps_per_epoch"],
        batch_size=params["batch_size"], lr=params["lr"],
        query_dim=params["query_dim"], key_dim=params["key_dim"],
        noisy_query=bool(noisy_query), noisy_data=bool(noisy_data),
        link_aware=link_aware, n_devices=params["n_devices"],
        n_groups=params["n_groups"], p_occlusion=params["p_occlusion"],
        patch_scale=params["patch_scale"], patch_mode=params["patch_mode"])


_TRAIN_KEYS = ["epochs", "steps_per_epoch", "batch_size", "lr", "query_dim",
               "key_dim", "n_devices", "n_groups", "p_occlusion", "patch_scale",
               "patch_mode", "gamma_min_db", "gamma_max_db"]


def cmd_train(args) -> int:
    params = _params(args, _TRAIN_KEYS)
    if args.q is not None:
        params["query_dim"] = args.q
    seed = _seed(args)
    noisy_query = args.noisy_query if args.noisy_query is not None else False
    noisy_data = args.noisy_data if args.noisy_data is not None else True
    cfg = _train_config(args, params, args.method == "joint", noisy_query, noisy_data)
    bundle = load_perception(args.perception)
    train = load_dataset(_split_path(args.data, "train"))
    scenario = _scenario(args, params)
    rng = np.random.default_rng(seed)
    _, history = train_matching(bundle, train, scenario, cfg, rng, log=print)
    save_matching(args.out, bundle)
    inv = new_invocation_id()
    write_snapshot(os.path.dirname(args.out),
                   snapshot("train", {**params, "seed": seed, "method": args.method,
                                      "scenario": args.scenario,
                                      "noisy_query": noisy_query,
                                      "noisy_data": noisy_data}, inv))
    print(f"saved {args.out}: final smoothed loss "
          f"{float(np.mean(history[-min(50, len(history)):])):.4f}")
    return 0


def cmd_train_all(args) -> int:
    params = _params(args, _TRAIN_KEYS + ["query_sweep"])
    seed = _seed(args)
    qs = _ints(args.q) if args.q else list(params["query_sweep"])
    scenarios = [SnrScenario(k, params["gamma_min_db"], params["gamma_max_db"])
                 for k in (args.scenarios.split(",") if args.scenarios
                           else ["uniform", "extreme"])]
    base = _train_config(args, params, True, False, True)
    bundle = load_perception(args.perception)
    train = load_dataset(_split_path(args.data, "train"))
    manifest = train_all_variants(bundle, train, scenarios, qs, base, args.out,
                                  seed, log=print)
    inv = new_invocation_id()
    write_snapshot(args.out, snapshot("train-all", {**params, "seed": seed}, inv))
    print(f"wrote {len(manifest)} checkpoints + manifest to {args.out}")
    return 0


_EVAL_KEYS = ["n_rounds", "n_devices", "n_groups", "p_occlusion", "patch_scale",
              "patch_mode", "gamma_min_db", "gamma_max_db", "dump_limit"]


def cmd_eval(args) -> int:
    params = _params(args, _EVAL_KEYS)
    seed = _seed(args)
    seeds = _ints(args.seeds) if args.seeds else [seed, seed + 1, seed + 2]
    if args.n_rounds is not None:
        params["n_rounds"] = args.n_rounds
    method = Method(args.method)
    bundle = _load_bundle(args, method)
    test = load_dataset(_split_path(args.data, "test"))
    cfg = RoundConfig(method, _scenario(args, params), rho=args.rho,
                      noisy_query=bool(args.noisy_query),
                      noisy_data=args.noisy_data if args.noisy_data is not None else True)
    inv = new_invocation_id()
    records = _eval_records(bundle, test, cfg, params, seeds, inv,
                            round_hook=_dump_hook(args))
    write_results(args.out, records)
    write_snapshot(os.path.dirname(args.out) or ".",
                   snapshot("eval", {**params, "seeds": seeds, "method": method.value,
                                     "scenario": args.scenario, "rho": args.rho,
                                     "noisy_query": cfg.noisy_query,
                                     "noisy_data": cfg.noisy_data}, inv))
    for rec in records:
        print(f"seed {rec.seed}: accuracy {rec.accuracy:.4f}, "
              f"avg connections {rec.avg_connections:.3f}")
    print(f"appended {len(records)} rows to {args.out}")
    return 0


def cmd_sweep_query(args) -> int:
    params = _params(args, _EVAL_KEYS + ["query_sweep"])
    seed = _seed(args)
    seeds = _ints(args.seeds) if args.seeds else [seed, seed + 1, seed + 2]
    if args.n_rounds is not None:
        params["n_rounds"] = args.n_rounds
    qs = _ints(args.q) if args.q else list(params["query_sweep"])
    noisy_query = bool(args.noisy_query)
    scenario = _scenario(args, params)
    test = load_dataset(_split_path(args.data, "test"))
    import json
    with open(os.path.join(args.models, "manifest.json")) as fh:
        manifest = json.load(fh)
    inv = new_invocation_id()
    records: list[RunRecord] = []
    methods = args.methods.split(",") if args.methods else _METHOD_NAMES
    for name in methods:
        method = Method(name)
        if method in (Method.SEMANTIC_ONLY, Method.JOINT):
            variant = "joint" if method is Method.JOINT else "semantic"
            for q in qs:
                entry = next((e for e in manifest
                              if e["variant"] == variant and e["scenario"] == scenario.kind
                              and e["query_size"] == q and e["noisy_query"] == noisy_query),
                             None)
                if entry is None:
                    raise ValueError(f"no checkpoint for {variant}/{scenario.kind}/q={q}/"
                                     f"noisy_query={noisy_query} in {args.models}")
                bundle = load_perception(args.perception)
                load_matching(os.path.join(args.models, entry["path"]), bundle)
                cfg = RoundConfig(method, scenario, rho=0.0,
                                  noisy_query=noisy_query, noisy_data=True)
                records += _eval_records(bundle, test, cfg, params, seeds, inv,
                                         row_offset=len(records))
        else:
            bundle = load_perception(args.perception)
            cfg = RoundConfig(method, scenario, rho=0.0,
                              noisy_query=noisy_query, noisy_data=True)
            records += _eval_records(bundle, test, cfg, params, seeds, inv,
                                     row_offset=len(records))
    write_results(args.out, records)
    write_snapshot(os.path.dirname(args.out) or ".",
                   snapshot("sweep-query", {**params, "seeds": seeds, "q": qs,
                                            "scenario": args.scenario,
                                            "noisy_query": noisy_query}, inv))
    print(f"appended {len(records)} rows to {args.out}")
    return 0


def cmd_sweep_rho(args) -> int:
    params = _params(args, _EVAL_KEYS)
    seed = _seed(args)
    seeds = _ints(args.seeds) if args.seeds else [seed, seed + 1, seed + 2]
    if args.n_rounds is not None:
        params["n_rounds"] = args.n_rounds
    method = Method(args.method)
    bundle = _load_bundle(args, method)
    test = load_dataset(_split_path(args.data, "test"))
    inv = new_invocation_id()
    records: list[RunRecord] = []
    for rho in _floats(args.rho):
        cfg = RoundConfig(method, _scenario(args, params), rho=rho,
                          noisy_query=bool(args.noisy_query), noisy_data=True)
        records += _eval_records(bundle, test, cfg, params, seeds, inv,
                                 row_offset=len(records))
    write_results(args.out, records)
    write_snapshot(os.path.dirname(args.out) or ".",
                   snapshot("sweep-rho", {**params, "seeds": seeds, "rho": _floats(args.rho),
                                          "method": method.value,
                                          "scenario": args.scenario,
                                          "noisy_query": bool(args.noisy_query)}, inv))
    print(f"appended {len(records)} rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    by = tuple(args.by.split(",")) if args.by else ("method", "scenario", "query_size")
    rows = aggregate(read_results(args.csv), by=by)
    print(format_report(rows, by))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semlink",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="JSON config file (defaults < file < flags)")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="default from SEMLINK_SEED or 12345")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", dest="n_train", type=int, default=None)
    p.add_argument("--n-test", dest="n_test", type=int, default=None)
    p.add_argument("--from-images", help="ingest <class>_<id>.png files instead")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train and freeze the shared classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int, default=None)
    p.add_argument("--pretrain-lr", dest="pretrain_lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_pretrain)

    def train_opts(p):
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--key-dim", dest="key_dim", type=int, default=None)

    p = sub.add_parser("train", help="train one matching configuration")
    p.add_argument("--data", required=True)
    p.add_argument("--perception", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["semantic", "joint"], required=True)
    p.add_argument("--scenario", choices=["uniform", "extreme"], required=True)
    p.add_argument("--q", type=int, default=None, help="query size")
    _bool_flag(p, "noisy-query")
    _bool_flag(p, "noisy-data")
    train_opts(p)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-all", help="train every (variant, scenario, q, arm) cell")
    p.add_argument("--data", required=True)
    p.add_argument("--perception", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--q", help="comma list of query sizes")
    p.add_argument("--scenarios", help="comma list: uniform,extreme")
    train_opts(p)
    common(p)
    p.set_defaults(func=cmd_train_all)

    def eval_opts(p, with_method=True):
        p.add_argument("--data", required=True)
        p.add_argument("--perception", required=True)
        p.add_argument("--matching", help="matching checkpoint (semantic/joint)")
        if with_method:
            p.add_argument("--method", choices=_METHOD_NAMES, required=True)
        p.add_argument("--scenario", choices=["uniform", "extreme"], required=True)
        _bool_flag(p, "noisy-query")
        _bool_flag(p, "noisy-data")
        p.add_argument("--n-rounds", dest="n_rounds", type=int, default=None)
        p.add_argument("--seeds", help="comma list of evaluation seeds")
        p.add_argument("--out", required=True, help="results CSV (appended)")
        p.add_argument("--dump-graphs", dest="dump_graphs")
        p.add_argument("--dump-matrices", dest="dump_matrices")
        p.add_argument("--dump-limit", dest="dump_limit", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate one method")
    eval_opts(p)
    p.add_argument("--rho", type=float, default=0.0)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-query", help="accuracy vs query size protocol")
    p.add_argument("--models", required=True, help="directory with manifest.json")
    p.add_argument("--q", help="comma list of query sizes")
    p.add_argument("--methods", help=f"comma list of {','.join(_METHOD_NAMES)}")
    eval_opts(p, with_method=False)
    common(p)
    p.set_defaults(func=cmd_sweep_query)

    p = sub.add_parser("sweep-rho", help="connections/accuracy vs pruning threshold")
    eval_opts(p)
    p.add_argument("--rho", required=True, help="comma list of thresholds")
    common(p)
    p.set_defaults(func=cmd_sweep_rho)

    p = sub.add_parser("report", help="aggregate a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--by", help="comma list of grouping columns")
    common(p, config=False, seed=False)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, StateError, NumericError,
            ProtocolError, TrainingFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
