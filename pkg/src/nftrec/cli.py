"""Command-line entry point: ingest, train, evaluate, grid, recommend.

All commands read one JSON run-config; every random choice flows from its
single seed through named streams, so reruns with the same config and
seed rebuild identical splits, checkpoints, and reports. Exit codes:
0 success, 2 input/validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import (
    bprmf_embeddings,
    bprmf_train,
    build_item_similarity,
    itemknn_embeddings,
    pop_embeddings,
)
from .dataset import (
    Dataset,
    DatasetError,
    IngestError,
    Split,
    build_adjacency,
    build_dataset,
    ingest_transactions,
    load_dataset,
    save_dataset,
    split_dataset,
    stats_table,
)
from .evaluation import (
    EvaluationError,
    GridSpec,
    evaluate,
    evaluate_embeddings,
    grid_search,
    metrics_table,
    report_to_json,
)
from .features import (
    VARIANTS,
    FeatureError,
    assemble_bundle,
    load_feature_file,
)
from .model import (
    ModelConfig,
    ModelError,
    final_embeddings,
    load_checkpoint,
    recommend_topk,
    save_checkpoint,
    split_embeddings,
)
from .training import TrainConfig, TrainError, train, write_train_report

__all__ = ["main", "RunConfig", "ConfigError", "load_run_config"]

BASELINE_NAMES = ("pop", "itemknn", "bpr-mf")


class ConfigError(ValueError):
    """Run-config schema violation."""


TOP_LEVEL_KEYS = {"dataset", "variant", "features", "model", "train", "grid",
                  "ks", "models", "standardize", "missing", "out", "seed"}
MODEL_KEYS = {"embedding_dim", "layers", "node_dropout", "message_dropout",
              "leaky_slope", "mlp_hidden"}
TRAIN_KEYS = {"lr", "reg", "batch_size", "epochs", "eval_every", "reg_weights"}
GRID_KEYS = {"lr", "node_dropout", "message_dropout", "reg", "layers"}
FEATURE_KEYS = {"img", "txt", "price"}


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass
class RunConfig:
    dataset: str | None = None
    variant: str = "none"
    features: dict = field(default_factory=dict)
    model: ModelConfig = None
    train: TrainConfig = None
    grid: GridSpec = None
    ks: tuple[int, ...] = (10, 20)
    models: tuple[str, ...] = ("ngcf",)
    standardize: bool = True
    missing: str = "error"
    out: str = "out"
    seed: int = 0


def load_run_config(path, seed_override=None, out_override=None) -> RunConfig:
    """Parse and schema-validate the run config; unknown keys anywhere
    are rejected before any work starts."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _reject_unknown(doc, TOP_LEVEL_KEYS, "config")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    if seed_override is not None:
        seed = seed_override

    variant = doc.get("variant", "none")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")

    features = doc.get("features", {})
    if not isinstance(features, dict):
        raise ConfigError("features must be an object of modality -> path")
    _reject_unknown(features, FEATURE_KEYS, "features")

    model_doc = dict(doc.get("model", {}))
    _reject_unknown(model_doc, MODEL_KEYS, "model")
    if "mlp_hidden" in model_doc:
        model_doc["mlp_hidden"] = tuple(model_doc["mlp_hidden"])
    try:
        model = ModelConfig(variant=variant, **model_doc)
    except (ModelError, TypeError) as exc:
        raise ConfigError(f"bad model section: {exc}") from None

    train_doc = dict(doc.get("train", {}))
    _reject_unknown(train_doc, TRAIN_KEYS, "train")
    try:
        train_cfg = TrainConfig(seed=seed, **train_doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad train section: {exc}") from None

    grid_doc = dict(doc.get("grid", {}))
    _reject_unknown(grid_doc, GRID_KEYS, "grid")
    try:
        grid = GridSpec(**{k: tuple(v) for k, v in grid_doc.items()})
    except (EvaluationError, TypeError) as exc:
        raise ConfigError(f"bad grid section: {exc}") from None

    ks = doc.get("ks", [10, 20])
    if (not isinstance(ks, list) or not ks
            or any(not isinstance(k, int) or isinstance(k, bool) or k < 1
                   for k in ks)):
        raise ConfigError(f"ks must be a nonempty list of positive integers, "
                          f"got {ks!r}")

    models = doc.get("models", ["ngcf"])
    if not isinstance(models, list) or not models:
        raise ConfigError("models must be a nonempty list of model names")
    for name in models:
        if name in BASELINE_NAMES or name == "ngcf":
            continue
        if name.startswith("ngcf-") and name[len("ngcf-"):] in VARIANTS:
            continue
        raise ConfigError(f"unknown model name {name!r}; expected one of "
                          f"{BASELINE_NAMES}, 'ngcf', or 'ngcf-<variant>'")

    missing = doc.get("missing", "error")
    if missing not in ("error", "zero"):
        raise ConfigError(f"missing policy must be 'error' or 'zero', "
                          f"got {missing!r}")
    standardize = doc.get("standardize", True)
    if not isinstance(standardize, bool):
        raise ConfigError("standardize must be a boolean")

    dataset = doc.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise ConfigError("dataset must be a path string")
    out = doc.get("out", "out")
    if out_override is not None:
        out = out_override

    return RunConfig(dataset=dataset, variant=variant, features=dict(features),
                     model=model, train=train_cfg, grid=grid, ks=tuple(ks),
                     models=tuple(models), standardize=standardize,
                     missing=missing, out=str(out), seed=seed)


def _require_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.dataset:
        raise ConfigError("config needs a 'dataset' path for this command")
    return load_dataset(cfg.dataset)


def _build_bundle(cfg: RunConfig, ds: Dataset, split: Split, variant: str):
    """Load and assemble the feature bundle a variant needs, or None."""
    if variant == "none":
        return None
    needed = ("img", "txt", "price") if variant == "all" else (variant,)
    loaded = {}
    for kind in needed:
        path = cfg.features.get(kind)
        if not path:
            raise ConfigError(f"variant {variant!r} requires a feature file "
                              f"for {kind!r} under config key features.{kind}")
        loaded[kind] = load_feature_file(path)
    train_items = {i for _, i in split.train}
    return assemble_bundle(ds, variant, loaded.get("img"), loaded.get("txt"),
                           loaded.get("price"), standardize=cfg.standardize,
                           train_items=train_items, missing=cfg.missing)


def _items_by_user(pairs, n_users):
    out = [set() for _ in range(n_users)]
    for u, i in pairs:
        out[u].add(i)
    return out


def _train_variant(cfg: RunConfig, ds: Dataset, split: Split, variant: str):
    model_cfg = dataclasses.replace(cfg.model, variant=variant)
    bundle = _build_bundle(cfg, ds, split, variant)
    params, report = train(ds, split, bundle, model_cfg, cfg.train)
    return params, bundle, report


# ---------------------------------------------------------------------------
# Commands


def cmd_ingest(args) -> int:
    log = ingest_transactions(args.csv)
    ds = build_dataset(log, min_item_interactions=args.min_interactions)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.json"
    save_dataset(ds, path)
    print(stats_table(ds, name=Path(args.csv).stem))
    print(f"rows ingested: {len(log)}")
    print(f"dataset written to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    ds = _require_dataset(cfg)
    split = split_dataset(ds, seed=cfg.seed)
    bundle = _build_bundle(cfg, ds, split, cfg.variant)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    validate = None
    if split.valid:
        def validate(params, epoch):
            try:
                report = evaluate(params, ds, split, bundle, ks=(20,),
                                  part="valid")
            except EvaluationError as exc:
                return float("-inf"), {"skipped": str(exc)}
            return report.ndcg[20], {"recall@20": report.recall[20],
                                     "ndcg@20": report.ndcg[20]}

    params, report = train(ds, split, bundle, cfg.model, cfg.train,
                           validate=validate)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(params, ckpt)
    write_train_report(report, out / "train_report.jsonl")
    if report.best_values is not None:
        params.load_values(report.best_values)
        save_checkpoint(params, out / "checkpoint_best.ckpt")
    final_loss = report.epoch_loss[-1] if report.epoch_loss else float("nan")
    print(f"trained {cfg.train.epochs} epoch(s); final mean BPR loss "
          f"{final_loss:.6f}")
    if report.best_epoch is not None:
        print(f"best validation NDCG@20 {report.best_score:.6f} "
              f"at epoch {report.best_epoch}")
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    ds = _require_dataset(cfg)
    split = split_dataset(ds, seed=cfg.seed)
    train_by_user = _items_by_user(split.train, ds.n_users)
    test_by_user = _items_by_user(split.test, ds.n_users)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    reports = []
    for name in cfg.models:
        if name == "pop":
            emb = pop_embeddings(split.train, ds.n_users, ds.n_items)
            rep = evaluate_embeddings(emb, train_by_user, test_by_user,
                                      ks=cfg.ks, model_name=name)
        elif name == "itemknn":
            sim = build_item_similarity(split.train, ds.n_users, ds.n_items)
            emb = itemknn_embeddings(sim, split.train, ds.n_users)
            rep = evaluate_embeddings(emb, train_by_user, test_by_user,
                                      ks=cfg.ks, model_name=name)
        elif name == "bpr-mf":
            params, _ = bprmf_train(ds, split, cfg.model.embedding_dim,
                                    cfg.train)
            rep = evaluate_embeddings(bprmf_embeddings(params), train_by_user,
                                      test_by_user, ks=cfg.ks, model_name=name)
        elif name == "ngcf":
            ckpt_path = Path(args.checkpoint) if args.checkpoint \
                else Path(cfg.out) / "checkpoint.ckpt"
            if not ckpt_path.exists():
                raise ConfigError(f"model 'ngcf' needs a checkpoint; not found "
                                  f"at {ckpt_path} (run `nftrec train` or pass "
                                  "--checkpoint)")
            params = load_checkpoint(ckpt_path)
            if (params.n_users, params.n_items) != (ds.n_users, ds.n_items):
                raise ConfigError(f"checkpoint was trained on "
                                  f"{params.n_users}x{params.n_items}, dataset "
                                  f"is {ds.n_users}x{ds.n_items}")
            bundle = _build_bundle(cfg, ds, split, params.config.variant)
            rep = evaluate(params, ds, split, bundle, ks=cfg.ks, part="test",
                           model_name=f"ngcf-{params.config.variant}")
        else:                               # "ngcf-<variant>": train fresh
            variant = name[len("ngcf-"):]
            params, bundle, _ = _train_variant(cfg, ds, split, variant)
            rep = evaluate(params, ds, split, bundle, ks=cfg.ks, part="test",
                           model_name=name)
        reports.append(rep)

    payload = "[" + ",".join(report_to_json(r) for r in reports) + "]\n"
    (out / "metrics.json").write_text(payload, encoding="utf-8")
    table = metrics_table(reports)
    (out / "metrics.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"reports written to {out / 'metrics.json'}")
    return 0


def cmd_grid(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    ds = _require_dataset(cfg)
    split = split_dataset(ds, seed=cfg.seed)
    bundle = _build_bundle(cfg, ds, split, cfg.variant)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records = grid_search(cfg.grid, cfg.model, cfg.train, ds, split, bundle)
    (out / "grid.json").write_text(
        json.dumps(records, sort_keys=True) + "\n", encoding="utf-8")
    header = (f"{'rank':>4} {'lr':>8} {'node':>6} {'msg':>6} {'reg':>8} "
              f"{'L':>2} {'Recall@20':>11} {'NDCG@20':>9}")
    print(header)
    for rank, rec in enumerate(records, start=1):
        print(f"{rank:>4} {rec['lr']:>8g} {rec['node_dropout']:>6g} "
              f"{rec['message_dropout']:>6g} {rec['reg']:>8g} "
              f"{rec['layers']:>2d} {rec['recall@20']:>11.4f} "
              f"{rec['ndcg@20']:>9.4f}")
    print(f"grid records written to {out / 'grid.json'}")
    return 0


def cmd_recommend(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    ds = _require_dataset(cfg)
    split = split_dataset(ds, seed=cfg.seed)
    ckpt_path = Path(args.checkpoint) if args.checkpoint \
        else Path(cfg.out) / "checkpoint.ckpt"
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found at {ckpt_path}")
    params = load_checkpoint(ckpt_path)
    if (params.n_users, params.n_items) != (ds.n_users, ds.n_items):
        raise ConfigError(f"checkpoint was trained on {params.n_users}x"
                          f"{params.n_items}, dataset is {ds.n_users}x"
                          f"{ds.n_items}")
    if args.user not in ds.user_index:
        raise ConfigError(f"unknown user {args.user!r}")
    u = ds.user_index[args.user]
    bundle = _build_bundle(cfg, ds, split, params.config.variant)
    adj = build_adjacency(split.train, ds.n_users, ds.n_items)
    emb = split_embeddings(final_embeddings(params, adj, bundle), ds.n_users)
    exclude = {i for tu, i in split.train if tu == u}
    items = recommend_topk(emb, u, args.k, exclude=exclude)
    for i in items:
        value = float(emb.users[u] @ emb.items[i])
        print(f"{ds.items[i]}\t{value:.6f}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nftrec",
        description="Graph collaborative filtering for NFT marketplaces")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the JSON run config")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--out", default=None,
                        help="override the output directory")

    p = sub.add_parser("ingest", parents=[common],
                       help="parse a transactions CSV into a dataset file")
    p.add_argument("csv", help="transactions CSV path")
    p.add_argument("--min-interactions", type=int, default=3,
                   help="drop items with fewer distinct buyers (default 3)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common],
                       help="train the model described by the config")
    p.set_defaults(func=cmd_train, needs_config=True)

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate configured models on the test split")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path for the 'ngcf' model entry")
    p.set_defaults(func=cmd_evaluate, needs_config=True)

    p = sub.add_parser("grid", parents=[common],
                       help="grid-search hyperparameters on the valid split")
    p.set_defaults(func=cmd_grid, needs_config=True)

    p = sub.add_parser("recommend", parents=[common],
                       help="print top-K recommendations for one user")
    p.add_argument("--checkpoint", default=None, help="checkpoint path")
    p.add_argument("--user", required=True, help="user wallet address")
    p.add_argument("-k", type=int, default=10, help="list length (default 10)")
    p.set_defaults(func=cmd_recommend, needs_config=True)

    return parser


INPUT_ERRORS = (ConfigError, IngestError, DatasetError, FeatureError,
                ModelError, EvaluationError, FileNotFoundError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "needs_config", False) and not args.config:
        print("error: this command requires --config <path>", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:              # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
