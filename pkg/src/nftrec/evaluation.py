"""Top-K ranking metrics, the user-level evaluation protocol, and grid
search over training hyperparameters.

Evaluation ranks every non-train item for each user who has at least one
held-out item and at least one train item; everyone else is counted as
excluded rather than silently dropped. Metrics are averaged over users.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Split, build_adjacency
from .features import FeatureBundle
from .model import (
    Embeddings,
    ModelConfig,
    ModelParams,
    final_embeddings,
    recommend_topk,
    split_embeddings,
)
from .training import TrainConfig, TrainError, train

__all__ = [
    "MetricReport",
    "GridSpec",
    "EvaluationError",
    "recall_at_k",
    "ndcg_at_k",
    "evaluate",
    "evaluate_embeddings",
    "grid_search",
    "report_to_json",
    "metrics_table",
]


class EvaluationError(ValueError):
    """Protocol misuse: empty ground truth or nothing to evaluate."""


def recall_at_k(ranked, ground_truth, k: int) -> float:
    """|top-k hits| / |ground truth|."""
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")
    if not ground_truth:
        raise EvaluationError("recall needs a nonempty ground-truth set")
    gt = set(ground_truth)
    hits = sum(1 for item in ranked[:k] if item in gt)
    return hits / len(gt)


def ndcg_at_k(ranked, ground_truth, k: int) -> float:
    """Binary-relevance NDCG with 1/log2(rank+1) discounts; the ideal DCG
    places all of the (up to k) ground-truth items at the top."""
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")
    if not ground_truth:
        raise EvaluationError("ndcg needs a nonempty ground-truth set")
    gt = set(ground_truth)
    dcg = sum(1.0 / np.log2(rank + 2)
              for rank, item in enumerate(ranked[:k]) if item in gt)
    ideal = sum(1.0 / np.log2(rank + 2) for rank in range(min(k, len(gt))))
    return dcg / ideal


@dataclass
class MetricReport:
    model: str
    ks: tuple[int, ...]
    recall: dict[int, float]
    ndcg: dict[int, float]
    evaluated_users: int
    excluded_users: int

    def __post_init__(self):
        for k in self.ks:
            if not 0.0 <= self.recall[k] <= 1.0:
                raise EvaluationError(f"recall@{k} outside [0,1]")
            if not 0.0 <= self.ndcg[k] <= 1.0:
                raise EvaluationError(f"ndcg@{k} outside [0,1]")


def evaluate_embeddings(emb: Embeddings, train_items, part_items,
                        ks=(10, 20), model_name: str = "model") -> MetricReport:
    """Core protocol over precomputed embeddings.

    `train_items[u]` / `part_items[u]` are per-user item-index sets; users
    need at least one of each to be evaluable. Rankings exclude the user's
    train items and never look at the held-out sets.
    """
    ks = tuple(int(k) for k in ks)
    if not ks or any(k < 1 for k in ks):
        raise EvaluationError(f"bad K list {ks}")
    max_k = max(ks)
    recall_sums = {k: 0.0 for k in ks}
    ndcg_sums = {k: 0.0 for k in ks}
    evaluated = 0
    excluded = 0
    for u in range(emb.users.shape[0]):
        held_out = part_items[u]
        if not held_out:
            continue
        if not train_items[u]:
            excluded += 1
            continue
        ranked = recommend_topk(emb, u, max_k, exclude=train_items[u])
        for k in ks:
            recall_sums[k] += recall_at_k(ranked, held_out, k)
            ndcg_sums[k] += ndcg_at_k(ranked, held_out, k)
        evaluated += 1
    if evaluated == 0:
        raise EvaluationError("no evaluable users (need >=1 train and >=1 "
                              "held-out interaction each)")
    return MetricReport(
        model=model_name,
        ks=ks,
        recall={k: recall_sums[k] / evaluated for k in ks},
        ndcg={k: ndcg_sums[k] / evaluated for k in ks},
        evaluated_users=evaluated,
        excluded_users=excluded,
    )


def _items_by_user(pairs, n_users: int) -> list[set[int]]:
    by_user = [set() for _ in range(n_users)]
    for u, i in pairs:
        by_user[u].add(i)
    return by_user


def evaluate(params: ModelParams, ds: Dataset, split: Split,
             bundle: FeatureBundle | None, ks=(10, 20), part: str = "test",
             model_name: str | None = None) -> MetricReport:
    """Rank with a clean forward pass (no dropout) and score the chosen
    held-out part against each user's non-train items."""
    if part not in ("valid", "test"):
        raise EvaluationError(f"part must be 'valid' or 'test', got {part!r}")
    held_out = split.valid if part == "valid" else split.test
    if not held_out:
        raise EvaluationError(f"{part} split is empty")
    adj = build_adjacency(split.train, ds.n_users, ds.n_items)
    emb = split_embeddings(final_embeddings(params, adj, bundle), ds.n_users)
    return evaluate_embeddings(
        emb,
        _items_by_user(split.train, ds.n_users),
        _items_by_user(held_out, ds.n_users),
        ks=ks,
        model_name=model_name or f"ngcf-{params.config.variant}",
    )


# ---------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class GridSpec:
    lr: tuple = (0.01, 0.001)
    node_dropout: tuple = (0.0, 0.1, 0.2)
    message_dropout: tuple = (0.0, 0.1, 0.2)
    reg: tuple = (1e-5, 1e-4, 1e-3)
    layers: tuple = (1, 2, 3)

    def __post_init__(self):
        for name in ("lr", "node_dropout", "message_dropout", "reg", "layers"):
            values = getattr(self, name)
            if len(values) == 0:
                raise EvaluationError(f"grid axis {name} is empty")

    def points(self):
        """Deterministic enumeration order: lr, node, message, reg, layers."""
        return itertools.product(self.lr, self.node_dropout,
                                 self.message_dropout, self.reg, self.layers)


def grid_search(grid: GridSpec, model_cfg: ModelConfig, train_cfg: TrainConfig,
                ds: Dataset, split: Split, bundle: FeatureBundle | None = None,
                runner=None) -> list[dict]:
    """Train every grid point, score it on the validation split, and rank
    by NDCG@20 (ties: Recall@20, then listing order).

    `runner(model_cfg, train_cfg) -> (recall20, ndcg20)` may be injected;
    the default trains and evaluates for real.
    """
    if runner is None:
        def runner(mc, tc):
            params, _ = train(ds, split, bundle, mc, tc)
            report = evaluate(params, ds, split, bundle, ks=(20,), part="valid")
            return report.recall[20], report.ndcg[20]

    records = []
    for position, (lr, nd, md, reg, layers) in enumerate(grid.points()):
        mc = ModelConfig(embedding_dim=model_cfg.embedding_dim, layers=layers,
                         node_dropout=nd, message_dropout=md,
                         variant=model_cfg.variant,
                         leaky_slope=model_cfg.leaky_slope,
                         mlp_hidden=model_cfg.mlp_hidden)
        tc = TrainConfig(lr=lr, reg=reg, batch_size=train_cfg.batch_size,
                         epochs=train_cfg.epochs, seed=train_cfg.seed,
                         eval_every=train_cfg.eval_every,
                         reg_weights=train_cfg.reg_weights)
        label = (f"lr={lr} node_dropout={nd} message_dropout={md} "
                 f"reg={reg} layers={layers}")
        try:
            recall20, ndcg20 = runner(mc, tc)
        except Exception as exc:
            raise TrainError(f"grid point [{label}] failed: {exc}") from exc
        records.append({
            "position": position,
            "lr": lr, "node_dropout": nd, "message_dropout": md,
            "reg": reg, "layers": layers,
            "recall@20": recall20, "ndcg@20": ndcg20,
        })
    records.sort(key=lambda r: (-r["ndcg@20"], -r["recall@20"], r["position"]))
    return records


# ---------------------------------------------------------------------------
# Report output


def report_to_json(report: MetricReport) -> str:
    doc = {
        "model": report.model,
        "ks": list(report.ks),
        "recall": {str(k): report.recall[k] for k in report.ks},
        "ndcg": {str(k): report.ndcg[k] for k in report.ks},
        "evaluated_users": report.evaluated_users,
        "excluded_users": report.excluded_users,
    }
    return json.dumps(doc, sort_keys=True)


def metrics_table(reports: list[MetricReport]) -> str:
    """Aligned text table: one row per model, Recall/NDCG columns per K."""
    if not reports:
        raise EvaluationError("no reports to tabulate")
    ks = reports[0].ks
    header = f"{'Model':<16}"
    for k in ks:
        header += f"{'Recall@%d' % k:>12}{'NDCG@%d' % k:>12}"
    lines = [header]
    for rep in reports:
        row = f"{rep.model:<16}"
        for k in ks:
            row += f"{rep.recall.get(k, float('nan')):>12.4f}"
            row += f"{rep.ndcg.get(k, float('nan')):>12.4f}"
        lines.append(row)
    return "\n".join(lines)
