"""Pairwise ranking optimization: BPR loss over sampled (user, positive,
negative) triples, mini-batched Adam, per-epoch shuffling and negative
resampling, node dropout refreshed once per epoch and message dropout per
batch.

The loop itself is model-agnostic (it only needs a callable producing the
stacked user/item representation), so the graph model and the
matrix-factorization baseline share it and stay comparable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .dataset import Dataset, Split, build_adjacency, node_dropout, sample_negative
from .features import FeatureBundle
from .model import ModelConfig, ModelParams, final_embeddings, init_params
from .numeric import NonFiniteError, Tensor
from .seeds import stream

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainError",
    "bpr_loss",
    "train",
    "run_pairwise_training",
    "write_train_report",
]


class TrainError(RuntimeError):
    """Training aborted (non-finite loss or broken preconditions)."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    reg: float = 1e-5
    batch_size: int = 2048
    epochs: int = 50
    seed: int = 0
    eval_every: int = 10
    reg_weights: bool = False    # include W1/W2/MLP weights in the regularizer

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.reg < 0:
            raise ValueError(f"reg must be non-negative, got {self.reg}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")

    def to_dict(self) -> dict:
        return {"lr": self.lr, "reg": self.reg, "batch_size": self.batch_size,
                "epochs": self.epochs, "seed": self.seed,
                "eval_every": self.eval_every, "reg_weights": self.reg_weights}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    validations: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0
    best_epoch: int | None = None
    best_score: float | None = None
    # runtime-only snapshot of the best-on-validation parameter values
    best_values: dict | None = None


def bpr_loss(pos: Tensor, neg: Tensor, reg_terms=(), reg: float = 0.0) -> Tensor:
    """Mean of -ln sigmoid(pos - neg), plus reg/B times the summed squared
    norms of `reg_terms` (the rows each batch actually touched)."""
    if pos.shape != neg.shape:
        raise ValueError(f"score shapes differ: {pos.shape} vs {neg.shape}")
    batch = pos.shape[0] * pos.shape[1]
    if batch == 0:
        raise ValueError("bpr_loss on an empty batch")
    # log_sigmoid keeps saturated pairs finite where log(sigmoid(x)) would
    # underflow to log(0) and abort the run
    loss = nm.scale(nm.mean_all(nm.log_sigmoid(nm.add(pos, nm.scale(neg, -1.0)))),
                    -1.0)
    if reg > 0.0 and reg_terms:
        penalty = nm.l2_norm_sq(reg_terms[0])
        for t in reg_terms[1:]:
            penalty = nm.add(penalty, nm.l2_norm_sq(t))
        loss = nm.add(loss, nm.scale(penalty, reg / batch))
    return loss


def run_pairwise_training(ds: Dataset, train_pairs: list[tuple[int, int]],
                          params: ModelParams, cfg: TrainConfig, *,
                          epoch_setup=None, forward, validate=None) -> TrainReport:
    """Drive BPR/Adam over `train_pairs`.

    `epoch_setup(epoch, rng)` returns per-epoch context (the graph model
    rebuilds its dropped adjacency here); `forward(ctx, training, rng)`
    returns the stacked (N+M) x D representation. Every random draw comes
    from a named stream of cfg.seed, so a config pins the run bitwise.
    """
    if not train_pairs:
        raise TrainError("cannot train on an empty train split")
    shuffle_rng = stream(cfg.seed, "epoch-shuffle")
    neg_rng = stream(cfg.seed, "negatives")
    node_rng = stream(cfg.seed, "node-dropout")
    msg_rng = stream(cfg.seed, "message-dropout")
    adam = nm.Adam(params.tensors, lr=cfg.lr)
    report = TrainReport()
    n_users = params.n_users
    pairs = np.asarray(train_pairs, dtype=np.int64)
    started = time.perf_counter()

    weight_terms = [t for name, t in sorted(params.tensors.items())
                    if not name.startswith(("user_emb", "item_emb"))] \
        if cfg.reg_weights else []

    for epoch in range(cfg.epochs):
        ctx = epoch_setup(epoch, node_rng) if epoch_setup else None
        order = shuffle_rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(pairs), cfg.batch_size):
            batch_no = start // cfg.batch_size
            batch = pairs[order[start:start + cfg.batch_size]]
            users = batch[:, 0]
            positives = batch[:, 1]
            negatives = np.empty(len(batch), dtype=np.int64)
            for k, u in enumerate(users):
                j = sample_negative(ds, int(u), neg_rng)
                assert j not in ds.user_items[int(u)]
                negatives[k] = j

            try:
                e_all = forward(ctx, True, msg_rng)
                e_u = nm.gather_rows(e_all, users)
                e_i = nm.gather_rows(e_all, n_users + positives)
                e_j = nm.gather_rows(e_all, n_users + negatives)
                pos_scores = nm.row_sum(nm.mul(e_u, e_i))
                neg_scores = nm.row_sum(nm.mul(e_u, e_j))
                loss = bpr_loss(pos_scores, neg_scores,
                                [e_u, e_i, e_j] + weight_terms, cfg.reg)
                value = float(loss.data[0, 0])
                if not np.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                nm.backward(loss, params.tensors.values())
                adam.step()
            except NonFiniteError as exc:
                raise TrainError(f"non-finite loss at epoch {epoch} "
                                 f"batch {batch_no}: {exc}") from exc
            total += value * len(batch)
        report.epoch_loss.append(total / len(pairs))

        if validate and ((epoch + 1) % cfg.eval_every == 0
                         or epoch == cfg.epochs - 1):
            score, metrics = validate(params, epoch)
            report.validations.append({"epoch": epoch, "score": score,
                                       "metrics": metrics})
            if report.best_score is None or score > report.best_score:
                report.best_score = score
                report.best_epoch = epoch
                report.best_values = params.copy_values()

    report.wall_time_s = time.perf_counter() - started
    return report


def train(ds: Dataset, split: Split, bundle: FeatureBundle | None,
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          validate=None) -> tuple[ModelParams, TrainReport]:
    """Initialize and fit the graph model on the split's train pairs."""
    params = init_params(model_cfg, ds, bundle, seed=train_cfg.seed)
    base_adj = build_adjacency(split.train, ds.n_users, ds.n_items)

    def epoch_setup(epoch, rng):
        return node_dropout(base_adj, model_cfg.node_dropout, rng)

    def forward(adj, training, rng):
        return final_embeddings(params, adj, bundle, training=training, rng=rng)

    report = run_pairwise_training(ds, split.train, params, train_cfg,
                                   epoch_setup=epoch_setup, forward=forward,
                                   validate=validate)
    return params, report


def write_train_report(report: TrainReport, path) -> None:
    """Line-delimited JSON: one record per epoch, then a summary line.

    Epoch records are deterministic for a fixed config; only the summary
    carries wall time.
    """
    by_epoch = {v["epoch"]: v for v in report.validations}
    with open(path, "w", encoding="utf-8") as fh:
        for epoch, loss in enumerate(report.epoch_loss):
            record = {"epoch": epoch, "loss": loss}
            if epoch in by_epoch:
                record["validation"] = {"score": by_epoch[epoch]["score"],
                                        "metrics": by_epoch[epoch]["metrics"]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        summary = {"summary": True, "epochs": len(report.epoch_loss),
                   "wall_time_s": report.wall_time_s,
                   "best_epoch": report.best_epoch,
                   "best_score": report.best_score}
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
