"""Non-graph reference models evaluated through the same protocol:
popularity ranking, item-based KNN over binary co-occurrence cosine, and
BPR matrix factorization reusing the shared pairwise training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import numeric as nm
from .dataset import Dataset, Split
from .model import Embeddings, ModelConfig, ModelParams, init_params
from .training import TrainConfig, TrainReport, run_pairwise_training

__all__ = [
    "ItemSimilarity",
    "pop_scores",
    "pop_embeddings",
    "build_item_similarity",
    "itemknn_scores",
    "itemknn_embeddings",
    "bprmf_train",
    "bprmf_embeddings",
]


# ---------------------------------------------------------------------------
# Pop


def pop_scores(train, n_items: int) -> np.ndarray:
    """score(i) = number of train interactions with item i."""
    if not len(train):
        raise ValueError("pop_scores needs a nonempty train set")
    counts = np.zeros(n_items, dtype=np.float64)
    for _, i in train:
        counts[i] += 1
    return counts


def pop_embeddings(train, n_users: int, n_items: int) -> Embeddings:
    """Popularity as an inner-product model: every user shares one scalar
    weight, items carry their counts, so ranking plugs into the common
    evaluation path (ties resolve by item index there)."""
    counts = pop_scores(train, n_items)
    return Embeddings(users=np.ones((n_users, 1)), items=counts[:, None])


# ---------------------------------------------------------------------------
# ItemKNN


@dataclass
class ItemSimilarity:
    """Cosine similarity over binary item vectors.

    `matrix` is the full symmetric similarity (zero diagonal); `truncated`
    keeps each row's k largest entries (ties to the lower item index).
    """
    matrix: sp.csr_matrix
    truncated: sp.csr_matrix
    k: int


def _interaction_matrix(train, n_users: int, n_items: int) -> sp.csr_matrix:
    rows = [u for u, _ in train]
    cols = [i for _, i in train]
    return sp.csr_matrix((np.ones(len(train)), (rows, cols)),
                         shape=(n_users, n_items))


def build_item_similarity(train, n_users: int, n_items: int,
                          k: int = 100) -> ItemSimilarity:
    """sim(i,j) = |U_i intersect U_j| / sqrt(|U_i| |U_j|), diagonal zeroed."""
    if k < 1:
        raise ValueError(f"neighborhood size must be >= 1, got {k}")
    b = _interaction_matrix(train, n_users, n_items)
    co = (b.T @ b).tocoo()
    deg = np.asarray(b.sum(axis=0)).ravel()
    keep = co.row != co.col
    rows, cols, vals = co.row[keep], co.col[keep], co.data[keep]
    # co-occurrence > 0 implies both degrees > 0
    vals = vals / np.sqrt(deg[rows] * deg[cols])
    full = sp.csr_matrix((vals, (rows, cols)), shape=(n_items, n_items))

    t_rows, t_cols, t_vals = [], [], []
    for i in range(n_items):
        start, stop = full.indptr[i], full.indptr[i + 1]
        cols_i = full.indices[start:stop]
        vals_i = full.data[start:stop]
        if len(cols_i) > k:
            order = np.lexsort((cols_i, -vals_i))[:k]
            cols_i, vals_i = cols_i[order], vals_i[order]
        t_rows.extend([i] * len(cols_i))
        t_cols.extend(cols_i.tolist())
        t_vals.extend(vals_i.tolist())
    truncated = sp.csr_matrix((t_vals, (t_rows, t_cols)),
                              shape=(n_items, n_items))
    return ItemSimilarity(matrix=full, truncated=truncated, k=k)


def itemknn_scores(sim: ItemSimilarity, train_items: set[int]) -> np.ndarray:
    """score(i) = sum of sim(i,j) over the user's train items j, with
    each row i restricted to its top-k neighborhood."""
    n_items = sim.truncated.shape[0]
    y = np.zeros(n_items)
    y[sorted(train_items)] = 1.0
    return sim.truncated @ y


def itemknn_embeddings(sim: ItemSimilarity, train, n_users: int) -> Embeddings:
    """User rows are binary train indicators, item rows are truncated
    similarity rows; their inner product reproduces itemknn_scores."""
    n_items = sim.truncated.shape[0]
    users = np.zeros((n_users, n_items))
    for u, i in train:
        users[u, i] = 1.0
    return Embeddings(users=users, items=sim.truncated.toarray())


# ---------------------------------------------------------------------------
# BPR-MF


def bprmf_train(ds: Dataset, split: Split, d: int,
                cfg: TrainConfig) -> tuple[ModelParams, TrainReport]:
    """Plain matrix factorization under the shared BPR/Adam loop: zero
    propagation layers, free item table, scores are raw inner products."""
    model_cfg = ModelConfig(embedding_dim=d, layers=0, variant="none")
    params = init_params(model_cfg, ds, None, seed=cfg.seed)

    def forward(ctx, training, rng):
        return nm.concat_rows([params["user_emb"], params["item_emb"]])

    report = run_pairwise_training(ds, split.train, params, cfg,
                                   forward=forward)
    return params, report


def bprmf_embeddings(params: ModelParams) -> Embeddings:
    return Embeddings(users=params["user_emb"].data,
                      items=params["item_emb"].data)
