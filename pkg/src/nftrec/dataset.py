"""Transaction ingestion, implicit-feedback dataset construction, splits,
and the normalized bipartite adjacency.

A purchase log becomes a binary user-item interaction set: repeat
purchases of the same token by the same wallet collapse to one
interaction (the count is kept as metadata only), items below the
min-interaction threshold are dropped in a single pass, and users left
with nothing are removed. Indices are assigned in first-seen order so
ingestion is reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import scipy.sparse as sp

from .seeds import stream

__all__ = [
    "Transaction",
    "Dataset",
    "Split",
    "NormalizedAdjacency",
    "IngestError",
    "DatasetError",
    "ingest_transactions",
    "build_dataset",
    "split_dataset",
    "build_adjacency",
    "sample_negative",
    "node_dropout",
    "save_dataset",
    "load_dataset",
    "stats_table",
]

CSV_HEADER = ["tx_hash", "buyer", "token_id", "price", "currency", "timestamp"]


class IngestError(ValueError):
    """Malformed transaction input; carries the offending line number."""


class DatasetError(ValueError):
    """Dataset-level contract violation (empty after filtering, bad split...)."""


@dataclass(frozen=True)
class Transaction:
    tx_hash: str
    buyer: str
    token_id: str
    price: float
    currency: str
    timestamp: datetime

    def __post_init__(self):
        if not self.tx_hash:
            raise ValueError("transaction with empty tx_hash")
        if self.price < 0:
            raise ValueError(f"negative price {self.price} in {self.tx_hash}")


def _parse_timestamp(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def ingest_transactions(path) -> list[Transaction]:
    """Parse a transactions CSV into one Transaction per data row.

    Header must be exactly `tx_hash,buyer,token_id,price,currency,timestamp`.
    Duplicate tx_hash rows are rejected; errors name the 1-based line.
    """
    log: list[Transaction] = []
    seen_hashes: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if header != CSV_HEADER:
            raise IngestError(f"{path}: line 1: expected header "
                              f"{','.join(CSV_HEADER)!r}, got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise IngestError(f"{path}: line {lineno}: expected "
                                  f"{len(CSV_HEADER)} columns, got {len(row)}")
            tx_hash, buyer, token_id, price_raw, currency, ts_raw = row
            if not tx_hash:
                raise IngestError(f"{path}: line {lineno}: missing tx_hash")
            if tx_hash in seen_hashes:
                raise IngestError(f"{path}: line {lineno}: duplicate tx_hash {tx_hash!r}")
            if not buyer:
                raise IngestError(f"{path}: line {lineno}: missing buyer")
            if not token_id:
                raise IngestError(f"{path}: line {lineno}: missing token_id")
            try:
                price = float(price_raw)
            except ValueError:
                raise IngestError(f"{path}: line {lineno}: unparseable price "
                                  f"{price_raw!r}") from None
            if not np.isfinite(price) or price < 0:
                raise IngestError(f"{path}: line {lineno}: price must be a finite "
                                  f"non-negative number, got {price_raw!r}")
            try:
                ts = _parse_timestamp(ts_raw)
            except ValueError:
                raise IngestError(f"{path}: line {lineno}: unparseable timestamp "
                                  f"{ts_raw!r}") from None
            seen_hashes.add(tx_hash)
            log.append(Transaction(tx_hash, buyer, token_id, price, currency, ts))
    return log


@dataclass
class Dataset:
    """Index-mapped implicit-feedback interactions.

    `users[u]` / `items[i]` recover the original wallet / token id;
    `interactions` holds (u, i) pairs in first-seen order.
    """
    users: list[str]
    items: list[str]
    interactions: list[tuple[int, int]]
    pair_counts: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        self.user_index = {w: u for u, w in enumerate(self.users)}
        self.item_index = {t: i for i, t in enumerate(self.items)}
        if len(self.user_index) != len(self.users):
            raise DatasetError("duplicate wallet in user list")
        if len(self.item_index) != len(self.items):
            raise DatasetError("duplicate token in item list")
        self.user_items: list[set[int]] = [set() for _ in self.users]
        self.item_users: list[set[int]] = [set() for _ in self.items]
        seen = set()
        for u, i in self.interactions:
            if not (0 <= u < len(self.users) and 0 <= i < len(self.items)):
                raise DatasetError(f"interaction ({u}, {i}) out of range")
            if (u, i) in seen:
                raise DatasetError(f"duplicate interaction ({u}, {i})")
            seen.add((u, i))
            self.user_items[u].add(i)
            self.item_users[i].add(u)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_interactions(self) -> int:
        return len(self.interactions)


def build_dataset(log: list[Transaction], min_item_interactions: int = 3) -> Dataset:
    """Collapse, filter, and index a transaction log.

    Duplicate (buyer, token) purchases collapse to one interaction. Items
    with fewer than `min_item_interactions` distinct buyers are removed in
    a single pass, then users with no remaining interactions are dropped.
    Indices follow first-seen order in the log.
    """
    if not log:
        raise DatasetError("empty transaction log")

    pairs: dict[tuple[str, str], int] = {}
    item_buyers: dict[str, set[str]] = {}
    for tx in log:
        key = (tx.buyer, tx.token_id)
        pairs[key] = pairs.get(key, 0) + 1
        item_buyers.setdefault(tx.token_id, set()).add(tx.buyer)

    kept_tokens = {t for t, buyers in item_buyers.items()
                   if len(buyers) >= min_item_interactions}
    if not kept_tokens:
        raise DatasetError(f"no item has {min_item_interactions}+ interactions; "
                           "dataset is empty after filtering")

    users: list[str] = []
    items: list[str] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    interactions: list[tuple[int, int]] = []
    pair_counts: dict[tuple[int, int], int] = {}
    for (buyer, token), count in pairs.items():
        if token not in kept_tokens:
            continue
        if buyer not in user_index:
            user_index[buyer] = len(users)
            users.append(buyer)
        if token not in item_index:
            item_index[token] = len(items)
            items.append(token)
        ui = (user_index[buyer], item_index[token])
        interactions.append(ui)
        pair_counts[ui] = count

    return Dataset(users, items, interactions, pair_counts)


@dataclass(frozen=True)
class Split:
    train: list[tuple[int, int]]
    valid: list[tuple[int, int]]
    test: list[tuple[int, int]]
    seed: int


def split_dataset(ds: Dataset, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> Split:
    """Global uniform shuffle into train/valid/test.

    Sizes are floor(r_train*E) / floor(r_valid*E) / remainder; the same
    (dataset, seed) always produces the same split.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"split ratios must sum to 1, got {ratios}")
    n = ds.n_interactions
    if n < 3:
        raise DatasetError(f"need at least 3 interactions to split, have {n}")
    rng = stream(seed, "split")
    order = rng.permutation(n)
    n_train = int(np.floor(ratios[0] * n))
    n_valid = int(np.floor(ratios[1] * n))
    shuffled = [ds.interactions[k] for k in order]
    return Split(train=shuffled[:n_train],
                 valid=shuffled[n_train:n_train + n_valid],
                 test=shuffled[n_train + n_valid:],
                 seed=seed)


@dataclass
class NormalizedAdjacency:
    """Sparse symmetric (N+M)x(N+M) adjacency with 1/sqrt(|N_u||N_i|) weights.

    Users occupy rows 0..N-1, items rows N..N+M-1. No self-loops are
    stored; the model adds the self term during propagation.
    """
    n_users: int
    n_items: int
    matrix: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(user_idx, item_idx, weight) arrays for the user->item block."""
        coo = self.matrix.tocoo()
        keep = coo.row < self.n_users
        return coo.row[keep], coo.col[keep] - self.n_users, coo.data[keep]


def build_adjacency(train: list[tuple[int, int]], n_users: int, n_items: int) -> NormalizedAdjacency:
    """Bipartite adjacency over train interactions, Laplacian-normalized.

    Entry (u, N+i) = (N+i, u) = 1/sqrt(deg_u * deg_i) with degrees counted
    on the train set. Nodes without train edges simply get empty rows.
    """
    if not train:
        raise DatasetError("cannot build adjacency from an empty train set")
    deg_u = np.zeros(n_users, dtype=np.float64)
    deg_i = np.zeros(n_items, dtype=np.float64)
    for u, i in train:
        if not (0 <= u < n_users and 0 <= i < n_items):
            raise DatasetError(f"train interaction ({u}, {i}) out of range "
                               f"for {n_users} users / {n_items} items")
        deg_u[u] += 1
        deg_i[i] += 1

    rows = np.empty(2 * len(train), dtype=np.int64)
    cols = np.empty(2 * len(train), dtype=np.int64)
    vals = np.empty(2 * len(train), dtype=np.float64)
    for k, (u, i) in enumerate(train):
        w = 1.0 / np.sqrt(deg_u[u] * deg_i[i])
        rows[2 * k], cols[2 * k], vals[2 * k] = u, n_users + i, w
        rows[2 * k + 1], cols[2 * k + 1], vals[2 * k + 1] = n_users + i, u, w

    n = n_users + n_items
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return NormalizedAdjacency(n_users, n_items, matrix)


def sample_negative(ds: Dataset, u: int, rng: np.random.Generator) -> int:
    """Uniform item the user never interacted with, judged against the
    full dataset (not just train) so no known positive leaks in."""
    owned = ds.user_items[u]
    n = ds.n_items
    if len(owned) >= n:
        raise DatasetError(f"user {u} interacted with every item; no negative exists")
    # Rejection sampling is uniform and fast while positives are sparse;
    # fall back to enumeration for users who own most of the catalog.
    if len(owned) * 2 < n:
        while True:
            j = int(rng.integers(n))
            if j not in owned:
                return j
    eligible = [j for j in range(n) if j not in owned]
    return int(eligible[rng.integers(len(eligible))])


def node_dropout(adj: NormalizedAdjacency, ratio: float,
                 rng: np.random.Generator) -> NormalizedAdjacency:
    """Remove floor(ratio * E) undirected edges (both mirror entries) and
    rescale survivors by 1/(1-ratio). Ratio 0 returns the input."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"node dropout ratio must be in [0, 1), got {ratio}")
    if ratio == 0.0:
        return adj
    users, items, weights = adj.undirected_edges()
    n_edges = len(users)
    n_drop = int(np.floor(ratio * n_edges))
    keep = np.ones(n_edges, dtype=bool)
    keep[rng.choice(n_edges, size=n_drop, replace=False)] = False

    scale = 1.0 / (1.0 - ratio)
    ku, ki, kw = users[keep], items[keep] + adj.n_users, weights[keep] * scale
    n = adj.n_nodes
    matrix = sp.csr_matrix(
        (np.concatenate([kw, kw]),
         (np.concatenate([ku, ki]), np.concatenate([ki, ku]))),
        shape=(n, n))
    return NormalizedAdjacency(adj.n_users, adj.n_items, matrix)


# ---------------------------------------------------------------------------
# Serialization and reporting


def save_dataset(ds: Dataset, path) -> None:
    doc = {
        "users": ds.users,
        "items": ds.items,
        "interactions": [[u, i] for u, i in ds.interactions],
        "pair_counts": [[u, i, c] for (u, i), c in sorted(ds.pair_counts.items())],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return Dataset(
            users=list(doc["users"]),
            items=list(doc["items"]),
            interactions=[(int(u), int(i)) for u, i in doc["interactions"]],
            pair_counts={(int(u), int(i)): int(c) for u, i, c in doc.get("pair_counts", [])},
        )
    except KeyError as exc:
        raise DatasetError(f"{path}: missing dataset field {exc}") from None


def stats_table(ds: Dataset, name: str = "collection") -> str:
    """Plain-text stats row: Users / Items / Interactions."""
    header = f"{'Collection':<16}{'Users':>10}{'Items':>10}{'Interactions':>14}"
    row = (f"{name:<16}{ds.n_users:>10,}{ds.n_items:>10,}"
           f"{ds.n_interactions:>14,}")
    return header + "\n" + row
