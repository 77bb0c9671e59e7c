"""Graph collaborative-filtering model: feature MLP, embedding
propagation over the normalized interaction graph, layer concatenation,
and inner-product scoring.

Item base embeddings come either from a free embedding table (variant
`none`) or from a three-layer MLP over the item's side features; the MLP
stays in the forward path so feature weights keep receiving gradients.
Each propagation layer computes

    e^(l+1) = LeakyReLU((A + I) e^(l) W1 + (A e^(l) odot e^(l)) W2 + b)

with A the degree-normalized adjacency, then the per-layer outputs are
concatenated column-wise into the final representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import numeric as nm
from .dataset import Dataset, NormalizedAdjacency
from .features import FeatureBundle, VARIANTS
from .numeric import Tensor
from .seeds import stream

__all__ = [
    "ModelConfig",
    "ModelParams",
    "Embeddings",
    "ModelError",
    "xavier_uniform",
    "init_params",
    "item_embeddings_0",
    "propagate",
    "final_embeddings",
    "split_embeddings",
    "score",
    "recommend_topk",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = "nft-ckpt"


class ModelError(ValueError):
    """Configuration or shape contract violation."""


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 64
    layers: int = 3
    node_dropout: float = 0.0
    message_dropout: float = 0.0
    variant: str = "none"
    leaky_slope: float = 0.2
    mlp_hidden: tuple[int, int] = (512, 256)

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ModelError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.layers < 0:
            raise ModelError(f"layers must be >= 0, got {self.layers}")
        for name in ("node_dropout", "message_dropout"):
            ratio = getattr(self, name)
            if not 0.0 <= ratio < 1.0:
                raise ModelError(f"{name} must be in [0, 1), got {ratio}")
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if len(self.mlp_hidden) != 2 or any(h < 1 for h in self.mlp_hidden):
            raise ModelError(f"mlp_hidden must be two positive widths, "
                             f"got {self.mlp_hidden}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["mlp_hidden"] = list(self.mlp_hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["mlp_hidden"] = tuple(doc.get("mlp_hidden", (512, 256)))
        return cls(**doc)


@dataclass
class ModelParams:
    """Named trainable tensors plus the sizing they were built for."""
    tensors: dict[str, Tensor]
    config: ModelConfig
    n_users: int
    n_items: int
    feature_width: int
    seed: int

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in self.tensors.items():
            v.data = values[k].copy()


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform on +/- sqrt(6/(rows+cols)); variance 2/(rows+cols)."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(cfg: ModelConfig, ds: Dataset, bundle: FeatureBundle | None,
                seed: int) -> ModelParams:
    """Xavier-initialize every weight (biases start at zero), in a fixed
    creation order so a seed pins the whole parameter set bitwise."""
    if cfg.variant != "none":
        if bundle is None or bundle.variant != cfg.variant:
            raise ModelError(f"config variant {cfg.variant!r} needs a matching "
                             "feature bundle")
        if bundle.matrix.shape[0] != ds.n_items:
            raise ModelError(f"bundle has {bundle.matrix.shape[0]} rows for "
                             f"{ds.n_items} items")
        if bundle.width < 1:
            raise ModelError(f"variant {cfg.variant!r} needs a nonempty feature "
                             "matrix as MLP input")
    rng = stream(seed, "init")
    d = cfg.embedding_dim
    tensors: dict[str, Tensor] = {}

    def param(name, rows, cols, zero=False):
        data = np.zeros((rows, cols)) if zero else xavier_uniform(rng, rows, cols)
        tensors[name] = Tensor(data, requires_grad=True, name=name)

    param("user_emb", ds.n_users, d)
    width = 0
    if cfg.variant == "none":
        param("item_emb", ds.n_items, d)
    else:
        width = bundle.width
        dims = (width, cfg.mlp_hidden[0], cfg.mlp_hidden[1], d)
        for k in range(3):
            param(f"mlp_w{k}", dims[k], dims[k + 1])
            param(f"mlp_b{k}", 1, dims[k + 1], zero=True)
    for layer in range(cfg.layers):
        param(f"w1_l{layer}", d, d)
        param(f"w2_l{layer}", d, d)
        param(f"b_l{layer}", 1, d, zero=True)
    return ModelParams(tensors, cfg, ds.n_users, ds.n_items, width, seed)


def item_embeddings_0(params: ModelParams, bundle: FeatureBundle | None) -> Tensor:
    """Layer-0 item embeddings: the free table for variant `none`,
    otherwise MLP(features), recomputed on every call."""
    cfg = params.config
    if cfg.variant == "none":
        return params["item_emb"]
    if bundle is None:
        raise ModelError(f"variant {cfg.variant!r} needs a feature bundle")
    if bundle.width != params.feature_width:
        raise ModelError(f"bundle width {bundle.width} does not match MLP input "
                         f"width {params.feature_width}")
    h = Tensor(bundle.matrix, name="features")
    for k in range(3):
        h = nm.add(nm.matmul(h, params[f"mlp_w{k}"]), params[f"mlp_b{k}"])
        if k < 2:
            h = nm.leaky_relu(h, cfg.leaky_slope)
    return h


def propagate(e: Tensor, adj: NormalizedAdjacency, params: ModelParams, layer: int,
              training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """One round of neighbor aggregation; message dropout only in training."""
    cfg = params.config
    ae = nm.spmm(adj.matrix, e)
    summed = nm.matmul(nm.add(ae, e), params[f"w1_l{layer}"])
    interacted = nm.matmul(nm.mul(ae, e), params[f"w2_l{layer}"])
    out = nm.leaky_relu(nm.add(nm.add(summed, interacted), params[f"b_l{layer}"]),
                        cfg.leaky_slope)
    return nm.dropout(out, cfg.message_dropout, rng, training=training)


def final_embeddings(params: ModelParams, adj: NormalizedAdjacency,
                     bundle: FeatureBundle | None, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Stack user rows over item rows, run L propagation layers, and
    concatenate every layer's output column-wise, layer 0 first."""
    cfg = params.config
    items0 = item_embeddings_0(params, bundle)
    e = nm.concat_rows([params["user_emb"], items0])
    if adj.n_users != params.n_users or adj.n_items != params.n_items:
        raise ModelError(f"adjacency is {adj.n_users}x{adj.n_items}, model expects "
                         f"{params.n_users}x{params.n_items}")
    outputs = [e]
    for layer in range(cfg.layers):
        e = propagate(e, adj, params, layer, training=training, rng=rng)
        outputs.append(e)
    return nm.concat_cols(outputs) if len(outputs) > 1 else outputs[0]


@dataclass
class Embeddings:
    """Final representations split back into user and item blocks."""
    users: np.ndarray
    items: np.ndarray


def split_embeddings(e_star: Tensor | np.ndarray, n_users: int) -> Embeddings:
    data = e_star.data if isinstance(e_star, Tensor) else np.asarray(e_star)
    return Embeddings(users=data[:n_users], items=data[n_users:])


def score(emb: Embeddings, u: int, i: int) -> float:
    """Inner product of the user's and item's final embeddings."""
    if not 0 <= u < emb.users.shape[0]:
        raise IndexError(f"user index {u} out of range")
    if not 0 <= i < emb.items.shape[0]:
        raise IndexError(f"item index {i} out of range")
    return float(emb.users[u] @ emb.items[i])


def recommend_topk(emb: Embeddings, u: int, k: int,
                   exclude: set[int] | frozenset[int] = frozenset()) -> list[int]:
    """Top-k eligible items by score, ties broken by item index ascending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0 <= u < emb.users.shape[0]:
        raise IndexError(f"user index {u} out of range")
    scores = emb.items @ emb.users[u]
    n_items = scores.shape[0]
    if exclude:
        eligible = np.array([i for i in range(n_items) if i not in exclude],
                            dtype=np.int64)
    else:
        eligible = np.arange(n_items, dtype=np.int64)
    if eligible.size == 0:
        return []
    # lexsort's last key is primary: score descending, then index ascending
    order = np.lexsort((eligible, -scores[eligible]))
    return eligible[order[:k]].tolist()


# ---------------------------------------------------------------------------
# Checkpoints: one JSON manifest line, then flat little-endian float64
# blocks, one per tensor, in manifest order.


def save_checkpoint(params: ModelParams, path) -> None:
    names = sorted(params.tensors)
    manifest = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "config": params.config.to_dict(),
        "variant": params.config.variant,
        "dims": {"n_users": params.n_users, "n_items": params.n_items,
                 "feature_width": params.feature_width},
        "seed": params.seed,
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)}
                    for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True,
                            separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            block = np.ascontiguousarray(params.tensors[n].data, dtype="<f8")
            fh.write(block.tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelError(f"{path}: bad checkpoint manifest: {exc}") from None
        if manifest.get("format") != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a model checkpoint")
        if manifest.get("version") != 1:
            raise ModelError(f"{path}: unsupported checkpoint version "
                             f"{manifest.get('version')!r}")
        cfg = ModelConfig.from_dict(manifest["config"])
        tensors: dict[str, Tensor] = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            n_vals = int(np.prod(shape))
            raw = fh.read(8 * n_vals)
            if len(raw) != 8 * n_vals:
                raise ModelError(f"{path}: truncated block for tensor "
                                 f"{entry['name']!r}")
            data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            tensors[entry["name"]] = Tensor(data, requires_grad=True,
                                            name=entry["name"])
        trailing = fh.read(1)
        if trailing:
            raise ModelError(f"{path}: trailing bytes after final tensor block")
    dims = manifest["dims"]
    return ModelParams(tensors, cfg, int(dims["n_users"]), int(dims["n_items"]),
                       int(dims["feature_width"]), int(manifest["seed"]))
