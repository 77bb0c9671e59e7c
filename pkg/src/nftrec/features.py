"""Per-item side features: feature file IO, price replication, and
assembly of the concatenated side-feature matrix for a model variant.

Feature files are line-oriented text (FMF v1): a JSON header describing
kind/dim/count, then one `token_id<TAB>v1 v2 ... vD` row per item, sorted
by token id. The loader validates the full format so it doubles as the
contract check for any external producer of these files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset

__all__ = [
    "FeatureMatrix",
    "FeatureBundle",
    "FeatureError",
    "load_feature_file",
    "write_feature_file",
    "replicate_price",
    "assemble_bundle",
]

log = logging.getLogger(__name__)

FEATURE_KINDS = ("img", "txt", "price")
IMAGE_DIM = 64
VARIANTS = ("none", "img", "txt", "price", "all")
HEADER_KEYS = ("format", "version", "feature", "dim", "count")


class FeatureError(ValueError):
    """Malformed feature file or inconsistent assembly request."""


def _token_sort_key(tokens):
    """Numeric ascending when every id is digits-only, else lexicographic."""
    if all(t.isdigit() for t in tokens):
        return lambda t: int(t)
    return lambda t: t


@dataclass
class FeatureMatrix:
    """Per-item vectors for one modality, keyed by token id."""
    feature: str
    tokens: list[str]
    values: np.ndarray

    def __post_init__(self):
        if self.feature not in FEATURE_KINDS:
            raise FeatureError(f"unknown feature kind {self.feature!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.tokens):
            raise FeatureError(f"feature matrix shape {self.values.shape} does not "
                               f"match {len(self.tokens)} tokens")
        if not np.all(np.isfinite(self.values)):
            raise FeatureError(f"non-finite value in {self.feature} features")
        if self.feature == "img" and self.dim != IMAGE_DIM:
            raise FeatureError(f"image features must be {IMAGE_DIM}-dimensional, "
                               f"got {self.dim}")
        self.token_index = {t: k for k, t in enumerate(self.tokens)}
        if len(self.token_index) != len(self.tokens):
            raise FeatureError(f"duplicate token id in {self.feature} features")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> int:
        return len(self.tokens)

    def row(self, token: str) -> np.ndarray:
        return self.values[self.token_index[token]]


def load_feature_file(path) -> FeatureMatrix:
    """Parse and validate an FMF v1 file.

    Every format rule is checked: header fields, row count, per-row dim,
    finite values, unique ids, and the sort order. Errors carry the
    1-based line number.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FeatureError(f"{path}: empty file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FeatureError(f"{path}: line 1: header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or sorted(header) != sorted(HEADER_KEYS):
        raise FeatureError(f"{path}: line 1: header must have exactly the keys "
                           f"{list(HEADER_KEYS)}")
    if header["format"] != "nft-feat":
        raise FeatureError(f"{path}: line 1: format must be 'nft-feat', "
                           f"got {header['format']!r}")
    if header["version"] != 1:
        raise FeatureError(f"{path}: line 1: unsupported version {header['version']!r}")
    feature = header["feature"]
    if feature not in FEATURE_KINDS:
        raise FeatureError(f"{path}: line 1: feature must be one of {FEATURE_KINDS}, "
                           f"got {feature!r}")
    dim, count = header["dim"], header["count"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise FeatureError(f"{path}: line 1: dim must be a positive integer")
    if not isinstance(count, int) or isinstance(count, bool) or count < 0:
        raise FeatureError(f"{path}: line 1: count must be a non-negative integer")
    if feature == "img" and dim != IMAGE_DIM:
        raise FeatureError(f"{path}: line 1: image feature dim must be {IMAGE_DIM}, "
                           f"got {dim}")
    if feature == "price" and dim != 1:
        raise FeatureError(f"{path}: line 1: raw price feature dim must be 1, got {dim}")

    body = lines[1:]
    if len(body) != count:
        raise FeatureError(f"{path}: header count {count} but file has "
                           f"{len(body)} data rows")

    tokens: list[str] = []
    seen: set[str] = set()
    values = np.empty((count, dim), dtype=np.float64)
    for k, line in enumerate(body):
        lineno = k + 2
        token, sep, rest = line.partition("\t")
        if not sep or not token:
            raise FeatureError(f"{path}: line {lineno}: expected "
                               "'token_id<TAB>values'")
        if token in seen:
            raise FeatureError(f"{path}: line {lineno}: duplicate token_id {token!r}")
        parts = rest.split(" ")
        if len(parts) != dim:
            raise FeatureError(f"{path}: line {lineno}: expected {dim} values, "
                               f"got {len(parts)}")
        try:
            row = np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError:
            raise FeatureError(f"{path}: line {lineno}: unparseable value") from None
        if not np.all(np.isfinite(row)):
            raise FeatureError(f"{path}: line {lineno}: non-finite value")
        seen.add(token)
        tokens.append(token)
        values[k] = row

    key = _token_sort_key(tokens)
    for k in range(1, len(tokens)):
        if key(tokens[k - 1]) > key(tokens[k]):
            raise FeatureError(f"{path}: line {k + 2}: rows not sorted by token_id "
                               f"({tokens[k - 1]!r} precedes {tokens[k]!r})")

    return FeatureMatrix(feature, tokens, values)


def write_feature_file(fm: FeatureMatrix, path) -> None:
    """Write an FMF v1 file; rows are (re)sorted, values keep 17 significant
    digits so a load reproduces them bit-exactly."""
    key = _token_sort_key(fm.tokens)
    order = sorted(range(fm.count), key=lambda k: key(fm.tokens[k]))
    header = {"format": "nft-feat", "version": 1, "feature": fm.feature,
              "dim": fm.dim, "count": fm.count}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for k in order:
            row = " ".join(f"{v:.17g}" for v in fm.values[k])
            fh.write(f"{fm.tokens[k]}\t{row}\n")


def replicate_price(raw: FeatureMatrix, d: int = 64) -> FeatureMatrix:
    """Tile the scalar price across d columns so the modality carries the
    same width as the learned blocks it is concatenated with."""
    if raw.feature != "price":
        raise FeatureError(f"replicate_price expects price features, got {raw.feature!r}")
    if raw.dim != 1:
        raise FeatureError(f"replicate_price expects dim 1, got {raw.dim}")
    if d < 1:
        raise FeatureError(f"replication width must be positive, got {d}")
    return FeatureMatrix("price", list(raw.tokens), np.repeat(raw.values, d, axis=1))


@dataclass
class FeatureBundle:
    """Assembled side-feature matrix aligned to a dataset's item indices.

    `ranges` maps each included modality to its [start, stop) column span;
    the spans partition the width in assembly order.
    """
    matrix: np.ndarray
    ranges: dict[str, tuple[int, int]]
    variant: str
    missing_count: int = 0

    def __post_init__(self):
        spans = sorted(self.ranges.values())
        cursor = 0
        for start, stop in spans:
            if start != cursor or stop < start:
                raise FeatureError(f"column ranges {self.ranges} do not partition "
                                   f"width {self.width}")
            cursor = stop
        if cursor != self.width:
            raise FeatureError(f"column ranges {self.ranges} do not partition "
                               f"width {self.width}")

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def block(self, modality: str) -> np.ndarray:
        start, stop = self.ranges[modality]
        return self.matrix[:, start:stop]


def _aligned_block(ds: Dataset, fm: FeatureMatrix, missing: str):
    """Rows of `fm` reordered to dataset item-index order.

    Returns (matrix, missing_row_indices); unknown policy or absent items
    under the `error` policy raise.
    """
    out = np.zeros((ds.n_items, fm.dim), dtype=np.float64)
    missing_rows = []
    missing_tokens = []
    for i, token in enumerate(ds.items):
        k = fm.token_index.get(token)
        if k is None:
            missing_rows.append(i)
            missing_tokens.append(token)
        else:
            out[i] = fm.values[k]
    if missing_tokens and missing == "error":
        shown = ", ".join(missing_tokens[:10])
        more = f" (+{len(missing_tokens) - 10} more)" if len(missing_tokens) > 10 else ""
        raise FeatureError(f"{len(missing_tokens)} dataset items missing from "
                           f"{fm.feature} features: {shown}{more}")
    return out, missing_rows


def _standardize_columns(block: np.ndarray, stat_rows: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per column, stats over `stat_rows` only;
    constant columns are centered but not scaled."""
    ref = block[stat_rows]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (block - mean) / std


def assemble_bundle(ds: Dataset, variant: str,
                    img: FeatureMatrix | None = None,
                    txt: FeatureMatrix | None = None,
                    price: FeatureMatrix | None = None, *,
                    standardize: bool = True,
                    train_items: set[int] | None = None,
                    missing: str = "error") -> FeatureBundle:
    """Build the per-variant side-feature matrix, image then text then price.

    Standardization stats come from `train_items` rows only (all items when
    not given) so held-out items never leak into the scaling. Zero-filled
    missing rows stay exactly zero either way.
    """
    if variant not in VARIANTS:
        raise FeatureError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if missing not in ("error", "zero"):
        raise FeatureError(f"unknown missing policy {missing!r}")
    if variant == "none":
        return FeatureBundle(np.zeros((ds.n_items, 0)), {}, "none")

    wanted = ("img", "txt", "price") if variant == "all" else (variant,)
    provided = {"img": img, "txt": txt, "price": price}
    blocks = []
    ranges = {}
    all_missing: set[int] = set()
    cursor = 0
    for kind in wanted:
        fm = provided[kind]
        if fm is None:
            raise FeatureError(f"variant {variant!r} requires {kind} features")
        if fm.feature != kind:
            raise FeatureError(f"expected {kind} features, got {fm.feature!r}")
        if kind == "price":
            if fm.dim == 1:
                fm = replicate_price(fm)
            elif fm.dim != IMAGE_DIM:
                raise FeatureError(f"price features must have dim 1 (raw) or "
                                   f"{IMAGE_DIM} (replicated), got {fm.dim}")
        block, missing_rows = _aligned_block(ds, fm, missing)
        all_missing.update(missing_rows)
        if standardize:
            stat_rows = (np.asarray(sorted(train_items), dtype=np.int64)
                         if train_items is not None
                         else np.arange(ds.n_items, dtype=np.int64))
            stat_rows = np.setdiff1d(stat_rows, np.asarray(missing_rows, dtype=np.int64))
            if stat_rows.size == 0:
                raise FeatureError(f"no rows available to standardize {kind} features")
            block = _standardize_columns(block, stat_rows)
            if missing_rows:
                block[missing_rows] = 0.0
        blocks.append(block)
        ranges[kind] = (cursor, cursor + block.shape[1])
        cursor += block.shape[1]

    if all_missing:
        log.warning("zero-filled %d dataset item(s) missing from %s features",
                    len(all_missing), "/".join(wanted))
    return FeatureBundle(np.concatenate(blocks, axis=1), ranges, variant,
                         missing_count=len(all_missing))
