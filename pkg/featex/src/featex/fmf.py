"""Feature-matrix file (FMF v1) writer.

One JSON header line, then one `token<TAB>v1 v2 ...` row per token.
Rows are sorted by token id, numerically when every id is all digits,
and values carry 17 significant digits so float64 round-trips bit-exact
through the consuming engine.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["FmfError", "FEATURE_KINDS", "write_fmf"]

FEATURE_KINDS = ("img", "txt", "price")
# dims the consuming engine pins per modality; txt is free (300 per trait)
FIXED_DIMS = {"img": 64, "price": 1}


class FmfError(ValueError):
    """Attempt to write a malformed feature file."""


def write_fmf(path, feature: str, tokens: list[str], values) -> None:
    if feature not in FEATURE_KINDS:
        raise FmfError(f"feature must be one of {FEATURE_KINDS}, got {feature!r}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise FmfError(f"values must be 2-d, got shape {values.shape}")
    count, dim = values.shape
    if count != len(tokens):
        raise FmfError(f"{len(tokens)} tokens but {count} value rows")
    if count == 0 or dim == 0:
        raise FmfError("feature matrix must be nonempty")
    if feature in FIXED_DIMS and dim != FIXED_DIMS[feature]:
        raise FmfError(f"{feature!r} vectors must have dim "
                       f"{FIXED_DIMS[feature]}, got {dim}")
    if not np.isfinite(values).all():
        raise FmfError("values must be finite")
    if any(not t for t in tokens):
        raise FmfError("token ids must be nonempty")
    if len(set(tokens)) != count:
        raise FmfError("token ids must be unique")

    if all(t.isdigit() for t in tokens):
        order = sorted(range(count), key=lambda k: int(tokens[k]))
    else:
        order = sorted(range(count), key=lambda k: tokens[k])

    header = json.dumps({"format": "nft-feat", "version": 1,
                         "feature": feature, "dim": dim, "count": count},
                        separators=(", ", ": "))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for k in order:
            row = " ".join(f"{v:.17g}" for v in values[k])
            fh.write(f"{tokens[k]}\t{row}\n")
