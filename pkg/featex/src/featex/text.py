"""Trait-text features: per trait value, the sum of pretrained word
vectors over its in-vocabulary words; per token, the concatenation over
the collection's trait schema. A value whose words are all
out-of-vocabulary contributes a 300-dim zero block. Deterministic: the
output is a pure function of (records, table).
"""

from __future__ import annotations

import numpy as np

from .fmf import write_fmf
from .traits import TraitRecord

__all__ = ["TextError", "WORD_DIM", "load_word_vectors", "text_matrix",
           "extract_text_features"]

WORD_DIM = 300


class TextError(ValueError):
    """Malformed word-vector table or inconsistent trait schema."""


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """Parse a `word v1 ... v300` per-line table; words are lowercased."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != WORD_DIM + 1:
                raise TextError(f"{path}: line {lineno}: expected a word and "
                                f"{WORD_DIM} values, got {len(parts)} fields")
            word = parts[0].lower()
            if word in table:
                raise TextError(f"{path}: line {lineno}: duplicate word "
                                f"{word!r}")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise TextError(f"{path}: line {lineno}: non-numeric "
                                "vector entry") from None
            if not np.isfinite(vec).all():
                raise TextError(f"{path}: line {lineno}: non-finite "
                                "vector entry")
            table[word] = vec
    if not table:
        raise TextError(f"{path}: empty word-vector table")
    return table


def _value_vector(value: str, table: dict[str, np.ndarray]) -> np.ndarray:
    out = np.zeros(WORD_DIM, dtype=np.float64)
    for word in value.split():
        vec = table.get(word.lower())
        if vec is not None:
            out += vec
    return out


def text_matrix(records: list[TraitRecord],
                table: dict[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    """One row per token: trait-value vectors concatenated in schema order."""
    if not records:
        raise TextError("no trait records")
    schema = records[0].names
    for record in records:
        if record.names != schema:
            raise TextError(f"token {record.token_id!r} has traits "
                            f"{record.names}, expected {schema} (every record "
                            "must share one trait schema)")
    values = np.empty((len(records), WORD_DIM * len(schema)), dtype=np.float64)
    for r, record in enumerate(records):
        for t, (_, value) in enumerate(record.traits):
            values[r, t * WORD_DIM:(t + 1) * WORD_DIM] = \
                _value_vector(value, table)
    return [record.token_id for record in records], values


def extract_text_features(records: list[TraitRecord],
                          table: dict[str, np.ndarray], out_path) -> int:
    """Write the txt feature file; returns the number of rows written."""
    tokens, values = text_matrix(records, table)
    write_fmf(out_path, "txt", tokens, values)
    return len(tokens)
