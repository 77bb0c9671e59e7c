"""Trait records: one token with its ordered (trait name, value) pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass

__all__ = ["TraitError", "TraitRecord", "load_traits"]


class TraitError(ValueError):
    """Malformed trait metadata."""


@dataclass(frozen=True)
class TraitRecord:
    token_id: str
    traits: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.token_id:
            raise TraitError("token_id must be nonempty")
        if not self.traits:
            raise TraitError(f"token {self.token_id!r} has no traits")
        for pair in self.traits:
            if len(pair) != 2:
                raise TraitError(f"token {self.token_id!r}: trait entries "
                                 f"must be (name, value) pairs, got {pair!r}")
            name, value = pair
            if not isinstance(name, str) or not name:
                raise TraitError(f"token {self.token_id!r}: trait name must "
                                 f"be a nonempty string, got {name!r}")
            if not isinstance(value, str):
                raise TraitError(f"token {self.token_id!r}: trait {name!r} "
                                 f"value must be a string, got {value!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.traits)


def load_traits(path) -> list[TraitRecord]:
    """Parse a traits JSON file: a list of
    `{"token_id": ..., "traits": [[name, value], ...]}` objects.

    Trait order inside each record is meaningful and preserved."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TraitError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, list) or not doc:
        raise TraitError(f"{path}: expected a nonempty JSON list of records")

    records = []
    seen = set()
    for k, entry in enumerate(doc):
        if not isinstance(entry, dict) or set(entry) != {"token_id", "traits"}:
            raise TraitError(f"{path}: record {k}: expected keys "
                             f"token_id and traits")
        if not isinstance(entry["traits"], list):
            raise TraitError(f"{path}: record {k}: traits must be a list")
        record = TraitRecord(str(entry["token_id"]),
                             tuple(tuple(pair) if isinstance(pair, list)
                                   else (pair,) for pair in entry["traits"]))
        if record.token_id in seen:
            raise TraitError(f"{path}: record {k}: duplicate token "
                             f"{record.token_id!r}")
        seen.add(record.token_id)
        records.append(record)
    return records
