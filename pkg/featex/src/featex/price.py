"""Price features: each token's average sale price, counting ETH and
WETH at parity and treating sales in any other currency as price 0 (or
dropping them entirely with `exclude_other_currencies`). Tokens without
a single counted sale are absent from the output; the engine's missing
policy decides what happens to them downstream. Aggregation is
order-independent over the transaction log.
"""

from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np

from .fmf import write_fmf

__all__ = ["PriceError", "ETH_LIKE", "read_sales", "price_matrix",
           "extract_price_features"]

ETH_LIKE = frozenset({"ETH", "WETH"})
CSV_HEADER = ["tx_hash", "buyer", "token_id", "price", "currency",
              "timestamp"]


class PriceError(ValueError):
    """Malformed transactions CSV."""


def read_sales(path) -> list[tuple[str, float, str]]:
    """Parse (token_id, price, currency) per data row; errors name the
    1-based line."""
    sales = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise PriceError(f"{path}: line 1: expected header "
                             f"{','.join(CSV_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise PriceError(f"{path}: line {lineno}: expected "
                                 f"{len(CSV_HEADER)} columns, got {len(row)}")
            _, _, token, price_raw, currency, _ = row
            if not token:
                raise PriceError(f"{path}: line {lineno}: missing token_id")
            if not currency:
                raise PriceError(f"{path}: line {lineno}: missing currency")
            try:
                price = float(price_raw)
            except ValueError:
                raise PriceError(f"{path}: line {lineno}: bad price "
                                 f"{price_raw!r}") from None
            if not np.isfinite(price) or price < 0:
                raise PriceError(f"{path}: line {lineno}: price must be "
                                 f"finite and >= 0, got {price_raw}")
            sales.append((token, price, currency))
    if not sales:
        raise PriceError(f"{path}: no sales rows")
    return sales


def price_matrix(sales: list[tuple[str, float, str]],
                 exclude_other_currencies: bool = False
                 ) -> tuple[list[str], np.ndarray]:
    """Per-token mean sale price (one column).

    Default: non-ETH/WETH sales count as price 0 in the mean. With
    `exclude_other_currencies` they are dropped from the mean entirely,
    and a token whose every sale is dropped disappears from the output.
    """
    totals: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for token, price, currency in sales:
        counted = currency in ETH_LIKE
        if counted:
            totals[token] += price
            counts[token] += 1
        elif not exclude_other_currencies:
            counts[token] += 1
    tokens = sorted(counts)
    values = np.array([[totals[t] / counts[t]] for t in tokens],
                      dtype=np.float64)
    return tokens, values


def extract_price_features(csv_path, out_path,
                           exclude_other_currencies: bool = False) -> int:
    """Write the price feature file; returns the number of rows written."""
    tokens, values = price_matrix(read_sales(csv_path),
                                  exclude_other_currencies)
    write_fmf(out_path, "price", tokens, values)
    return len(tokens)
