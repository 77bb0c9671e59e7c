"""Price extraction: the zero-replacement mean and its exclusion flag."""

import csv
import random

import numpy as np
import pytest

from featex.price import (
    PriceError,
    extract_price_features,
    price_matrix,
    read_sales,
)

HEADER = ["tx_hash", "buyer", "token_id", "price", "currency", "timestamp"]


def write_sales(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for k, (token, price, currency) in enumerate(rows):
            writer.writerow([f"0x{k:04x}", f"w{k}", token, price, currency,
                             "2024-01-01T00:00:00Z"])
    return path


class TestMeanRule:
    def test_eth_and_weth_average_at_parity(self):
        tokens, values = price_matrix([("a", 1.0, "ETH"), ("a", 2.0, "WETH")])
        assert tokens == ["a"]
        assert values[0, 0] == pytest.approx(1.5)

    def test_other_currency_counts_as_zero(self):
        sales = [("a", 1.0, "ETH"), ("a", 2.0, "WETH"), ("a", 500.0, "USDC")]
        _, values = price_matrix(sales)
        assert values[0, 0] == pytest.approx(1.0)

    def test_only_other_currency_gives_zero(self):
        tokens, values = price_matrix([("a", 500.0, "USDC")])
        assert tokens == ["a"]
        assert values[0, 0] == 0.0

    def test_exclude_flag_drops_other_currency_sales(self):
        sales = [("a", 1.0, "ETH"), ("a", 2.0, "WETH"), ("a", 500.0, "USDC")]
        _, values = price_matrix(sales, exclude_other_currencies=True)
        assert values[0, 0] == pytest.approx(1.5)

    def test_exclude_flag_removes_tokens_with_no_counted_sale(self):
        sales = [("a", 1.0, "ETH"), ("b", 500.0, "USDC")]
        tokens, _ = price_matrix(sales, exclude_other_currencies=True)
        assert tokens == ["a"]

    def test_tokens_without_sales_are_absent(self):
        tokens, _ = price_matrix([("a", 1.0, "ETH")])
        assert tokens == ["a"]


class TestOrderIndependence:
    def test_shuffled_log_writes_identical_bytes(self, tmp_path):
        rng = random.Random(5)
        rows = [(f"t{k % 7}", float(k % 4) + 0.25, cur)
                for k, cur in enumerate(["ETH", "WETH", "USDC", "ETH"] * 8)]
        out_a = tmp_path / "a.fmf"
        out_b = tmp_path / "b.fmf"
        extract_price_features(write_sales(tmp_path / "a.csv", rows), out_a)
        shuffled = rows[:]
        rng.shuffle(shuffled)
        extract_price_features(write_sales(tmp_path / "b.csv", shuffled),
                               out_b)
        assert out_a.read_bytes() == out_b.read_bytes()


class TestCsvValidation:
    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("a,b\n", encoding="utf-8")
        with pytest.raises(PriceError, match="line 1"):
            read_sales(path)

    def test_bad_price_names_line(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(",".join(HEADER) + "\n"
                        "0x1,w,tok,free,ETH,2024-01-01T00:00:00Z\n",
                        encoding="utf-8")
        with pytest.raises(PriceError, match="line 2"):
            read_sales(path)

    def test_negative_price_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(",".join(HEADER) + "\n"
                        "0x1,w,tok,-1.0,ETH,2024-01-01T00:00:00Z\n",
                        encoding="utf-8")
        with pytest.raises(PriceError, match=">= 0"):
            read_sales(path)

    def test_missing_token_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(",".join(HEADER) + "\n"
                        "0x1,w,,1.0,ETH,2024-01-01T00:00:00Z\n",
                        encoding="utf-8")
        with pytest.raises(PriceError, match="token_id"):
            read_sales(path)

    def test_column_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(",".join(HEADER) + "\n0x1,w,tok,1.0,ETH\n",
                        encoding="utf-8")
        with pytest.raises(PriceError, match="columns"):
            read_sales(path)

    def test_empty_log_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(",".join(HEADER) + "\n", encoding="utf-8")
        with pytest.raises(PriceError, match="no sales"):
            read_sales(path)


class TestOutputFile:
    def test_written_values_match_the_means(self, tmp_path):
        rows = [("a", 1.0, "ETH"), ("a", 2.0, "WETH"), ("b", 3.0, "ETH"),
                ("b", 1.0, "USDC")]
        out = tmp_path / "p.fmf"
        assert extract_price_features(write_sales(tmp_path / "s.csv", rows),
                                      out) == 2
        body = out.read_text(encoding="utf-8").splitlines()[1:]
        parsed = {line.split("\t")[0]: float(line.split("\t")[1])
                  for line in body}
        assert parsed["a"] == pytest.approx(1.5)
        assert parsed["b"] == pytest.approx(1.5)
        np.testing.assert_allclose(list(parsed.values()), [1.5, 1.5])
