"""Feature file parsing, price replication, and bundle assembly tests."""

import json
import logging

import numpy as np
import pytest

from nftrec.dataset import Dataset
from nftrec.features import (
    FeatureBundle,
    FeatureError,
    FeatureMatrix,
    assemble_bundle,
    load_feature_file,
    replicate_price,
    write_feature_file,
)

DATA = __file__.rsplit("/", 1)[0] + "/data"


def header_line(feature, dim, count):
    return json.dumps({"format": "nft-feat", "version": 1, "feature": feature,
                       "dim": dim, "count": count}, separators=(",", ":"))


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def random_matrix(rng, feature, tokens, dim):
    return FeatureMatrix(feature, tokens, rng.standard_normal((len(tokens), dim)))


class TestLoadFeatureFile:
    def test_checked_in_fixture_loads(self):
        fm = load_feature_file(f"{DATA}/txt_small.fmf")
        assert fm.feature == "txt"
        assert fm.count == 3 and fm.dim == 2
        np.testing.assert_array_equal(fm.row("7"), [0.5, -1.25])

    def test_valid_three_item_dim_two(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [
            header_line("txt", 2, 3),
            "1\t0.5 1.5",
            "2\t-1 2",
            "3\t0 0",
        ])
        fm = load_feature_file(path)
        assert fm.count == 3
        np.testing.assert_array_equal(fm.values, [[0.5, 1.5], [-1.0, 2.0], [0.0, 0.0]])

    def test_short_row_names_line(self, tmp_path):
        rows = ["%d\t%s" % (k, " ".join(["0.0"] * 64)) for k in range(3)]
        rows[1] = "1\t" + " ".join(["0.0"] * 63)
        path = write_lines(tmp_path / "f.fmf", [header_line("img", 64, 3)] + rows)
        with pytest.raises(FeatureError, match="line 3.*64 values.*63"):
            load_feature_file(path)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        for feature, dim in (("img", 64), ("txt", 7), ("price", 1)):
            tokens = [str(t) for t in rng.choice(1000, size=12, replace=False)]
            fm = random_matrix(rng, feature, tokens, dim)
            path = tmp_path / f"{feature}.fmf"
            write_feature_file(fm, path)
            back = load_feature_file(path)
            assert back.feature == feature and back.dim == dim
            order = sorted(range(12), key=lambda k: int(tokens[k]))
            assert back.tokens == [tokens[k] for k in order]
            np.testing.assert_array_equal(back.values, fm.values[order])

    def test_duplicate_token_names_line(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [
            header_line("txt", 1, 3), "1\t0", "1\t1", "2\t2",
        ])
        with pytest.raises(FeatureError, match="line 3.*duplicate"):
            load_feature_file(path)

    def test_non_finite_value_names_line(self, tmp_path):
        for bad in ("nan", "inf", "-inf"):
            path = write_lines(tmp_path / "f.fmf", [
                header_line("txt", 1, 2), "1\t0.5", f"2\t{bad}",
            ])
            with pytest.raises(FeatureError, match="line 3.*non-finite"):
                load_feature_file(path)

    def test_count_mismatch_rejected(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [
            header_line("txt", 1, 3), "1\t0", "2\t1",
        ])
        with pytest.raises(FeatureError, match="count 3.*2 data rows"):
            load_feature_file(path)

    def test_unsorted_rows_rejected(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [
            header_line("txt", 1, 2), "2\t0", "1\t1",
        ])
        with pytest.raises(FeatureError, match="line 3.*sorted"):
            load_feature_file(path)

    def test_numeric_ids_sort_numerically(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [
            header_line("txt", 1, 2), "2\t0", "10\t1",
        ])
        fm = load_feature_file(path)
        assert fm.tokens == ["2", "10"]

    def test_mixed_ids_sort_lexicographically(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [
            header_line("txt", 1, 2), "10\t0", "a\t1",
        ])
        assert load_feature_file(path).tokens == ["10", "a"]
        bad = write_lines(tmp_path / "g.fmf", [
            header_line("txt", 1, 2), "a\t1", "10\t0",
        ])
        with pytest.raises(FeatureError, match="sorted"):
            load_feature_file(bad)

    def test_header_validation(self, tmp_path):
        cases = [
            ("not json", "valid JSON"),
            (json.dumps({"format": "nft-feat", "version": 1}), "exactly the keys"),
            (header_line("txt", 1, 1).replace("nft-feat", "other"), "nft-feat"),
            (header_line("txt", 1, 1).replace('"version":1', '"version":2'), "version"),
            (header_line("bogus", 1, 1), "feature"),
            (header_line("img", 32, 1), "must be 64"),
            (header_line("price", 2, 1), "dim must be 1"),
            (header_line("txt", 0, 1), "positive integer"),
        ]
        for head, pattern in cases:
            path = write_lines(tmp_path / "f.fmf", [head, "1\t0"])
            with pytest.raises(FeatureError, match=pattern):
                load_feature_file(path)

    def test_malformed_row_separator(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [header_line("txt", 1, 1), "1 0.5"])
        with pytest.raises(FeatureError, match="line 2"):
            load_feature_file(path)

    def test_unparseable_value_names_line(self, tmp_path):
        path = write_lines(tmp_path / "f.fmf", [header_line("txt", 1, 1), "1\tzzz"])
        with pytest.raises(FeatureError, match="line 2.*unparseable"):
            load_feature_file(path)


class TestReplicatePrice:
    def test_scalar_repeated_64_times(self):
        raw = FeatureMatrix("price", ["1"], [[1.5]])
        out = replicate_price(raw)
        assert out.dim == 64
        np.testing.assert_array_equal(out.values, np.full((1, 64), 1.5))

    def test_zero_price_gives_zero_row(self):
        raw = FeatureMatrix("price", ["1"], [[0.0]])
        np.testing.assert_array_equal(replicate_price(raw).values, np.zeros((1, 64)))

    def test_every_column_equals_input(self):
        rng = np.random.default_rng(1)
        raw = FeatureMatrix("price", [str(k) for k in range(20)],
                            rng.standard_normal((20, 1)))
        out = replicate_price(raw, d=17)
        assert out.dim == 17
        for col in range(17):
            np.testing.assert_array_equal(out.values[:, col], raw.values[:, 0])

    def test_rejects_wrong_inputs(self):
        txt = FeatureMatrix("txt", ["1"], [[0.5]])
        with pytest.raises(FeatureError, match="price"):
            replicate_price(txt)
        wide = FeatureMatrix("price", ["1"], [[0.5, 0.5]])
        with pytest.raises(FeatureError, match="dim 1"):
            replicate_price(wide)


def make_dataset(tokens):
    users = ["u0", "u1"]
    interactions = [(k % 2, i) for k, i in enumerate(range(len(tokens)))]
    return Dataset(users, list(tokens), interactions)


def make_modalities(rng, tokens, txt_dim=8):
    img = random_matrix(rng, "img", list(tokens), 64)
    txt = random_matrix(rng, "txt", list(tokens), txt_dim)
    price = FeatureMatrix("price", list(tokens), rng.random((len(tokens), 1)) * 10)
    return img, txt, price


class TestAssembleBundle:
    def test_all_variant_width(self):
        rng = np.random.default_rng(2)
        tokens = [str(k) for k in range(5)]
        ds = make_dataset(tokens)
        img, txt, price = make_modalities(rng, tokens, txt_dim=1800)
        bundle = assemble_bundle(ds, "all", img, txt, price, standardize=False)
        assert bundle.width == 64 + 1800 + 64 == 1928
        assert bundle.ranges == {"img": (0, 64), "txt": (64, 1864),
                                 "price": (1864, 1928)}

    def test_price_variant_equals_replication(self):
        rng = np.random.default_rng(3)
        tokens = [str(k) for k in range(6)]
        ds = make_dataset(tokens)
        _, _, price = make_modalities(rng, tokens)
        bundle = assemble_bundle(ds, "price", price=price, standardize=False)
        assert bundle.width == 64
        expected = replicate_price(price)
        for i, token in enumerate(ds.items):
            np.testing.assert_array_equal(bundle.matrix[i], expected.row(token))

    def test_none_variant_empty(self):
        ds = make_dataset(["1", "2", "3"])
        bundle = assemble_bundle(ds, "none")
        assert bundle.width == 0
        assert bundle.matrix.shape == (3, 0)
        assert bundle.ranges == {}

    def test_block_slicing_reproduces_inputs(self):
        """Without scaling, each recorded range recovers its source matrix."""
        rng = np.random.default_rng(4)
        tokens = [str(k) for k in rng.choice(100, size=9, replace=False)]
        ds = make_dataset(tokens)
        img, txt, price = make_modalities(rng, tokens)
        bundle = assemble_bundle(ds, "all", img, txt, price, standardize=False)
        for kind, fm in (("img", img), ("txt", txt), ("price", replicate_price(price))):
            block = bundle.block(kind)
            for i, token in enumerate(ds.items):
                np.testing.assert_array_equal(block[i], fm.row(token))

    def test_standardization_matches_independent_computation(self):
        rng = np.random.default_rng(5)
        tokens = [str(k) for k in range(10)]
        ds = make_dataset(tokens)
        img, txt, price = make_modalities(rng, tokens)
        train_items = {0, 2, 4, 6, 8}
        bundle = assemble_bundle(ds, "txt", txt=txt, standardize=True,
                                 train_items=train_items)
        aligned = np.stack([txt.row(t) for t in ds.items])
        rows = sorted(train_items)
        mean = aligned[rows].mean(axis=0)
        std = aligned[rows].std(axis=0)
        std[std == 0] = 1.0
        np.testing.assert_allclose(bundle.matrix, (aligned - mean) / std,
                                   rtol=0, atol=1e-14)

    def test_standardized_train_columns_are_centered(self):
        rng = np.random.default_rng(6)
        tokens = [str(k) for k in range(12)]
        ds = make_dataset(tokens)
        img, txt, price = make_modalities(rng, tokens)
        bundle = assemble_bundle(ds, "all", img, txt, price, standardize=True)
        np.testing.assert_allclose(bundle.matrix.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(bundle.matrix.std(axis=0), 1.0, atol=1e-12)

    def test_constant_column_not_scaled(self):
        ds = make_dataset(["1", "2"])
        txt = FeatureMatrix("txt", ["1", "2"], [[3.0, 1.0], [3.0, 2.0]])
        bundle = assemble_bundle(ds, "txt", txt=txt, standardize=True)
        np.testing.assert_array_equal(bundle.matrix[:, 0], [0.0, 0.0])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        tokens = [str(k) for k in range(8)]
        img, txt, price = make_modalities(rng, tokens)
        ds1 = make_dataset(tokens)
        perm = list(rng.permutation(8))
        ds2 = make_dataset([tokens[p] for p in perm])
        b1 = assemble_bundle(ds1, "all", img, txt, price, standardize=False)
        b2 = assemble_bundle(ds2, "all", img, txt, price, standardize=False)
        np.testing.assert_array_equal(b2.matrix, b1.matrix[perm])
        # standardization sums rows in dataset order, so only near-exact there
        s1 = assemble_bundle(ds1, "all", img, txt, price, standardize=True)
        s2 = assemble_bundle(ds2, "all", img, txt, price, standardize=True)
        np.testing.assert_allclose(s2.matrix, s1.matrix[perm], rtol=0, atol=1e-12)

    def test_missing_item_error_lists_tokens(self):
        rng = np.random.default_rng(8)
        tokens = [str(k) for k in range(15)]
        ds = make_dataset(tokens)
        img = random_matrix(rng, "img", tokens[:3], 64)
        with pytest.raises(FeatureError, match=r"12 dataset items.*\+2 more"):
            assemble_bundle(ds, "img", img=img, standardize=False)

    def test_zero_fill_policy(self, caplog):
        rng = np.random.default_rng(9)
        tokens = [str(k) for k in range(6)]
        ds = make_dataset(tokens)
        img = random_matrix(rng, "img", tokens[:4], 64)
        with caplog.at_level(logging.WARNING, logger="nftrec.features"):
            bundle = assemble_bundle(ds, "img", img=img, missing="zero",
                                     standardize=True)
        assert bundle.missing_count == 2
        np.testing.assert_array_equal(bundle.matrix[4:], np.zeros((2, 64)))
        assert np.any(bundle.matrix[:4] != 0)
        assert "2" in caplog.text

    def test_required_modality_enforced(self):
        ds = make_dataset(["1"])
        with pytest.raises(FeatureError, match="requires img"):
            assemble_bundle(ds, "img")

    def test_kind_mismatch_rejected(self):
        ds = make_dataset(["1"])
        txt = FeatureMatrix("txt", ["1"], [[0.5]])
        with pytest.raises(FeatureError, match="expected img"):
            assemble_bundle(ds, "img", img=txt)

    def test_unknown_variant_and_policy_rejected(self):
        ds = make_dataset(["1"])
        with pytest.raises(FeatureError, match="variant"):
            assemble_bundle(ds, "everything")
        txt = FeatureMatrix("txt", ["1"], [[0.5]])
        with pytest.raises(FeatureError, match="policy"):
            assemble_bundle(ds, "txt", txt=txt, missing="ignore")

    def test_ranges_must_partition(self):
        with pytest.raises(FeatureError, match="partition"):
            FeatureBundle(np.zeros((2, 4)), {"img": (0, 3)}, "img")
