"""Command-line entry point: img, txt, and price extraction.

Exit codes match the engine's convention: 0 success, 2 input error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .fmf import FmfError
from .images import CAEConfig, ImageError, extract_image_features
from .price import PriceError, extract_price_features
from .text import TextError, extract_text_features, load_word_vectors
from .traits import TraitError, load_traits

__all__ = ["main"]


def cmd_img(args) -> int:
    cfg = CAEConfig(epochs=args.epochs, lr=args.lr,
                    batch_size=args.batch_size, seed=args.seed)
    curve, skipped = extract_image_features(args.image_dir, cfg, args.out)
    print(f"trained {cfg.epochs} epoch(s); reconstruction MSE "
          f"{curve[0]:.5f} -> {curve[-1]:.5f}")
    if skipped:
        print(f"skipped {len(skipped)} undecodable file(s), listed in "
              f"{args.out}.skipped")
    print(f"image features written to {args.out}")
    return 0


def cmd_txt(args) -> int:
    records = load_traits(args.traits)
    table = load_word_vectors(args.vectors)
    rows = extract_text_features(records, table, args.out)
    print(f"text features for {rows} token(s) written to {args.out}")
    return 0


def cmd_price(args) -> int:
    rows = extract_price_features(args.sales, args.out,
                                  args.exclude_other_currencies)
    print(f"price features for {rows} token(s) written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featex",
        description="Extract engine-ready feature files from collection "
                    "images, trait metadata, and sales logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("img", help="auto-encoder latents from an image dir")
    p.add_argument("image_dir", help="directory of images named <token>.<ext>")
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_img)

    p = sub.add_parser("txt", help="word-vector sums over trait values")
    p.add_argument("traits", help="traits JSON file")
    p.add_argument("vectors", help="word-vector table, `word v1 ... v300`")
    p.add_argument("--out", required=True, help="output feature file")
    p.set_defaults(func=cmd_txt)

    p = sub.add_parser("price", help="average sale price per token")
    p.add_argument("sales", help="transactions CSV")
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--exclude-other-currencies", action="store_true",
                   help="drop non-ETH/WETH sales from the mean instead of "
                        "counting them as 0")
    p.set_defaults(func=cmd_price)

    return parser


INPUT_ERRORS = (FmfError, ImageError, PriceError, TextError, TraitError,
                FileNotFoundError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:              # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
