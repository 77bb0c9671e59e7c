"""Image features from a convolutional auto-encoder trained per
collection.

The encoder is three conv(3x3) + maxpool(2x2) stages (channels
16/32/64 by default) flattened into a 64-dim latent; the decoder
mirrors it with transposed convolutions; the objective is pixel MSE on
64x64 RGB inputs scaled to [0, 1]. Filenames (minus extension) are the
token ids. Training is seeded, so a fixed config reproduces the output
file byte for byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch import nn

from .fmf import write_fmf

__all__ = ["ImageError", "CAEConfig", "ConvAutoencoder", "load_images",
           "train_cae", "extract_image_features", "LATENT_DIM"]

LATENT_DIM = 64
logger = logging.getLogger(__name__)


class ImageError(ValueError):
    """Unusable image directory or config."""


@dataclass(frozen=True)
class CAEConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    channels: tuple[int, int, int] = (16, 32, 64)
    image_size: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ImageError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ImageError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ImageError(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ImageError(f"channels must be 3 positive stage widths, "
                             f"got {self.channels}")
        # three 2x2 pools halve the side three times
        if self.image_size < 8 or self.image_size % 8:
            raise ImageError(f"image_size must be a positive multiple of 8, "
                             f"got {self.image_size}")


class ConvAutoencoder(nn.Module):
    def __init__(self, channels=(16, 32, 64), image_size=64):
        super().__init__()
        c0, c1, c2 = channels
        side = image_size // 8
        flat = c2 * side * side
        self.encoder = nn.Sequential(
            nn.Conv2d(3, c0, kernel_size=3, padding=1), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c0, c1, kernel_size=3, padding=1), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, kernel_size=3, padding=1), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Flatten(),
            nn.Linear(flat, LATENT_DIM),
        )
        self.decoder = nn.Sequential(
            nn.Linear(LATENT_DIM, flat), nn.ReLU(),
            nn.Unflatten(1, (c2, side, side)),
            nn.ConvTranspose2d(c2, c1, kernel_size=2, stride=2), nn.ReLU(),
            nn.ConvTranspose2d(c1, c0, kernel_size=2, stride=2), nn.ReLU(),
            nn.ConvTranspose2d(c0, 3, kernel_size=2, stride=2), nn.Sigmoid(),
        )

    def forward(self, x):
        latent = self.encoder(x)
        return self.decoder(latent), latent


def load_images(image_dir, image_size: int = 64
                ) -> tuple[list[str], torch.Tensor, list[str]]:
    """Decode every file in the directory; returns (token ids, N x 3 x S x S
    float tensor in [0, 1], names of skipped undecodable files)."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise ImageError(f"{image_dir} is not a directory")
    tokens: list[str] = []
    arrays: list[np.ndarray] = []
    skipped: list[str] = []
    for path in sorted(p for p in image_dir.iterdir() if p.is_file()):
        try:
            with Image.open(path) as img:
                rgb = img.convert("RGB").resize((image_size, image_size))
        except (UnidentifiedImageError, OSError):
            logger.warning("skipping undecodable image %s", path.name)
            skipped.append(path.name)
            continue
        if path.stem in tokens:
            raise ImageError(f"duplicate token id {path.stem!r} "
                             f"(two files share the stem)")
        tokens.append(path.stem)
        arrays.append(np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1)
                      / 255.0)
    if not tokens:
        raise ImageError(f"{image_dir} contains no decodable images")
    return tokens, torch.from_numpy(np.stack(arrays)), skipped


def train_cae(images: torch.Tensor, cfg: CAEConfig
              ) -> tuple[ConvAutoencoder, list[float]]:
    """Fit the auto-encoder; returns it with the per-epoch mean MSE curve."""
    torch.manual_seed(cfg.seed)
    model = ConvAutoencoder(cfg.channels, cfg.image_size)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    criterion = nn.MSELoss()
    order_gen = torch.Generator().manual_seed(cfg.seed)
    n = images.shape[0]

    curve: list[float] = []
    for _ in range(cfg.epochs):
        order = torch.randperm(n, generator=order_gen)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = images[order[start:start + cfg.batch_size]]
            recon, _ = model(batch)
            loss = criterion(recon, batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.item()) * batch.shape[0]
        curve.append(total / n)
    return model, curve


def extract_image_features(image_dir, cfg: CAEConfig, out_path
                           ) -> tuple[list[float], list[str]]:
    """Train on the collection and write one 64-dim latent per token.

    Undecodable files are skipped with a warning and listed, one name
    per line, in a `<out_path>.skipped` sidecar. Returns the training
    MSE curve and the skipped names."""
    tokens, images, skipped = load_images(image_dir, cfg.image_size)
    model, curve = train_cae(images, cfg)
    model.eval()
    with torch.no_grad():
        latents = model.encoder(images).double().numpy()
    write_fmf(out_path, "img", tokens, latents)
    if skipped:
        Path(f"{out_path}.skipped").write_text(
            "".join(f"{name}\n" for name in skipped), encoding="utf-8")
    return curve, skipped
