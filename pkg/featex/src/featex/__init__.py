"""Offline feature extraction for NFT collections.

Three extractors, one per modality, all writing the same self-describing
feature-matrix file format the recommendation engine ingests:

- images: a small convolutional auto-encoder trained on the collection,
  encoder latents as 64-dim vectors,
- trait text: sums of pretrained word vectors per trait value,
  concatenated over the collection's trait schema,
- price: per-token average sale price in ETH/WETH.
"""

__version__ = "0.1.0"
