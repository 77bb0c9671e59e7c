"""Graph-based collaborative filtering for sparse NFT marketplaces."""

__version__ = "0.1.0"
