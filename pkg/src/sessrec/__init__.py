"""Session-based next-item recommendation with three graph views, sparse
attention and contrastive co-training."""

__version__ = "0.1.0"
