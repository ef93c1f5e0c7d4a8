"""Chaotic-map augmentation, contrastive pretraining and SE feature fusion for texture classification."""
__version__ = "0.1.0"
