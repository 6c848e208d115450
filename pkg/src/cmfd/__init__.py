"""Copy-move forgery detection: keypoints, moment descriptors, phrase matching, fused localization."""

__version__ = "0.1.0"
