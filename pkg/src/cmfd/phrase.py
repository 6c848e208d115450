"""Phrase construction over matched keypoints: pooling and saliency weighting.

A matched keypoint (a visual word) is promoted to a visual phrase by pooling
its descriptor with those of its spatially nearest matched neighbors (side
words). Pooling is order-free, so two copies of a region build the same
phrase even when their side words arrive in different spatial order. Phrase
features are then reweighted by a saliency heat map so that matches on
structured content count more than matches on smooth filler, and matched
again with the same neighbor tests used at word level.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imaging, matching


@dataclass
class PhraseConfig:
    k_sides: int = 3              # side words pooled into each phrase
    edge_sigma: float = 1.5       # presmoothing before the gradient
    edge_percentile: float = 99.0  # gradient normalization reference
    saliency_decay: float = 0.001  # squared-exponential falloff, px^-2


def build_phrases(positions, k: int = 3) -> np.ndarray:
    """Spatially nearest side words for each word, as an (N, k) index array.

    Neighbors are exact, self excluded, ties toward the lower index. When
    fewer than k other words exist the result simply has fewer columns.
    """
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    k = min(k, n - 1)
    if k <= 0:
        return np.zeros((n, 0), dtype=np.int64)
    idx, _ = matching.knn_search_all(pos, k)
    return idx


def pool_phrase(features, sides) -> np.ndarray:
    """Geometric pooling: each phrase feature is the center feature plus the
    per-dimension maximum over its side-word features.

    The max makes the result invariant to any permutation of the sides.
    """
    feats = np.asarray(features, dtype=np.float64)
    sides = np.asarray(sides)
    if sides.shape[1] == 0:
        return feats.copy()
    return feats + feats[sides].max(axis=1)


def edge_map(img, cfg: PhraseConfig = None) -> np.ndarray:
    """Normalized gradient-magnitude map in [0, 1].

    The image is presmoothed, Sobel gradients are taken, and the magnitude
    is scaled so the configured percentile lands at 1 (robust against a few
    extreme pixels); a flat image yields all zeros.
    """
    cfg = cfg or PhraseConfig()
    imaging.validate_gray(img)
    smooth = imaging.gaussian_blur(img, cfg.edge_sigma)
    gx = ndimage.sobel(smooth, axis=1, mode="mirror")
    gy = ndimage.sobel(smooth, axis=0, mode="mirror")
    mag = np.hypot(gx, gy)
    ref = float(np.percentile(mag, cfg.edge_percentile))
    if ref <= 0.0:
        return np.zeros_like(mag)
    return np.clip(mag / ref, 0.0, 1.0)


def saliency_kernel(decay: float = 0.001) -> np.ndarray:
    """Truncated squared-exponential kernel exp(-decay * |offset|^2).

    Truncation radius is where the exponent reaches -4.5, i.e. the kernel
    has fallen to ~1% of its peak; the kernel is left unnormalized so the
    heat it produces scales with the amount of nearby edge mass.
    """
    if decay <= 0:
        raise ValueError("decay must be positive")
    radius = math.ceil(3.0 / math.sqrt(2.0 * decay))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-decay * (ax[:, None] ** 2 + ax[None, :] ** 2))


def saliency_heat(edge: np.ndarray, decay: float = 0.001) -> np.ndarray:
    """Diffuse an edge map into a smooth saliency heat map."""
    return imaging.convolve_fft(edge, saliency_kernel(decay))


def keypoint_weights(heat: np.ndarray, positions) -> np.ndarray:
    """Per-keypoint weights in [1, 2] from the heat map.

    The map is min-max normalized globally and sampled bilinearly at each
    keypoint; a flat map gives every keypoint weight 1.
    """
    pos = np.asarray(positions, dtype=np.float64)
    lo = float(heat.min())
    hi = float(heat.max())
    if pos.size == 0:
        return np.ones(0)
    if hi - lo <= 0.0:
        return np.ones(pos.shape[0])
    sampled, _ = imaging.sample_bilinear(heat, pos[:, 0], pos[:, 1], fill=lo)
    return 1.0 + (sampled - lo) / (hi - lo)


def weight_features(features, weights) -> np.ndarray:
    """Scale each feature row by its keypoint weight."""
    feats = np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != feats.shape[0]:
        raise ValueError("one weight per feature row required")
    return feats * w[:, None]


def match_phrase_level(features, positions, cfg: matching.MatchConfig = None,
                       word_pairs=None):
    """Match phrase features with the word-level neighbor tests.

    Phase verification is forced off: pooled features have no single moment
    matrix to compare phases over. When ``word_pairs`` is given the result is
    restricted to pairs that also matched at word level, so the phrase stage
    acts as a verification pass: a correspondence survives only when both the
    local descriptors and the pooled neighborhood context agree. This keeps
    the phrase-level match count at or below the word-level count.
    """
    import dataclasses
    cfg = cfg or matching.MatchConfig()
    cfg = dataclasses.replace(cfg, phase_verify=False)
    pairs = matching.match_word_level(features, positions, cfg)
    if word_pairs is None:
        return pairs
    allowed = {(p.a, p.b) for p in word_pairs}
    return [p for p in pairs if (p.a, p.b) in allowed]
