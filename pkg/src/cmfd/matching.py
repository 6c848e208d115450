"""Nearest-neighbor search and match-pair emission over descriptor features.

Self-matching within one image: every keypoint queries its nearest neighbors
in feature space (itself excluded) and a neighbor-testing strategy decides
which neighbors become match pairs. Four strategies are provided:

  2nn    classic ratio test on the two nearest neighbors
  g2nn   generalized ratio test, scanning distances forward until it fails
  rg2nn  reversed scan from the farthest neighbor back toward the nearest
  i2nn   two-branch test for multiple duplication: the plain ratio test plus
         an absolute-distance branch that emits the two nearest neighbors
         when both are very close in feature space; spatially near neighbors
         are rejected outright

i2nn is the default: the forward scan dies on its first ratio failure when a
region is
 duplicated more than once (the nearest distances tie), while the
reversed scan pays a full-length scan per keypoint.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import descriptor as descriptor_mod


class NeighborSet(NamedTuple):
    query: int
    indices: np.ndarray    # neighbor indices, ascending feature distance
    distances: np.ndarray  # matching distances


class MatchPair(NamedTuple):
    a: int
    b: int
    distance: float


@dataclass
class MatchConfig:
    strategy: str = "i2nn"            # one of 2nn | g2nn | rg2nn | i2nn
    n_neighbors: int = 0              # scanning-test list length; 0 = all others
    ratio_threshold: float = 0.6      # ratio-test threshold
    abs_threshold: float = 0.1        # absolute branch of i2nn
    min_spatial_distance: float = 50.0  # px, i2nn spatial guard
    phase_verify: bool = True
    phase_consistency_min: float = 0.9


STRATEGIES = ("2nn", "g2nn", "rg2nn", "i2nn")


def _ratio(a: float, b: float) -> float:
    # distances are sorted ascending, so b == 0 forces a == 0: treat exact
    # duplicates as a perfect ratio pass
    return a / b if b > 0 else 0.0


def knn_search(features, query: int, n: int) -> NeighborSet:
    """Exact n nearest neighbors of `features[query]` among the others.

    Ties in distance are broken toward the lower index. Raises on a bad
    query index or when n is not in [1, len(features) - 1].
    """
    feats = np.asarray(features, dtype=np.float64)
    total = feats.shape[0]
    if not 0 <= query < total:
        raise ValueError(f"query index {query} out of range")
    if not 1 <= n <= total - 1:
        raise ValueError(f"n={n} must be in [1, {total - 1}]")
    d = np.linalg.norm(feats - feats[query], axis=1)
    d[query] = np.inf
    order = np.lexsort((np.arange(total), d))[:n]
    return NeighborSet(query, order, d[order])


def knn_search_all(features, n: int):
    """Neighbor lists for every feature at once: (indices, distances) arrays
    of shape (N, n), ascending distance, self excluded, ties toward lower
    index inside the selected set.

    Distances come from the expanded form |x|^2 + |y|^2 - 2 x.y evaluated
    with blocked matrix products (float32 for large sets), which is what
    makes dense self-matching affordable; boundary ties of the value
    partition are fractionally platform-dependent but run-deterministic.
    """
    feats = np.asarray(features)
    total = feats.shape[0]
    if not 1 <= n <= total - 1:
        raise ValueError(f"n={n} must be in [1, {total - 1}]")
    work = feats.astype(np.float64 if total <= 4096 else np.float32)
    sq = np.einsum("ij,ij->i", work, work)
    idx_out = np.empty((total, n), dtype=np.int64)
    dist_out = np.empty((total, n))
    chunk = max(1, min(512, int(2e8 // max(total, 1))))
    for s in range(0, total, chunk):
        e = min(s + chunk, total)
        gram = work[s:e] @ work.T
        d2 = sq[s:e, None] + sq[None, :] - 2.0 * gram
        d2[np.arange(e - s), np.arange(s, e)] = np.inf
        np.maximum(d2, 0.0, out=d2)
        rows = np.arange(e - s)[:, None]
        if n == total - 1:
            # full row requested: one stable sort already breaks ties toward
            # the lower candidate index, skipping the partition+lexsort pass
            sel = np.argsort(d2, axis=1, kind="stable")[:, :n]
        else:
            part = np.argpartition(d2, n - 1, axis=1)[:, :n]
            vals = d2[rows, part]
            order = np.lexsort((part, vals), axis=1)
            sel = part[rows, order]
        idx_out[s:e] = sel
        dist_out[s:e] = np.sqrt(d2[rows, sel].astype(np.float64))
    return idx_out, dist_out


def test_2nn(ns: NeighborSet, cfg: MatchConfig):
    """Ratio test: emit the nearest neighbor iff d1/d2 < threshold."""
    d = ns.distances
    if len(d) < 2:
        return []
    return [0] if _ratio(d[0], d[1]) < cfg.ratio_threshold else []


def test_g2nn(ns: NeighborSet, cfg: MatchConfig):
    """Forward generalized ratio scan.

    Walks i = 1..n-1 over consecutive distance ratios and stops at the first
    failure; all neighbors before the failing position are emitted. A failure
    at the first ratio emits nothing, which is what starves this test on
    multiple duplication (the leading distances tie, d1/d2 ~ 1).
    """
    d = ns.distances
    emitted = []
    for j in range(len(d) - 1):
        if _ratio(d[j], d[j + 1]) >= cfg.ratio_threshold:
            return emitted
        emitted.append(j)
    return emitted


def test_rg2nn(ns: NeighborSet, cfg: MatchConfig):
    """Reversed generalized ratio scan.

    Walks ratios from the far end toward the query; the first passing ratio
    at 1-based position k emits neighbors 1..k-1. Robust to multiple
    duplication but pays a nearly full scan per keypoint on unmatchable
    queries, which is exactly its cost penalty.
    """
    d = ns.distances
    for j in range(len(d) - 1, 0, -1):
        if _ratio(d[j - 1], d[j]) < cfg.ratio_threshold:
            return list(range(j))
    return []


def test_i2nn(ns: NeighborSet, positions, cfg: MatchConfig):
    """Two-branch test against the two nearest neighbors.

    Branch one is the plain ratio test plus a spatial guard (neighbors
    closer than min_spatial_distance px are ignored as trivial). Branch two
    fires only when branch one failed: if even the second distance is below
    abs_threshold the query sits in a region duplicated at least twice, and
    both neighbors are emitted. Branches are mutually exclusive.
    """
    d = ns.distances
    if len(d) < 2:
        return []
    p0 = positions[ns.query]
    sep1 = float(np.hypot(*(positions[ns.indices[0]] - p0)))
    if _ratio(d[0], d[1]) <= cfg.ratio_threshold and sep1 >= cfg.min_spatial_distance:
        return [0]
    sep2 = float(np.hypot(*(positions[ns.indices[1]] - p0)))
    if (d[1] <= cfg.abs_threshold and sep1 >= cfg.min_spatial_distance
            and sep2 >= cfg.min_spatial_distance):
        return [0, 1]
    return []


def _scan_prefix_lengths(dist, cfg: MatchConfig) -> np.ndarray:
    """Emitted-prefix length per neighbor row for the scanning strategies.

    Consecutive-ratio passes (zero denominators pass, as in _ratio) feed
    either the forward scan, whose prefix ends at the first failure, or the
    reversed scan, whose prefix extends to the last pass.
    """
    num = dist[:, :-1]
    den = dist[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        passed = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0) \
            < cfg.ratio_threshold
    if cfg.strategy == "g2nn":
        return np.cumprod(passed, axis=1).sum(axis=1)
    rev = passed[:, ::-1]
    any_pass = rev.any(axis=1)
    width = passed.shape[1]
    return np.where(any_pass, width - np.argmax(rev, axis=1), 0)


def match_word_level(features, positions, cfg: MatchConfig = None,
                     moments=None):
    """Emit deduplicated match pairs over a feature set.

    `positions` is an (N, 2) array of keypoint (x, y) used by the i2nn
    spatial guard. When `moments` (complex moment matrices, one per feature)
    are given and phase verification is on, surviving pairs additionally
    need a coherent relative-rotation story between their moment phases.
    Pairs are canonical (a < b), deduplicated keeping the smallest distance,
    and sorted by (a, b).
    """
    cfg = cfg or MatchConfig()
    if cfg.strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {cfg.strategy!r}")
    feats = np.asarray(features)
    total = feats.shape[0]
    if total < 2:
        return []
    positions = np.asarray(positions, dtype=np.float64)

    # the pairwise tests look at two neighbors; the scanning tests walk the
    # whole sorted distance row unless explicitly capped, which is where
    # their cost penalty comes from
    if cfg.strategy in ("2nn", "i2nn"):
        k = 2
    else:
        k = cfg.n_neighbors if cfg.n_neighbors > 0 else total - 1
    k = min(k, total - 1)
    idx, dist = knn_search_all(feats, k)

    best = {}
    if cfg.strategy in ("g2nn", "rg2nn") and k >= 4:
        # the scanning tests reduce to a prefix length per row, which the
        # whole distance matrix yields at once; semantics mirror the
        # per-query functions exactly (cross-checked in the tests)
        lengths = _scan_prefix_lengths(dist, cfg)
        for q in np.flatnonzero(lengths):
            for e in range(lengths[q]):
                other = int(idx[q, e])
                key = (q, other) if q < other else (other, q)
                d = float(dist[q, e])
                if key not in best or d < best[key]:
                    best[key] = d
    else:
        for q in range(total):
            ns = NeighborSet(q, idx[q], dist[q])
            if cfg.strategy == "2nn":
                emitted = test_2nn(ns, cfg)
            elif cfg.strategy == "g2nn":
                emitted = test_g2nn(ns, cfg)
            elif cfg.strategy == "rg2nn":
                emitted = test_rg2nn(ns, cfg)
            else:
                emitted = test_i2nn(ns, positions, cfg)
            for e in emitted:
                other = int(ns.indices[e])
                key = (q, other) if q < other else (other, q)
                d = float(ns.distances[e])
                if key not in best or d < best[key]:
                    best[key] = d

    pairs = [MatchPair(a, b, d) for (a, b), d in best.items()]
    pairs.sort(key=lambda p: (p.a, p.b))

    if cfg.phase_verify and moments is not None and pairs:
        ma = np.asarray([moments[p.a] for p in pairs])
        mb = np.asarray([moments[p.b] for p in pairs])
        _, cons = descriptor_mod.phase_signature_batch(ma, mb)
        pairs = [p for p, c in zip(pairs, cons) if c >= cfg.phase_consistency_min]
    return pairs
