"""Dense localization of duplicated regions from sparse match pairs.

Pairs surviving the matching stages are filtered for local geometric
support, clustered by the similarity transform they imply, and verified by
patch correlation. Each cluster yields an affine map between the copies,
estimated robustly. Two dense maps are then fused: a structural similarity
map between the image and its affinely warped self (high exactly where one
copy overlays the other), and a region-of-interest heat map spread from the
matched keypoints (high only where evidence actually lives). Their product,
thresholded, is the forgery mask.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import imaging, phrase as phrase_mod
from .descriptor import phase_signature_batch
from .matching import MatchPair, knn_search_all


@dataclass
class LocalizationConfig:
    # pair compatibility / clustering
    translation_tol: float = 0.025  # fraction of the image diagonal
    log_scale_tol: float = 0.05     # on log(sigma_b / sigma_a)
    rotation_tol: float = 0.075     # chord units on the unit circle
    min_cluster_size: int = 4
    support_neighbors: int = 5      # spatial neighbors checked for support
    # content verification
    zncc_patch: int = 16
    zncc_min: float = 0.3
    # robust affine estimation
    ransac_iters: int = 2000
    ransac_tol: float = 3.0         # px
    ransac_seed: int = 0
    # structural similarity
    ssim_sigma: float = 1.5         # 7x7 Gaussian window
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    # region-of-interest heat
    roi_dilation_radius: int = 50
    roi_decay: float = 0.001        # shared with the saliency kernel
    roi_norm: float = 25000.0
    splat_radius_multiplier: float = 6.0
    # fusion
    fusion_threshold: float = 0.4
    min_area_fraction: float = 0.0001
    closing_radius: int = 5


class LocalizationResult(NamedTuple):
    mask: np.ndarray          # fused forgery mask
    ssim_mask: np.ndarray     # similarity evidence alone
    roi_mask: np.ndarray      # keypoint evidence alone
    affines: list             # one 2x3 matrix per surviving cluster
    clusters: list            # surviving pairs, one list per cluster


def orient_pairs(pairs, keypoints):
    """Flip pairs so the displacement (dy, dx) is lexicographically
    non-negative; both members of a duplication then agree on direction."""
    kps = np.asarray(keypoints, dtype=np.float64)
    out = []
    for p in pairs:
        dy = kps[p.b, 1] - kps[p.a, 1]
        dx = kps[p.b, 0] - kps[p.a, 0]
        if dy < 0 or (dy == 0 and dx < 0):
            out.append(MatchPair(p.b, p.a, p.distance))
        else:
            out.append(p)
    return out


def pair_vectors(pairs, keypoints, image_shape, cfg: LocalizationConfig,
                 moments=None) -> np.ndarray:
    """Embed each oriented pair as a point whose Chebyshev unit ball is the
    compatibility region: displacement over the translation tolerance, log
    scale ratio over its tolerance, and (when moment matrices are supplied)
    the relative-rotation angle as a point on the circle scaled by the
    chord tolerance."""
    kps = np.asarray(keypoints, dtype=np.float64)
    a = np.array([p.a for p in pairs], dtype=np.int64)
    b = np.array([p.b for p in pairs], dtype=np.int64)
    diag = math.hypot(image_shape[0], image_shape[1])
    cols = [
        (kps[b, 0] - kps[a, 0]) / (cfg.translation_tol * diag),
        (kps[b, 1] - kps[a, 1]) / (cfg.translation_tol * diag),
        np.log(kps[b, 2] / kps[a, 2]) / cfg.log_scale_tol,
    ]
    if moments is not None:
        angles, _ = phase_signature_batch(
            np.asarray(moments)[a], np.asarray(moments)[b])
        cols.append(np.cos(angles) / cfg.rotation_tol)
        cols.append(np.sin(angles) / cfg.rotation_tol)
    return np.stack(cols, axis=1)


def filter_geometric(pairs, keypoints, image_shape,
                     cfg: LocalizationConfig = None, moments=None):
    """Keep pairs with local geometric support.

    A pair survives iff at least one of its spatially nearest pairs (by
    displacement midpoint) implies a compatible transform. Isolated pairs
    from coincidental texture repeats rarely have such an ally."""
    cfg = cfg or LocalizationConfig()
    n = len(pairs)
    if n < 2:
        return []
    oriented = orient_pairs(pairs, keypoints)
    vecs = pair_vectors(oriented, keypoints, image_shape, cfg, moments)
    kps = np.asarray(keypoints, dtype=np.float64)
    a = np.array([p.a for p in oriented])
    b = np.array([p.b for p in oriented])
    mids = (kps[a, :2] + kps[b, :2]) / 2.0
    k = min(cfg.support_neighbors, n - 1)
    idx, _ = knn_search_all(mids, k)
    cheb = np.abs(vecs[:, None, :] - vecs[idx]).max(axis=2)
    keep = (cheb <= 1.0).any(axis=1)
    return [p for p, k_ in zip(oriented, keep) if k_]


class _DSU:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def cluster_pairs(pairs, keypoints, image_shape,
                  cfg: LocalizationConfig = None, moments=None):
    """Single-linkage clustering of pairs in transform space.

    Pairs whose embedded vectors sit within Chebyshev distance 1 are linked;
    connected components of at least min_cluster_size survive. Returns
    (oriented_pairs, clusters) with clusters as sorted index lists into the
    oriented pair list, ordered by their smallest member."""
    cfg = cfg or LocalizationConfig()
    if not pairs:
        return [], []
    oriented = orient_pairs(pairs, keypoints)
    vecs = pair_vectors(oriented, keypoints, image_shape, cfg, moments)
    tree = cKDTree(vecs)
    links = tree.query_pairs(r=1.0, p=np.inf, output_type="ndarray")
    dsu = _DSU(len(oriented))
    for i, j in links:
        dsu.union(int(i), int(j))
    groups = {}
    for i in range(len(oriented)):
        groups.setdefault(dsu.find(i), []).append(i)
    clusters = [sorted(g) for g in groups.values()
                if len(g) >= cfg.min_cluster_size]
    clusters.sort(key=lambda g: g[0])
    return oriented, clusters


def _lsq_affine(src, dst):
    """Least-squares 2x3 affine mapping src -> dst; None when degenerate."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    m = np.hstack([src, np.ones((len(src), 1))])
    try:
        sol, _, rank, _ = np.linalg.lstsq(m, dst, rcond=None)
    except np.linalg.LinAlgError:
        return None
    if rank < 3:
        return None
    return sol.T  # rows: [a11 a12 tx; a21 a22 ty]


def _apply_affine(affine, pts):
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ affine[:, :2].T + affine[:, 2]


def estimate_affine(src, dst, cfg: LocalizationConfig = None,
                    rng: Optional[np.random.Generator] = None):
    """RANSAC affine fit between matched point sets.

    Minimal 3-point samples, inliers within ransac_tol px, best model by
    inlier count then residual, refit by least squares on the inliers.
    Returns (2x3 affine, inlier mask) or (None, None) when no sample with
    at least 3 inliers exists."""
    cfg = cfg or LocalizationConfig()
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 3:
        return None, None
    rng = rng or np.random.default_rng(cfg.ransac_seed)
    best = None
    for _ in range(cfg.ransac_iters):
        pick = rng.choice(n, size=3, replace=False)
        m = np.hstack([src[pick], np.ones((3, 1))])
        if abs(np.linalg.det(m)) < 1e-9:
            continue
        sol = np.linalg.solve(m, dst[pick])
        aff = sol.T
        resid = np.linalg.norm(_apply_affine(aff, src) - dst, axis=1)
        inl = resid <= cfg.ransac_tol
        count = int(inl.sum())
        if count < 3:
            continue
        score = (count, -float(resid[inl].sum()))
        if best is None or score > best[0]:
            best = (score, inl)
    if best is None:
        return None, None
    inliers = best[1]
    aff = _lsq_affine(src[inliers], dst[inliers])
    if aff is None:
        return None, None
    return aff, inliers


def filter_content(img, pairs, keypoints, cfg: LocalizationConfig = None):
    """Verify pairs of one cluster by patch correlation.

    A provisional least-squares affine over the whole cluster maps a patch
    grid around each source keypoint onto its copy; the zero-normalized
    cross-correlation between the two sampled patches must reach zncc_min.
    Returns a boolean keep mask (all False when no affine exists)."""
    cfg = cfg or LocalizationConfig()
    kps = np.asarray(keypoints, dtype=np.float64)
    a = np.array([p.a for p in pairs])
    b = np.array([p.b for p in pairs])
    aff = _lsq_affine(kps[a, :2], kps[b, :2])
    if aff is None:
        return np.zeros(len(pairs), dtype=bool)
    side = cfg.zncc_patch
    off = np.arange(side) - (side - 1) / 2.0
    gx, gy = np.meshgrid(off, off)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)  # (side^2, 2)
    keep = np.zeros(len(pairs), dtype=bool)
    for i in range(len(pairs)):
        pa = kps[a[i], :2]
        src_pts = pa + grid
        dst_pts = _apply_affine(aff, src_pts)
        ref, ref_in = imaging.sample_bilinear(img, src_pts[:, 0], src_pts[:, 1])
        wrp, wrp_in = imaging.sample_bilinear(img, dst_pts[:, 0], dst_pts[:, 1])
        if not (ref_in.all() and wrp_in.all()):
            continue
        rc = ref - ref.mean()
        wc = wrp - wrp.mean()
        denom = math.sqrt(float((rc * rc).sum()) * float((wc * wc).sum()))
        if denom <= 0.0:
            continue
        keep[i] = float((rc * wc).sum()) / denom >= cfg.zncc_min
    return keep


def _invert_affine(affine):
    full = np.vstack([affine, [0.0, 0.0, 1.0]])
    return np.linalg.inv(full)[:2]


def warp_affine(img, affine, fill: float = 0.0):
    """Inverse-warp: output[p] = img[A^-1 p], bilinear, with a validity mask
    of pixels whose source lies inside the image."""
    inv = _invert_affine(affine)
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    src = _apply_affine(inv, pts)
    vals, inside = imaging.sample_bilinear(img, src[:, 0], src[:, 1], fill=fill)
    return vals.reshape(h, w), inside.reshape(h, w)


def _ssim_windows(x, y, cfg: LocalizationConfig):
    # 7-tap Gaussian window (sigma 1.5), separable, mirrored edges
    kern = imaging.gaussian_kernel_1d(cfg.ssim_sigma, truncate=2.0)

    def smooth(z):
        z = ndimage.correlate1d(z, kern, axis=0, mode="mirror")
        return ndimage.correlate1d(z, kern, axis=1, mode="mirror")

    mx = smooth(x)
    my = smooth(y)
    sxx = np.maximum(smooth(x * x) - mx * mx, 0.0)
    syy = np.maximum(smooth(y * y) - my * my, 0.0)
    sxy = smooth(x * y) - mx * my
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim_map(img, affine, cfg: LocalizationConfig = None) -> np.ndarray:
    """Pointwise max of the structural similarity between the image and its
    warp under the affine, computed in both directions so source and copy
    both light up. Pixels warped from outside the frame score 0.

    Window moments run in float32: the map only feeds thresholded fusion."""
    cfg = cfg or LocalizationConfig()
    imaging.validate_gray(img)
    img32 = np.ascontiguousarray(img, dtype=np.float32)
    out = np.zeros(img.shape, dtype=np.float32)
    for a in (affine, _invert_affine(affine)):
        warped, inside = warp_affine(img32, a)
        s = _ssim_windows(img32, warped.astype(np.float32), cfg)
        s[~inside] = 0.0
        np.maximum(out, s, out=out)
    return out.astype(np.float64)


def roi_stamp(keypoints, shape, cfg: LocalizationConfig = None) -> np.ndarray:
    """Count of keypoint support disks covering each pixel.

    Each keypoint marks the disk of radius sigma times the configured
    multiplier around its (rounded) position; overlapping disks add up.
    """
    cfg = cfg or LocalizationConfig()
    h, w = shape
    # float32 canvas: stamp counts are small integers, exact well below 2**24
    canvas = np.zeros((h, w), dtype=np.float32)
    kps = np.asarray(keypoints, dtype=np.float64)
    if not kps.size:
        return canvas
    radii = np.maximum(np.rint(kps[:, 2] * cfg.splat_radius_multiplier), 1)
    for r in np.unique(radii):
        r = int(r)
        ax = np.arange(-r, r + 1)
        dy, dx = np.meshgrid(ax, ax, indexing="ij")
        disk = dy * dy + dx * dx <= r * r
        oy = dy[disk][None, :]
        ox = dx[disk][None, :]
        sel = kps[radii == r]
        cy = np.rint(sel[:, 1]).astype(np.int64)[:, None] + oy
        cx = np.rint(sel[:, 0]).astype(np.int64)[:, None] + ox
        ok = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
        np.add.at(canvas, (cy[ok], cx[ok]), 1.0)
    return canvas


def normalize_heat(canvas, cfg: LocalizationConfig = None) -> np.ndarray:
    """Scale accumulated evidence by the fixed norm and clamp into [0, 1]."""
    cfg = cfg or LocalizationConfig()
    return np.minimum(np.asarray(canvas, dtype=np.float64) / cfg.roi_norm, 1.0)


def roi_heat_map(keypoints, shape, cfg: LocalizationConfig = None) -> np.ndarray:
    """Evidence density around matched keypoints, normalized to [0, 1].

    Each keypoint stamps a disk of its descriptor support radius; the stamp
    field is thickened by grayscale disk dilation (decomposed into one
    horizontal running maximum per row offset), diffused with the shared
    squared-exponential kernel, and clamped by the fixed normalization."""
    cfg = cfg or LocalizationConfig()
    canvas = roi_stamp(keypoints, shape, cfg)
    if canvas.any():
        kernel = phrase_mod.saliency_kernel(cfg.roi_decay)
        rad = cfg.roi_dilation_radius
        # the stamp field is zero outside the matched neighborhoods, and
        # dilation plus convolution have finite reach, so both run on the
        # bounding box of the stamps and paste back exactly
        reach = rad + kernel.shape[0] // 2
        sy, sx = imaging.mask_bbox(canvas > 0, reach)
        crop = canvas[sy, sx]
        if rad > 0:
            dilated = np.zeros_like(crop)
            for dy in range(-rad, rad + 1):
                half = int(math.floor(math.sqrt(rad * rad - dy * dy)))
                row_max = ndimage.maximum_filter1d(
                    crop, size=2 * half + 1, axis=1, mode="constant", cval=0.0)
                if dy > 0:
                    dilated[dy:] = np.maximum(dilated[dy:], row_max[:-dy])
                elif dy < 0:
                    dilated[:dy] = np.maximum(dilated[:dy], row_max[-dy:])
                else:
                    np.maximum(dilated, row_max, out=dilated)
            crop = dilated
        out = np.zeros_like(canvas)
        out[sy, sx] = imaging.convolve_fft(crop, kernel)
        canvas = out
    return normalize_heat(canvas, cfg)


def fuse_evidence(rho, gamma, cfg: LocalizationConfig = None) -> np.ndarray:
    """Pointwise product of similarity and keypoint evidence, thresholded.

    The boundary is inclusive: product exactly at the threshold is kept.
    """
    cfg = cfg or LocalizationConfig()
    return np.asarray(rho) * np.asarray(gamma) >= cfg.fusion_threshold


def _postprocess(mask, cfg: LocalizationConfig):
    min_px = max(1, int(round(cfg.min_area_fraction * mask.size)))
    cleaned = imaging.remove_small_components(mask, min_px)
    return imaging.closing(cleaned, cfg.closing_radius)


def localize(img, pairs, keypoints, cfg: LocalizationConfig = None,
             moments=None, recovery_pairs=None) -> LocalizationResult:
    """Full localization from match pairs to a dense forgery mask.

    Stages: geometric support filter, transform clustering, per-cluster
    content verification and robust affine fit, dense similarity map (max
    over clusters), keypoint heat map over all surviving pairs, fusion by
    product thresholding, then small-component removal and closing. The
    similarity-only and heat-only masks are returned for ablation.

    `recovery_pairs` is an optional larger pool (typically the word-level
    matches when `pairs` are the phrase-level ones) re-screened against each
    verified transform; pairs that agree within the RANSAC tolerance are
    adopted. This restores the full extent of copies whose transform field
    fragments the clusters (large rotations, rescales) and thickens the
    keypoint evidence when the high-precision pair set is sparse."""
    cfg = cfg or LocalizationConfig()
    imaging.validate_gray(img)
    shape = img.shape
    empty = np.zeros(shape, dtype=bool)

    supported = filter_geometric(pairs, keypoints, shape, cfg, moments)
    oriented, clusters = cluster_pairs(supported, keypoints, shape, cfg, moments)

    kps = np.asarray(keypoints, dtype=np.float64)
    rho = np.zeros(shape, dtype=np.float64)
    affines = []
    kept_clusters = []
    survivors = []
    pool = orient_pairs(recovery_pairs, keypoints) if recovery_pairs else oriented
    all_a = np.array([p.a for p in pool], dtype=np.int64)
    all_b = np.array([p.b for p in pool], dtype=np.int64)
    for members in clusters:
        cluster = [oriented[i] for i in members]
        keep = filter_content(img, cluster, keypoints, cfg)
        cluster = [p for p, k in zip(cluster, keep) if k]
        if len(cluster) < cfg.min_cluster_size:
            continue
        src = kps[[p.a for p in cluster], :2]
        dst = kps[[p.b for p in cluster], :2]
        aff, inl = estimate_affine(src, dst, cfg)
        if aff is None:
            continue
        # transforms whose offset varies quickly across the region (large
        # rotation or rescale) fragment into many small clusters, each seeing
        # only a patch of the copy; re-collecting inliers under the fitted
        # map from the whole pool restores the full extent
        if pool:
            fwd = _apply_affine(aff, kps[all_a, :2])
            err_f = np.hypot(*(fwd - kps[all_b, :2]).T)
            bwd = _apply_affine(aff, kps[all_b, :2])
            err_b = np.hypot(*(bwd - kps[all_a, :2]).T)
            take_f = err_f <= cfg.ransac_tol
            take_b = err_b <= cfg.ransac_tol
            take = take_f | take_b
            if take.sum() > len(cluster):
                cluster = [pool[i] for i in np.flatnonzero(take)]
                src = np.where(take_f[take, None], kps[all_a[take], :2],
                               kps[all_b[take], :2])
                dst = np.where(take_f[take, None], kps[all_b[take], :2],
                               kps[all_a[take], :2])
                refit = _lsq_affine(src, dst)
                if refit is not None:
                    aff = refit
        if any(np.abs(aff[:, :2] - prev[:, :2]).max() < 0.02
               and np.abs(aff[:, 2] - prev[:, 2]).max() < 2.0
               for prev in affines):
            continue
        affines.append(aff)
        kept_clusters.append(cluster)
        survivors.extend(cluster)
        np.maximum(rho, ssim_map(img, aff, cfg), out=rho)

    if not affines:
        return LocalizationResult(empty, empty.copy(), empty.copy(), [], [])

    matched_ids = sorted({i for p in survivors for i in (p.a, p.b)})
    gamma = roi_heat_map(kps[matched_ids], shape, cfg)

    fused = _postprocess(fuse_evidence(rho, gamma, cfg), cfg)
    ssim_only = _postprocess(rho >= cfg.fusion_threshold, cfg)
    roi_only = _postprocess(gamma >= cfg.fusion_threshold, cfg)
    return LocalizationResult(fused, ssim_only, roi_only, affines, kept_clusters)
