"""Scale-space keypoint detection tuned for copy-move evidence density.

Difference-of-Gaussians detector in the classical mold, with two deliberate
departures: the input is first resampled so its long edge reaches a fixed
target (small images are up-sampled, large ones left alone), and the contrast
gate is removed by default (contrast_threshold = 0) so that keypoints survive
in smooth regions. The edge-response filter stays, since elongated ridge
responses localize too poorly to match.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.ndimage

from . import imaging

logger = logging.getLogger(__name__)


class Keypoint(NamedTuple):
    x: float
    y: float
    sigma: float
    response: float = 0.0


@dataclass
class DetectorConfig:
    contrast_threshold: float = 0.0     # 0 keeps everything but exact-zero responses
    edge_ratio: float = 10.0            # principal-curvature ratio gate
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    assumed_blur: float = 0.5           # blur already present in the resampled input
    normalization_target: int = 3000    # long edge after resampling, px
    border: int = 5                     # candidate exclusion margin per octave, px
    max_refine_steps: int = 5
    max_octaves: Optional[int] = None


def scale_factor(height: int, width: int, target: int = 3000) -> float:
    """Up-sampling factor that brings the long edge to `target` pixels.

    Images whose long edge already meets the target are left at native
    resolution (factor 1); smaller images are stretched by target / long_edge.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"bad image size {height}x{width}")
    long_edge = max(height, width)
    if long_edge >= target:
        return 1.0
    return target / long_edge


def num_octaves(height: int, width: int) -> int:
    """Octave count floor(log2(min dim)) - 2, at least 1."""
    short = min(height, width)
    return max(int(np.floor(np.log2(short))) - 2, 1)


def gaussian_pyramid(img, cfg: DetectorConfig):
    """List of per-octave stacks of progressively blurred images.

    Every octave holds scales_per_octave + 3 levels; level l carries total
    blur base_sigma * 2^(l / S) relative to the octave frame. The next octave
    starts from the level whose blur equals 2 * base_sigma, decimated 2x.
    """
    s = cfg.scales_per_octave
    k = 2.0 ** (1.0 / s)
    base = np.asarray(img, dtype=np.float32)

    # lift the assumed input blur up to base_sigma
    lead = np.sqrt(max(cfg.base_sigma ** 2 - cfg.assumed_blur ** 2, 0.01))
    current = imaging.gaussian_blur(base, lead)

    n_oct = num_octaves(*base.shape)
    if cfg.max_octaves is not None:
        n_oct = min(n_oct, cfg.max_octaves)

    sigmas = cfg.base_sigma * k ** np.arange(s + 3)
    increments = np.sqrt(np.maximum(sigmas[1:] ** 2 - sigmas[:-1] ** 2, 0.0))

    octaves = []
    for _ in range(n_oct):
        levels = [current]
        for inc in increments:
            levels.append(imaging.gaussian_blur(levels[-1], inc))
        octaves.append(np.stack(levels))
        current = levels[s][::2, ::2]
        # frames too small to host a candidate inside the border add nothing
        if min(current.shape) < 2 * cfg.border + 3:
            break
    return octaves


def _difference_of_gaussians(gauss_stack):
    return gauss_stack[1:] - gauss_stack[:-1]


_CUBE_OFF = np.stack(np.meshgrid(
    np.arange(-1, 2), np.arange(-1, 2), np.arange(-1, 2), indexing="ij"),
    axis=-1).reshape(27, 3)
_CENTER_IDX = 13  # (0, 0, 0) offset position in _CUBE_OFF


def _gather_cubes(dog, l, i, j):
    """(N, 27) neighborhoods around candidate voxels of a (L, H, W) stack."""
    ll = l[:, None] + _CUBE_OFF[:, 0][None, :]
    ii = i[:, None] + _CUBE_OFF[:, 1][None, :]
    jj = j[:, None] + _CUBE_OFF[:, 2][None, :]
    return dog[ll, ii, jj]


def _local_extrema(dog, border):
    """Strict 26-neighbor extrema of the DoG stack, inner layers only.

    A cheap separable min/max filter proposes candidates; strictness (and the
    rejection of exact-zero responses) is then verified on gathered
    neighborhoods, which keeps plateau pixels out.
    """
    n_layers = dog.shape[0]
    mx = scipy.ndimage.maximum_filter(dog, size=3, mode="nearest")
    mn = scipy.ndimage.minimum_filter(dog, size=3, mode="nearest")
    cand = ((dog == mx) | (dog == mn)) & (dog != 0)
    cand[0] = cand[-1] = False
    cand[:, :border, :] = cand[:, -border:, :] = False
    cand[:, :, :border] = cand[:, :, -border:] = False
    l, i, j = np.nonzero(cand)
    if l.size == 0:
        return l, i, j
    cubes = _gather_cubes(dog, l, i, j)
    center = cubes[:, _CENTER_IDX]
    others = np.delete(cubes, _CENTER_IDX, axis=1)
    strict = (center[:, None] > others).all(axis=1) | (center[:, None] < others).all(axis=1)
    return l[strict], i[strict], j[strict]


def _derivatives(cubes):
    """Gradient and Hessian of the quadratic DoG model at the cube centers.

    cubes is (N, 27) ordered (dl, di, dj) fastest-last; unit grid spacing.
    """
    c = cubes.reshape(-1, 3, 3, 3).astype(np.float64)
    g = np.stack([
        0.5 * (c[:, 2, 1, 1] - c[:, 0, 1, 1]),
        0.5 * (c[:, 1, 2, 1] - c[:, 1, 0, 1]),
        0.5 * (c[:, 1, 1, 2] - c[:, 1, 1, 0]),
    ], axis=1)
    center = c[:, 1, 1, 1]
    hll = c[:, 2, 1, 1] + c[:, 0, 1, 1] - 2 * center
    hii = c[:, 1, 2, 1] + c[:, 1, 0, 1] - 2 * center
    hjj = c[:, 1, 1, 2] + c[:, 1, 1, 0] - 2 * center
    hli = 0.25 * (c[:, 2, 2, 1] - c[:, 2, 0, 1] - c[:, 0, 2, 1] + c[:, 0, 0, 1])
    hlj = 0.25 * (c[:, 2, 1, 2] - c[:, 2, 1, 0] - c[:, 0, 1, 2] + c[:, 0, 1, 0])
    hij = 0.25 * (c[:, 1, 2, 2] - c[:, 1, 2, 0] - c[:, 1, 0, 2] + c[:, 1, 0, 0])
    hess = np.empty((c.shape[0], 3, 3))
    hess[:, 0, 0] = hll
    hess[:, 1, 1] = hii
    hess[:, 2, 2] = hjj
    hess[:, 0, 1] = hess[:, 1, 0] = hli
    hess[:, 0, 2] = hess[:, 2, 0] = hlj
    hess[:, 1, 2] = hess[:, 2, 1] = hij
    return g, hess, center


def _solve_offsets(g, hess):
    """Batch solve H @ delta = -g via the adjugate; singular rows get NaN."""
    a = hess
    cof00 = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
    cof01 = a[:, 1, 2] * a[:, 2, 0] - a[:, 1, 0] * a[:, 2, 2]
    cof02 = a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]
    det = a[:, 0, 0] * cof00 + a[:, 0, 1] * cof01 + a[:, 0, 2] * cof02
    ok = np.abs(det) > 1e-30
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), np.nan)
    adj = np.empty_like(a)
    adj[:, 0, 0] = cof00
    adj[:, 1, 0] = cof01
    adj[:, 2, 0] = cof02
    adj[:, 0, 1] = a[:, 0, 2] * a[:, 2, 1] - a[:, 0, 1] * a[:, 2, 2]
    adj[:, 1, 1] = a[:, 0, 0] * a[:, 2, 2] - a[:, 0, 2] * a[:, 2, 0]
    adj[:, 2, 1] = a[:, 0, 1] * a[:, 2, 0] - a[:, 0, 0] * a[:, 2, 1]
    adj[:, 0, 2] = a[:, 0, 1] * a[:, 1, 2] - a[:, 0, 2] * a[:, 1, 1]
    adj[:, 1, 2] = a[:, 0, 2] * a[:, 1, 0] - a[:, 0, 0] * a[:, 1, 2]
    adj[:, 2, 2] = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    delta = -np.einsum("nij,nj->ni", adj, g) * inv_det[:, None]
    return delta


def _refine_octave(dog, l, i, j, cfg: DetectorConfig):
    """Iterative sub-voxel refinement of extrema candidates.

    Returns arrays (layer+dl, row+di, col+dj, refined response) for the
    candidates that converge inside the valid volume and survive the contrast
    and edge-response tests.
    """
    n_layers, h, w = dog.shape
    border = cfg.border
    l, i, j = (a.astype(np.int64).copy() for a in (l, i, j))
    final_pos = np.full((l.size, 3), np.nan)
    final_val = np.full(l.size, np.nan)
    final_lij = np.zeros((l.size, 3), dtype=np.int64)
    active = np.arange(l.size)

    for _ in range(cfg.max_refine_steps):
        if active.size == 0:
            break
        cubes = _gather_cubes(dog, l[active], i[active], j[active])
        g, hess, center = _derivatives(cubes)
        delta = _solve_offsets(g, hess)
        bad = ~np.isfinite(delta).all(axis=1)
        settled = (np.abs(delta) < 0.5).all(axis=1) & ~bad

        idx = active[settled]
        final_pos[idx, 0] = l[idx] + delta[settled, 0]
        final_pos[idx, 1] = i[idx] + delta[settled, 1]
        final_pos[idx, 2] = j[idx] + delta[settled, 2]
        final_val[idx] = center[settled] + 0.5 * np.einsum(
            "ni,ni->n", g[settled], delta[settled])
        final_lij[idx, 0] = l[idx]
        final_lij[idx, 1] = i[idx]
        final_lij[idx, 2] = j[idx]

        moving = active[~settled & ~bad]
        if moving.size == 0:
            active = np.empty(0, dtype=np.int64)
            break
        step = np.rint(delta[~settled & ~bad]).astype(np.int64)
        l[moving] += step[:, 0]
        i[moving] += step[:, 1]
        j[moving] += step[:, 2]
        inb = ((l[moving] >= 1) & (l[moving] <= n_layers - 2)
               & (i[moving] >= border) & (i[moving] <= h - border - 1)
               & (j[moving] >= border) & (j[moving] <= w - border - 1))
        active = moving[inb]

    done = np.isfinite(final_val)
    pos = final_pos[done]
    val = final_val[done]
    lij = final_lij[done]

    # contrast: with threshold 0 only exact-zero responses fall out
    keep = (np.abs(val) >= cfg.contrast_threshold) & (val != 0)
    pos, val, lij = pos[keep], val[keep], lij[keep]
    if pos.shape[0] == 0:
        return pos, val

    # edge response: principal-curvature ratio of the spatial 2x2 Hessian
    lf, ifn, jf = lij[:, 0], lij[:, 1], lij[:, 2]
    c = dog[lf, ifn, jf].astype(np.float64)
    hii = dog[lf, ifn + 1, jf] + dog[lf, ifn - 1, jf] - 2 * c
    hjj = dog[lf, ifn, jf + 1] + dog[lf, ifn, jf - 1] - 2 * c
    hij = 0.25 * (dog[lf, ifn + 1, jf + 1] - dog[lf, ifn + 1, jf - 1]
                  - dog[lf, ifn - 1, jf + 1] + dog[lf, ifn - 1, jf - 1])
    tr = hii + hjj
    det = hii * hjj - hij * hij
    r = cfg.edge_ratio
    keep = (det > 0) & (r * tr * tr < (r + 1) ** 2 * det)
    return pos[keep], val[keep]


def detect_in_frame(img, cfg: DetectorConfig) -> np.ndarray:
    """Detect keypoints in the frame of `img` itself (no resampling).

    Returns an (N, 4) array of rows (x, y, sigma, response) sorted by
    (y, x, sigma).
    """
    octaves = gaussian_pyramid(img, cfg)
    s = cfg.scales_per_octave
    rows = []
    for o, stack in enumerate(octaves):
        dog = _difference_of_gaussians(stack)
        l, i, j = _local_extrema(dog, cfg.border)
        if l.size == 0:
            continue
        pos, val = _refine_octave(dog, l, i, j, cfg)
        if pos.shape[0] == 0:
            continue
        scale = 2.0 ** o
        x = pos[:, 2] * scale
        y = pos[:, 1] * scale
        sigma = cfg.base_sigma * 2.0 ** (pos[:, 0] / s) * scale
        rows.append(np.column_stack([x, y, sigma, val]))
        logger.debug("octave %d: %d keypoints", o, pos.shape[0])

    if not rows:
        return np.empty((0, 4))
    kp = np.concatenate(rows)

    # collapse duplicates that refined to the same place at the same scale
    key = np.round(kp[:, :3] / 1e-2).astype(np.int64)
    _, uniq = np.unique(key, axis=0, return_index=True)
    kp = kp[np.sort(uniq)]

    order = np.lexsort((kp[:, 2], kp[:, 0], kp[:, 1]))
    return kp[order]


def detect_keypoints(img, cfg: DetectorConfig = None) -> list:
    """Full detection contract: resample to the normalization target, run the
    scale-space detector, then map positions and scales back to the original
    frame. Returns Keypoint tuples sorted by (y, x, sigma)."""
    cfg = cfg or DetectorConfig()
    img = imaging.validate_gray(img)
    factor = scale_factor(img.shape[0], img.shape[1], cfg.normalization_target)
    frame = imaging.resize_bicubic(img, factor) if factor != 1.0 else img
    kp = detect_in_frame(frame, cfg)
    if factor != 1.0:
        kp = kp.copy()
        kp[:, :3] /= factor
        order = np.lexsort((kp[:, 2], kp[:, 0], kp[:, 1]))
        kp = kp[order]
    return [Keypoint(*row) for row in kp]


def keypoints_to_array(kps) -> np.ndarray:
    """(N, 4) float array view of a Keypoint list."""
    if len(kps) == 0:
        return np.empty((0, 4))
    return np.asarray([(k.x, k.y, k.sigma, k.response) for k in kps], dtype=np.float64)
