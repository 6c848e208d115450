"""Rotation-invariant moment descriptors over keypoint-scaled disks.

Each keypoint is described by complex moments of the image restricted to a
disk of radius sigma * radius_multiplier, resampled onto a fixed grid:

    M(n, m) = sum_disk f(r, theta) * exp(i 2 pi n r) * exp(-i m theta) * dA

with r the radius normalized to [0, 1]. Rotating the patch multiplies
M(n, m) by a unit phase exp(-i m alpha), so the magnitude matrix is the
rotation-invariant matching feature and the phases carry the relative
rotation angle between two matched patches.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import imaging
from .keypoints import Keypoint


class RegionOutsideImage(ValueError):
    """Keypoint region does not intersect the image; caller should drop it."""


@dataclass
class DescriptorConfig:
    n_max: int = 4
    m_max: int = 4
    radius_multiplier: float = 6.0
    resample_size: int = 32

    @property
    def dim(self) -> int:
        return (self.n_max + 1) * (self.m_max + 1)


class Descriptor(NamedTuple):
    moments: np.ndarray      # (n_max+1, m_max+1) complex
    magnitudes: np.ndarray   # (dim,) float, unit L2 norm
    keypoint: Keypoint


PHASE_GRID = 360  # angular resolution of the rotation-consistency search


def _disk_grid(size: int):
    """Pixel-center sample positions of a size x size grid on [-1, 1]^2,
    restricted to the unit disk."""
    t = (np.arange(size) + 0.5) * (2.0 / size) - 1.0
    vv, uu = np.meshgrid(t, t, indexing="ij")
    mask = uu ** 2 + vv ** 2 <= 1.0
    return uu[mask], vv[mask], mask


def _basis(cfg: DescriptorConfig):
    """(n_pixels, dim) complex kernel matrix over the disk samples."""
    uu, vv, _ = _disk_grid(cfg.resample_size)
    r = np.sqrt(uu ** 2 + vv ** 2)
    theta = np.arctan2(vv, uu)
    d_area = (2.0 / cfg.resample_size) ** 2
    n = np.arange(cfg.n_max + 1)
    m = np.arange(cfg.m_max + 1)
    radial = np.exp(2j * np.pi * np.outer(r, n))            # (P, n_max+1)
    angular = np.exp(-1j * np.outer(theta, m))              # (P, m_max+1)
    kernel = radial[:, :, None] * angular[:, None, :] * d_area
    return kernel.reshape(r.size, -1)


_BASIS_CACHE = {}


def _cached_basis(cfg: DescriptorConfig):
    key = (cfg.n_max, cfg.m_max, cfg.resample_size)
    if key not in _BASIS_CACHE:
        uu, vv, _ = _disk_grid(cfg.resample_size)
        _BASIS_CACHE[key] = (uu, vv, _basis(cfg))
    return _BASIS_CACHE[key]


def describe_batch(img, kp_xys, cfg: DescriptorConfig = None):
    """Describe many keypoints at once.

    kp_xys is an (N, >=3) array of (x, y, sigma, ...) rows in the frame of
    `img`. Returns (moments, magnitudes, valid): moments is
    (N, n_max+1, m_max+1) complex, magnitudes (N, dim) with unit rows, and
    valid flags keypoints whose region intersects the image. Samples falling
    outside the frame contribute 0.
    """
    cfg = cfg or DescriptorConfig()
    img = np.asarray(img, dtype=np.float64)
    kp_xys = np.asarray(kp_xys, dtype=np.float64)
    n = kp_xys.shape[0]
    uu, vv, basis = _cached_basis(cfg)
    h, w = img.shape

    moments = np.zeros((n, cfg.n_max + 1, cfg.m_max + 1), dtype=np.complex128)
    mags = np.zeros((n, cfg.dim))
    radius = kp_xys[:, 2] * cfg.radius_multiplier
    valid = ((kp_xys[:, 0] + radius >= 0) & (kp_xys[:, 0] - radius <= w - 1)
             & (kp_xys[:, 1] + radius >= 0) & (kp_xys[:, 1] - radius <= h - 1)
             & (radius > 0))

    chunk = 4096
    idx_all = np.nonzero(valid)[0]
    for s in range(0, idx_all.size, chunk):
        idx = idx_all[s:s + chunk]
        xs = kp_xys[idx, 0, None] + radius[idx, None] * uu[None, :]
        ys = kp_xys[idx, 1, None] + radius[idx, None] * vv[None, :]
        samples, _ = imaging.sample_bilinear(img, xs, ys, fill=0.0)
        mom = samples @ basis
        moments[idx] = mom.reshape(-1, cfg.n_max + 1, cfg.m_max + 1)
        a = np.abs(mom)
        norms = np.linalg.norm(a, axis=1)
        nz = norms > 1e-12
        a[nz] /= norms[nz, None]
        mags[idx] = a
    return moments, mags, valid


def describe(img, kp: Keypoint, cfg: DescriptorConfig = None) -> Descriptor:
    """Describe a single keypoint; raises RegionOutsideImage when the disk
    lies entirely off the frame."""
    cfg = cfg or DescriptorConfig()
    arr = np.array([[kp.x, kp.y, kp.sigma]])
    moments, mags, valid = describe_batch(img, arr, cfg)
    if not valid[0]:
        raise RegionOutsideImage(
            f"keypoint ({kp.x:.1f}, {kp.y:.1f}, sigma={kp.sigma:.2f}) outside image")
    return Descriptor(moments[0], mags[0], kp)


def feature_distance(a, b) -> float:
    """Euclidean distance between two magnitude features."""
    va = a.magnitudes if isinstance(a, Descriptor) else np.asarray(a)
    vb = b.magnitudes if isinstance(b, Descriptor) else np.asarray(b)
    if va.shape != vb.shape:
        raise ValueError(f"feature dimensions differ: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))


def _phase_entries(cfg: DescriptorConfig):
    """Flat indices and harmonic orders of the m >= 1 moment entries."""
    m = np.tile(np.arange(cfg.m_max + 1), cfg.n_max + 1)
    sel = np.nonzero(m >= 1)[0]
    return sel, m[sel]


PHASE_LOCAL_HALFWIN = 0.4   # rad, refinement window around the first-harmonic estimate
PHASE_LOCAL_STEPS = 33


def phase_signature_batch(moments_a, moments_b, cfg: DescriptorConfig = None):
    """Relative rotation angle and phase-consistency score for moment pairs.

    For a true rotation the phase difference of entry (n, m) is proportional
    to m, so every entry votes for a rotation angle. The angle is first taken
    as the weighted circular mean of the first-harmonic (m = 1) votes, whose
    period is a full turn and therefore unambiguous, then refined locally by
    maximizing the all-entry weighted concentration

        C(alpha) = | sum w * exp(i (delta(n, m) + m * alpha)) | / sum w.

    Scoring all entries at an angle fixed by the first harmonic keeps the
    statistic honest: unrelated patches cannot inflate C by searching the
    whole circle. Weights are the smaller of the paired entry magnitudes.
    Returns (angles, consistency); degenerate pairs (all m >= 1 magnitudes
    ~ 0) get (0, 0). Angles follow the convention that a quarter-turn
    np.rot90 of the patch reports pi/2.
    """
    cfg = cfg or DescriptorConfig()
    ma = np.asarray(moments_a).reshape(len(moments_a), -1)
    mb = np.asarray(moments_b).reshape(len(moments_b), -1)
    sel, m_ord = _phase_entries(cfg)
    a = ma[:, sel]
    b = mb[:, sel]
    w = np.minimum(np.abs(a), np.abs(b))
    wsum = w.sum(axis=1)
    ok = w.max(axis=1, initial=0.0) >= 1e-9    # degenerate: all m >= 1 entries ~ 0

    # unit phasors of the observed per-entry phase difference
    pa = np.where(np.abs(a) > 0, a / np.where(np.abs(a) > 0, np.abs(a), 1), 0)
    pb = np.where(np.abs(b) > 0, b / np.where(np.abs(b) > 0, np.abs(b), 1), 0)
    diff = pb * np.conj(pa)                       # exp(i delta)

    first = m_ord == 1
    g1 = (w[:, first] * diff[:, first]).sum(axis=1)
    alpha0 = -np.angle(g1)
    # if the first harmonic carries no energy, fall back to a coarse global scan
    weak = np.abs(g1) <= 1e-12
    if weak.any():
        alphas = np.arange(PHASE_GRID) * (2 * np.pi / PHASE_GRID)
        rot = np.exp(1j * np.outer(m_ord, alphas))
        conc = np.abs((w[weak] * diff[weak]) @ rot)
        alpha0[weak] = alphas[np.argmax(conc, axis=1)]

    local = alpha0[:, None] + np.linspace(
        -PHASE_LOCAL_HALFWIN, PHASE_LOCAL_HALFWIN, PHASE_LOCAL_STEPS)[None, :]
    phase = np.exp(1j * m_ord[None, :, None] * local[:, None, :])   # (N, E, A)
    resultant = np.einsum("ne,nea->na", w * diff, phase)
    conc = np.abs(resultant)

    k = np.argmax(conc, axis=1)
    rows = np.arange(len(k))
    step = local[0, 1] - local[0, 0] if PHASE_LOCAL_STEPS > 1 else 0.0
    interior = (k > 0) & (k < PHASE_LOCAL_STEPS - 1)
    shift = np.zeros(len(k))
    if interior.any():
        c0 = conc[rows[interior], k[interior] - 1]
        c1 = conc[rows[interior], k[interior]]
        c2 = conc[rows[interior], k[interior] + 1]
        denom = c0 - 2 * c1 + c2
        s = np.where(np.abs(denom) > 1e-12,
                     0.5 * (c0 - c2) / np.where(np.abs(denom) > 1e-12, denom, 1), 0.0)
        shift[interior] = np.clip(s, -0.5, 0.5)
    angle = local[rows, k] + shift * step

    # exact consistency at the refined angle
    refined = np.exp(1j * m_ord[None, :] * angle[:, None])
    conc_ref = np.abs((w * diff * refined).sum(axis=1))
    consistency = np.zeros(len(k))
    consistency[ok] = np.clip(conc_ref[ok] / wsum[ok], 0.0, 1.0)

    # flip so that a quarter-turn rot90 reads as +pi/2 in image coordinates
    angle = np.mod(-angle, 2 * np.pi)
    angle[angle >= 2 * np.pi - 1e-9] = 0.0
    angle[~ok] = 0.0
    return angle, consistency


def relative_phase_signature(a: Descriptor, b: Descriptor,
                             cfg: DescriptorConfig = None):
    """(rotation angle in [0, 2 pi), consistency in [0, 1]) for one pair."""
    cfg = cfg or DescriptorConfig()
    angles, cons = phase_signature_batch(a.moments[None], b.moments[None], cfg)
    return float(angles[0]), float(cons[0])
