"""Forgery construction, the attack battery, and synthetic benchmark corpora.

Copy-move forgeries are built by copying a region (rectangle or arbitrary
mask), optionally rotating and scaling the copy, and pasting it at an offset;
the ground-truth mask covers both the source and the paste, matching the
convention of the public benchmarks. Rotation and scaling act on the copied
region before pasting; additive white Gaussian noise and JPEG compression act
on the whole image afterwards. Attack parameters follow a fixed grammar of
comma-separated values and start:step:stop ranges, enforced in strict mode so
robustness sweeps stay on the canonical grid.

Benchmark datasets are not redistributed. Instead, a deterministic texture
synthesizer and two corpus generators make the evaluation self-contained:
a mixed-attack corpus for end-to-end localization scores and a multi-copy
corpus for comparing nearest-neighbor match strategies.
"""

import io
import json
import math
import os

import numpy as np
from PIL import Image
from scipy import ndimage

from . import imaging

# canonical parameter grids for the four attacks; scale is in percent
ATTACK_GRAMMAR = {
    "scale": "80, 91:2:109, 120",
    "rotate": "2:2:10, 20, 60, 180",
    "awgn": "0.02:0.02:0.1",
    "jpeg": "100:-10:20",
}

ATTACK_KINDS = tuple(ATTACK_GRAMMAR)


def expand_grammar(text: str) -> list:
    """Expand "a, b:step:c, d" into an explicit list of float values.

    Ranges include both endpoints and tolerate the usual float drift, so
    "0.02:0.02:0.1" ends exactly at 0.1. Steps may be negative.
    """
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            raise ValueError(f"empty entry in grammar {text!r}")
        if ":" in part:
            bits = part.split(":")
            if len(bits) != 3:
                raise ValueError(f"range must be start:step:stop, got {part!r}")
            start, step, stop = (float(b) for b in bits)
            if step == 0 or (stop - start) * step < 0:
                raise ValueError(f"unreachable range {part!r}")
            n = int(math.floor((stop - start) / step + 1e-9))
            out.extend(round(start + i * step, 10) for i in range(n + 1))
        else:
            out.append(float(part))
    return out


def validate_attack(kind: str, value: float):
    """Reject attack parameters that fall off the canonical grid."""
    if kind not in ATTACK_GRAMMAR:
        raise ValueError(f"unknown attack {kind!r}, expected one of {ATTACK_KINDS}")
    grid = expand_grammar(ATTACK_GRAMMAR[kind])
    v = float(value) * 100.0 if kind == "scale" else float(value)
    if not any(abs(v - g) <= 1e-9 for g in grid):
        raise ValueError(
            f"{kind}={value} is outside the canonical grid "
            f"{ATTACK_GRAMMAR[kind]!r}; pass free_params to allow it")


def _rotate_coords(shape, degrees):
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(degrees)
    ys, xs = np.mgrid[0:h, 0:w]
    u = xs - cx
    v = ys - cy
    # inverse map: where each output pixel comes from
    sx = cx + math.cos(t) * u + math.sin(t) * v
    sy = cy - math.sin(t) * u + math.cos(t) * v
    return sx, sy


def _jpeg_roundtrip(img, quality: int):
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf), dtype=np.float64) / 255.0


def apply_attack(img, kind: str, value, *, strict: bool = False,
                 seed: int = 0) -> np.ndarray:
    """Apply one whole-image attack: scale, rotate, awgn, or jpeg.

    Scaling resizes the frame (output dims change); rotation turns the frame
    about its center on the same canvas with edge replication outside. Noise
    is seeded for reproducibility. Output is clamped to [0, 1]. Strict mode
    validates the parameter against the canonical grammar first.

    Geometric attacks on the copied region itself belong to make_forgery.
    """
    imaging.validate_gray(img)
    if strict:
        validate_attack(kind, value)
    if kind == "scale":
        out = imaging.resize_bicubic(img, float(value))
    elif kind == "rotate":
        sx, sy = _rotate_coords(img.shape, float(value))
        np.clip(sx, 0, img.shape[1] - 1, out=sx)
        np.clip(sy, 0, img.shape[0] - 1, out=sy)
        out, _ = imaging.sample_bilinear(img, sx, sy)
    elif kind == "awgn":
        rng = np.random.default_rng(seed)
        out = img + rng.normal(0.0, float(value), img.shape)
    elif kind == "jpeg":
        out = _jpeg_roundtrip(img, int(value))
    else:
        raise ValueError(f"unknown attack {kind!r}, expected one of {ATTACK_KINDS}")
    return np.clip(out, 0.0, 1.0)


def transform_truth(mask, kind: str, value) -> np.ndarray:
    """Carry a ground-truth mask through a geometric whole-image attack.

    Noise and compression leave the mask untouched; scaling and rotation move
    it with the same grid convention as apply_attack, thresholded at 0.5.
    """
    mask = np.asarray(mask, dtype=bool)
    if kind in ("awgn", "jpeg"):
        return mask.copy()
    field = mask.astype(np.float64)
    if kind == "scale":
        f = float(value)
        out_shape = (imaging._round_half_up(mask.shape[0] * f),
                     imaging._round_half_up(mask.shape[1] * f))
        return imaging.resize_mask(field, out_shape, 1.0 / f)
    if kind == "rotate":
        sx, sy = _rotate_coords(mask.shape, float(value))
        vals, _ = imaging.sample_bilinear(field, sx, sy, fill=0.0)
        return vals >= 0.5
    raise ValueError(f"unknown attack {kind!r}, expected one of {ATTACK_KINDS}")


# ---------------------------------------------------------------------------
# forgery construction


def rect_mask(shape, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Boolean mask of an axis-aligned rectangle, clipped to the frame."""
    if w <= 0 or h <= 0:
        raise ValueError(f"empty rectangle {w}x{h}")
    m = np.zeros(shape, dtype=bool)
    m[max(y, 0):y + h, max(x, 0):x + w] = True
    return m


def disk_mask(shape, cy: float, cx: float, radius: float) -> np.ndarray:
    """Boolean mask of a filled disk."""
    ys, xs = np.ogrid[0:shape[0], 0:shape[1]]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius * radius


def make_forgery(img, region, offset, rotation: float = 0.0,
                 scale: float = 1.0):
    """Copy a region, transform the copy, paste it at an offset.

    region is (x, y, w, h) or a boolean mask; offset is (dx, dy) in pixels.
    Rotation (degrees) and scaling act on the copied content about the region
    centroid before pasting. Returns (forged, truth) with truth covering the
    union of source region and paste. Rectangle regions moved by integer
    offsets with rotations that are multiples of 90 degrees are pasted by
    exact index permutation, so no resampling noise enters; everything else
    is sampled bilinearly. A paste that leaves the frame or lands exactly on
    its own source is rejected.
    """
    imaging.validate_gray(img)
    h, w = img.shape
    dx, dy = float(offset[0]), float(offset[1])
    if dx == 0 and dy == 0:
        raise ValueError("degenerate forgery: paste lands on its own source")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")

    is_rect = not isinstance(region, np.ndarray)
    exact = (is_rect and rotation % 90 == 0 and scale == 1.0
             and dx == int(dx) and dy == int(dy))
    if exact:
        return _paste_exact(img, region, int(dx), int(dy), int(rotation) % 360)

    rmask = region if not is_rect else rect_mask(img.shape, *region)
    rmask = np.asarray(rmask, dtype=bool)
    if rmask.shape != img.shape:
        raise ValueError("region mask shape differs from image")
    if not rmask.any():
        raise ValueError("empty region")

    ys, xs = np.nonzero(rmask)
    c_src = np.array([xs.mean(), ys.mean()])
    c_dst = c_src + [dx, dy]
    t = math.radians(rotation)
    rot = np.array([[math.cos(t), -math.sin(t)],
                    [math.sin(t), math.cos(t)]])

    # forward map of the region pixels bounds the paste support
    pts = rot @ (np.stack([xs, ys]) - c_src[:, None]) * scale + c_dst[:, None]
    if (pts[0].min() < -0.5 or pts[0].max() > w - 0.5
            or pts[1].min() < -0.5 or pts[1].max() > h - 0.5):
        raise ValueError("paste leaves the frame")

    x0 = max(int(math.floor(pts[0].min())) - 1, 0)
    x1 = min(int(math.ceil(pts[0].max())) + 2, w)
    y0 = max(int(math.floor(pts[1].min())) - 1, 0)
    y1 = min(int(math.ceil(pts[1].max())) + 2, h)
    gy, gx = np.mgrid[y0:y1, x0:x1]
    back = rot.T @ (np.stack([gx.ravel(), gy.ravel()]) - c_dst[:, None]) / scale
    bx = back[0] + c_src[0]
    by = back[1] + c_src[1]
    # a paste pixel is supported where the inverse lands inside the region
    cover, _ = imaging.sample_bilinear(rmask.astype(np.float64), bx, by)
    support = cover >= 0.5
    values, _ = imaging.sample_bilinear(img, bx, by)

    forged = img.copy()
    flat_y = gy.ravel()[support]
    flat_x = gx.ravel()[support]
    forged[flat_y, flat_x] = values[support]

    truth = rmask.copy()
    truth[flat_y, flat_x] = True
    return np.clip(forged, 0.0, 1.0), truth


def _paste_exact(img, rect, dx: int, dy: int, rotation: int):
    """Integer-grid paste of a rectangle: pure index permutation."""
    x, y, rw, rh = (int(v) for v in rect)
    h, w = img.shape
    if rw <= 0 or rh <= 0:
        raise ValueError(f"empty rectangle {rw}x{rh}")
    if x < 0 or y < 0 or x + rw > w or y + rh > h:
        raise ValueError("region leaves the frame")
    patch = np.rot90(img[y:y + rh, x:x + rw], rotation // 90)
    ph, pw = patch.shape
    # destination rectangle shares the source center plus the offset
    dy0 = y + dy + (rh - ph) // 2
    dx0 = x + dx + (rw - pw) // 2
    if dx0 < 0 or dy0 < 0 or dx0 + pw > w or dy0 + ph > h:
        raise ValueError("paste leaves the frame")
    forged = img.copy()
    forged[dy0:dy0 + ph, dx0:dx0 + pw] = patch
    truth = np.zeros(img.shape, dtype=bool)
    truth[y:y + rh, x:x + rw] = True
    truth[dy0:dy0 + ph, dx0:dx0 + pw] = True
    return forged, truth


# ---------------------------------------------------------------------------
# deterministic texture synthesis for self-contained corpora


def _local_std(img, sigma: float = 1.5):
    mean = ndimage.gaussian_filter(img, sigma)
    sq = ndimage.gaussian_filter(img * img, sigma)
    return np.sqrt(np.maximum(sq - mean * mean, 0.0))


def _multi_octave(rng, shape, sigmas=(2, 5, 12, 28),
                  amps=(0.30, 0.28, 0.16, 0.10)):
    out = np.zeros(shape)
    for s, a in zip(sigmas, amps):
        layer = ndimage.gaussian_filter(rng.standard_normal(shape), s)
        out += a * layer / np.abs(layer).max()
    return out


def synth_texture(seed: int, shape=(480, 640), density: float = 2.2,
                  n_calm: int = 3, target_std: float = 0.045) -> np.ndarray:
    """Deterministic gray texture with enough structure to match against.

    A collage of soft geometric shapes over multi-octave noise, with a few
    elliptical calm zones where detail fades (so saliency weighting has a
    dynamic range to work with), normalized to a fixed median local contrast
    and quantized to the 8-bit grid like any stored photograph.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    img = np.zeros(shape)

    suppress = np.ones(shape)
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(n_calm):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ra = rng.uniform(0.18, 0.33) * max(h, w)
        rb = ra * rng.uniform(0.5, 1.0)
        t = rng.uniform(0, math.pi)
        u = (xs - cx) * math.cos(t) + (ys - cy) * math.sin(t)
        v = -(xs - cx) * math.sin(t) + (ys - cy) * math.cos(t)
        d = np.clip((u / ra) ** 2 + (v / rb) ** 2, 0, 1)
        suppress *= d * d

    n_shapes = int(density * h * w / 1000)
    for _ in range(n_shapes):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.uniform() > suppress[int(cy), int(cx)]:
            continue
        a = math.exp(rng.uniform(math.log(3), math.log(30)))
        b = a * math.exp(rng.uniform(-1.2, 0.2))
        t = rng.uniform(0, math.pi)
        kind = rng.integers(3)
        val = rng.uniform(-0.42, 0.42)
        grad = rng.uniform(-0.15, 0.15)
        y0, y1 = max(int(cy - a - b), 0), min(int(cy + a + b) + 1, h)
        x0, x1 = max(int(cx - a - b), 0), min(int(cx + a + b) + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        u = (xx - cx) * math.cos(t) + (yy - cy) * math.sin(t)
        v = -(xx - cx) * math.sin(t) + (yy - cy) * math.cos(t)
        if kind == 0:
            inside = (np.abs(u) <= a) & (np.abs(v) <= b)
        elif kind == 1:
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1
        else:
            inside = (np.abs(u) / a + np.abs(v) / b <= 1) & (v <= b * 0.4)
        patch = (val + grad * u / max(a, b)) * inside
        grain = rng.uniform(0.02, 0.09)
        patch += grain * ndimage.gaussian_filter(
            rng.standard_normal(patch.shape), rng.uniform(0.6, 1.6)) * inside
        img[y0:y1, x0:x1] += patch

    img += _multi_octave(rng, shape) * np.clip(suppress + 0.25, 0, 1)
    img = ndimage.gaussian_filter(img, 0.7)
    # fixed-gain contrast normalization: a stable median local deviation
    # keeps flat areas distinguishable instead of collapsing toward the
    # similarity floor of windowed comparisons
    gain = target_std / max(np.median(_local_std(img)), 1e-9)
    img = 0.5 + (img - img.mean()) * gain
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _draw_glyph(rng, k: int, kinds=(0, 1, 2, 3)):
    """One small mark built from a few strokes: segments, arcs, dots, rings.

    Drawn fresh from the stream each call, so two glyphs practically never
    repeat; repetition has to be arranged explicitly by the caller.
    """
    g = np.zeros((k, k))
    yy, xx = np.mgrid[0:k, 0:k]
    for _ in range(rng.integers(2, 5)):
        kind = int(rng.choice(kinds))
        w = rng.uniform(1.0, 2.2)
        val = rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.0)
        if kind == 0:          # line segment
            p0 = rng.uniform(0.15 * k, 0.85 * k, 2)
            p1 = rng.uniform(0.15 * k, 0.85 * k, 2)
            d = p1 - p0
            span = max(np.hypot(*d), 1e-6)
            t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1])
                        / span ** 2, 0, 1)
            dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
            g += val * np.exp(-((dist / w) ** 2))
        elif kind == 1:        # circular arc
            c = rng.uniform(0.2 * k, 0.8 * k, 2)
            r0 = rng.uniform(0.15 * k, 0.45 * k)
            a0 = rng.uniform(0, 2 * math.pi)
            sweep = rng.uniform(1.2, 5.0)
            ang = (np.arctan2(yy - c[0], xx - c[1]) - a0) % (2 * math.pi)
            dist = np.abs(np.hypot(yy - c[0], xx - c[1]) - r0)
            g += val * np.exp(-((dist / w) ** 2)) * (ang <= sweep)
        elif kind == 2:        # filled dot
            c = rng.uniform(0.2 * k, 0.8 * k, 2)
            r0 = rng.uniform(1.5, 3.5)
            g += val * np.exp(-((np.hypot(yy - c[0], xx - c[1]) / r0) ** 2))
        else:                  # ring
            c = rng.uniform(0.25 * k, 0.75 * k, 2)
            r0 = rng.uniform(2.5, 6.0)
            dist = np.abs(np.hypot(yy - c[0], xx - c[1]) - r0)
            g += val * np.exp(-((dist / w) ** 2))
    return np.clip(g, -1.4, 1.4)


def synth_detail(seed: int, shape=(360, 480), n_families: int = 4,
                 family_size=(5, 9), family_grain: float = 0.10) -> np.ndarray:
    """Deterministic collage of distinctive small marks over smooth shading.

    Most marks are one-of-a-kind, so far-apart patches stay distinguishable;
    a few marks repeat several times with per-instance grain, like windows
    or tiles in a photograph. That repeated-but-genuine structure is what
    separates nearest-neighbor testing strategies: deliberate copies are
    pixel-identical while family instances only resemble each other.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    t = rng.uniform(0, 2 * math.pi)
    img = 0.5 + 0.10 * ((xs * math.cos(t) + ys * math.sin(t))
                        / math.hypot(h, w) - 0.35)
    big = ndimage.gaussian_filter(rng.standard_normal(shape), 55)
    img += 0.12 * big / np.abs(big).max()

    cells = [(y, x) for y in range(32, h - 32, 32)
             for x in range(32, w - 32, 32)]
    rng.shuffle(cells)
    pos = 0
    for _ in range(n_families):
        k = int(rng.integers(16, 24))
        proto = _draw_glyph(rng, k)
        amp = rng.uniform(0.16, 0.30)
        for _ in range(int(rng.integers(*family_size))):
            if pos == len(cells):  # tiny frame: no cells left for this family
                break
            cy, cx = cells[pos]
            pos += 1
            jy, jx = rng.integers(-6, 7, 2)
            y0 = int(np.clip(cy + jy, 0, h - k))
            x0 = int(np.clip(cx + jx, 0, w - k))
            grain = ndimage.gaussian_filter(rng.standard_normal((k, k)), 0.8)
            grain *= family_grain / max(grain.std(), 1e-9)
            img[y0:y0 + k, x0:x0 + k] += amp * proto + grain
    for cy, cx in cells[pos:]:
        if rng.uniform() < 0.12:
            continue
        k = int(rng.integers(14, 24))
        jy, jx = rng.integers(-7, 8, 2)
        y0 = int(np.clip(cy + jy, 0, h - k))
        x0 = int(np.clip(cx + jx, 0, w - k))
        img[y0:y0 + k, x0:x0 + k] += rng.uniform(0.16, 0.30) * _draw_glyph(rng, k)
    # dense second layer of faint angular marks: gives every patch its own
    # micro detail, so only true duplication produces coherent matches
    for cy in range(15, h - 15, 15):
        for cx in range(15, w - 15, 15):
            if rng.uniform() < 0.05:
                continue
            k = int(rng.integers(8, 13))
            jy, jx = rng.integers(-5, 6, 2)
            y0 = int(np.clip(cy + jy, 0, h - k))
            x0 = int(np.clip(cx + jx, 0, w - k))
            img[y0:y0 + k, x0:x0 + k] += rng.uniform(0.05, 0.08) \
                * _draw_glyph(rng, k, kinds=(0, 1))
    g = ndimage.gaussian_filter(rng.standard_normal(shape), 0.8)
    img += 0.012 * g / g.std()
    img = ndimage.gaussian_filter(img, 0.5)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _energy(img):
    gx = ndimage.sobel(img, axis=1)
    gy = ndimage.sobel(img, axis=0)
    return ndimage.gaussian_filter(np.hypot(gx, gy), 6.0)


def place_copies(img, radius: float, n_dst: int, rng, margin: int = 12,
                 min_sep: float = 2.2):
    """Pick one source center and n_dst paste centers, all in frame.

    The source sits on the strongest local gradient energy among candidates;
    destinations need above-median energy and pairwise separation, so copies
    land on matchable texture without overlapping each other.
    """
    h, w = img.shape
    e = _energy(img)
    lo = radius + margin
    if h - lo <= lo or w - lo <= lo:
        raise ValueError(f"radius {radius} too large for a {h}x{w} frame")
    cand = rng.uniform([lo, lo], [h - lo, w - lo], size=(220, 2))
    scores = e[cand[:, 0].astype(int), cand[:, 1].astype(int)]
    c_src = cand[int(np.argmax(scores))]
    med = float(np.median(e))

    centers = [c_src]
    out = []
    for cy, cx in rng.uniform([lo, lo], [h - lo, w - lo], size=(4000, 2)):
        if e[int(cy), int(cx)] <= med:
            continue
        if all(math.hypot(cy - oy, cx - ox) > min_sep * radius
               for oy, ox in centers):
            centers.append((cy, cx))
            out.append((cy, cx))
            if len(out) == n_dst:
                return tuple(c_src), out
    raise RuntimeError(f"could not place {n_dst} copies of radius {radius}")


# ---------------------------------------------------------------------------
# corpus generators

# the mixed corpus: 20 forged images spanning the attack battery plus
# 4 clean controls; values all sit on the canonical grammar grid
_STANDARD_PLAN = (
    [("none", None)] * 3
    + [("rotate", 10.0), ("rotate", 60.0), ("rotate", 180.0)]
    + [("scale", 0.8), ("scale", 1.2)]
    + [("awgn", v) for v in (0.02, 0.04, 0.06, 0.08, 0.10)]
    + [("jpeg", v) for v in (100, 80, 60, 40, 20)]
    + [("multi", None)] * 2
    + [("clean", None)] * 4
)


def generate_corpus(out_dir, variant: str = "standard", seed: int = 0,
                    shape=None) -> dict:
    """Write a self-contained synthetic benchmark corpus to out_dir.

    variant "standard": mixed single-copy forgeries across the whole attack
    battery plus clean controls, on shape-collage texture, for end-to-end
    localization scoring. Default 480x640.
    variant "multi": 50 images on the detail collage, each with one region
    copied to 2-3 extra destinations, for nearest-neighbor strategy
    comparisons. Default 360x480.

    Layout: images/*.png, masks/<stem>.png (0/255, all-zero for clean
    controls), meta.json recording the attack and the true copy transforms
    per image. Fully deterministic in (variant, seed, shape).
    """
    if variant == "standard":
        plan = list(_STANDARD_PLAN)
        shape = shape or (480, 640)
    elif variant == "multi":
        plan = [("multi", None)] * 50
        shape = shape or (360, 480)
    else:
        raise ValueError(f"unknown corpus variant {variant!r}")

    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    meta = {}
    for i, (attack, value) in enumerate(plan):
        stem = f"img{i:02d}"
        rng = np.random.default_rng(seed * 7919 + i)
        if variant == "multi":
            tex = synth_detail(seed * 1000 + i, shape)
        else:
            tex = synth_texture(seed * 1000 + i, shape)
        rec = {"attack": attack, "value": value, "clean": attack == "clean",
               "copies": []}

        if attack == "clean":
            forged, truth = tex, np.zeros(shape, dtype=bool)
        else:
            rotation = value if attack == "rotate" else 0.0
            scale = value if attack == "scale" else 1.0
            if attack == "multi":
                if variant == "standard":
                    n_dst = int(rng.integers(2, 4))
                    radius = float(rng.integers(52, 67))
                else:
                    n_dst = 2 + i % 2
                    radius = float(rng.integers(40, 54))
            else:
                n_dst = 1
                radius = float(rng.integers(70, 96))
            # leave room for the scaled paste
            c_src, dsts = place_copies(
                tex, radius * max(scale, 1.0), n_dst, rng)
            region = disk_mask(shape, c_src[0], c_src[1], radius)
            forged = tex
            truth = np.zeros(shape, dtype=bool)
            for cy, cx in dsts:
                off = (cx - c_src[1], cy - c_src[0])
                forged, t = make_forgery(forged, region, off, rotation, scale)
                truth |= t
                rec["copies"].append({
                    "src": [float(c_src[0]), float(c_src[1])],
                    "dst": [float(cy), float(cx)],
                    "radius": radius, "rotation": rotation, "scale": scale,
                })
            if attack in ("awgn", "jpeg"):
                forged = apply_attack(forged, attack, value,
                                      strict=True, seed=seed * 31 + i)

        imaging.save_image(forged, os.path.join(img_dir, stem + ".png"))
        imaging.save_mask(truth, os.path.join(mask_dir, stem + ".png"))
        meta[stem] = rec

    doc = {"variant": variant, "seed": seed, "images": meta}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return doc
