"""Image I/O, grayscale conversion, resampling, convolution and morphology.

All detector stages operate on a single-channel float image in [0, 1]
(referred to as a gray image below). Color inputs are reduced with the
ITU-R 601 luma weights. Arrays are plain numpy (H, W) float arrays.
"""

import numpy as np
import scipy.fft
import scipy.ndimage
from PIL import Image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def validate_gray(img):
    """Raise if `img` is not a 2-D float image with finite values in [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D gray image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty image")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValueError(f"expected float image, got dtype {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return arr


def load_image(path) -> np.ndarray:
    """Load a raster file (PNG/JPEG/BMP/TIFF) as a gray image in [0, 1].

    Color inputs are converted with luma weights 0.299/0.587/0.114 applied
    to channels scaled to [0, 1]; an alpha channel is ignored.
    """
    with Image.open(path) as im:
        if im.mode == "P":
            im = im.convert("RGB")
        elif im.mode == "1":
            im = im.convert("L")
        arr = np.asarray(im)

    if np.issubdtype(arr.dtype, np.integer):
        scale = float(np.iinfo(arr.dtype).max)
    else:
        scale = 1.0

    if arr.ndim == 3:
        rgb = arr[..., :3].astype(np.float64) / scale
        gray = rgb @ LUMA_WEIGHTS
    else:
        gray = arr.astype(np.float64) / scale
    return np.clip(gray, 0.0, 1.0)


def save_mask(mask, path):
    """Write a binary mask as an 8-bit PNG with values {0, 255}."""
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def save_image(img, path):
    """Write a gray image in [0, 1] as an 8-bit raster file."""
    validate_gray(img)
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _cubic_weights(t):
    """Catmull-Rom weights (bicubic kernel with a = -0.5) for taps -1..2."""
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


def _resize_axis(img, out_n, factor):
    # sample positions in source coordinates, pixel-center convention
    n = img.shape[0]
    s = (np.arange(out_n) + 0.5) / factor - 0.5
    base = np.floor(s).astype(np.int64)
    t = s - base
    weights = _cubic_weights(t)
    out = np.zeros((out_n,) + img.shape[1:], dtype=img.dtype)
    for k, w in enumerate(weights, start=-1):
        idx = np.clip(base + k, 0, n - 1)
        out += img[idx] * w.reshape((-1,) + (1,) * (img.ndim - 1)).astype(img.dtype)
    return out


def resize_bicubic(img, factor: float) -> np.ndarray:
    """Resample by `factor` with a separable bicubic kernel (a = -0.5).

    Output dimensions are round(input * factor); edges are clamped and the
    result is clipped back to [0, 1].
    """
    img = np.asarray(img)
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    h, w = img.shape
    out_h = _round_half_up(h * factor)
    out_w = _round_half_up(w * factor)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate output size {out_h}x{out_w}")
    if factor == 1.0:
        return img.copy()
    out = _resize_axis(img, out_h, factor)
    out = _resize_axis(out.T, out_w, factor).T
    return np.clip(out, 0.0, 1.0)


def convolve_fft(img, kernel) -> np.ndarray:
    """2-D linear convolution via FFT, cropped to the input size.

    Both operands are zero-padded to the next even size that holds the full
    linear-convolution support, so the circular product equals linear
    convolution everywhere; the result is aligned with the kernel center at
    the origin, i.e. out[i, j] = sum_k kernel[k] * img[i + ch - k_i, j + cw - k_j]
    with (ch, cw) = (kh // 2, kw // 2).
    """
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if img.ndim != 2 or kernel.ndim != 2:
        raise ValueError("convolve_fft expects 2-D arrays")
    h, w = img.shape
    kh, kw = kernel.shape
    ph = h + kh - 1
    pw = w + kw - 1
    ph += ph % 2
    pw += pw % 2
    spec = scipy.fft.rfft2(img, s=(ph, pw)) * scipy.fft.rfft2(kernel, s=(ph, pw))
    full = scipy.fft.irfft2(spec, s=(ph, pw))
    ci, cj = kh // 2, kw // 2
    return full[ci:ci + h, cj:cj + w]


def gaussian_kernel_1d(sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ceil(truncate * sigma)."""
    radius = max(1, int(np.ceil(truncate * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Separable Gaussian blur with mirrored borders. sigma <= 0 is a copy."""
    img = np.asarray(img)
    if sigma <= 0:
        return img.copy()
    k = gaussian_kernel_1d(sigma, truncate).astype(img.dtype)
    out = scipy.ndimage.convolve1d(img, k, axis=0, mode="mirror")
    return scipy.ndimage.convolve1d(out, k, axis=1, mode="mirror")


def resize_mask(mask, out_shape, factor: float) -> np.ndarray:
    """Downscale a boolean mask produced in a frame `factor` times larger.

    The mask is softened to roughly one output pixel, point-sampled at the
    centers of the output grid, and rebinarized at 0.5, approximating an
    area-coverage vote per output pixel.
    """
    mask = np.asarray(mask)
    if mask.shape == tuple(out_shape):
        return mask.astype(bool)
    soft = gaussian_blur(mask.astype(np.float64), factor / 2.0)
    ys = (np.arange(out_shape[0]) + 0.5) * factor - 0.5
    xs = (np.arange(out_shape[1]) + 0.5) * factor - 0.5
    gx, gy = np.meshgrid(xs, ys)
    vals, _ = sample_bilinear(soft, gx.ravel(), gy.ravel(), fill=0.0)
    return (vals.reshape(out_shape) >= 0.5)


_NOISE_KERNEL = np.array([[1.0, -2.0, 1.0],
                          [-2.0, 4.0, -2.0],
                          [1.0, -2.0, 1.0]])


def estimate_noise_sigma(img) -> float:
    """Robust estimate of the additive white noise level of a gray image.

    The image is filtered with a second-difference kernel that annihilates
    locally linear content, leaving mostly noise; the median absolute
    response, rescaled by the kernel norm and the normal-consistency
    constant 0.6745, estimates the noise standard deviation. Texture biases
    the result upward only mildly because the median ignores edge outliers.
    """
    arr = validate_gray(img)
    resp = scipy.ndimage.convolve(arr, _NOISE_KERNEL, mode="mirror")
    # kernel L2 norm is 6, so white noise of std s gives responses of std 6s
    return float(np.median(np.abs(resp)) / (0.6745 * 6.0))


def mask_bbox(mask, margin: int):
    """Slices covering the true pixels expanded by `margin`, image-clamped."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0 = max(int(rows[0]) - margin, 0)
    y1 = min(int(rows[-1]) + margin + 1, mask.shape[0])
    x0 = max(int(cols[0]) - margin, 0)
    x1 = min(int(cols[-1]) + margin + 1, mask.shape[1])
    return slice(y0, y1), slice(x0, x1)


def dilate(mask, radius: float) -> np.ndarray:
    """Binary dilation with a Euclidean disk: offsets with dx^2 + dy^2 <= r^2.

    Computed through the exact distance transform on the bounding box of the
    set pixels (everything further than the radius is unreachable anyway).
    """
    mask = np.asarray(mask).astype(bool)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0 or not mask.any():
        return mask.copy()
    sy, sx = mask_bbox(mask, int(np.ceil(radius)) + 1)
    out = np.zeros_like(mask)
    dist = scipy.ndimage.distance_transform_edt(~mask[sy, sx])
    out[sy, sx] = dist <= radius
    return out


def erode(mask, radius: float) -> np.ndarray:
    """Binary erosion with a Euclidean disk (dual of `dilate`)."""
    mask = np.asarray(mask).astype(bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    # distance of each set pixel to the nearest clear one; the one-pixel
    # margin keeps the crop border clear exactly where the full frame is
    sy, sx = mask_bbox(mask, 1)
    out = np.zeros_like(mask)
    dist = scipy.ndimage.distance_transform_edt(mask[sy, sx])
    out[sy, sx] = dist > radius
    return out


def closing(mask, radius: float) -> np.ndarray:
    """Morphological closing: dilation followed by erosion, same disk."""
    return erode(dilate(mask, radius), radius)


def remove_small_components(mask, min_pixels: float) -> np.ndarray:
    """Drop 8-connected components with fewer than `min_pixels` pixels."""
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        return mask.copy()
    labels, n = scipy.ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_pixels
    keep[0] = False
    return keep[labels]


def sample_bilinear(img, xs, ys, fill: float = 0.0):
    """Sample `img` at sub-pixel (x, y) positions with bilinear interpolation.

    Returns (values, inside) where `inside` marks samples whose coordinates
    fall within the image rectangle [0, W-1] x [0, H-1]; outside samples get
    `fill`.
    """
    img = np.asarray(img)
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)

    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2 if w > 1 else 0)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2 if h > 1 else 0)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    values = top * (1 - fy) + bot * fy
    values = np.where(inside, values, fill)
    return values, inside
