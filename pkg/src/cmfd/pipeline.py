"""End-to-end copy-move detection: configuration, orchestration, scoring.

The pipeline runs four stages. Keypoints are detected in a resolution
normalized frame (small images are upsampled so weak or smoothed copies
still produce dense keypoints) and described there by radial-harmonic
moment magnitudes. Matching, phrase construction and localization operate
on original-frame coordinates. Every stage is timed and counted so the
benchmark can report where an image spent its budget.
"""

import dataclasses
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import imaging, keypoints as kp_mod, descriptor as desc_mod
from . import matching, phrase as phrase_mod, localization as loc_mod


def _default_phrase_match():
    return matching.MatchConfig(phase_verify=False)


@dataclass
class PipelineConfig:
    detector: kp_mod.DetectorConfig = field(default_factory=kp_mod.DetectorConfig)
    descriptor: desc_mod.DescriptorConfig = field(
        default_factory=desc_mod.DescriptorConfig)
    word_match: matching.MatchConfig = field(default_factory=matching.MatchConfig)
    phrase: phrase_mod.PhraseConfig = field(default_factory=phrase_mod.PhraseConfig)
    phrase_match: matching.MatchConfig = field(default_factory=_default_phrase_match)
    localization: loc_mod.LocalizationConfig = field(
        default_factory=loc_mod.LocalizationConfig)
    use_phrase: bool = True   # off: word-level pairs feed localization directly
    # noise-adaptive presmoothing: clean images pass through untouched, noisy
    # ones are blurred in proportion to the estimated noise level so that
    # keypoints, descriptors and the similarity evidence all see stable input
    denoise: bool = True
    denoise_gate: float = 0.005   # estimated sigma below this: no smoothing
    denoise_base: float = 0.5
    denoise_slope: float = 22.0   # presmooth sigma = base + slope * estimate
    denoise_cap: float = 2.6


_SECTIONS = ("detector", "descriptor", "word_match", "phrase",
             "phrase_match", "localization")


def _pipeline_fields():
    return [f for f in dataclasses.fields(PipelineConfig)
            if f.name not in _SECTIONS]


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low == "none":
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def save_config(cfg: PipelineConfig, path: str) -> None:
    """Write the configuration as flat `section.key = value` lines."""
    lines = ["# copy-move detection pipeline configuration", ""]
    for f in _pipeline_fields():
        lines.append(f"pipeline.{f.name} = {_format_value(getattr(cfg, f.name))}")
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        lines.append("")
        for f in dataclasses.fields(sub):
            lines.append(
                f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path: str) -> PipelineConfig:
    """Read a configuration written by save_config; unknown keys raise."""
    cfg = PipelineConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if "." not in key:
                raise ValueError(f"{path}:{lineno}: expected section.name key")
            section, _, name = key.partition(".")
            if section == "pipeline":
                if name not in {f.name for f in _pipeline_fields()}:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                setattr(cfg, name, _parse_value(value))
                continue
            if section not in _SECTIONS:
                raise ValueError(f"{path}:{lineno}: unknown section {section!r}")
            sub = getattr(cfg, section)
            if name not in {f.name for f in dataclasses.fields(sub)}:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(sub, name, _parse_value(value))
    return cfg


class PipelineResult(NamedTuple):
    mask: np.ndarray
    ssim_mask: np.ndarray
    roi_mask: np.ndarray
    keypoints: np.ndarray     # (N, 4) x, y, sigma, response, original frame
    pairs_word: list
    pairs_phrase: list
    affines: list
    timings: dict             # seconds per stage
    scale_factor: float
    noise_sigma: float = 0.0


def _empty_result(shape, kps, timings, factor, noise=0.0) -> PipelineResult:
    z = np.zeros(shape, dtype=bool)
    return PipelineResult(z, z.copy(), z.copy(), kps, [], [], [],
                          timings, factor, noise)


def run_pipeline(img: np.ndarray, cfg: PipelineConfig = None,
                 stop_after: str = None) -> PipelineResult:
    """Detect copy-move forgery in a grayscale image, returning the fused
    mask, the single-evidence masks, and per-stage diagnostics.

    stop_after="phrase" skips localization and returns empty masks with the
    match pairs populated; ablation studies of the matching stages use this
    to avoid paying for mask synthesis they never look at."""
    cfg = cfg or PipelineConfig()
    if stop_after not in (None, "phrase"):
        raise ValueError(f"unknown stop_after {stop_after!r}")
    imaging.validate_gray(img)
    timings = {}
    total_start = time.perf_counter()

    t = time.perf_counter()
    noise = imaging.estimate_noise_sigma(img) if cfg.denoise else 0.0
    if noise >= cfg.denoise_gate:
        img = imaging.gaussian_blur(
            img, min(cfg.denoise_base + cfg.denoise_slope * noise,
                     cfg.denoise_cap))
    timings["preprocess"] = time.perf_counter() - t

    t = time.perf_counter()
    h, w = img.shape
    factor = kp_mod.scale_factor(h, w, cfg.detector.normalization_target)
    frame = imaging.resize_bicubic(img, factor) if factor != 1.0 else img
    kps_norm = kp_mod.detect_in_frame(frame, cfg.detector)
    timings["detect"] = time.perf_counter() - t

    if len(kps_norm) == 0:
        timings["total"] = time.perf_counter() - total_start
        return _empty_result(img.shape, np.zeros((0, 4)), timings,
                             factor, noise)

    t = time.perf_counter()
    moments, mags, valid = desc_mod.describe_batch(
        frame, kps_norm[:, :3], cfg.descriptor)
    kps_norm = kps_norm[valid]
    moments = moments[valid]
    mags = mags[valid]
    timings["describe"] = time.perf_counter() - t

    # matching, phrases and localization all run in the normalized frame,
    # where every pixel-sized constant (spatial guards, dilation radii,
    # kernel reach, inlier tolerances) is calibrated; the mask and the
    # reported keypoints are mapped back to the original frame at the end
    t = time.perf_counter()
    pairs_word = matching.match_word_level(
        mags, kps_norm[:, :2], cfg.word_match, moments)
    timings["match"] = time.perf_counter() - t

    t = time.perf_counter()
    pairs_phrase = pairs_word
    if cfg.use_phrase and pairs_word:
        members = sorted({i for p in pairs_word for i in (p.a, p.b)})
        if len(members) >= 2:
            sides = phrase_mod.build_phrases(
                kps_norm[members][:, :2], cfg.phrase.k_sides)
            pooled = phrase_mod.pool_phrase(mags[members], sides)
            edge = phrase_mod.edge_map(frame, cfg.phrase)
            heat = phrase_mod.saliency_heat(edge, cfg.phrase.saliency_decay)
            weights = phrase_mod.keypoint_weights(
                heat, kps_norm[members][:, :2])
            weighted = phrase_mod.weight_features(pooled, weights)
            to_local = {g: i for i, g in enumerate(members)}
            word_local = [
                matching.MatchPair(to_local[p.a], to_local[p.b], p.distance)
                for p in pairs_word]
            local = phrase_mod.match_phrase_level(
                weighted, kps_norm[members][:, :2], cfg.phrase_match,
                word_local)
            pairs_phrase = [
                matching.MatchPair(members[p.a], members[p.b], p.distance)
                for p in local]
    timings["phrase"] = time.perf_counter() - t

    if stop_after == "phrase":
        timings["total"] = time.perf_counter() - total_start
        kps = kps_norm.copy()
        kps[:, :3] /= factor
        z = np.zeros(img.shape, dtype=bool)
        return PipelineResult(z, z.copy(), z.copy(), kps,
                              pairs_word, pairs_phrase, [], timings,
                              factor, noise)

    t = time.perf_counter()
    res = loc_mod.localize(frame, pairs_phrase, kps_norm, cfg.localization,
                           moments, recovery_pairs=pairs_word)
    mask = imaging.resize_mask(res.mask, img.shape, factor)
    ssim_mask = imaging.resize_mask(res.ssim_mask, img.shape, factor)
    roi_mask = imaging.resize_mask(res.roi_mask, img.shape, factor)
    timings["localize"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - total_start

    kps = kps_norm.copy()
    kps[:, :3] /= factor  # original-frame coordinates for reporting
    affines = [_affine_to_original(a, factor) for a in res.affines]
    return PipelineResult(mask, ssim_mask, roi_mask, kps,
                          pairs_word, pairs_phrase, affines, timings,
                          factor, noise)


def _affine_to_original(aff, factor: float):
    """Rescale an affine fit in the normalized frame to original pixels.

    The linear part is scale invariant; only the translation shrinks."""
    out = np.array(aff, dtype=np.float64)
    out[:, 2] /= factor
    return out


def score_mask(pred: np.ndarray, truth: np.ndarray) -> dict:
    """Pixel-level precision, recall and F1 of a predicted mask.

    Any ratio with a zero denominator is defined as zero, so an empty
    prediction on a clean image scores f1 = 0 rather than crashing."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError("mask shapes differ")
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "tp": tp, "fp": fp, "fn": fn}
