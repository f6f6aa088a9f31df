"""Stochastic image transforms and two-view positive-pair generation.

All transforms are pure functions of ``(image, stream)`` mapping [0, 1]
pixels to [0, 1] pixels of the same shape.  View generation derives one
private stream per (example, view), so results are independent of batch
order and worker count; the worker pool below exists only to spread that
per-example work.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import LabeledExample
from .errors import ConfigError
from .rng import RngStream

# Luma coefficients and the YIQ chroma basis used by the hue approximation.
_LUMA = np.array([0.299, 0.587, 0.114])
_RGB_TO_YIQ = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.595716, -0.274453, -0.321263],
        [0.211456, -0.522591, 0.311135],
    ]
)
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


@dataclass
class AugmentationPolicy:
    """Knobs for one stage's augmentation chain.

    Stage "one" runs the full chain (crop, flip, rotate, colour distortion,
    blur); stage "two" is structurally restricted to crop, flip, and rotate,
    so its distortion knobs must be zero.
    """

    stage: str = "one"
    crop_scale_range: tuple[float, float] = (0.4, 1.0)
    rotation_range_deg: tuple[float, float] = (-30.0, 30.0)
    color_jitter_strength: float = 0.8
    blur_probability: float = 0.5
    hflip_probability: float = 0.5
    grayscale_probability: float = 0.2

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"invalid crop scale range ({lo}, {hi})")
        for name in ("blur_probability", "hflip_probability", "grayscale_probability"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.color_jitter_strength < 0.0:
            raise ConfigError("color_jitter_strength must be >= 0")
        if self.stage not in ("one", "two"):
            raise ConfigError(f"unknown augmentation stage {self.stage!r}")
        if self.stage == "two" and (
            self.color_jitter_strength != 0.0 or self.blur_probability != 0.0
        ):
            raise ConfigError(
                "stage-two policy must have zero colour distortion and blur"
            )


def stage2_policy(
    crop_scale_range=(0.4, 1.0), rotation_range_deg=(-30.0, 30.0), hflip_probability=0.5
) -> AugmentationPolicy:
    return AugmentationPolicy(
        stage="two",
        crop_scale_range=crop_scale_range,
        rotation_range_deg=rotation_range_deg,
        color_jitter_strength=0.0,
        blur_probability=0.0,
        hflip_probability=hflip_probability,
        grayscale_probability=0.0,
    )


@dataclass
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray
    source_index: int
    label: int


# ---------------------------------------------------------------------------
# individual transforms


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (possibly fractional, possibly out-of-range) coordinates.

    Out-of-range coordinates are folded back by reflection about the edge
    pixel centers.
    """
    h, w = img.shape[:2]
    ys = _reflect(ys, h)
    xs = _reflect(xs, w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.clip(y0, 0, h - 2) if h > 1 else np.zeros_like(y0)
    x0 = np.clip(x0, 0, w - 2) if w > 1 else np.zeros_like(x0)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def _reflect(coords: np.ndarray, n: int) -> np.ndarray:
    """Fold continuous coordinates into [0, n-1] by mirror reflection."""
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    folded = np.mod(coords, period)
    return np.where(folded > n - 1, period - folded, folded)


def random_crop_resize(
    img: np.ndarray,
    rng: RngStream,
    scale_range: tuple[float, float],
    aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
) -> np.ndarray:
    """Crop a random area/aspect rectangle and bilinearly resize back.

    (area, aspect) pairs are rejection-sampled up to ten times; when none
    fits the frame, the fallback is the largest centered crop with the
    aspect clamped into range.  A scale range of (1, 1) on a square image
    is therefore exactly the identity.
    """
    h, w = img.shape[:2]
    ch, cw, y0, x0 = None, None, None, None
    for _ in range(10):
        area = rng.uniform(scale_range[0], scale_range[1]) * h * w
        ratio = rng.uniform(aspect_range[0], aspect_range[1])
        tw = max(2, round(math.sqrt(area * ratio)))
        th = max(2, round(math.sqrt(area / ratio)))
        if tw <= w and th <= h:
            cw, ch = tw, th
            x0 = rng.integer(w - cw + 1)
            y0 = rng.integer(h - ch + 1)
            break
    if ch is None:
        in_ratio = w / h
        if in_ratio < aspect_range[0]:
            cw, ch = w, max(2, round(w / aspect_range[0]))
        elif in_ratio > aspect_range[1]:
            cw, ch = max(2, round(h * aspect_range[1])), h
        else:
            cw, ch = w, h
        x0, y0 = (w - cw) // 2, (h - ch) // 2
    crop = img[y0 : y0 + ch, x0 : x0 + cw]
    # Half-pixel-center mapping: an uncropped image resizes to itself exactly.
    ys = (np.arange(h) + 0.5) * (ch / h) - 0.5
    xs = (np.arange(w) + 0.5) * (cw / w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return np.clip(_bilinear_sample(crop, grid_y, grid_x), 0.0, 1.0)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1, :])


def rotate(img: np.ndarray, rng: RngStream, range_deg: tuple[float, float]) -> np.ndarray:
    """Rotate about the image center with bilinear sampling, reflect fill."""
    theta = math.radians(rng.uniform(range_deg[0], range_deg[1]))
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_x = cx + cos_t * xs + sin_t * ys
    src_y = cy - sin_t * xs + cos_t * ys
    return np.clip(_bilinear_sample(img, src_y, src_x), 0.0, 1.0)


def color_jitter(
    img: np.ndarray, rng: RngStream, s: float, grayscale_probability: float = 0.2
) -> np.ndarray:
    """Brightness/contrast/saturation/hue jitter in random order.

    Factor draws are Uniform(max(0, 1 - 0.8 s), 1 + 0.8 s); hue shifts live
    in a luma/chroma (YIQ) approximation.  With probability
    ``grayscale_probability`` the result collapses to its luma.
    """
    lo = max(0.0, 1.0 - 0.8 * s)
    hi = 1.0 + 0.8 * s
    order = rng.permutation(4)
    brightness = rng.uniform(lo, hi)
    contrast = rng.uniform(lo, hi)
    saturation = rng.uniform(lo, hi)
    hue_shift = rng.uniform(-0.2 * s, 0.2 * s)
    to_gray = rng.uniform() < grayscale_probability

    out = img
    for op in order:
        if op == 0:
            out = out * brightness
        elif op == 1:
            anchor = float((out @ _LUMA).mean())
            out = (out - anchor) * contrast + anchor
        elif op == 2:
            luma = (out @ _LUMA)[..., None]
            out = (out - luma) * saturation + luma
        elif op == 3 and hue_shift != 0.0:
            yiq = out @ _RGB_TO_YIQ.T
            angle = 2.0 * math.pi * hue_shift
            c, snn = math.cos(angle), math.sin(angle)
            i_rot = c * yiq[..., 1] - snn * yiq[..., 2]
            q_rot = snn * yiq[..., 1] + c * yiq[..., 2]
            yiq = np.stack([yiq[..., 0], i_rot, q_rot], axis=-1)
            out = yiq @ _YIQ_TO_RGB.T
    if to_gray:
        luma = (out @ _LUMA)[..., None]
        out = np.repeat(luma, 3, axis=2)
    return np.clip(out, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with half-width ceil(2 sigma)."""
    half = int(math.ceil(2.0 * sigma))
    taps = np.exp(-np.arange(-half, half + 1) ** 2 / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(img: np.ndarray, rng: RngStream, p_blur: float) -> np.ndarray:
    """With probability p_blur, separably convolve with a random-width kernel."""
    if rng.uniform() >= p_blur:
        return img
    sigma = rng.uniform(0.1, 2.0)
    taps = gaussian_kernel(sigma)
    half = (len(taps) - 1) // 2
    padded = np.pad(img, ((half, half), (0, 0), (0, 0)), mode="reflect")
    out = sum(w * padded[k : k + img.shape[0]] for k, w in enumerate(taps))
    padded = np.pad(out, ((0, 0), (half, half), (0, 0)), mode="reflect")
    out = sum(w * padded[:, k : k + img.shape[1]] for k, w in enumerate(taps))
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# view generation


def _augment_once(img: np.ndarray, stream: RngStream, policy: AugmentationPolicy):
    out = random_crop_resize(img, stream, policy.crop_scale_range)
    if stream.uniform() < policy.hflip_probability:
        out = hflip(out)
    out = rotate(out, stream, policy.rotation_range_deg)
    if policy.stage == "one":
        out = color_jitter(
            out, stream, policy.color_jitter_strength, policy.grayscale_probability
        )
        out = gaussian_blur(out, stream, policy.blur_probability)
    return out


def make_view_pair(
    example: LabeledExample,
    index: int,
    policy: AugmentationPolicy,
    rng: RngStream,
) -> ViewPair:
    """Two independent stage-one views of one image.

    Each view draws from a stream keyed by (example index, view index), so
    the pair is a pure function of the epoch stream and the index.
    """
    if policy.stage != "one":
        raise ConfigError("view pairs require a stage-one policy")
    view_a = _augment_once(example.pixels, rng.child(index, 0), policy)
    view_b = _augment_once(example.pixels, rng.child(index, 1), policy)
    return ViewPair(view_a=view_a, view_b=view_b, source_index=index, label=example.label)


def make_single_view(
    example: LabeledExample,
    index: int,
    policy: AugmentationPolicy,
    rng: RngStream,
) -> np.ndarray:
    """One stage-two view: crop-resize, flip, rotate only."""
    if policy.stage != "two":
        raise ConfigError("single views require a stage-two policy")
    return _augment_once(example.pixels, rng.child(index, 0), policy)


def _run_indexed(fn, batch, workers: int):
    if workers <= 1:
        return [fn(ex, idx) for ex, idx in batch]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda pair: fn(*pair), batch))


def view_pairs_for_batch(
    examples: list[LabeledExample],
    indices: np.ndarray,
    policy: AugmentationPolicy,
    rng: RngStream,
    workers: int = 1,
) -> list[ViewPair]:
    """Per-example pairs, identical regardless of worker count."""
    fn = lambda ex, idx: make_view_pair(ex, int(idx), policy, rng)
    return _run_indexed(fn, list(zip(examples, indices)), workers)


def single_views_for_batch(
    examples: list[LabeledExample],
    indices: np.ndarray,
    policy: AugmentationPolicy,
    rng: RngStream,
    workers: int = 1,
) -> np.ndarray:
    """Stacked stage-two views in index order."""
    fn = lambda ex, idx: make_single_view(ex, int(idx), policy, rng)
    return np.stack(_run_indexed(fn, list(zip(examples, indices)), workers))
