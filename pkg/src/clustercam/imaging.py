"""Image decode/preprocess and heatmap overlay rendering.

All resizing here and in the CAM engine uses the same corner-aligned
bilinear interpolation so masks, heatmaps, and overlays stay spatially
consistent. PNG output is 8-bit RGB with no extra metadata chunks, which
keeps repeated runs byte-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimensionMismatchError, ParameterError, ValidationError
from .types import Heatmap, ImageTensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Fixed jet-style colormap anchors (position -> RGB); linear in between.
COLORMAP_ANCHORS = (
    (0.00, (0.0, 0.0, 131.0)),
    (0.35, (0.0, 255.0, 255.0)),
    (0.65, (255.0, 255.0, 0.0)),
    (1.00, (128.0, 0.0, 0.0)),
)


@dataclass(frozen=True)
class PreprocessConfig:
    target_h: int = 224
    target_w: int = 224
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ParameterError("std components must be > 0")
        if self.target_h < 1 or self.target_w < 1:
            raise ParameterError("target dims must be >= 1")


def bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an (H, W) or (H, W, C) array."""
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[0], a.shape[1]
    if (h, w) == (out_h, out_w):
        return a.copy()
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if a.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = a[y0][:, x0] * (1 - wx) + a[y0][:, x1] * wx
    bot = a[y1][:, x0] * (1 - wx) + a[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def decode_image(path: str) -> np.ndarray:
    """Decode a PNG/JPEG to an (H, W, 3) uint8 array; grayscale is replicated."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ParameterError(f"unsupported image format {im.format!r} for {path!r}")
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise ParameterError(f"cannot decode {path!r}: {e}") from e
    except OSError as e:
        raise ParameterError(f"cannot read image {path!r}: {e}") from e


def load_and_preprocess(path: str, config: PreprocessConfig = PreprocessConfig()) -> ImageTensor:
    """Decode, resize to target, scale to [0, 1], then normalize per channel."""
    rgb = decode_image(path).astype(np.float64)
    rgb = bilinear_resize(rgb, config.target_h, config.target_w)
    rgb /= 255.0
    mean = np.asarray(config.mean)[None, None, :]
    std = np.asarray(config.std)[None, None, :]
    chw = ((rgb - mean) / std).transpose(2, 0, 1)
    return ImageTensor(chw, source_path=path)


def apply_colormap(h: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the fixed anchor table; float RGB out."""
    pos = np.array([p for p, _ in COLORMAP_ANCHORS])
    out = np.empty(h.shape + (3,), dtype=np.float64)
    for ch in range(3):
        vals = np.array([c[ch] for _, c in COLORMAP_ANCHORS])
        out[..., ch] = np.interp(h, pos, vals)
    return out


def render_overlay(original: np.ndarray, heatmap: Heatmap, alpha: float = 0.5) -> np.ndarray:
    """Blend the colormapped heatmap over an (H, W, 3) uint8 image.

    The heatmap is resized to the image's dimensions first. alpha = 0
    returns the original bit-exactly. Rounding is half-up so output is
    platform-stable.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    if not heatmap.normalized:
        raise ValidationError("overlay needs a normalized heatmap")
    original = np.asarray(original)
    if original.ndim != 3 or original.shape[2] != 3:
        raise DimensionMismatchError(f"original must be H x W x 3, got {original.shape}")
    h, w = original.shape[0], original.shape[1]
    hm = bilinear_resize(heatmap.data, h, w)
    blended = (1.0 - alpha) * original.astype(np.float64) + alpha * apply_colormap(hm)
    return np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)


def heatmap_to_rgb(heatmap: Heatmap) -> np.ndarray:
    """Colormapped heatmap alone, as uint8 RGB."""
    rgb = apply_colormap(np.clip(heatmap.data, 0.0, 1.0))
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def save_png(path: str, rgb: np.ndarray) -> None:
    """Write uint8 RGB (or grayscale) as a plain PNG."""
    arr = np.asarray(rgb)
    if arr.dtype != np.uint8:
        raise ParameterError("save_png expects uint8 data")
    mode = "RGB" if arr.ndim == 3 else "L"
    Image.fromarray(arr, mode).save(path, format="PNG")
