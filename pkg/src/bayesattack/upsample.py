"""Latent-to-image upsampling.

Every supported method is a linear map, realized as one interpolation-weight
matrix per spatial axis; an output image is ``Wh @ latent @ Ww.T`` applied
per channel.  Coordinates follow the half-pixel (align-corners-false)
convention for the interpolating methods.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeMismatch

METHODS = ("nearest", "bilinear", "bicubic")


def _source_coords(src: int, dst: int) -> np.ndarray:
    # Half-pixel centers mapped into the source grid, clamped to its range.
    s = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    return np.clip(s, 0.0, src - 1.0)


def _nearest_weights(src: int, dst: int) -> np.ndarray:
    w = np.zeros((dst, src))
    idx = (np.arange(dst) * src) // dst
    w[np.arange(dst), idx] = 1.0
    return w


def _bilinear_weights(src: int, dst: int) -> np.ndarray:
    s = _source_coords(src, dst)
    i0 = np.floor(s).astype(int)
    t = s - i0
    i1 = np.minimum(i0 + 1, src - 1)
    w = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(w, (rows, i0), 1.0 - t)
    np.add.at(w, (rows, i1), t)
    return w


def _catmull_rom(u: np.ndarray) -> np.ndarray:
    # Cubic convolution kernel with a = -0.5, support |u| < 2.
    u = np.abs(u)
    near = (1.5 * u - 2.5) * u * u + 1.0
    far = ((-0.5 * u + 2.5) * u - 4.0) * u + 2.0
    return np.where(u <= 1.0, near, np.where(u < 2.0, far, 0.0))


def _bicubic_weights(src: int, dst: int) -> np.ndarray:
    s = _source_coords(src, dst)
    i0 = np.floor(s).astype(int)
    t = s - i0
    w = np.zeros((dst, src))
    rows = np.arange(dst)
    for m in (-1, 0, 1, 2):
        # Taps past the border accumulate onto the clamped edge sample.
        idx = np.clip(i0 + m, 0, src - 1)
        np.add.at(w, (rows, idx), _catmull_rom(m - t))
    return w


_BUILDERS = {
    "nearest": _nearest_weights,
    "bilinear": _bilinear_weights,
    "bicubic": _bicubic_weights,
}


def interp_weights(src: int, dst: int, method: str = "nearest") -> np.ndarray:
    """One-axis interpolation matrix of shape ``(dst, src)``; rows sum to 1."""
    if method not in _BUILDERS:
        raise ValueError(f"unknown upsampling method {method!r}; expected one of {METHODS}")
    if not 1 <= src <= dst:
        raise ShapeMismatch(f"need 1 <= source size <= target size, got {src} -> {dst}")
    return _BUILDERS[method](src, dst)


def check_latent_shape(latent_shape: tuple[int, int, int], image_shape: tuple[int, int, int]) -> None:
    """Validate that a latent of ``latent_shape`` can upsample to ``image_shape``."""
    if len(latent_shape) != 3 or len(image_shape) != 3:
        raise ShapeMismatch("latent and image shapes must both be (channels, height, width)")
    lc, lh, lw = latent_shape
    ic, ih, iw = image_shape
    if min(latent_shape) < 1:
        raise ShapeMismatch(f"latent shape {latent_shape} has a nonpositive entry")
    if lc not in (1, ic):
        raise ShapeMismatch(f"latent channels must be 1 or {ic}, got {lc}")
    if lh > ih or lw > iw:
        raise ShapeMismatch(f"latent spatial size {(lh, lw)} exceeds image size {(ih, iw)}")


def upsample(latent: np.ndarray, out_shape: tuple[int, int, int], method: str = "nearest") -> np.ndarray:
    """Upsample a ``(c', h', w')`` latent to a ``(C, H, W)`` tensor.

    A single latent channel is broadcast across all output channels;
    otherwise channels map one-to-one.
    """
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3:
        raise ShapeMismatch(f"latent must be 3-d (channels, height, width), got {latent.shape}")
    check_latent_shape(latent.shape, out_shape)
    channels, height, width = out_shape
    wh = interp_weights(latent.shape[1], height, method)
    ww = interp_weights(latent.shape[2], width, method)
    out = wh @ latent @ ww.T  # batched over the channel axis
    if latent.shape[0] == 1 and channels > 1:
        out = np.repeat(out, channels, axis=0)
    return out
