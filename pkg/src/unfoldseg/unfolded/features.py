"""Fixed hand-crafted feature bank standing in for a pretrained encoder.

Channels, in order: the image's intensity channels, gradient magnitude of
the grey image at steps 1 and 2, and the 5x5 local variance of the grey
image.  So there are ``in_channels + 3`` channels.
"""

import numpy as np

from ..tensor_core import conv2d, reflect_pad

GRAD_GAIN = 4.0
VAR_GAIN = 30.0
EXTRA_CHANNELS = 3


def feature_count(in_channels):
    return in_channels + EXTRA_CHANNELS


def _grad_mag(gray, step):
    p = reflect_pad(gray, step, step)
    h, w = gray.shape[-2:]
    gx = (p[..., step:step + h, 2 * step:] - p[..., step:step + h, :w]) / (2 * step)
    gy = (p[..., 2 * step:, step:step + w] - p[..., :h, step:step + w]) / (2 * step)
    return np.sqrt(gx * gx + gy * gy)


def feature_bank(c):
    """Features for a batch ``c`` of shape (N, C, H, W); returns (N, C + 3, H, W)."""
    c = np.asarray(c, dtype=np.float64)
    gray = c.mean(axis=1, keepdims=True)
    box = np.full((5, 5), 1.0 / 25.0)
    local_mean = _box(gray, box)
    local_sq = _box(gray * gray, box)
    var = np.maximum(local_sq - local_mean * local_mean, 0.0)
    return np.concatenate(
        [c, GRAD_GAIN * _grad_mag(gray, 1), GRAD_GAIN * _grad_mag(gray, 2), VAR_GAIN * var], axis=1
    )


def _box(x, box):
    return conv2d(x, box[None, None])
