"""Event-camera frames from pairs of grayscale intensity images.

A pixel fires when the log-intensity change crosses a threshold; polarity
is the sign of the change.  Gaussian noise is added in log space, which
keeps the model's illumination-ratio invariance exact at zero noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .assets import Image

LOG_FLOOR = 1e-4


class ResolutionMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass
class EventFrame:
    polarity: np.ndarray  # (h, w) int8 in {-1, 0, +1}
    t_start: float
    t_end: float
    threshold: float
    noise_sigma: float

    def __post_init__(self):
        self.polarity = np.asarray(self.polarity, dtype=np.int8)
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


def _as_gray(image: Image | np.ndarray) -> np.ndarray:
    arr = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        else:
            arr = arr[..., :3] @ np.array([0.2126, 0.7152, 0.0722], dtype=arr.dtype)
    return np.asarray(arr, dtype=np.float64)


def events_from_pair(intensity_t: Image | np.ndarray, intensity_next: Image | np.ndarray,
                     threshold: float, noise_sigma: float = 0.0, seed: int = 0,
                     t_start: float = 0.0, t_end: float = 0.0) -> EventFrame:
    """Per-pixel polarity of the log-intensity change between two images.

    Intensities are clamped to [1e-4, 1] before the log so zero pixels
    cannot fire on their own; the noise draw is fully determined by seed.
    """
    a = _as_gray(intensity_t)
    b = _as_gray(intensity_next)
    if a.shape != b.shape:
        raise ResolutionMismatch(f"{a.shape} vs {b.shape}")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    d = np.log(np.clip(b, LOG_FLOOR, 1.0)) - np.log(np.clip(a, LOG_FLOOR, 1.0))
    if noise_sigma > 0.0:
        gen = seeding.rng(seed, "events")
        d = d + gen.normal(0.0, noise_sigma, size=d.shape)
    pol = np.zeros(d.shape, dtype=np.int8)
    pol[d >= threshold] = 1
    pol[d <= -threshold] = -1
    return EventFrame(pol, t_start, t_end, threshold, noise_sigma)


def accumulate_events(frames: list[EventFrame]) -> EventFrame:
    """Collapse consecutive event frames into one (sign of summed polarity)."""
    if not frames:
        raise EmptyInput("no event frames to accumulate")
    shape = frames[0].polarity.shape
    total = np.zeros(shape, dtype=np.int32)
    for fr in frames:
        if fr.polarity.shape != shape:
            raise ResolutionMismatch(f"{fr.polarity.shape} vs {shape}")
        total += fr.polarity
    return EventFrame(np.sign(total).astype(np.int8),
                      frames[0].t_start, frames[-1].t_end,
                      frames[0].threshold, frames[0].noise_sigma)
