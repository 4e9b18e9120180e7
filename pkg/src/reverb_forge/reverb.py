"""Speech-RIR convolution and the amplitude randomization around it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from .analysis import ImpulseResponse
from .errors import SampleRateMismatchError
from .wavio import Waveform

SCALE_RANGE = (0.4, 1.0)
RENORM_PEAK = 0.999
FULL = "full"
TRIM = "trim"
LENGTH_POLICIES = (FULL, TRIM)
# IRs this sparse are applied by shift-and-add; exact for deltas and cheaper
SPARSE_TAPS = 64


@dataclass(frozen=True)
class ReverbRecipe:
    rir_id: str
    scale: float
    seed_tag: str

    def __post_init__(self):
        if not SCALE_RANGE[0] <= self.scale <= SCALE_RANGE[1]:
            raise ValueError(f"scale {self.scale} outside {SCALE_RANGE}")


def fft_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution via real FFTs of a fast length."""
    n = x.shape[0] + h.shape[0] - 1
    nfft = sp_fft.next_fast_len(n, real=True)
    y = np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)
    return y[:n]


def _sparse_convolve(x: np.ndarray, h: np.ndarray, taps: np.ndarray) -> np.ndarray:
    y = np.zeros(x.shape[0] + h.shape[0] - 1)
    for k in taps:
        y[k:k + x.shape[0]] += h[k] * x
    return y


def convolve_arrays(x, h) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 1 or h.ndim != 1 or x.size == 0 or h.size == 0:
        raise ValueError("convolution needs two non-empty 1-D sequences")
    taps = np.flatnonzero(h)
    if taps.size <= SPARSE_TAPS:
        return _sparse_convolve(x, h, taps)
    return fft_convolve(x, h)


def convolve(speech: Waveform, ir: ImpulseResponse) -> Waveform:
    """Reverberant ``speech``: full convolution, length ``N + M - 1``."""
    if speech.sample_rate != ir.fs:
        raise SampleRateMismatchError(
            f"speech {speech.source_id!r} is {speech.sample_rate} Hz but RIR {ir.rir_id!r} is {ir.fs} Hz"
        )
    return speech.replace(samples=convolve_arrays(speech.samples, ir.h))


def finalize(reverb: Waveform, scale: float = 1.0, length_policy: str = FULL, n_input: int | None = None):
    """Scale, guard against clipping, then apply the length policy.

    Returns ``(waveform, renormalized)``. If scaling leaves any sample above
    full scale the whole signal is renormalized to a 0.999 peak rather than
    clipped.
    """
    if not 0 < scale <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    if length_policy not in LENGTH_POLICIES:
        raise ValueError(f"length_policy must be one of {LENGTH_POLICIES}, got {length_policy!r}")
    if length_policy == TRIM and n_input is None:
        raise ValueError("trim policy needs the input length")

    y = reverb.samples * scale
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    flagged = peak > 1.0
    if flagged:
        y = y * (RENORM_PEAK / peak)
    if length_policy == TRIM:
        y = y[:n_input]
    return reverb.replace(samples=y), flagged


def draw_recipe(rng: np.random.Generator, inventory_ids, seed_tag: str = "", scale_range=SCALE_RANGE) -> ReverbRecipe:
    """Uniform RIR choice and uniform scale."""
    ids = list(inventory_ids)
    if not ids:
        raise ValueError("RIR inventory is empty")
    idx = int(rng.integers(len(ids)))
    scale = float(rng.uniform(scale_range[0], scale_range[1]))
    return ReverbRecipe(ids[idx], scale, seed_tag)
