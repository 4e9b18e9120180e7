"""Constructed RIRs with known ground truth.

Used by the test-suite and the toy corpus; also handy for sanity-checking
an estimator against a room whose T60/DRR are known by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import DEFAULT_T0, ImpulseResponse, decay_rate, window_half_width
from .wavio import Waveform


@dataclass(frozen=True, eq=False)
class ConstructedRIR:
    ir: ImpulseResponse
    t60: float
    drr: float
    t_d: int


def exponential_rir(
    t60: float,
    drr: float | None = None,
    fs: int = 16000,
    duration: float | None = None,
    t_d: int = 480,
    rng: np.random.Generator | None = None,
    rir_id: str = "exp",
    t_0: float = DEFAULT_T0,
    direct: float = 1.0,
    noise: str = "sign",
) -> ConstructedRIR:
    """Unit (or DRR-scaled) direct impulse followed by exponentially decaying noise.

    The noise starts right after the early window, so the early window holds
    only the direct impulse. ``noise="sign"`` uses random +/-1 carriers, so
    the squared envelope (and hence the EDC) is exactly exponential;
    ``noise="gaussian"`` gives a more realistic, noisier tail. When ``drr`` is given the direct amplitude is
    solved from the late energy so that the early/late ratio is exactly
    ``drr`` dB; otherwise it is ``direct`` and the ratio is reported.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if duration is None:
        duration = max(0.5, 1.5 * t60) + t_d / fs
    n = int(round(duration * fs))
    w = window_half_width(t_0, fs)
    onset = t_d + w + 1
    if onset >= n:
        raise ValueError("duration too short for the early window")

    h = np.zeros(n)
    tau = (np.arange(onset, n) - t_d) / fs
    if noise == "sign":
        carrier = rng.choice([-1.0, 1.0], size=n - onset)
    elif noise == "gaussian":
        carrier = rng.standard_normal(n - onset)
    else:
        raise ValueError(f"unknown noise kind {noise!r}")
    late = carrier * np.exp(-decay_rate(t60) * tau)
    h[onset:] = late
    e_late = float(np.dot(late, late))
    if drr is None:
        amp = direct
    else:
        amp = math.sqrt(10.0 ** (drr / 10.0) * e_late)
    h[t_d] = amp
    if np.max(np.abs(late)) >= amp:
        # keep the direct path the global peak; shrink the tail instead
        h[onset:] *= 0.99 * amp / np.max(np.abs(late))
        e_late = float(np.dot(h[onset:], h[onset:]))
    actual = 10.0 * math.log10(amp * amp / e_late)
    ir = ImpulseResponse(Waveform(h, fs, rir_id), rir_id, "recorded")
    return ConstructedRIR(ir, t60, actual, t_d)


def exponential_envelope(t60: float, fs: int = 16000, duration: float = 1.0) -> np.ndarray:
    """Deterministic ``exp(-delta t)`` envelope, no noise."""
    t = np.arange(int(round(duration * fs))) / fs
    return np.exp(-decay_rate(t60) * t)
