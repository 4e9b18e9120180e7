"""Early/late decomposition of room impulse responses and T60/DRR estimation.

An RIR ``h`` is split around its direct path ``t_d`` (the global peak of
``|h|``) into an early part covering ``t_d +/- t_0`` and a late field covering
everything after that window. Samples before the window belong to neither.

DRR is the early-to-late energy ratio over exactly that partition, so the
synthesis stage can hit a DRR target by construction. T60 is read from a
Schroeder energy decay curve of the late field (see :func:`estimate_t60`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import AnalysisError, InsufficientDecayError, SilentSignalError
from .wavio import Waveform

DEFAULT_T0 = 0.0025
DEFAULT_FIT_RANGE = (-5.0, -25.0)
# amplitude envelope exp(-delta * t) loses 60 dB of energy at t = T60
LN_1000 = math.log(1000.0)
KINDS = ("recorded", "synthetic", "simulated")
ENVELOPE_BLOCKS = 20


def decay_rate(t60: float) -> float:
    """Amplitude decay rate ``delta = ln(1000) / T60`` in 1/s."""
    if not t60 > 0:
        raise ValueError(f"T60 must be positive, got {t60}")
    return LN_1000 / t60


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    wave: Waveform
    rir_id: str
    kind: str = "recorded"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def h(self) -> np.ndarray:
        return self.wave.samples

    @property
    def fs(self) -> int:
        return self.wave.sample_rate

    @classmethod
    def from_samples(cls, h, fs: int, rir_id: str, kind: str = "recorded") -> "ImpulseResponse":
        return cls(Waveform(h, fs, rir_id), rir_id, kind)


@dataclass(frozen=True, eq=False)
class EarlyLateSplit:
    """Early/late partition in the parent's index space.

    ``early`` and ``late`` have the parent's length; ``lo``/``hi`` are the
    inclusive bounds of the early window.
    """

    h: np.ndarray
    fs: int
    t_d: int
    t_0: float
    lo: int
    hi: int
    early: np.ndarray
    late: np.ndarray

    @property
    def early_segment(self) -> np.ndarray:
        return self.h[self.lo:self.hi + 1]

    @property
    def late_segment(self) -> np.ndarray:
        return self.h[self.hi + 1:]


@dataclass(frozen=True)
class AcousticParams:
    t60: float
    drr: float
    band_t60: list[tuple[float, float | None]] | None = field(default=None)
    t_d: int | None = None


def _require_audible(h: np.ndarray) -> None:
    if h.size == 0 or not np.any(h):
        raise SilentSignalError("impulse response is all zeros")


def detect_direct_path(ir: ImpulseResponse | np.ndarray) -> int:
    """Index of the largest ``|h|`` (first one on ties)."""
    h = ir.h if isinstance(ir, ImpulseResponse) else np.asarray(ir, dtype=np.float64)
    _require_audible(h)
    return int(np.argmax(np.abs(h)))


def window_half_width(t_0: float, fs: int) -> int:
    if not t_0 > 0:
        raise ValueError(f"t_0 must be positive, got {t_0}")
    return int(round(t_0 * fs))


def split_early_late(ir: ImpulseResponse, t_0: float = DEFAULT_T0, t_d: int | None = None) -> EarlyLateSplit:
    h = ir.h
    fs = ir.fs
    w = window_half_width(t_0, fs)
    if 2 * w + 1 > h.shape[0]:
        raise AnalysisError(f"early window of {2 * w + 1} samples exceeds RIR length {h.shape[0]}")
    if t_d is None:
        t_d = detect_direct_path(h)
    if not 0 <= t_d < h.shape[0]:
        raise AnalysisError(f"direct path index {t_d} outside RIR")
    lo = max(0, t_d - w)
    hi = min(h.shape[0] - 1, t_d + w)

    early = np.zeros_like(h)
    early[lo:hi + 1] = h[lo:hi + 1]
    late = np.zeros_like(h)
    late[hi + 1:] = h[hi + 1:]
    return EarlyLateSplit(h, fs, t_d, t_0, lo, hi, early, late)


def drr_from_energies(e_early: float, e_late: float) -> float:
    """``10 log10(e_early / e_late)`` with +/-inf for empty sides."""
    if e_late <= 0.0:
        return math.inf
    if e_early <= 0.0:
        return -math.inf
    return 10.0 * math.log10(e_early / e_late)


def estimate_drr(split: EarlyLateSplit) -> float:
    """DRR in dB. An empty late field gives ``+inf``, an empty early part ``-inf``."""
    e_early = float(np.dot(split.early_segment, split.early_segment))
    late = split.late_segment
    e_late = float(np.dot(late, late))
    return drr_from_energies(e_early, e_late)


def energy_decay_curve(h) -> np.ndarray:
    """Schroeder backward integral in dB, normalized so that ``EDC[0] == 0``."""
    h = np.asarray(h, dtype=np.float64)
    _require_audible(h)
    energy = np.cumsum((h * h)[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def envelope_drop_db(x, blocks: int = ENVELOPE_BLOCKS) -> float:
    """Loudest block energy over the final block energy, in dB (blocks of ``len // blocks``)."""
    x = np.asarray(x, dtype=np.float64)
    m = max(1, x.shape[0] // blocks)
    k = x.shape[0] // m
    e = np.mean((x[x.shape[0] - k * m:] ** 2).reshape(k, m), axis=1)
    if e[-1] <= 0.0:
        return math.inf
    return 10.0 * math.log10(float(e.max()) / float(e[-1]))


def fit_decay(x, fs: int, fit_range=DEFAULT_FIT_RANGE) -> float:
    """T60 of a decaying sequence from a line fit to its EDC.

    The line is fit where ``fit_range[1] <= EDC <= fit_range[0]`` and
    extrapolated to -60 dB.
    """
    fit_hi, fit_lo = float(fit_range[0]), float(fit_range[1])
    if not fit_lo < fit_hi <= 0:
        raise ValueError(f"fit range must satisfy lower < upper <= 0 dB, got {fit_range}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise AnalysisError("non-finite samples in decay")
    with np.errstate(over="ignore", invalid="ignore"):
        edc = energy_decay_curve(x)
    if not np.isfinite(edc[0]) or np.isnan(edc).any():
        raise AnalysisError("energy decay curve overflowed")
    if edc[-1] > fit_lo:
        raise InsufficientDecayError(
            f"decay only reaches {edc[-1]:.1f} dB, above the {fit_lo:g} dB fit bound"
        )
    # The backward integral of any finite signal dives to -inf at its last
    # sample, so the EDC alone would "decay" even for a flat envelope. Require
    # the signal energy itself to have dropped past the fit bound.
    drop = envelope_drop_db(x)
    if drop < -fit_lo:
        raise InsufficientDecayError(
            f"signal energy only falls {drop:.1f} dB, less than the {-fit_lo:g} dB fit bound"
        )
    i0 = int(np.argmax(edc <= fit_hi))
    i1 = int(np.nonzero(edc >= fit_lo)[0][-1])
    if i1 - i0 < 1:
        raise InsufficientDecayError("fewer than two EDC points inside the fit range")
    # least-squares slope over consecutive samples: sum(k^2) = m (m^2 - 1) / 12
    y = edc[i0:i1 + 1]
    m = y.shape[0]
    k = np.arange(m, dtype=np.float64) - (m - 1) / 2.0
    slope = float(np.dot(k, y)) * 12.0 / (m * (m * m - 1.0)) * fs
    if not slope < 0:
        raise AnalysisError(f"non-negative decay slope {slope:.3g} dB/s")
    return -60.0 / slope


def estimate_t60(
    ir: ImpulseResponse,
    fit_range=DEFAULT_FIT_RANGE,
    t_0: float = DEFAULT_T0,
    split: EarlyLateSplit | None = None,
) -> float:
    """Broadband T60 in seconds.

    The EDC is integrated over the late field only. Including the early
    window would put a DRR-sized step into the curve, and for DRR above a few
    dB the whole fit range would fall on that step.
    """
    if split is None:
        split = split_early_late(ir, t_0)
    late = split.late_segment
    if late.size == 0 or not np.any(late):
        raise InsufficientDecayError("late field is empty")
    return fit_decay(late, ir.fs, fit_range)


def default_band_centers(fs: int) -> list[float]:
    """Octave centers from 125 Hz up while the band's upper edge stays below Nyquist."""
    centers = []
    fc = 125.0
    while fc * math.sqrt(2.0) < fs / 2.0:
        centers.append(fc)
        fc *= 2.0
    return centers


@lru_cache(maxsize=64)
def octave_sos(center: float, fs: int) -> np.ndarray:
    """4th-order Butterworth band-pass (two sections), one octave wide."""
    nyq = fs / 2.0
    if not 0 < center < nyq:
        raise ValueError(f"band center {center} Hz must lie in (0, {nyq}) Hz")
    lo = center / math.sqrt(2.0)
    hi = min(center * math.sqrt(2.0), 0.999 * nyq)
    return signal.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")


def band_filter(x: np.ndarray, center: float, fs: int) -> np.ndarray:
    # causal on purpose: zero-phase filtering would smear energy ahead of the onset
    return signal.sosfilt(octave_sos(float(center), int(fs)), x)


def octave_band_t60(
    ir: ImpulseResponse,
    centers=None,
    fit_range=DEFAULT_FIT_RANGE,
    t_0: float = DEFAULT_T0,
    split: EarlyLateSplit | None = None,
) -> list[tuple[float, float | None]]:
    """Per-octave T60 of the late field; ``None`` where a band does not decay enough."""
    if centers is None:
        centers = default_band_centers(ir.fs)
    centers = [float(c) for c in centers]
    if not centers:
        raise ValueError("no band centers given")
    for c in centers:
        if not 0 < c < ir.fs / 2:
            raise ValueError(f"band center {c} Hz is not below Nyquist ({ir.fs / 2} Hz)")
    if split is None:
        split = split_early_late(ir, t_0)
    late = split.late_segment

    out = []
    for c in centers:
        try:
            t60 = fit_decay(band_filter(late, c, ir.fs), ir.fs, fit_range)
        except AnalysisError:
            t60 = None
        out.append((c, t60))
    return out


def analyze(
    ir: ImpulseResponse,
    t_0: float = DEFAULT_T0,
    fit_range=DEFAULT_FIT_RANGE,
    centers=None,
    bands: bool = True,
) -> AcousticParams:
    """Full parameter set for one RIR. Raises :class:`AnalysisError` on failure."""
    split = split_early_late(ir, t_0)
    t60 = estimate_t60(ir, fit_range, t_0, split=split)
    drr = estimate_drr(split)
    band_t60 = octave_band_t60(ir, centers, fit_range, t_0, split=split) if bands else None
    return AcousticParams(t60=t60, drr=drr, band_t60=band_t60, t_d=split.t_d)
