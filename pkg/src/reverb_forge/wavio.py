"""Mono RIFF/WAVE input and output.

Samples are held as float64 in normalized full scale regardless of the
on-disk depth, so intermediate gains above 1.0 never clip in memory.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import WaveFormatError

PCM16 = "pcm16"
FLOAT32 = "float32"
BIT_DEPTHS = (PCM16, FLOAT32)

_PCM16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    # scratch metadata for callers (e.g. the on-disk depth read_wave saw)
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("Waveform samples must be one-dimensional")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def replace(self, samples=None, source_id=None) -> "Waveform":
        return Waveform(
            self.samples if samples is None else samples,
            self.sample_rate,
            self.source_id if source_id is None else source_id,
        )


def read_wave(path: str | Path, source_id: str | None = None) -> Waveform:
    """Read a mono PCM-16 or float-32 WAV file.

    Multi-channel files keep channel 0 only (a warning is issued). PCM-16
    values are divided by 32768, so full-scale positive reads as 32767/32768.
    """
    path = Path(path)
    try:
        fs, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise WaveFormatError(f"{path}: unreadable WAV ({exc})") from exc

    if data.dtype == np.int16:
        depth = PCM16
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        depth = FLOAT32
        samples = data.astype(np.float64)
    else:
        raise WaveFormatError(f"{path}: unsupported sample format {data.dtype}")

    if samples.ndim == 2:
        if samples.shape[1] > 1:
            warnings.warn(f"{path}: {samples.shape[1]} channels, using channel 0", stacklevel=2)
        samples = samples[:, 0]
    if samples.shape[0] == 0:
        raise WaveFormatError(f"{path}: zero-length data chunk")

    return Waveform(
        np.ascontiguousarray(samples),
        fs,
        path.stem if source_id is None else source_id,
        info={"bit_depth": depth},
    )


def write_wave(w: Waveform, path: str | Path, bit_depth: str = FLOAT32) -> int:
    """Write ``w`` to ``path`` and return the number of clipped samples.

    Only the PCM-16 path can clip; float-32 stores values verbatim.
    """
    if bit_depth not in BIT_DEPTHS:
        raise ValueError(f"bit_depth must be one of {BIT_DEPTHS}, got {bit_depth!r}")
    x = w.samples
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot write non-finite samples")

    clipped = 0
    if bit_depth == PCM16:
        clipped = int(np.count_nonzero(np.abs(x) > 1.0))
        q = np.clip(np.round(x * _PCM16_SCALE), -32768, 32767).astype(np.int16)
        data = q
    else:
        data = x.astype(np.float32)
    wavfile.write(Path(path), w.sample_rate, data)
    return clipped
