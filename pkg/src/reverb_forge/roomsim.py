"""Shoebox image-source simulation (Allen & Berkley style).

Walls are ordered ``(x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)``. Along one axis the
images sit at ``(1 - 2q) * s + 2 n L`` for ``q in {0, 1}`` and integer ``n``,
having hit the near wall ``|n - q|`` times and the far wall ``|n|`` times.
Each arrival is rendered with an 81-tap Hann-windowed sinc at its
fractional delay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import ImpulseResponse
from .errors import RoomSpecError
from .wavio import Waveform

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81
TAIL_S = 0.05
MAX_IR_S = 10.0
DYNAMIC_RANGE_DB = 60.0
MAX_ORDER_CAP = 400
_CHUNK = 1 << 16


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float]
    source: tuple[float, float, float]
    mic: tuple[float, float, float]
    wall_reflectivity: tuple[float, ...] = (0.9,) * 6
    max_order: int | None = None
    sample_rate: int = 16000
    speed_of_sound: float = SPEED_OF_SOUND

    def validate(self) -> "RoomSpec":
        dims = np.asarray(self.dimensions, dtype=float)
        src = np.asarray(self.source, dtype=float)
        mic = np.asarray(self.mic, dtype=float)
        beta = np.asarray(self.wall_reflectivity, dtype=float)
        if dims.shape != (3,) or src.shape != (3,) or mic.shape != (3,):
            raise RoomSpecError("dimensions, source and mic must be 3-vectors")
        if np.any(dims <= 0):
            raise RoomSpecError(f"room dimensions must be positive, got {self.dimensions}")
        for name, p in (("source", src), ("mic", mic)):
            if np.any(p <= 0) or np.any(p >= dims):
                raise RoomSpecError(f"{name} {tuple(p)} is not strictly inside the room {tuple(dims)}")
        if np.allclose(src, mic, rtol=0, atol=0):
            raise RoomSpecError("source and mic coincide")
        if beta.shape != (6,):
            raise RoomSpecError("wall_reflectivity needs one value per wall (6)")
        if np.any(beta < 0) or np.any(beta >= 1):
            raise RoomSpecError(f"wall reflectivities must lie in [0, 1), got {self.wall_reflectivity}")
        if self.max_order is not None and self.max_order < 0:
            raise RoomSpecError("max_order must be >= 0")
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise RoomSpecError("sample_rate and speed_of_sound must be positive")
        return self

    @property
    def direct_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source, self.mic)))


def eyring_t60(spec: RoomSpec) -> float:
    """Eyring reverberation time from geometry and wall reflectivities."""
    lx, ly, lz = spec.dimensions
    areas = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])
    alpha = 1.0 - np.asarray(spec.wall_reflectivity, dtype=float) ** 2
    mean_alpha = float(np.dot(areas, alpha) / areas.sum())
    if mean_alpha >= 1.0:
        return 0.0
    volume = lx * ly * lz
    return 24.0 * math.log(10.0) * volume / (-spec.speed_of_sound * areas.sum() * math.log1p(-mean_alpha))


def _coverage_time(spec: RoomSpec, dynamic_range_db: float = DYNAMIC_RANGE_DB) -> float:
    return eyring_t60(spec) * dynamic_range_db / 60.0


def complete_radius(spec: RoomSpec, order: int) -> float:
    """Radius inside which every image with at most ``order`` reflections exists."""
    inv = math.sqrt(sum(1.0 / (length * length) for length in spec.dimensions))
    return order / inv


def adaptive_order(spec: RoomSpec, dynamic_range_db: float = DYNAMIC_RANGE_DB) -> int:
    """Reflection order at which the image set stays complete until the tail is 60 dB down.

    Images with at most ``N`` reflections fill every direction out to a
    radius of ``N / sqrt(sum(1 / L_i**2))``. The order is chosen so that this
    radius covers the Eyring-predicted time for a ``dynamic_range_db`` decay;
    a plain per-image amplitude cutoff stops far earlier, because the many
    individually weak late images still carry most of the tail energy.
    """
    if max(spec.wall_reflectivity) == 0:
        return 0
    inv = math.sqrt(sum(1.0 / (length * length) for length in spec.dimensions))
    order = math.ceil(spec.speed_of_sound * _coverage_time(spec, dynamic_range_db) * inv)
    return int(min(max(order, 1), MAX_ORDER_CAP))


def _axis_images(s: float, length: float, b_near: float, b_far: float, order: int):
    n = np.arange(-order, order + 1)
    coords, orders, gains = [], [], []
    for q in (0, 1):
        hits_near = np.abs(n - q)
        hits_far = np.abs(n)
        coords.append((1 - 2 * q) * s + 2 * n * length)
        orders.append(hits_near + hits_far)
        with np.errstate(invalid="ignore"):
            gains.append(np.power(b_near, hits_near) * np.power(b_far, hits_far))
    coords = np.concatenate(coords)
    orders = np.concatenate(orders)
    gains = np.concatenate(gains)
    keep = orders <= order
    return coords[keep], orders[keep], gains[keep]


def _check_length(spec: RoomSpec, order: int) -> None:
    """Fail before enumeration if some single-axis image already breaks the length cap."""
    src = np.asarray(spec.source, dtype=float)
    mic = np.asarray(spec.mic, dtype=float)
    worst = 0.0
    for i in range(3):
        coords, _, _ = _axis_images(src[i], spec.dimensions[i], 1.0, 1.0, order)
        d = src - mic
        d[i] = np.max(np.abs(coords - mic[i]))
        worst = max(worst, float(np.linalg.norm(d)))
    n = worst / spec.speed_of_sound * spec.sample_rate + SINC_TAPS + TAIL_S * spec.sample_rate
    if n > MAX_IR_S * spec.sample_rate:
        raise RoomSpecError(
            f"order {order} gives paths of {worst:.0f} m, over the {MAX_IR_S:g} s length cap; lower max_order"
        )


def image_sources(spec: RoomSpec, max_order: int | None = None):
    """Image positions, reflection orders and wall gains up to ``max_order``.

    Returns ``(positions (K, 3), orders (K,), gains (K,))``; images whose gain
    is exactly zero are dropped.
    """
    spec.validate()
    order = spec.max_order if max_order is None else max_order
    if order is None:
        order = adaptive_order(spec)
    if max(spec.wall_reflectivity) == 0:
        order = 0  # every image has zero gain
    _check_length(spec, order)
    b = spec.wall_reflectivity
    ax = [_axis_images(spec.source[i], spec.dimensions[i], b[2 * i], b[2 * i + 1], order) for i in range(3)]

    (x, ox, gx), (y, oy, gy), (z, oz, gz) = ax
    oxy = ox[:, None] + oy[None, :]
    ixy = np.nonzero(oxy <= order)
    xs, ys = x[ixy[0]], y[ixy[1]]
    o2 = oxy[ixy]
    g2 = gx[ixy[0]] * gy[ixy[1]]

    o3 = o2[:, None] + oz[None, :]
    i3 = np.nonzero(o3 <= order)
    pos = np.stack([xs[i3[0]], ys[i3[0]], z[i3[1]]], axis=1)
    orders = o3[i3]
    gains = g2[i3[0]] * gz[i3[1]]
    nz = gains != 0
    return pos[nz], orders[nz], gains[nz]


def _windowed_sinc(frac_offsets: np.ndarray) -> np.ndarray:
    half = (SINC_TAPS - 1) // 2
    w = 0.5 * (1.0 + np.cos(np.pi * frac_offsets / (half + 1)))
    return np.sinc(frac_offsets) * w


def render_arrivals(delays: np.ndarray, amplitudes: np.ndarray, n_samples: int) -> np.ndarray:
    """Sum of band-limited impulses at fractional sample ``delays``."""
    half = (SINC_TAPS - 1) // 2
    offs = np.arange(-half, half + 1)
    out = np.zeros(n_samples, dtype=np.float64)
    for start in range(0, delays.shape[0], _CHUNK):
        d = delays[start:start + _CHUNK]
        a = amplitudes[start:start + _CHUNK]
        base = np.floor(d).astype(np.int64)
        idx = base[:, None] + offs[None, :]
        taps = _windowed_sinc(idx - d[:, None]) * a[:, None]
        ok = (idx >= 0) & (idx < n_samples)
        out += np.bincount(idx[ok], weights=taps[ok], minlength=n_samples)
    return out


def simulate_rir(spec: RoomSpec, rir_id: str = "sim") -> ImpulseResponse:
    """Image-source RIR of ``spec``.

    With ``max_order=None`` the order comes from :func:`adaptive_order` and
    images beyond the lattice-complete radius are dropped. Past that radius
    only the near-axial images survive; they hit few walls per metre, so
    they would leave a slowly decaying, direction-biased tail.
    """
    spec.validate()
    pos, _, gains = image_sources(spec)
    mic = np.asarray(spec.mic, dtype=float)
    dist = np.sqrt(np.sum((pos - mic) ** 2, axis=1))
    if spec.max_order is None:
        keep = dist <= max(complete_radius(spec, adaptive_order(spec)), spec.direct_distance)
        dist, gains = dist[keep], gains[keep]
    fs = spec.sample_rate
    delays = dist / spec.speed_of_sound * fs
    half = (SINC_TAPS - 1) // 2
    n = int(math.ceil(delays.max())) + half + 1 + int(round(TAIL_S * fs))
    if n > MAX_IR_S * fs:
        raise RoomSpecError(
            f"impulse response would be {n / fs:.1f} s long (cap {MAX_IR_S:g} s); lower max_order"
        )
    amps = gains / (4.0 * math.pi * dist)
    h = render_arrivals(delays, amps, n)
    return ImpulseResponse(Waveform(h, fs, rir_id), rir_id, "simulated")


@dataclass(frozen=True)
class RoomRanges:
    length: tuple[float, float] = (3.0, 10.0)
    width: tuple[float, float] = (3.0, 10.0)
    height: tuple[float, float] = (2.5, 4.5)
    beta: tuple[float, float] = (0.7, 0.95)
    clearance: float = 0.5
    min_separation: float = 0.3
    sample_rate: int = 16000
    max_order: int | None = None


def sample_rooms(rng: np.random.Generator, count: int, ranges: RoomRanges = RoomRanges()) -> list[RoomSpec]:
    """Random shoebox rooms with source/mic kept off the walls and apart."""
    if count < 1:
        raise ValueError("count must be >= 1")
    dims_lo = (ranges.length[0], ranges.width[0], ranges.height[0])
    for lo in dims_lo:
        if lo <= 2 * ranges.clearance:
            raise RoomSpecError(
                f"dimension lower bound {lo} m leaves no room for {ranges.clearance} m wall clearance"
            )
    if not 0 <= ranges.beta[0] <= ranges.beta[1] < 1:
        raise RoomSpecError(f"beta range must lie in [0, 1), got {ranges.beta}")

    specs = []
    for _ in range(count):
        dims = np.array([rng.uniform(*ranges.length), rng.uniform(*ranges.width), rng.uniform(*ranges.height)])
        beta = tuple(float(b) for b in rng.uniform(ranges.beta[0], ranges.beta[1], size=6))
        lo = np.full(3, ranges.clearance)
        hi = dims - ranges.clearance
        src = rng.uniform(lo, hi)
        for _ in range(1000):
            mic = rng.uniform(lo, hi)
            if np.linalg.norm(mic - src) >= ranges.min_separation:
                break
        else:
            raise RoomSpecError("could not place mic with the required separation")
        specs.append(RoomSpec(
            tuple(float(v) for v in dims),
            tuple(float(v) for v in src),
            tuple(float(v) for v in mic),
            beta,
            ranges.max_order,
            ranges.sample_rate,
        ).validate())
    return specs
