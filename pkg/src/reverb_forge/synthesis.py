"""Synthetic RIRs with target T60 and DRR derived from a recorded parent.

Per attempt: split the parent, re-shape the late-field decay to the target
T60, scale the early part so the early/late energy ratio equals the target
DRR, and reject the result if the late-field peak exceeds the early peak.
Attempts the parent cannot realize (too short a tail, an output that no
longer re-estimates to the target) are rejected as well, each with its reason.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    DEFAULT_FIT_RANGE,
    DEFAULT_T0,
    AcousticParams,
    EarlyLateSplit,
    ImpulseResponse,
    band_filter,
    decay_rate,
    drr_from_energies,
    estimate_drr,
    estimate_t60,
    fit_decay,
    octave_band_t60,
    split_early_late,
)
from .errors import AnalysisError
from .seeding import substream
from .wavio import FLOAT32, Waveform, write_wave

T60_RANGE = (0.02, 2.0)
DRR_RANGE = (-10.0, 30.0)
OUTPUT_PEAK = 0.9
RETRY_CAP = 1000
MIN_VALID_BANDS = 3
# closed-loop decay correction: relative T60 tolerance and iteration cap
T60_LOOP_TOL = 0.01
T60_LOOP_ITERS = 6
CALIBRATION_ITERS = 8
# total closed-loop rate correction, as a fraction of the target rate
NUDGE_LIMIT = 0.5
# a target decay must fall this far past the lower fit bound inside the parent
DECAY_MARGIN_DB = 10.0

REJECT_LATE_PEAK = "late-peak-exceeds-early"
REJECT_PRE_PEAK = "pre-direct-peak-exceeds-early"
REJECT_ANALYSIS = "output-analysis-failed"
REJECT_TOO_SHORT = "parent-too-short-for-target"
REJECT_OFF_TARGET = "achieved-off-target"
# round-trip tolerance an accepted output must meet on re-estimation
T60_TOL_REL = 0.10
T60_TOL_ABS = 0.02
DRR_TOL_DB = 1.0


def within_tolerance(target: "SynthesisTarget", t60: float, drr: float) -> bool:
    t60_err = abs(t60 - target.t60_target)
    return t60_err <= max(T60_TOL_REL * target.t60_target, T60_TOL_ABS) and abs(drr - target.drr_target) <= DRR_TOL_DB


@dataclass(frozen=True)
class SynthesisTarget:
    t60_target: float
    drr_target: float

    def check(self, t60_range=T60_RANGE, drr_range=DRR_RANGE) -> "SynthesisTarget":
        if not t60_range[0] <= self.t60_target <= t60_range[1]:
            raise ValueError(f"t60_target {self.t60_target} outside {t60_range}")
        if not drr_range[0] <= self.drr_target <= drr_range[1]:
            raise ValueError(f"drr_target {self.drr_target} outside {drr_range}")
        return self


@dataclass(frozen=True, eq=False)
class SynthesisOutcome:
    target: SynthesisTarget
    accepted: bool
    ir: ImpulseResponse | None = None
    achieved: AcousticParams | None = None
    attempts: int = 1
    reason: str | None = None


def sample_target(rng: np.random.Generator, t60_range=T60_RANGE, drr_range=DRR_RANGE) -> SynthesisTarget:
    t60 = float(rng.uniform(t60_range[0], t60_range[1]))
    drr = float(rng.uniform(drr_range[0], drr_range[1]))
    return SynthesisTarget(t60, drr)


def _late_time(split: EarlyLateSplit) -> np.ndarray:
    """Seconds since the direct path for every late-field sample."""
    n = split.h.shape[0]
    return (np.arange(split.hi + 1, n, dtype=np.float64) - split.t_d) / split.fs


def reshape_t60(
    split: EarlyLateSplit,
    t60_orig: float,
    t60_target: float,
    fs: int | None = None,
    band_t60=None,
) -> np.ndarray:
    """Late field with its decay changed from ``t60_orig`` to ``t60_target``.

    Broadband: ``late * exp(-(delta_tgt - delta_orig) * (t - t_d) / fs)``.
    With ``band_t60`` (``[(center, t60 or None), ...]``) each band with a
    valid estimate gets its own ``delta_orig``; whatever the bands do not
    capture keeps the broadband rate. Returned in the parent index space.
    """
    fs = split.fs if fs is None else fs
    d_tgt = decay_rate(t60_target)
    d_org = decay_rate(t60_orig)
    out = np.zeros_like(split.h)
    if t60_target == t60_orig and band_t60 is None:
        out[split.hi + 1:] = split.late_segment
        return out
    tau = _late_time(split)
    late = split.late_segment
    if band_t60 is None:
        out[split.hi + 1:] = late * np.exp(-(d_tgt - d_org) * tau)
        return out
    components = _band_components(late, fs, band_t60, d_org)
    out[split.hi + 1:] = _apply_gains(components, tau, d_tgt)
    return out


def _band_components(late: np.ndarray, fs: int, band_t60, d_broadband: float):
    """``[(delta, component), ...]`` summing exactly to ``late``."""
    comps = []
    residual = late.copy()
    for center, t60 in band_t60:
        if t60 is None:
            continue
        b = band_filter(late, center, fs)
        residual -= b
        comps.append((decay_rate(t60), b))
    comps.append((d_broadband, residual))
    return comps


def _calibrate_rate(
    comp: np.ndarray, d_org: float, tau: np.ndarray, fs: int, fit_range, t60_ref: float
) -> tuple[float, bool]:
    """Decay rate of ``comp`` as seen after stretching it to ``t60_ref``.

    The EDC fit only sees the first ~20 dB of a decay, which for a noisy band
    is a local estimate. Stretched to a long T60 the same fit window spans
    the whole tail, so an error that amplification would otherwise magnify
    is measured where it matters. Returns ``(rate, converged)``; on failure
    the rate is ``d_org``.
    """
    d_ref = decay_rate(t60_ref)
    d = d_org
    for _ in range(CALIBRATION_ITERS):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                measured = fit_decay(comp * np.exp((d - d_ref) * tau), fs, fit_range)
        except AnalysisError:
            return d_org, False
        if abs(measured - t60_ref) <= T60_LOOP_TOL * t60_ref:
            return d, True
        d += decay_rate(measured) - d_ref
        if not 0.25 * d_org <= d <= 4.0 * d_org:
            return d_org, False
    return d_org, False


def _apply_gains(components, tau: np.ndarray, d_tgt: float) -> np.ndarray:
    acc = np.zeros_like(tau)
    for d_org, comp in components:
        acc += comp * np.exp((d_org - d_tgt) * tau)
    return acc


def drr_gain(e_early: float, e_late: float, drr_target: float) -> float:
    if e_early <= 0:
        raise AnalysisError("early part has zero energy")
    if e_late <= 0:
        raise AnalysisError("late field has zero energy")
    return math.sqrt(10.0 ** (drr_target / 10.0) * e_late / e_early)


def reshape_drr(split: EarlyLateSplit, late_prime: np.ndarray, drr_target: float) -> np.ndarray:
    """Early part scaled so that ``estimate_drr(early', late') == drr_target``."""
    e_early = float(np.dot(split.early_segment, split.early_segment))
    lp = late_prime[split.hi + 1:] if late_prime.shape[0] == split.h.shape[0] else late_prime
    e_late = float(np.dot(lp, lp))
    alpha = drr_gain(e_early, e_late, drr_target)
    if alpha == 1.0:
        return split.early.copy()
    return split.early * alpha


def recombine(split: EarlyLateSplit, early_prime: np.ndarray, late_prime: np.ndarray) -> np.ndarray:
    """Parent-length RIR: pre-window samples verbatim, then ``early'``, then ``late'``.

    ``early_prime`` and ``late_prime`` may be the window/late segments or
    full parent-length sequences.
    """
    n = split.h.shape[0]
    e = early_prime[split.lo:split.hi + 1] if early_prime.shape[0] == n else early_prime
    lt = late_prime[split.hi + 1:] if late_prime.shape[0] == n else late_prime
    if e.shape[0] != split.hi + 1 - split.lo or lt.shape[0] != n - split.hi - 1:
        raise ValueError("early/late segments do not match the split")
    return np.concatenate([split.h[:split.lo], e, lt])


@dataclass(eq=False)
class PreparedParent:
    """A parent RIR analyzed once, ready for many synthesis attempts."""

    ir: ImpulseResponse
    split: EarlyLateSplit
    t60: float
    drr: float
    band_t60: list
    components: list = field(repr=False)
    tau: np.ndarray = field(repr=False)
    e_early: float = 0.0
    early_peak: float = 0.0
    pre_peak: float = 0.0
    t_0: float = DEFAULT_T0
    fit_range: tuple = DEFAULT_FIT_RANGE

    @property
    def late_duration(self) -> float:
        return self.tau.shape[0] / self.split.fs

    def max_reachable_t60(self) -> float:
        """Longest T60 whose decay the late field can hold to the fit bound plus margin."""
        return 60.0 * self.late_duration / (DECAY_MARGIN_DB - self.fit_range[1])

    @property
    def uses_bands(self) -> bool:
        return len(self.components) > 1

    def late_for(self, t60_target: float) -> np.ndarray:
        """Re-shaped late segment whose measured T60 is ``t60_target``.

        The open-loop gain law is exact only if the parent's decay rates were
        estimated exactly; any estimation error is multiplied by the ratio of
        target to parent T60. The result is therefore re-measured with the
        same estimator and nudged by a broadband decay until it agrees.
        """
        d_tgt = decay_rate(t60_target)
        base = _apply_gains(self.components, self.tau, d_tgt)
        limit = NUDGE_LIMIT * d_tgt

        def error_at(shift):
            with np.errstate(over="ignore", invalid="ignore"):
                cand = base * np.exp(shift * self.tau) if shift else base
                if not np.all(np.isfinite(cand)):
                    return None, cand
                try:
                    return decay_rate(fit_decay(cand, self.split.fs, self.fit_range)) - d_tgt, cand
                except AnalysisError:
                    return None, cand

        # secant search on the extra decay rate; the measured rate does not
        # track the applied one one-for-one when the tail is not a clean exponential
        g0, best = error_at(0.0)
        if g0 is None:
            return base
        best_err = abs(g0)
        s0, s1 = 0.0, float(np.clip(g0, -limit, limit))
        for _ in range(T60_LOOP_ITERS):
            if best_err <= T60_LOOP_TOL * d_tgt or s1 == s0:
                break
            g1, cand = error_at(s1)
            if g1 is None:
                s1 = 0.5 * (s0 + s1)
                continue
            if abs(g1) < best_err:
                best_err, best = abs(g1), cand
            if g1 == g0:
                break
            s0, s1, g0 = s1, float(np.clip(s1 - g1 * (s1 - s0) / (g1 - g0), -limit, limit)), g1
        return best


def prepare_parent(
    parent: ImpulseResponse,
    t_0: float = DEFAULT_T0,
    fit_range=DEFAULT_FIT_RANGE,
    use_bands: bool = True,
    t60_ref: float | None = T60_RANGE[1],
) -> PreparedParent:
    split = split_early_late(parent, t_0)
    t60 = estimate_t60(parent, fit_range, t_0, split=split)
    drr = estimate_drr(split)
    bands = octave_band_t60(parent, None, fit_range, t_0, split=split)
    valid = [(c, t) for c, t in bands if t is not None]
    late = split.late_segment
    d_org = decay_rate(t60)
    tau = _late_time(split)
    calibrate = t60_ref is not None and t60_ref > t60
    comps = None
    if use_bands and len(valid) >= MIN_VALID_BANDS:
        comps = _band_components(late, parent.fs, valid, d_org)
        if calibrate:
            fitted = [_calibrate_rate(c, d, tau, parent.fs, fit_range, t60_ref) for d, c in comps[:-1]]
            if all(ok for _, ok in fitted):
                comps = [(d, c) for (d, _), (_, c) in zip(fitted, comps[:-1])] + comps[-1:]
            else:
                # a band whose decay is not a single slope would blow up under stretching
                comps = None
    if comps is None:
        d_bb = d_org
        if calibrate:
            d_bb, _ = _calibrate_rate(late, d_org, tau, parent.fs, fit_range, t60_ref)
        comps = [(d_bb, late.copy())]
    early = split.early_segment
    return PreparedParent(
        ir=parent,
        split=split,
        t60=t60,
        drr=drr,
        band_t60=bands,
        components=comps,
        tau=tau,
        e_early=float(np.dot(early, early)),
        early_peak=float(np.max(np.abs(early))),
        pre_peak=float(np.max(np.abs(split.h[:split.lo]))) if split.lo else 0.0,
        t_0=t_0,
        fit_range=tuple(fit_range),
    )


def synthesize(
    parent: ImpulseResponse | PreparedParent,
    target: SynthesisTarget,
    rir_id: str | None = None,
    peak: float = OUTPUT_PEAK,
    verify: bool = True,
) -> SynthesisOutcome:
    """One synthesis attempt. Rejection is returned, not raised.

    With ``verify`` an output whose re-estimated T60 or DRR misses the
    target tolerance is rejected too.
    """
    p = parent if isinstance(parent, PreparedParent) else prepare_parent(parent)
    split = p.split
    if target.t60_target > p.max_reachable_t60():
        # the truncated decay would be mis-measured and the correction loop
        # would chase it into a growing tail
        return SynthesisOutcome(target, False, reason=REJECT_TOO_SHORT)
    late_seg = p.late_for(target.t60_target)
    e_late = float(np.dot(late_seg, late_seg))
    if not math.isfinite(e_late):
        return SynthesisOutcome(target, False, reason=REJECT_ANALYSIS)
    alpha = drr_gain(p.e_early, e_late, target.drr_target)

    late_peak = float(np.max(np.abs(late_seg))) if late_seg.size else 0.0
    if late_peak > alpha * p.early_peak:
        return SynthesisOutcome(target, False, reason=REJECT_LATE_PEAK)
    # pre-window samples are kept verbatim; if one outgrows the scaled early
    # part it becomes the output's direct path and the split moves
    if p.pre_peak >= alpha * p.early_peak:
        return SynthesisOutcome(target, False, reason=REJECT_PRE_PEAK)

    h = recombine(split, alpha * split.early_segment, late_seg)
    h *= peak / np.max(np.abs(h))
    # estimate on exactly what lands on disk as float-32
    h = h.astype(np.float32).astype(np.float64)

    rid = rir_id or f"{p.ir.rir_id}_syn"
    out = ImpulseResponse(Waveform(h, split.fs, rid), rid, "synthetic")
    try:
        out_split = split_early_late(out, p.t_0)
        achieved = AcousticParams(
            t60=estimate_t60(out, p.fit_range, p.t_0, split=out_split),
            drr=estimate_drr(out_split),
            t_d=out_split.t_d,
        )
    except AnalysisError:
        return SynthesisOutcome(target, False, reason=REJECT_ANALYSIS)
    if verify and not within_tolerance(target, achieved.t60, achieved.drr):
        # some parents cannot carry some decays, e.g. a sparse late onset
        # cannot be shaped into a 30 ms tail
        return SynthesisOutcome(target, False, reason=REJECT_OFF_TARGET)
    return SynthesisOutcome(target, True, ir=out, achieved=achieved)


@dataclass(frozen=True)
class GenerationRecord:
    parent_id: str
    slot: int
    attempt: int
    t60_target: float
    drr_target: float
    accepted: bool
    t60_achieved: float | None = None
    drr_achieved: float | None = None


LOG_HEADER = ("parent_id", "slot", "attempt", "t60_target", "drr_target", "accepted", "t60_achieved", "drr_achieved")


@dataclass
class ParentExpansion:
    parent_id: str
    rirs: list
    log: list
    flagged: bool = False
    error: str | None = None


@dataclass
class ExpansionResult:
    rirs: list
    log: list
    flagged: list

    @property
    def n_accepted(self) -> int:
        return sum(1 for r in self.log if r.accepted)


def synthetic_id(parent_id: str, slot: int) -> str:
    return f"{parent_id}_syn{slot}"


def expand_parent(
    parent: ImpulseResponse,
    n_per_parent: int,
    seed: int,
    t_0: float = DEFAULT_T0,
    fit_range=DEFAULT_FIT_RANGE,
    t60_range=T60_RANGE,
    drr_range=DRR_RANGE,
    retry_cap: int = RETRY_CAP,
    out_dir: str | Path | None = None,
    keep: bool = True,
) -> ParentExpansion:
    """Fill ``n_per_parent`` slots with accepted syntheses of one parent.

    Targets come from the ``(seed, parent_id)`` substream. A rejected target
    is replaced by a fresh draw, up to ``retry_cap`` attempts per slot; when a
    slot runs out the parent is flagged and its remaining slots stay empty.
    """
    if n_per_parent < 1:
        raise ValueError("n_per_parent must be >= 1")
    pid = parent.rir_id
    try:
        prepared = prepare_parent(parent, t_0, fit_range)
    except AnalysisError as exc:
        return ParentExpansion(pid, [], [], flagged=True, error=f"parent analysis failed: {exc}")

    rng = substream(seed, "synthesize", pid)
    rirs, log = [], []
    for slot in range(n_per_parent):
        for attempt in range(1, retry_cap + 1):
            target = sample_target(rng, t60_range, drr_range)
            outcome = synthesize(prepared, target, rir_id=synthetic_id(pid, slot))
            if outcome.accepted:
                log.append(GenerationRecord(
                    pid, slot, attempt, target.t60_target, target.drr_target, True,
                    outcome.achieved.t60, outcome.achieved.drr,
                ))
                if out_dir is not None:
                    write_wave(outcome.ir.wave, Path(out_dir) / f"{outcome.ir.rir_id}.wav", FLOAT32)
                if keep:
                    rirs.append(outcome.ir)
                break
            log.append(GenerationRecord(pid, slot, attempt, target.t60_target, target.drr_target, False))
        else:
            return ParentExpansion(pid, rirs, log, flagged=True, error=f"retry cap exhausted at slot {slot}")
    return ParentExpansion(pid, rirs, log)


def _expand_star(kwargs):
    return expand_parent(**kwargs)


def expand_inventory(
    parents,
    n_per_parent: int,
    seed: int,
    workers: int = 1,
    out_dir: str | Path | None = None,
    keep: bool | None = None,
    **kwargs,
) -> ExpansionResult:
    """Expand every parent; output order follows ``parents`` at any worker count.

    With ``out_dir`` each accepted RIR is written as ``<parent_id>_syn<k>.wav``
    and (unless ``keep=True``) not retained in memory.
    """
    if n_per_parent < 1:
        raise ValueError("n_per_parent must be >= 1")
    ids = [p.rir_id for p in parents]
    if len(set(ids)) != len(ids):
        raise ValueError("parent rir_ids must be unique")
    if keep is None:
        keep = out_dir is None
    jobs = [
        dict(parent=p, n_per_parent=n_per_parent, seed=seed, out_dir=out_dir, keep=keep, **kwargs)
        for p in parents
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_expand_star, jobs))
    else:
        parts = [_expand_star(j) for j in jobs]

    rirs, log, flagged = [], [], []
    for part in parts:
        rirs.extend(part.rirs)
        log.extend(part.log)
        if part.flagged:
            flagged.append((part.parent_id, part.error))
    return ExpansionResult(rirs, log, flagged)


def drr_of(early: np.ndarray, late: np.ndarray) -> float:
    """DRR of an explicit (early, late) pair of segments."""
    return drr_from_energies(float(np.dot(early, early)), float(np.dot(late, late)))


def write_generation_log(log, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in log:
            w.writerow([
                r.parent_id, r.slot, r.attempt, repr(r.t60_target), repr(r.drr_target), int(r.accepted),
                "" if r.t60_achieved is None else repr(float(r.t60_achieved)),
                "" if r.drr_achieved is None else repr(float(r.drr_achieved)),
            ])
