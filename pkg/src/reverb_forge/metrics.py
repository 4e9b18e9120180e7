"""Detector score evaluation: EER, FAR at a threshold, pooled EER and the
T60 x DRR false-acceptance grid.

Convention: higher score means more bonafide-like. A trial is accepted at
threshold ``theta`` when ``score >= theta``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ScoreError
from .pipeline import BONAFIDE, SPOOF, ManifestRow
from .synthesis import DRR_RANGE, T60_RANGE

GRID_HEADER = ("t60_lo", "t60_hi", "drr_lo", "drr_hi", "far", "count")


@dataclass(frozen=True)
class ScoreEntry:
    utt_id: str
    score: float
    label: str
    condition: str
    rir_t60: float | None = None
    rir_drr: float | None = None


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_bonafide: int
    n_spoof: int


@dataclass(frozen=True)
class FarCell:
    far: float | None
    count: int


@dataclass(frozen=True)
class FarGrid:
    t60_edges: list[float]
    drr_edges: list[float]
    cells: list[list[FarCell]]

    @property
    def total(self) -> int:
        return sum(c.count for row in self.cells for c in row)


def read_scores(path: str | Path) -> dict[str, float]:
    """Two whitespace-separated columns ``utt_id score`` per line."""
    scores = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ScoreError(f"{path}:{lineno}: expected 'utt_id score', got {line.strip()!r}")
            utt, text = parts
            try:
                value = float(text)
            except ValueError:
                raise ScoreError(f"{path}:{lineno}: score {text!r} is not a number") from None
            if not math.isfinite(value):
                raise ScoreError(f"{path}:{lineno}: non-finite score")
            if utt in scores:
                raise ScoreError(f"{path}:{lineno}: duplicate utt_id {utt!r}")
            scores[utt] = value
    return scores


def join_scores(scores: dict[str, float], key: list[ManifestRow], invert: bool = False) -> list[ScoreEntry]:
    """Attach labels and RIR metadata from the key; scored ids missing from it are an error."""
    by_id = {r.utt_id: r for r in key}
    unknown = [u for u in scores if u not in by_id]
    if unknown:
        raise ScoreError(f"{len(unknown)} scored utt_id(s) not in the key, first {unknown[0]!r}")
    sign = -1.0 if invert else 1.0
    out = []
    for utt, s in scores.items():
        r = by_id[utt]
        out.append(ScoreEntry(utt, sign * s, r.label, r.condition, r.rir_t60, r.rir_drr))
    return out


def _split(entries) -> tuple[np.ndarray, np.ndarray]:
    bona = np.array([e.score for e in entries if e.label == BONAFIDE], dtype=np.float64)
    spoof = np.array([e.score for e in entries if e.label == SPOOF], dtype=np.float64)
    return bona, spoof


def error_counts(bona: np.ndarray, spoof: np.ndarray, thresholds: np.ndarray):
    """Integer ``(false accepts, false rejects)`` at each threshold."""
    fa = spoof.shape[0] - np.searchsorted(np.sort(spoof), thresholds, side="left")
    fr = np.searchsorted(np.sort(bona), thresholds, side="left")
    return fa, fr


def eer_from_arrays(bona, spoof) -> EerResult:
    bona = np.asarray(bona, dtype=np.float64)
    spoof = np.asarray(spoof, dtype=np.float64)
    nb, ns = bona.shape[0], spoof.shape[0]
    if nb == 0 or ns == 0:
        raise ScoreError(f"EER needs both classes, got {nb} bonafide and {ns} spoof")
    thresholds = np.unique(np.concatenate([bona, spoof]))
    fa, fr = error_counts(bona, spoof, thresholds)
    # |FAR - FRR| on the common denominator nb*ns, so ties are exact
    gap = np.abs(fa.astype(np.int64) * nb - fr.astype(np.int64) * ns)
    i = int(np.argmin(gap))
    eer = 50.0 * (fa[i] / ns + fr[i] / nb)
    return EerResult(float(eer), float(thresholds[i]), nb, ns)


def compute_eer(entries) -> EerResult:
    """EER in percent at the swept threshold where FAR and FRR are closest.

    Ties in ``|FAR - FRR|`` go to the smaller threshold.
    """
    return eer_from_arrays(*_split(entries))


def far_at(entries, threshold: float, predicate=None) -> FarCell:
    """Percent of (filtered) spoof trials accepted at ``threshold``; ``far`` is None when none pass the filter."""
    spoof = [e for e in entries if e.label == SPOOF and (predicate is None or predicate(e))]
    if not spoof:
        return FarCell(None, 0)
    accepted = sum(1 for e in spoof if e.score >= threshold)
    return FarCell(100.0 * accepted / len(spoof), len(spoof))


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # out-of-range values land in the edge bins
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, edges.shape[0] - 2)


def far_grid(
    entries,
    threshold: float,
    t60_bins: int = 8,
    drr_bins: int = 8,
    t60_range=T60_RANGE,
    drr_range=DRR_RANGE,
) -> FarGrid:
    """FAR per uniform T60 x DRR cell over the spoof trials in ``entries``.

    Every spoof trial must carry RIR metadata; callers restrict ``entries``
    to reverberant conditions first.
    """
    if t60_bins < 1 or drr_bins < 1:
        raise ValueError("grid needs at least one bin per axis")
    spoof = [e for e in entries if e.label == SPOOF]
    for e in spoof:
        if e.rir_t60 is None or e.rir_drr is None:
            raise ScoreError(f"spoof trial {e.utt_id!r} has no RIR T60/DRR metadata")
    t_edges = np.linspace(t60_range[0], t60_range[1], t60_bins + 1)
    d_edges = np.linspace(drr_range[0], drr_range[1], drr_bins + 1)
    ti = _bin_index(np.array([e.rir_t60 for e in spoof]), t_edges) if spoof else np.array([], int)
    di = _bin_index(np.array([e.rir_drr for e in spoof]), d_edges) if spoof else np.array([], int)
    scores = np.array([e.score for e in spoof])

    cells = []
    for a in range(t60_bins):
        row = []
        for b in range(drr_bins):
            m = (ti == a) & (di == b)
            n = int(m.sum())
            far = 100.0 * int(np.count_nonzero(scores[m] >= threshold)) / n if n else None
            row.append(FarCell(far, n))
        cells.append(row)
    return FarGrid(t_edges.tolist(), d_edges.tolist(), cells)


@dataclass(frozen=True)
class PooledResult:
    pooled: EerResult
    per_condition: dict[str, EerResult]


def pooled_eer(entries) -> PooledResult:
    entries = list(entries)
    conds = {}
    for e in entries:
        if not e.condition:
            raise ScoreError(f"trial {e.utt_id!r} has an empty condition label")
        conds.setdefault(e.condition, []).append(e)
    per = {c: compute_eer(conds[c]) for c in sorted(conds)}
    return PooledResult(compute_eer(entries), per)


def write_grid_csv(grid: FarGrid, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for a, row in enumerate(grid.cells):
            for b, cell in enumerate(row):
                w.writerow([
                    repr(grid.t60_edges[a]), repr(grid.t60_edges[a + 1]),
                    repr(grid.drr_edges[b]), repr(grid.drr_edges[b + 1]),
                    "" if cell.far is None else repr(cell.far), cell.count,
                ])


def metrics_document(result: PooledResult, grid_threshold: float | None = None, invert: bool = False) -> dict:
    doc = {
        "eer": result.pooled.eer,
        "threshold": result.pooled.threshold,
        "n_bonafide": result.pooled.n_bonafide,
        "n_spoof": result.pooled.n_spoof,
        "invert": invert,
        "per_condition": {c: asdict(r) for c, r in result.per_condition.items()},
    }
    if grid_threshold is not None:
        doc["grid_threshold"] = grid_threshold
    return doc


def write_metrics_json(doc: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
