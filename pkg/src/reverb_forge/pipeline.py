"""RIR inventories, trial manifests, reverberant evaluation sets and the
online augmentation stream.

Manifest paths are stored relative to the manifest's own directory, so a
built set can be moved as a whole.
"""
from __future__ import annotations

import csv
import os
import shutil
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple

from .analysis import (
    DEFAULT_FIT_RANGE,
    DEFAULT_T0,
    KINDS,
    AcousticParams,
    ImpulseResponse,
    analyze,
)
from .errors import AnalysisError, ManifestError, WaveFormatError
from .reverb import FULL, SCALE_RANGE, TRIM, ReverbRecipe, convolve, draw_recipe, finalize
from .seeding import substream, tag
from .synthesis import DRR_RANGE, T60_RANGE
from .wavio import FLOAT32, Waveform, read_wave, write_wave

BONAFIDE = "bonafide"
SPOOF = "spoof"
LABELS = (BONAFIDE, SPOOF)
MANIFEST_HEADER = ("utt_id", "path", "label", "condition", "rir_id", "rir_t60", "rir_drr", "scale")
ANALYSIS_FILE = "analysis.csv"
ANALYSIS_BASE = ("rir_id", "kind", "t_d_samples", "t60_s", "drr_db")

EXCLUDE_T60 = "t60-exceeds-max"
EXCLUDE_DRR = "drr-out-of-range"
EXCLUDE_ANALYSIS = "analysis-failed"


def fmt_float(x: float | None) -> str:
    """Shortest text that reads back to the same float; empty for None."""
    if x is None:
        return ""
    return repr(float(x))


def _opt_float(text: str, what: str) -> float | None:
    if text is None or text.strip() == "":
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise ManifestError(f"bad {what} value {text!r}") from exc


# -- manifests -------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    utt_id: str
    path: str
    label: str
    condition: str
    rir_id: str | None = None
    rir_t60: float | None = None
    rir_drr: float | None = None
    scale: float | None = None

    def as_record(self) -> list[str]:
        return [
            self.utt_id, self.path, self.label, self.condition, self.rir_id or "",
            fmt_float(self.rir_t60), fmt_float(self.rir_drr), fmt_float(self.scale),
        ]


def validate_rows(rows: list[ManifestRow], eval_set: bool = False) -> list[ManifestRow]:
    """Unique ids and known labels; ``eval_set`` also forbids RIRs on bonafide rows."""
    seen = set()
    for row in rows:
        if not row.utt_id:
            raise ManifestError("empty utt_id")
        if row.utt_id in seen:
            raise ManifestError(f"duplicate utt_id {row.utt_id!r}")
        seen.add(row.utt_id)
        if row.label not in LABELS:
            raise ManifestError(f"{row.utt_id}: label must be one of {LABELS}, got {row.label!r}")
        if eval_set and row.label == BONAFIDE and row.rir_id:
            raise ManifestError(f"{row.utt_id}: bonafide rows carry no RIR")
    return rows


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(rec)}")
            utt, p, label, cond, rir, t60, drr, scale = rec
            rows.append(ManifestRow(
                utt, p, label, cond, rir or None,
                _opt_float(t60, "rir_t60"), _opt_float(drr, "rir_drr"), _opt_float(scale, "scale"),
            ))
    return validate_rows(rows)


def write_manifest(rows: Iterable[ManifestRow], path: str | Path, eval_set: bool = False) -> None:
    rows = validate_rows(list(rows), eval_set)
    _atomic_csv(path, MANIFEST_HEADER, [r.as_record() for r in rows])


def _atomic_csv(path, header, records) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(records)
    os.replace(tmp, path)


def resolve(base_dir: str | Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else Path(base_dir) / q


def load_row_audio(row: ManifestRow, base_dir: str | Path) -> Waveform:
    return read_wave(resolve(base_dir, row.path), source_id=row.utt_id)


# -- RIR inventories --------------------------------------------------------

@dataclass
class RirEntry:
    rir_id: str
    path: Path | None
    kind: str = "recorded"
    params: AcousticParams | None = None
    error: str | None = None
    ir: ImpulseResponse | None = field(default=None, repr=False)

    @property
    def usable(self) -> bool:
        return self.params is not None


def band_column(center: float) -> str:
    return f"t60_{center:g}hz"


def analysis_records(entries: Iterable[RirEntry], centers) -> tuple[list[str], list[list[str]]]:
    header = list(ANALYSIS_BASE) + [band_column(c) for c in centers] + ["status"]
    records = []
    for e in entries:
        p = e.params
        if p is None:
            records.append([e.rir_id, e.kind, "", "", ""] + [""] * len(centers) + [e.error or "failed"])
            continue
        bands = dict(p.band_t60 or [])
        records.append(
            [e.rir_id, e.kind, "" if p.t_d is None else str(p.t_d), fmt_float(p.t60), fmt_float(p.drr)]
            + [fmt_float(bands.get(float(c))) for c in centers]
            + ["ok"]
        )
    return header, records


def write_analysis(entries: Iterable[RirEntry], path: str | Path, centers=()) -> None:
    header, records = analysis_records(entries, list(centers))
    _atomic_csv(path, header, records)


def read_analysis(path: str | Path) -> dict[str, tuple[str, AcousticParams | None, str | None]]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ANALYSIS_BASE if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        band_cols = [c for c in reader.fieldnames if c.startswith("t60_") and c.endswith("hz")]
        for rec in reader:
            kind = rec["kind"] or "recorded"
            if kind not in KINDS:
                raise ManifestError(f"{path}: unknown kind {kind!r}")
            status = rec.get("status", "ok") or "ok"
            t60 = _opt_float(rec["t60_s"], "t60_s")
            if status != "ok" or t60 is None:
                out[rec["rir_id"]] = (kind, None, status)
                continue
            bands = [(float(c[4:-2]), _opt_float(rec[c], c)) for c in band_cols]
            td = rec["t_d_samples"]
            params = AcousticParams(
                t60=t60,
                drr=float(rec["drr_db"]),
                band_t60=bands or None,
                t_d=int(td) if td else None,
            )
            out[rec["rir_id"]] = (kind, params, None)
    return out


def analyze_entry(entry: RirEntry, ir: ImpulseResponse, t_0=DEFAULT_T0, fit_range=DEFAULT_FIT_RANGE) -> RirEntry:
    try:
        entry.params = analyze(ir, t_0, fit_range)
        entry.error = None
    except AnalysisError as exc:
        entry.params = None
        entry.error = f"{EXCLUDE_ANALYSIS}: {exc}"
    return entry


class RirInventory:
    """RIRs by id, with their analysis.

    A directory inventory is every ``*.wav`` in it. Parameters come from the
    directory's ``analysis.csv`` when present, else they are estimated on load.
    """

    def __init__(self, entries: Iterable[RirEntry], directory: Path | None = None):
        self.entries = {e.rir_id: e for e in sorted(entries, key=lambda e: e.rir_id)}
        self.directory = directory
        self._load = lru_cache(maxsize=256)(self._load_uncached)

    # the bound cache does not pickle; worker processes get a fresh one
    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_load"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._load = lru_cache(maxsize=256)(self._load_uncached)

    @classmethod
    def from_dir(
        cls, directory: str | Path, kind: str = "recorded", t_0=DEFAULT_T0, fit_range=DEFAULT_FIT_RANGE,
        use_report: bool = True,
    ) -> "RirInventory":
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"RIR directory {directory} does not exist")
        report = {}
        if use_report and (directory / ANALYSIS_FILE).exists():
            report = read_analysis(directory / ANALYSIS_FILE)
        entries = []
        for p in sorted(directory.glob("*.wav")):
            rid = p.stem
            if rid in report:
                k, params, err = report[rid]
                entries.append(RirEntry(rid, p, k, params, err))
                continue
            entry = RirEntry(rid, p, kind)
            try:
                ir = ImpulseResponse(read_wave(p, rid), rid, kind)
            except WaveFormatError as exc:
                entry.error = f"{EXCLUDE_ANALYSIS}: {exc}"
                entries.append(entry)
                continue
            entries.append(analyze_entry(entry, ir, t_0, fit_range))
        return cls(entries, directory)

    @classmethod
    def from_irs(cls, irs: Iterable[ImpulseResponse], params: dict | None = None,
                 t_0=DEFAULT_T0, fit_range=DEFAULT_FIT_RANGE) -> "RirInventory":
        """In-memory inventory; parameters are estimated unless given per id."""
        entries = []
        for ir in irs:
            e = RirEntry(ir.rir_id, None, ir.kind, ir=ir)
            if params is not None and ir.rir_id in params:
                e.params = params[ir.rir_id]
            else:
                analyze_entry(e, ir, t_0, fit_range)
            entries.append(e)
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        """Ids with valid parameters, sorted."""
        return [rid for rid, e in self.entries.items() if e.usable]

    def params(self, rir_id: str) -> AcousticParams:
        e = self.entries[rir_id]
        if e.params is None:
            raise AnalysisError(f"RIR {rir_id!r} has no parameters ({e.error})")
        return e.params

    def load(self, rir_id: str) -> ImpulseResponse:
        return self._load(rir_id)

    def _load_uncached(self, rir_id: str) -> ImpulseResponse:
        e = self.entries[rir_id]
        if e.ir is not None:
            return e.ir
        return ImpulseResponse(read_wave(e.path, rir_id), rir_id, e.kind)

    def write_report(self, path: str | Path, centers=None) -> None:
        if centers is None:
            centers = sorted({c for e in self.entries.values() if e.params and e.params.band_t60
                              for c, _ in e.params.band_t60})
        write_analysis(self.entries.values(), path, centers)


# -- filtering and partition -------------------------------------------------

@dataclass(frozen=True)
class InventoryPartition:
    train: list[str]
    test: list[str]
    excluded: list[tuple[str, str]]


def exclusion_reason(entry: RirEntry, t60_max: float, drr_range) -> str | None:
    if entry.params is None:
        return EXCLUDE_ANALYSIS
    if entry.params.t60 > t60_max:
        return EXCLUDE_T60
    if not drr_range[0] <= entry.params.drr <= drr_range[1]:
        return EXCLUDE_DRR
    return None


def filter_and_partition(
    inventory: RirInventory,
    t60_max: float = T60_RANGE[1],
    drr_range=DRR_RANGE,
    n_test: int = 30,
    seed: int = 0,
) -> InventoryPartition:
    """Drop RIRs outside the parameter ranges, then draw ``n_test`` survivors for test."""
    if n_test < 0:
        raise ValueError("n_test must be >= 0")
    survivors, excluded = [], []
    for rid, e in inventory.entries.items():
        reason = exclusion_reason(e, t60_max, drr_range)
        if reason is None:
            survivors.append(rid)
        else:
            excluded.append((rid, reason))
    if n_test > 0 and n_test >= len(survivors):
        raise ValueError(f"n_test={n_test} needs more than {len(survivors)} surviving RIRs")
    rng = substream(seed, "partition")
    picked = set(rng.choice(len(survivors), size=n_test, replace=False).tolist()) if n_test else set()
    test = [rid for i, rid in enumerate(survivors) if i in picked]
    train = [rid for i, rid in enumerate(survivors) if i not in picked]
    return InventoryPartition(train, test, excluded)


def export_partition(part: InventoryPartition, inventory: RirInventory, out_dir: str | Path) -> None:
    """Copy the split RIRs into ``out/train`` and ``out/test`` with their analysis."""
    out_dir = Path(out_dir)
    for name, ids in (("train", part.train), ("test", part.test)):
        d = out_dir / name
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for rid in ids:
            e = inventory.entries[rid]
            if e.path is not None:
                shutil.copyfile(e.path, d / f"{rid}.wav")
            else:
                write_wave(e.ir.wave, d / f"{rid}.wav", FLOAT32)
            entries.append(e)
        sub = RirInventory(entries)
        sub.write_report(d / ANALYSIS_FILE)
    records = [[rid, "train", ""] for rid in part.train] + [[rid, "test", ""] for rid in part.test]
    records += [[rid, "excluded", reason] for rid, reason in part.excluded]
    records.sort(key=lambda r: r[0])
    _atomic_csv(out_dir / "partition.csv", ("rir_id", "split", "reason"), records)


# -- evaluation sets ----------------------------------------------------------

def _reverberate(wave: Waveform, inventory: RirInventory, recipe: ReverbRecipe, policy: str):
    ir = inventory.load(recipe.rir_id)
    y = convolve(wave, ir)
    return finalize(y, recipe.scale, policy, n_input=len(wave))


def _eval_row(args):
    row, base_dir, inventory, ids, seed, out_dir, condition, random_scale = args
    out_audio = Path(out_dir) / "audio"
    if row.label == BONAFIDE:
        src = resolve(base_dir, row.path)
        dst = out_audio / f"{row.utt_id}{src.suffix or '.wav'}"
        shutil.copyfile(src, dst)
        return replace(row, path=os.path.relpath(dst, out_dir), condition=condition,
                       rir_id=None, rir_t60=None, rir_drr=None, scale=None)

    rng = substream(seed, "build-eval", row.utt_id)
    recipe = draw_recipe(rng, ids, tag(seed, "build-eval", row.utt_id))
    if not random_scale:
        recipe = replace(recipe, scale=1.0)
    wave = load_row_audio(row, base_dir)
    y, _ = _reverberate(wave, inventory, recipe, FULL)
    dst = out_audio / f"{row.utt_id}.wav"
    write_wave(y, dst, FLOAT32)
    p = inventory.params(recipe.rir_id)
    return replace(row, path=os.path.relpath(dst, out_dir), condition=condition,
                   rir_id=recipe.rir_id, rir_t60=p.t60, rir_drr=p.drr, scale=recipe.scale)


def build_reverb_eval(
    rows: list[ManifestRow],
    base_dir: str | Path,
    inventory: RirInventory,
    seed: int,
    out_dir: str | Path,
    condition: str = "C1R",
    random_scale: bool = False,
    workers: int = 1,
) -> list[ManifestRow]:
    """Reverberate every spoof row; copy bonafide rows byte for byte.

    Each spoof row draws its RIR from the ``(seed, utt_id)`` substream,
    uniformly with replacement. Writes ``out/audio/*`` and
    ``out/manifest.csv`` and returns the rows.
    """
    validate_rows(rows)
    ids = inventory.ids
    if any(r.label == SPOOF for r in rows) and not ids:
        raise ValueError("RIR inventory has no analyzable RIRs")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    jobs = [(r, base_dir, inventory, ids, seed, out_dir, condition, random_scale) for r in rows]
    out_rows = _map(_eval_row, jobs, workers)
    write_manifest(out_rows, out_dir / "manifest.csv", eval_set=True)
    return out_rows


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=chunk))


# -- augmentation ---------------------------------------------------------------

class AugmentedItem(NamedTuple):
    utt_id: str
    wave: Waveform
    recipe: ReverbRecipe | None
    row: ManifestRow | None


def augmentation_stream(
    rows: Iterable[ManifestRow],
    inventory: RirInventory,
    p_apply: float = 0.99,
    seed: int = 0,
    epoch: int = 0,
    base_dir: str | Path = ".",
    scale_range=SCALE_RANGE,
    loader: Callable[[ManifestRow], Waveform] | None = None,
) -> Iterator[AugmentedItem]:
    """Per-row reverberation with probability ``p_apply``, in manifest order.

    Every decision comes from the ``(seed, epoch, utt_id)`` substream, so
    restarting from any point or reordering rows never changes an item.
    Reverberated items keep the clean input's length.
    """
    if not 0.0 <= p_apply <= 1.0:
        raise ValueError(f"p_apply must lie in [0, 1], got {p_apply}")
    ids = inventory.ids
    if p_apply > 0 and not ids:
        raise ValueError("RIR inventory is empty")
    if loader is None:
        def loader(row):
            return load_row_audio(row, base_dir)
    for row in rows:
        wave = loader(row)
        rng = substream(seed, "augment", epoch, row.utt_id)
        if rng.random() >= p_apply:
            yield AugmentedItem(row.utt_id, wave, None, row)
            continue
        recipe = draw_recipe(rng, ids, tag(seed, epoch, row.utt_id), scale_range)
        y, _ = _reverberate(wave, inventory, recipe, TRIM)
        yield AugmentedItem(row.utt_id, y, recipe, row)


def export_augmented_epoch(
    stream: Iterable[AugmentedItem],
    out_dir: str | Path,
    inventory: RirInventory | None = None,
) -> list[ManifestRow]:
    """Write one float-32 WAV per item and ``manifest.csv`` last.

    A write failure aborts with an ``OSError`` naming the file; the partial
    file is removed and no manifest is written.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rows = []
    for item in stream:
        dst = out_dir / "audio" / f"{item.utt_id}.wav"
        try:
            write_wave(item.wave, dst, FLOAT32)
        except OSError as exc:
            dst.unlink(missing_ok=True)
            raise OSError(exc.errno, f"writing {dst} failed: {exc.strerror or exc}") from exc
        src = item.row
        rec = item.recipe
        t60 = drr = None
        if rec is not None and inventory is not None:
            p = inventory.params(rec.rir_id)
            t60, drr = p.t60, p.drr
        rows.append(ManifestRow(
            item.utt_id,
            os.path.relpath(dst, out_dir),
            src.label if src else SPOOF,
            src.condition if src else "augment",
            rec.rir_id if rec else None,
            t60, drr,
            rec.scale if rec else None,
        ))
    write_manifest(rows, out_dir / "manifest.csv")
    return rows

