"""``reverb-forge`` command line.

Exit status: 0 on success, 1 on validation errors (bad flags, bad config,
malformed inputs), 2 on I/O errors. Failures print one JSON line on stderr:
``{"error": "validation"|"io", "type": ..., "message": ...}``.

Every subcommand writes a run record (``run_record.json`` in its output
directory, or ``<report>.run.json`` next to a report file) holding the
resolved config, the seed, the tool version and SHA-256 checksums of inputs
and outputs. Paths in the record are relative, and nothing time-dependent is
stored, so identical runs produce identical records.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import KINDS, AcousticParams, ImpulseResponse, analyze
from .config import ConfigError, RunConfig, resolve_config
from .errors import AnalysisError, ReverbForgeError
from .metrics import (
    far_grid,
    join_scores,
    metrics_document,
    pooled_eer,
    read_scores,
    write_grid_csv,
    write_metrics_json,
)
from .pipeline import (
    ANALYSIS_FILE,
    RirEntry,
    RirInventory,
    _map,
    augmentation_stream,
    build_reverb_eval,
    export_augmented_epoch,
    export_partition,
    filter_and_partition,
    read_analysis,
    read_manifest,
    resolve,
    write_analysis,
)
from .roomsim import RoomRanges, sample_rooms, simulate_rir
from .seeding import substream
from .synthesis import expand_inventory, write_generation_log
from .wavio import FLOAT32, read_wave, write_wave

RUN_RECORD = "run_record.json"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- run records ----------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def checksum_tree(root: Path, label: str, skip=()) -> dict[str, str]:
    root = Path(root)
    if root.is_file():
        return {f"{label}/{root.name}": sha256_file(root)}
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            out[f"{label}/{p.relative_to(root).as_posix()}"] = sha256_file(p)
    return out


def write_run_record(path: Path, command: str, cfg: RunConfig, params: dict, inputs: dict, outputs: dict) -> dict:
    record = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.as_dict(),
        "params": params,
        "inputs": inputs,
        "outputs": outputs,
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def _progress(args, msg: str) -> None:
    if not args.quiet:
        print(f"[{args.command}] {msg}", file=sys.stderr)


# -- subcommands --------------------------------------------------------------------

def _analyze_path(job):
    path, kind, t_0, fit_range = job
    rid = path.stem
    entry = RirEntry(rid, path, kind)
    try:
        ir = ImpulseResponse(read_wave(path, rid), rid, kind)
        entry.params = analyze(ir, t_0, fit_range)
    except AnalysisError as exc:
        entry.error = f"analysis-failed: {exc}"
    return entry


def cmd_analyze(args, cfg: RunConfig) -> None:
    rirs = _existing_dir(args.rirs)
    paths = sorted(rirs.glob("*.wav"))
    entries = _map(_analyze_path, [(p, args.kind, cfg.t_0, cfg.fit_range) for p in paths], args.workers)
    out = Path(args.out)
    inv = RirInventory(entries)
    inv.write_report(out)
    failed = sum(1 for e in entries if e.params is None)
    _progress(args, f"{len(entries)} RIRs analyzed, {failed} failed")
    write_run_record(
        out.with_name(out.stem + ".run.json"), "analyze", cfg, {"kind": args.kind},
        checksum_tree(rirs, "rirs"), checksum_tree(out, "out"),
    )


def cmd_partition(args, cfg: RunConfig) -> None:
    rirs = _existing_dir(args.rirs)
    inv = RirInventory.from_dir(rirs, t_0=cfg.t_0, fit_range=cfg.fit_range)
    t60_max = cfg.t60_range[1] if args.t60_max is None else args.t60_max
    part = filter_and_partition(inv, t60_max, cfg.drr_range, args.n_test, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_partition(part, inv, out)
    _progress(args, f"train {len(part.train)}, test {len(part.test)}, excluded {len(part.excluded)}")
    write_run_record(
        out / RUN_RECORD, "partition", cfg, {"t60_max": t60_max, "n_test": args.n_test},
        checksum_tree(rirs, "rirs"), checksum_tree(out, "out", skip={RUN_RECORD}),
    )


def _load_parents(directory: Path) -> list[ImpulseResponse]:
    kinds = {}
    if (directory / ANALYSIS_FILE).exists():
        kinds = {rid: k for rid, (k, _, _) in read_analysis(directory / ANALYSIS_FILE).items()}
    parents = []
    for p in sorted(directory.glob("*.wav")):
        parents.append(ImpulseResponse(read_wave(p, p.stem), p.stem, kinds.get(p.stem, "recorded")))
    return parents


def cmd_synthesize(args, cfg: RunConfig) -> None:
    src = _existing_dir(args.parents)
    parents = _load_parents(src)
    if not parents:
        raise ValueError(f"no parent WAVs in {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = expand_inventory(
        parents, args.n, cfg.seed, workers=args.workers, out_dir=out,
        t_0=cfg.t_0, fit_range=cfg.fit_range, t60_range=cfg.t60_range, drr_range=cfg.drr_range,
    )
    write_generation_log(res.log, out / "generation_log.csv")
    entries = [
        RirEntry(f"{r.parent_id}_syn{r.slot}", None, "synthetic", AcousticParams(r.t60_achieved, r.drr_achieved))
        for r in res.log if r.accepted
    ]
    write_analysis(sorted(entries, key=lambda e: e.rir_id), out / ANALYSIS_FILE)
    if res.flagged:
        with open(out / "flagged.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("parent_id", "reason"))
            w.writerows(res.flagged)
        for pid, why in res.flagged:
            _progress(args, f"parent {pid} flagged: {why}")
    _progress(args, f"{res.n_accepted} RIRs from {len(parents)} parents ({len(res.log)} attempts)")
    write_run_record(
        out / RUN_RECORD, "synthesize", cfg, {"n": args.n},
        checksum_tree(src, "parents"), checksum_tree(out, "out", skip={RUN_RECORD}),
    )


ROOM_HEADER = ("rir_id", "lx", "ly", "lz", "sx", "sy", "sz", "mx", "my", "mz",
               "beta_x0", "beta_x1", "beta_y0", "beta_y1", "beta_z0", "beta_z1", "max_order", "sample_rate")


def _simulate_one(job):
    spec, rid, out, t_0, fit_range = job
    ir = simulate_rir(spec, rid)
    write_wave(ir.wave, out / f"{rid}.wav", FLOAT32)
    entry = RirEntry(rid, out / f"{rid}.wav", "simulated")
    try:
        entry.params = analyze(ir, t_0, fit_range)
    except AnalysisError as exc:
        entry.error = f"analysis-failed: {exc}"
    return entry


def cmd_simulate(args, cfg: RunConfig) -> None:
    if args.count < 1:
        raise ValueError("--count must be >= 1")
    ranges = RoomRanges(
        length=tuple(args.length), width=tuple(args.width), height=tuple(args.height),
        beta=tuple(args.beta), clearance=args.clearance, min_separation=args.min_separation,
        sample_rate=args.fs, max_order=args.max_order,
    )
    specs = sample_rooms(substream(cfg.seed, "simulate"), args.count, ranges)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(s, f"sim{k}", out, cfg.t_0, cfg.fit_range) for k, s in enumerate(specs)]
    entries = _map(_simulate_one, jobs, args.workers)
    with open(out / "rooms.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROOM_HEADER)
        for (spec, rid, *_rest) in jobs:
            mo = "" if spec.max_order is None else spec.max_order
            w.writerow([rid, *map(repr, spec.dimensions), *map(repr, spec.source), *map(repr, spec.mic),
                        *map(repr, spec.wall_reflectivity), mo, spec.sample_rate])
    RirInventory(entries).write_report(out / ANALYSIS_FILE)
    _progress(args, f"{len(entries)} rooms simulated")
    params = {k: v for k, v in vars(ranges).items()}
    write_run_record(out / RUN_RECORD, "simulate", cfg, _jsonable(params), {},
                     checksum_tree(out, "out", skip={RUN_RECORD}))


def cmd_build_eval(args, cfg: RunConfig) -> None:
    manifest = Path(args.manifest)
    rows = read_manifest(manifest)
    rirs = _existing_dir(args.rirs)
    inv = RirInventory.from_dir(rirs, t_0=cfg.t_0, fit_range=cfg.fit_range)
    out = Path(args.out)
    built = build_reverb_eval(
        rows, manifest.parent, inv, cfg.seed, out, condition=args.condition_name,
        random_scale=args.random_scale, workers=args.workers,
    )
    n_rev = sum(1 for r in built if r.rir_id)
    _progress(args, f"{n_rev} reverberated, {len(built) - n_rev} copied")
    inputs = checksum_tree(manifest, "manifest")
    inputs.update(checksum_tree(rirs, "rirs"))
    for r in rows:
        inputs[f"audio/{r.utt_id}"] = sha256_file(resolve(manifest.parent, r.path))
    write_run_record(out / RUN_RECORD, "build-eval", cfg,
                     {"condition": args.condition_name, "random_scale": args.random_scale},
                     inputs, checksum_tree(out, "out", skip={RUN_RECORD}))


def cmd_augment(args, cfg: RunConfig) -> None:
    manifest = Path(args.manifest)
    rows = read_manifest(manifest)
    rirs = _existing_dir(args.rirs)
    inv = RirInventory.from_dir(rirs, t_0=cfg.t_0, fit_range=cfg.fit_range)
    out = Path(args.out)
    stream = augmentation_stream(rows, inv, cfg.p_apply, cfg.seed, args.epoch, manifest.parent, cfg.scale_range)
    written = export_augmented_epoch(stream, out, inv)
    n_rev = sum(1 for r in written if r.rir_id)
    _progress(args, f"{n_rev}/{len(written)} items reverberated")
    inputs = checksum_tree(manifest, "manifest")
    inputs.update(checksum_tree(rirs, "rirs"))
    write_run_record(out / RUN_RECORD, "augment", cfg, {"epoch": args.epoch},
                     inputs, checksum_tree(out, "out", skip={RUN_RECORD}))


def cmd_eval_scores(args, cfg: RunConfig) -> None:
    scores = read_scores(args.scores)
    key = read_manifest(args.key)
    entries = join_scores(scores, key, invert=args.invert)
    result = pooled_eer(entries)
    threshold = result.pooled.threshold if args.threshold is None else args.threshold
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # the grid covers conditions whose spoof trials were reverberated
    rev_conditions = {e.condition for e in entries if e.label == "spoof" and e.rir_t60 is not None}
    grid_entries = [e for e in entries if e.condition in rev_conditions]
    doc = metrics_document(result, threshold if grid_entries else None, args.invert)
    write_metrics_json(doc, out / "metrics.json")
    if grid_entries:
        grid = far_grid(grid_entries, threshold, cfg.grid_bins[0], cfg.grid_bins[1], cfg.t60_range, cfg.drr_range)
        write_grid_csv(grid, out / "grid.csv")
    _progress(args, f"pooled EER {result.pooled.eer:.3f}% over {len(entries)} trials")
    inputs = checksum_tree(Path(args.scores), "scores")
    inputs.update(checksum_tree(Path(args.key), "key"))
    write_run_record(out / RUN_RECORD, "eval-scores", cfg, {"invert": args.invert, "threshold": args.threshold},
                     inputs, checksum_tree(out, "out", skip={RUN_RECORD}))


def _existing_dir(p) -> Path:
    p = Path(p)
    if not p.is_dir():
        raise FileNotFoundError(f"directory {p} does not exist")
    return p


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="run seed (overrides config and $REVERB_FORGE_SEED)")
    common.add_argument("--t0", type=float, dest="t_0", help="early window half-width in seconds")
    common.add_argument("--workers", type=int, default=1, help="worker processes (output does not depend on it)")
    common.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    parser = _Parser(prog="reverb-forge", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", parents=[common], help="T60/DRR report for a directory of RIRs")
    p.add_argument("--rirs", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--kind", choices=KINDS, default="recorded")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("partition", parents=[common], help="filter an RIR inventory and split train/test")
    p.add_argument("--rirs", required=True)
    p.add_argument("--t60-max", type=float)
    p.add_argument("--drr-min", type=float)
    p.add_argument("--drr-max", type=float)
    p.add_argument("--n-test", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("synthesize", parents=[common], help="expand parent RIRs into synthetic RIRs")
    p.add_argument("--parents", required=True)
    p.add_argument("--n", type=int, default=500, help="accepted RIRs per parent")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", parents=[common], help="image-source RIRs for random shoebox rooms")
    d = RoomRanges()
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--length", type=float, nargs=2, default=d.length, metavar=("LO", "HI"))
    p.add_argument("--width", type=float, nargs=2, default=d.width, metavar=("LO", "HI"))
    p.add_argument("--height", type=float, nargs=2, default=d.height, metavar=("LO", "HI"))
    p.add_argument("--beta", type=float, nargs=2, default=d.beta, metavar=("LO", "HI"))
    p.add_argument("--clearance", type=float, default=d.clearance)
    p.add_argument("--min-separation", type=float, default=d.min_separation)
    p.add_argument("--fs", type=int, default=d.sample_rate)
    p.add_argument("--max-order", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-eval", parents=[common], help="reverberate the spoof rows of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rirs", required=True)
    p.add_argument("--condition-name", default="C1R")
    p.add_argument("--random-scale", action="store_true", help="draw a 0.4-1.0 scale per row instead of 1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_eval)

    p = sub.add_parser("augment", parents=[common], help="export one epoch of the augmentation stream")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rirs", required=True)
    p.add_argument("--p", type=float, dest="p_apply")
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval-scores", parents=[common], help="EER, per-condition EER and FAR grid")
    p.add_argument("--scores", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--invert", action="store_true", help="scores are higher for spoof")
    p.add_argument("--threshold", type=float, help="grid threshold (default: pooled EER threshold)")
    p.add_argument("--grid-bins", type=int, nargs=2, metavar=("T60", "DRR"))
    p.set_defaults(func=cmd_eval_scores)
    return parser


def config_flags(args) -> dict:
    flags = {"seed": args.seed, "t_0": args.t_0}
    if getattr(args, "p_apply", None) is not None:
        flags["p_apply"] = args.p_apply
    if getattr(args, "grid_bins", None) is not None:
        flags["grid_bins"] = tuple(args.grid_bins)
    return flags


def _apply_drr_flags(args, cfg: RunConfig) -> RunConfig:
    lo = getattr(args, "drr_min", None)
    hi = getattr(args, "drr_max", None)
    if lo is None and hi is None:
        return cfg
    return replace(cfg, drr_range=(cfg.drr_range[0] if lo is None else lo,
                                   cfg.drr_range[1] if hi is None else hi)).validate()


def _fail(kind: str, exc: BaseException) -> int:
    msg = str(exc).replace("\n", " ")
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": msg}), file=sys.stderr)
    return 1 if kind == "validation" else 2


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg = resolve_config(config_flags(args), args.config)
        cfg = _apply_drr_flags(args, cfg)
        args.func(args, cfg)
    except (ReverbForgeError, ValueError, ConfigError) as exc:
        return _fail("validation", exc)
    except OSError as exc:
        return _fail("io", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
