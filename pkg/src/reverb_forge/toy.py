"""Toy corpus, parent RIRs and a scripted scorer for end-to-end runs.

``python -m reverb_forge.toy corpus --out DIR`` writes 50 short PCM-16
utterances plus ``manifest.csv``; ``parents --out DIR`` writes exponential
parent RIRs; ``score --manifest M --out FILE`` scores a manifest's audio.

The scorer is not a detector. It is a fixed spectral statistic that happens
to separate the toy classes, so pipelines have realistic score files to chew on.
"""
from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from .fixtures import exponential_rir
from .pipeline import BONAFIDE, SPOOF, ManifestRow, load_row_audio, read_manifest, write_manifest
from .seeding import substream
from .wavio import FLOAT32, PCM16, Waveform, write_wave

FS = 16000
N_BONAFIDE = 20
N_SPOOF = 30
UTT_SECONDS = 0.5
SPLIT_HZ = 1000.0


def toy_utterance(rng: np.random.Generator, spoof: bool, fs: int = FS, seconds: float = UTT_SECONDS) -> np.ndarray:
    """Harmonic "voice" with syllable-rate AM; spoofs get a flatter, buzzier spectrum."""
    n = int(seconds * fs)
    t = np.arange(n) / fs
    f0 = rng.uniform(100, 220)
    rolloff = rng.uniform(0.5, 1.05) if spoof else rng.uniform(0.9, 1.4)
    x = np.zeros(n)
    for k in range(1, 30):
        if k * f0 >= fs / 2:
            break
        x += k ** -rolloff * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    am = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 2 * np.pi))
    x = x * am + 0.02 * rng.standard_normal(n)
    return 0.5 * x / np.max(np.abs(x))


def make_corpus(out_dir: str | Path, seed: int = 0, condition: str = "C1") -> list[ManifestRow]:
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rows = []
    labels = [BONAFIDE] * N_BONAFIDE + [SPOOF] * N_SPOOF
    for i, label in enumerate(labels):
        utt = f"utt{i:03d}"
        x = toy_utterance(substream(seed, "toy-corpus", utt), label == SPOOF)
        write_wave(Waveform(x, FS, utt), out_dir / "audio" / f"{utt}.wav", PCM16)
        rows.append(ManifestRow(utt, f"audio/{utt}.wav", label, condition))
    write_manifest(rows, out_dir / "manifest.csv")
    return rows


# (T60 s, DRR dB); the last two fall outside the default filter ranges
PARENT_TABLE = [
    (0.25, 8.0), (0.4, 3.0), (0.55, 12.0), (0.7, 0.0), (0.85, 6.0), (1.0, -4.0),
    (0.3, 18.0), (0.6, 9.0), (0.9, 2.0), (1.2, 5.0), (2.5, 5.0), (0.5, 35.0),
]


def make_parents(out_dir: str | Path, seed: int = 0, duration: float = 1.3) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, (t60, drr) in enumerate(PARENT_TABLE):
        rid = f"toyrir{i:02d}"
        c = exponential_rir(t60, drr, fs=FS, duration=max(duration, 1.6 * t60), t_d=160,
                            rng=substream(seed, "toy-parent", rid), rir_id=rid)
        write_wave(c.ir.wave, out_dir / f"{rid}.wav", FLOAT32)
        ids.append(rid)
    return ids


def toy_score(wave: Waveform) -> float:
    """Low-to-high band energy ratio in dB (split at 1 kHz)."""
    spec = np.abs(np.fft.rfft(wave.samples)) ** 2
    f = np.fft.rfftfreq(wave.samples.shape[0], 1.0 / wave.sample_rate)
    low = float(spec[f < SPLIT_HZ].sum())
    high = float(spec[f >= SPLIT_HZ].sum())
    return 10.0 * math.log10((low + 1e-20) / (high + 1e-20))


def score_manifest(manifest: str | Path, out: str | Path) -> dict[str, float]:
    manifest = Path(manifest)
    scores = {}
    for row in read_manifest(manifest):
        scores[row.utt_id] = toy_score(load_row_audio(row, manifest.parent))
    with open(out, "w") as fh:
        for utt, s in scores.items():
            fh.write(f"{utt} {s!r}\n")
    return scores


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m reverb_forge.toy")
    sub = ap.add_subparsers(dest="what", required=True)
    p = sub.add_parser("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("parents")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("score")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    if args.what == "corpus":
        make_corpus(args.out, args.seed)
    elif args.what == "parents":
        make_parents(args.out, args.seed)
    else:
        score_manifest(args.manifest, args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
