import csv
import errno
import hashlib

import numpy as np
import pytest

from reverb_forge import pipeline
from reverb_forge.analysis import AcousticParams, ImpulseResponse
from reverb_forge.errors import ManifestError, SampleRateMismatchError
from reverb_forge.fixtures import exponential_rir
from reverb_forge.pipeline import (
    ANALYSIS_FILE,
    BONAFIDE,
    EXCLUDE_DRR,
    EXCLUDE_T60,
    MANIFEST_HEADER,
    SPOOF,
    ManifestRow,
    RirInventory,
    augmentation_stream,
    build_reverb_eval,
    export_augmented_epoch,
    export_partition,
    filter_and_partition,
    read_analysis,
    read_manifest,
    write_manifest,
)
from reverb_forge.toy import make_corpus, make_parents
from reverb_forge.wavio import Waveform, read_wave, write_wave


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    rows = make_corpus(d, seed=3)
    return d, rows


@pytest.fixture(scope="module")
def parents(tmp_path_factory):
    d = tmp_path_factory.mktemp("parents")
    make_parents(d, seed=1, duration=0.6)
    return RirInventory.from_dir(d)


def small_inventory(n=3, fs=16000):
    irs = [exponential_rir(0.2 + 0.1 * i, 5.0, fs=fs, duration=0.3, rng=np.random.default_rng(i),
                           rir_id=f"r{i}").ir for i in range(n)]
    return RirInventory.from_irs(irs)


# -- manifests ---------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    rows = [
        ManifestRow("a", "audio/a.wav", BONAFIDE, "C1"),
        ManifestRow("b", "audio/b.wav", SPOOF, "C1R", "r1", 0.123456789012345, -3.25, 0.7),
    ]
    write_manifest(rows, tmp_path / "m.csv")
    assert read_manifest(tmp_path / "m.csv") == rows
    with open(tmp_path / "m.csv") as fh:
        assert next(csv.reader(fh)) == list(MANIFEST_HEADER)


def test_manifest_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("utt,path\na,b\n")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "m.csv")


def test_manifest_duplicate_and_label(tmp_path):
    with pytest.raises(ManifestError, match="duplicate"):
        write_manifest([ManifestRow("a", "x", BONAFIDE, "c")] * 2, tmp_path / "m.csv")
    with pytest.raises(ManifestError):
        write_manifest([ManifestRow("a", "x", "human", "c")], tmp_path / "m.csv")
    with pytest.raises(ManifestError):
        write_manifest([ManifestRow("a", "x", BONAFIDE, "c", "r1")], tmp_path / "m.csv", eval_set=True)


def test_manifest_bad_field_count(tmp_path):
    (tmp_path / "m.csv").write_text(",".join(MANIFEST_HEADER) + "\na,b,bonafide\n")
    with pytest.raises(ManifestError, match="fields"):
        read_manifest(tmp_path / "m.csv")


# -- inventory and partition ------------------------------------------------------

def _param_inventory(table):
    irs, params = [], {}
    for i, (t60, drr) in enumerate(table):
        rid = f"rir{i:03d}"
        irs.append(ImpulseResponse.from_samples(np.array([1.0, 0.5]), 16000, rid))
        params[rid] = AcousticParams(t60, drr, None, 0)
    return RirInventory.from_irs(irs, params)


def test_partition_excludes_out_of_range():
    inv = _param_inventory([(0.5, 5.0), (2.5, 5.0), (0.5, 35.0), (0.5, -11.0), (1.9, -10.0)])
    part = filter_and_partition(inv, n_test=0)
    assert part.test == []
    assert part.train == ["rir000", "rir004"]
    assert dict(part.excluded) == {"rir001": EXCLUDE_T60, "rir002": EXCLUDE_DRR, "rir003": EXCLUDE_DRR}


def test_partition_270_gives_30_test():
    rng = np.random.default_rng(0)
    inv = _param_inventory([(float(rng.uniform(0.1, 2.0)), float(rng.uniform(-5, 25))) for _ in range(270)])
    part = filter_and_partition(inv, n_test=30, seed=4)
    assert len(part.test) == 30 and len(part.train) == 240
    assert not set(part.test) & set(part.train)
    assert set(part.test) | set(part.train) == set(inv.ids)
    again = filter_and_partition(inv, n_test=30, seed=4)
    assert again == part
    assert filter_and_partition(inv, n_test=30, seed=5).test != part.test


def test_partition_needs_enough_survivors():
    inv = _param_inventory([(0.5, 5.0)] * 3)
    with pytest.raises(ValueError):
        filter_and_partition(inv, n_test=3)
    with pytest.raises(ValueError):
        filter_and_partition(inv, n_test=-1)


def test_inventory_from_dir_and_export(parents, tmp_path):
    assert len(parents) == 12
    part = filter_and_partition(parents, n_test=3, seed=0)
    excluded = dict(part.excluded)
    assert excluded == {"toyrir10": EXCLUDE_T60, "toyrir11": EXCLUDE_DRR}
    export_partition(part, parents, tmp_path)
    train = sorted(p.stem for p in (tmp_path / "train").glob("*.wav"))
    assert train == sorted(part.train)
    for rid in part.test:
        assert digest(tmp_path / "test" / f"{rid}.wav") == digest(parents.entries[rid].path)
    report = read_analysis(tmp_path / "test" / ANALYSIS_FILE)
    assert set(report) == set(part.test)
    for rid, (_, params, _) in report.items():
        assert params.t60 == parents.params(rid).t60
        assert params.drr == parents.params(rid).drr
    # a reloaded directory uses its analysis report verbatim
    reloaded = RirInventory.from_dir(tmp_path / "test")
    assert reloaded.ids == sorted(part.test)
    with open(tmp_path / "partition.csv") as fh:
        recs = list(csv.DictReader(fh))
    assert len(recs) == 12


def test_inventory_marks_unanalyzable(tmp_path):
    write_wave(Waveform(np.zeros(100), 16000), tmp_path / "silent.wav")
    (tmp_path / "broken.wav").write_bytes(b"nope")
    inv = RirInventory.from_dir(tmp_path)
    assert inv.ids == []
    assert all(e.error for e in inv.entries.values())
    inv.write_report(tmp_path / "r.csv")
    rep = read_analysis(tmp_path / "r.csv")
    assert all(params is None for _, params, _ in rep.values())


# -- evaluation sets --------------------------------------------------------------

def _subset(rows, n_bona, n_spoof):
    return [r for r in rows if r.label == BONAFIDE][:n_bona] + [r for r in rows if r.label == SPOOF][:n_spoof]


def test_build_eval_contract(corpus, parents, tmp_path):
    base, rows = corpus
    rows = _subset(rows, 3, 2)
    out = build_reverb_eval(rows, base, parents, seed=7, out_dir=tmp_path / "e")
    assert len(out) == 5
    back = read_manifest(tmp_path / "e" / "manifest.csv")
    assert back == out
    src = {r.utt_id: base / r.path for r in rows}
    for r in back:
        p = tmp_path / "e" / r.path
        assert r.condition == "C1R"
        if r.label == BONAFIDE:
            assert p.read_bytes() == src[r.utt_id].read_bytes()
            assert r.rir_id is None
        else:
            assert p.read_bytes() != src[r.utt_id].read_bytes()
            assert r.rir_id in parents.ids and r.scale == 1.0
            assert r.rir_t60 == parents.params(r.rir_id).t60
            clean = read_wave(src[r.utt_id])
            wet = read_wave(p)
            assert len(wet) == len(clean) + len(parents.load(r.rir_id).h) - 1


def test_build_eval_deterministic(corpus, parents, tmp_path):
    base, rows = corpus
    rows = _subset(rows, 2, 4)
    a = build_reverb_eval(rows, base, parents, seed=2, out_dir=tmp_path / "a", random_scale=True)
    b = build_reverb_eval(rows[::-1], base, parents, seed=2, out_dir=tmp_path / "b", random_scale=True)
    assert sorted(a, key=lambda r: r.utt_id) == sorted(b, key=lambda r: r.utt_id)
    for r in a:
        assert digest(tmp_path / "a" / r.path) == digest(tmp_path / "b" / r.path)
    assert all(0.4 <= r.scale <= 1.0 for r in a if r.label == SPOOF)


def test_build_eval_rate_mismatch(corpus, tmp_path):
    base, rows = corpus
    inv = small_inventory(2, fs=8000)
    with pytest.raises(SampleRateMismatchError):
        build_reverb_eval(_subset(rows, 0, 1), base, inv, seed=0, out_dir=tmp_path)


def test_build_eval_missing_audio(tmp_path):
    rows = [ManifestRow("gone", "audio/gone.wav", SPOOF, "C1")]
    with pytest.raises(FileNotFoundError):
        build_reverb_eval(rows, tmp_path, small_inventory(), seed=0, out_dir=tmp_path / "o")


# -- augmentation -------------------------------------------------------------------

def _synthetic_rows(n):
    return [ManifestRow(f"u{i:05d}", "", SPOOF if i % 2 else BONAFIDE, "train") for i in range(n)]


def _loader(row):
    r = np.random.default_rng(int(row.utt_id[1:]))
    return Waveform(0.3 * r.standard_normal(400), 16000, row.utt_id)


def test_p_zero_passes_everything_through():
    items = list(augmentation_stream(_synthetic_rows(50), small_inventory(), 0.0, loader=_loader))
    assert all(it.recipe is None for it in items)
    assert all(np.array_equal(it.wave.samples, _loader(it.row).samples) for it in items)


def test_stream_replay_and_order_independence():
    rows = _synthetic_rows(40)
    inv = small_inventory()
    a = list(augmentation_stream(rows, inv, 0.5, seed=3, epoch=2, loader=_loader))
    b = list(augmentation_stream(rows[::-1], inv, 0.5, seed=3, epoch=2, loader=_loader))
    bm = {it.utt_id: it for it in b}
    for it in a:
        assert it.recipe == bm[it.utt_id].recipe
        assert np.array_equal(it.wave.samples, bm[it.utt_id].wave.samples)
        assert len(it.wave) == 400
    c = list(augmentation_stream(rows, inv, 0.5, seed=3, epoch=3, loader=_loader))
    assert [x.recipe for x in a] != [x.recipe for x in c]


def test_p_one_with_single_rir():
    inv = small_inventory(1)
    items = list(augmentation_stream(_synthetic_rows(20), inv, 1.0, loader=_loader))
    assert {it.recipe.rir_id for it in items} == {"r0"}


def test_stream_validates_probability():
    with pytest.raises(ValueError):
        list(augmentation_stream([], small_inventory(), 1.5))
    with pytest.raises(ValueError):
        list(augmentation_stream(_synthetic_rows(1), RirInventory([]), 0.5, loader=_loader))


def test_export_epoch_checksums(tmp_path):
    inv = small_inventory()
    rows = _synthetic_rows(5)
    out = []
    for d in ("x", "y"):
        stream = augmentation_stream(rows, inv, 0.99, seed=1, epoch=0, loader=_loader)
        out.append(export_augmented_epoch(stream, tmp_path / d, inv))
    assert out[0] == out[1] and len(out[0]) == 5
    for r in out[0]:
        assert digest(tmp_path / "x" / r.path) == digest(tmp_path / "y" / r.path)
        if r.rir_id:
            assert r.rir_t60 == inv.params(r.rir_id).t60
    assert (tmp_path / "x" / "manifest.csv").read_bytes() == (tmp_path / "y" / "manifest.csv").read_bytes()


def test_export_aborts_cleanly(tmp_path, monkeypatch):
    real = pipeline.write_wave
    calls = []

    def flaky(wave, path, bit_depth="pcm16"):
        calls.append(path)
        if len(calls) == 3:
            open(path, "wb").close()
            raise OSError(errno.ENOSPC, "No space left on device")
        return real(wave, path, bit_depth)

    monkeypatch.setattr(pipeline, "write_wave", flaky)
    inv = small_inventory()
    stream = augmentation_stream(_synthetic_rows(5), inv, 0.99, loader=_loader)
    with pytest.raises(OSError, match="u00002.wav"):
        export_augmented_epoch(stream, tmp_path, inv)
    assert not (tmp_path / "manifest.csv").exists()
    assert not (tmp_path / "audio" / "u00002.wav").exists()


def test_inventory_pickles_for_workers():
    import pickle

    irs = [exponential_rir(0.3, 5.0, duration=0.2, rng=np.random.default_rng(0), rir_id="p0").ir]
    inv = pickle.loads(pickle.dumps(RirInventory.from_irs(irs)))
    assert inv.ids == ["p0"] and inv.load("p0").rir_id == "p0"
