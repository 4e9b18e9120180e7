import csv
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reverb_forge.errors import ScoreError
from reverb_forge.metrics import (
    GRID_HEADER,
    ScoreEntry,
    compute_eer,
    eer_from_arrays,
    error_counts,
    far_at,
    far_grid,
    join_scores,
    metrics_document,
    pooled_eer,
    read_scores,
    write_grid_csv,
    write_metrics_json,
)
from reverb_forge.pipeline import BONAFIDE, SPOOF, ManifestRow


def sweep_oracle(bona, spoof):
    """Exhaustive O(n^2) sweep in exact arithmetic; first minimum wins."""
    best = None
    for theta in sorted(set(bona) | set(spoof)):
        far = Fraction(sum(1 for s in spoof if s >= theta), len(spoof))
        frr = Fraction(sum(1 for b in bona if b < theta), len(bona))
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, theta, (far + frr) / 2)
    return float(best[2] * 100), best[1]


def entries(bona, spoof, cond="C"):
    out = [ScoreEntry(f"b{i}", s, BONAFIDE, cond) for i, s in enumerate(bona)]
    out += [ScoreEntry(f"s{i}", s, SPOOF, cond) for i, s in enumerate(spoof)]
    return out


def test_perfect_separation():
    assert compute_eer(entries([0.9, 0.8], [0.1, 0.2])).eer == 0.0


def test_swapped_labels():
    assert compute_eer(entries([0.1, 0.2], [0.9, 0.8])).eer == 100.0


def test_three_by_three_example():
    r = compute_eer(entries([0.8, 0.6, 0.4], [0.7, 0.3, 0.2]))
    assert r.eer == pytest.approx(100 / 3)
    assert (r.eer, r.threshold) == pytest.approx(sweep_oracle([0.8, 0.6, 0.4], [0.7, 0.3, 0.2]))
    assert (r.n_bonafide, r.n_spoof) == (3, 3)


def test_matches_sweep_oracle_on_random_sets():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 201))
        nb = int(rng.integers(1, n))
        # coarse rounding forces plenty of ties
        scores = np.round(rng.standard_normal(n), int(rng.integers(0, 3))).tolist()
        bona, spoof = scores[:nb], scores[nb:]
        r = eer_from_arrays(bona, spoof)
        eer, theta = sweep_oracle(bona, spoof)
        assert r.eer == pytest.approx(eer, abs=1e-9)
        assert r.threshold == theta


def test_far_frr_monotone():
    rng = np.random.default_rng(1)
    bona, spoof = rng.normal(1, 1, 150), rng.normal(0, 1, 120)
    th = np.unique(np.concatenate([bona, spoof]))
    fa, fr = error_counts(bona, spoof, th)
    assert np.all(np.diff(fa) <= 0) and np.all(np.diff(fr) >= 0)


@given(
    st.lists(st.integers(-50, 50), min_size=1, max_size=40),
    st.lists(st.integers(-50, 50), min_size=1, max_size=40),
)
def test_rank_invariance(bona, spoof):
    base = eer_from_arrays(bona, spoof).eer
    for f in (lambda x: 3 * x + 7, lambda x: np.exp(x / 20.0), lambda x: x ** 3):
        assert eer_from_arrays([f(b) for b in bona], [f(s) for s in spoof]).eer == pytest.approx(base, abs=1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_eer_bounds(bona, spoof):
    r = eer_from_arrays(bona, spoof)
    assert 0.0 <= r.eer <= 100.0


def test_missing_class():
    with pytest.raises(ScoreError):
        compute_eer(entries([0.1], []))


# -- FAR --------------------------------------------------------------------------

def test_far_at_examples():
    e = entries([], [0.9, 0.6, 0.3, 0.1])
    assert far_at(e, 0.5).far == 50.0 and far_at(e, 0.5).count == 4
    assert far_at(e, 0.0).far == 100.0
    assert far_at(e, 1.0).far == 0.0
    absent = far_at(e, 0.5, lambda x: x.condition == "other")
    assert absent.far is None and absent.count == 0


def _grid_entry(i, score, t60, drr):
    return ScoreEntry(f"g{i}", score, SPOOF, "C1R", t60, drr)


def test_far_grid_hand_cells():
    e = [
        _grid_entry(0, 0.9, 0.1, -8.0),   # cell (0, 0), accepted
        _grid_entry(1, 0.1, 0.1, -9.0),   # cell (0, 0), rejected
        _grid_entry(2, 0.7, 1.9, 25.0),   # cell (1, 1), accepted
        _grid_entry(3, 0.2, 1.5, 20.0),   # cell (1, 1), rejected
        _grid_entry(4, 0.2, 0.5, 29.0),   # cell (0, 1), rejected
        ScoreEntry("b", 0.5, BONAFIDE, "C1R"),
    ]
    g = far_grid(e, 0.5, t60_bins=2, drr_bins=2)
    assert g.t60_edges == [0.02, 1.01, 2.0]
    assert g.drr_edges == [-10.0, 10.0, 30.0]
    assert g.cells[0][0].far == 50.0 and g.cells[0][0].count == 2
    assert g.cells[1][1].far == 50.0 and g.cells[1][1].count == 2
    assert g.cells[0][1].far == 0.0
    assert g.cells[1][0].far is None and g.cells[1][0].count == 0
    assert g.total == 5


def test_far_grid_all_accepted_and_edges():
    e = [_grid_entry(i, 1.0, t, d) for i, (t, d) in enumerate([(0.02, -10.0), (2.0, 30.0), (2.5, 40.0)])]
    g = far_grid(e, 0.0)
    for row in g.cells:
        for c in row:
            assert c.far in (None, 100.0)
    assert g.cells[0][0].count == 1 and g.cells[7][7].count == 2


@given(st.lists(st.tuples(st.floats(0.0, 3.0), st.floats(-20, 40), st.floats(-1, 1)), max_size=80),
       st.integers(1, 10), st.integers(1, 10))
def test_far_grid_partitions(trials, tb, db):
    e = [_grid_entry(i, s, t, d) for i, (t, d, s) in enumerate(trials)]
    assert far_grid(e, 0.0, tb, db).total == len(e)


def test_far_grid_requires_metadata():
    with pytest.raises(ScoreError):
        far_grid([ScoreEntry("s", 0.1, SPOOF, "C1")], 0.0)


# -- pooling ----------------------------------------------------------------------

def test_pooled_single_condition():
    e = entries([0.8, 0.6, 0.4], [0.7, 0.3, 0.2])
    r = pooled_eer(e)
    assert r.per_condition == {"C": r.pooled}


def test_pooled_exceeds_per_condition():
    a = entries([0.3, 0.4], [0.1, 0.2], "A")
    b = [ScoreEntry("x" + e.utt_id, e.score + 0.25, e.label, "B") for e in a]
    r = pooled_eer(a + b)
    assert r.per_condition["A"].eer == 0.0 and r.per_condition["B"].eer == 0.0
    bona = [e.score for e in a + b if e.label == BONAFIDE]
    spoof = [e.score for e in a + b if e.label == SPOOF]
    assert r.pooled.eer == pytest.approx(sweep_oracle(bona, spoof)[0])
    assert r.pooled.eer > max(x.eer for x in r.per_condition.values())


def test_pooled_empty_condition_label():
    with pytest.raises(ScoreError):
        pooled_eer(entries([0.1], [0.0], cond=""))


# -- files --------------------------------------------------------------------------

def test_read_scores(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("a 0.5\n\nb -1e3\n")
    assert read_scores(p) == {"a": 0.5, "b": -1000.0}
    for bad in ("a\n", "a x\n", "a 1\na 2\n", "a nan\n", "a 1 2\n"):
        p.write_text(bad)
        with pytest.raises(ScoreError):
            read_scores(p)


def test_join_and_invert():
    key = [ManifestRow("a", "", BONAFIDE, "C1"), ManifestRow("b", "", SPOOF, "C1R", "r", 0.5, 3.0, 1.0)]
    e = join_scores({"a": 2.0, "b": 1.0}, key)
    assert e[1].rir_t60 == 0.5 and e[1].rir_drr == 3.0
    assert compute_eer(e).eer == 0.0
    assert compute_eer(join_scores({"a": 2.0, "b": 1.0}, key, invert=True)).eer == 100.0
    with pytest.raises(ScoreError):
        join_scores({"zzz": 1.0}, key)


def test_outputs(tmp_path):
    e = [_grid_entry(0, 0.9, 0.1, -8.0), ScoreEntry("b", 1.0, BONAFIDE, "C1R")]
    write_grid_csv(far_grid(e, 0.5, 2, 2), tmp_path / "g.csv")
    with open(tmp_path / "g.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == GRID_HEADER and len(rows) == 5
    assert rows[1][4:] == ["100.0", "1"] and rows[2][4:] == ["", "0"]
    doc = metrics_document(pooled_eer(e), 0.5)
    write_metrics_json(doc, tmp_path / "m.json")
    back = json.loads((tmp_path / "m.json").read_text())
    assert back["eer"] == 0.0 and back["per_condition"]["C1R"]["n_spoof"] == 1
