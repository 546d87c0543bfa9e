import csv
import math

import numpy as np
import pytest

from fseend import evalkit as ev
from fseend.labels import ActivityLabels

from conftest import random_model
from oracles import naive_der


def L(m, p=0.1):
    return ActivityLabels(np.asarray(m, dtype=np.int8), p)


class TestDER:
    @pytest.mark.parametrize("collar", [0.0, 0.25])
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_brute_force(self, seed, collar):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(1, 40))
        ref = (rng.random((T, int(rng.integers(1, 4)))) < rng.uniform(0.1, 0.6)).astype(np.int8)
        hyp = (rng.random((T + int(rng.integers(-2, 3)) if T > 2 else T, int(rng.integers(1, 4)))) < 0.4).astype(np.int8)
        got = ev.der(L(ref), L(hyp), collar=collar).der
        want = naive_der(ref, hyp, 0.1, collar)
        assert got == pytest.approx(want, abs=1e-12) or (math.isinf(got) and math.isinf(want))

    def test_identical_is_zero(self, rng):
        m = (rng.random((60, 3)) < 0.3).astype(np.int8)
        for collar in (0.0, 0.25, 1.0):
            assert ev.der(L(m), L(m), collar).der == 0.0

    def test_collar_monotone(self, rng):
        ref = (rng.random((80, 2)) < 0.3).astype(np.int8)
        hyp = (rng.random((80, 2)) < 0.3).astype(np.int8)
        speech = [ev.der(L(ref), L(hyp), c).scored_speech for c in (0.0, 0.1, 0.25, 0.5)]
        assert speech == sorted(speech, reverse=True)

    def test_collar_boundary(self):
        # speech over frames 5..14; centre of frame 2 is 0.25 s from the onset at 0.5 s
        ref = np.zeros((20, 1), dtype=np.int8)
        ref[5:15] = 1
        keep = ev.scored_frames(ref, 0.1, 0.25)
        assert keep[2] and not keep[3] and not keep[4] and not keep[5] and not keep[6] and keep[7]

    def test_miss_fa_confusion(self):
        ref = L([[1, 0], [1, 0], [0, 1], [0, 0]])
        hyp = L([[1, 0], [0, 0], [1, 0], [1, 0]])
        rep = ev.der(ref, hyp, collar=0.0)
        # mapping hyp0->ref0: frame1 miss, frame2 confusion, frame3 false alarm
        assert rep.mapping == {0: 0, 1: 1}
        assert rep.miss == pytest.approx(0.1) and rep.confusion == pytest.approx(0.1)
        assert rep.false_alarm == pytest.approx(0.1) and rep.der == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_appearance_never_beats_optimal(self, seed):
        rng = np.random.default_rng(seed)
        ref = (rng.random((30, 3)) < 0.4).astype(np.int8)
        hyp = (rng.random((30, 3)) < 0.4).astype(np.int8)
        assert ev.der(L(ref), L(hyp), 0.0, "appearance").der >= ev.der(L(ref), L(hyp), 0.0).der

    def test_appearance_penalizes_swapped_enrolment(self):
        ref = np.zeros((10, 2), dtype=np.int8)
        ref[0:5, 0], ref[5:, 1] = 1, 1
        hyp = ref[:, ::-1]
        assert ev.der(L(ref), L(hyp), 0.0).der == 0.0
        assert ev.der(L(ref), L(hyp), 0.0, "appearance").der == 1.0

    def test_nothing_scored(self):
        silent = np.zeros((5, 1), dtype=np.int8)
        assert ev.der(L(silent), L(silent), 0.0).der == 0.0
        rep = ev.der(L(silent), L(np.ones((5, 1))), 0.0)
        assert rep.undefined

    def test_period_mismatch(self):
        with pytest.raises(ValueError, match="frame periods"):
            ev.der(L(np.zeros((2, 1)), 0.1), L(np.zeros((2, 1)), 0.01))

    def test_pool_sums_errors(self, rng):
        reps = [ev.der(L(rng.integers(0, 2, (n, 2))), L(rng.integers(0, 2, (n, 2))), 0.0) for n in (10, 40)]
        pooled = ev.pool(reps)
        errors = sum(r.miss + r.false_alarm + r.confusion for r in reps)
        assert pooled.der == pytest.approx(errors / sum(r.scored_speech for r in reps))


class TestCorpus:
    def test_groups_and_table(self, rng):
        m = random_model(0)
        data = []
        for n in (1, 2, 2):
            lab = np.zeros((20, n), dtype=np.int8)
            lab[:10] = 1
            data.append((rng.normal(size=(20, 5)), L(lab)))
        rep = ev.evaluate_corpus(m, data, collar=0.0)
        assert sorted(rep.optimal) == [1, 2]
        assert len(rep.recordings) == 3
        assert "DER (%) by number of speakers" in rep.table()
        stream = ev.evaluate_corpus(m, data, collar=0.0, mode="stream")
        assert stream.optimal[2].der == pytest.approx(rep.optimal[2].der)

    def test_posteriors_to_labels(self):
        post = np.array([[0.9, 0.6, 0.4, 0.9]])
        np.testing.assert_array_equal(ev.posteriors_to_labels(post, 2, 0.1).matrix, [[1, 0]])


class TestEmbeddings:
    def test_codes(self):
        m = np.array([[0, 0], [0, 1], [1, 1], [1, 0]])
        np.testing.assert_array_equal(ev.label_codes(m), [0, 1, 3, 2])

    def test_dump(self, tmp_path, rng):
        model = random_model(0)
        x = rng.normal(size=(12, 5))
        rows = ev.dump_embeddings(model, x, L(rng.integers(0, 2, (12, 2))))
        assert len(rows) == 12 and all(len(r) == 8 + 2 for r in rows)
        e = np.array([r[1:-1] for r in rows])
        np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-12)
        path = tmp_path / "e.csv"
        ev.write_embeddings_csv(path, rows, 8)
        with open(path) as fh:
            table = list(csv.reader(fh))
        assert table[0][0] == "t" and table[0][-1] == "label" and len(table) == 13
