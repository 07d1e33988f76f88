"""Metric tests: every operation is checked against hand values or an
independent brute-force oracle implemented here with explicit loops."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaflab.bank import BankEntry, EmbeddingBank, load_bank, save_bank
from gaflab.retrieval_eval import (
    ActionHistogram,
    EvalConfig,
    action_histogram,
    action_iou,
    af_isf_vector,
    compute_isf,
    cosine_similarity,
    evaluate_bank,
    export_projection,
    hit_at_k,
    knn_gar,
    make_matcher,
    mean_average_precision,
    retrieve,
)
from gaflab.scene_data import (
    BoundingBox,
    GenConfig,
    PersonTrack,
    Scene,
    default_activity_scripts,
    generate_synthetic_dataset,
)


def make_bank(vectors, labels=None, histograms=None, ind=None, group_vocab=None):
    vectors = np.asarray(vectors, dtype=np.float32)
    count = len(vectors)
    labels = labels if labels is not None else [None] * count
    if histograms is None:
        histograms = [np.array([1, 1]) for _ in range(count)]
    ind = vectors if ind is None else np.asarray(ind, dtype=np.float32)
    entries = [
        BankEntry(
            scene_id=f"s{i:03d}",
            g=vectors[i],
            ind=ind[i],
            action_histogram=np.asarray(histograms[i]),
            group_label=labels[i],
        )
        for i in range(count)
    ]
    manifest = {"group_vocab": group_vocab}
    return EmbeddingBank(entries=entries, manifest=manifest)


def scene_with_actions(action_rows, scene_id="s"):
    """action_rows[n] = per-frame action list for person n."""
    tracks = []
    for n, actions in enumerate(action_rows):
        boxes = [BoundingBox(0.1, 0.1, 0.2, 0.2) for _ in actions]
        tracks.append(PersonTrack(n, boxes, list(actions)))
    return Scene(scene_id, tracks)


# --- independent oracles -------------------------------------------------


def oracle_ranking(bank, query_index, embedding="grp"):
    vectors = bank.vectors(embedding).astype(np.float64)
    pairs = []
    for j, entry in enumerate(bank.entries):
        if j == query_index:
            continue
        d = math.sqrt(float(np.sum((vectors[j] - vectors[query_index]) ** 2)))
        pairs.append((d, entry.scene_id, j))
    pairs.sort(key=lambda p: (p[0], p[1]))
    return pairs


def oracle_hit(bank, matched, K, embedding="grp"):
    hits = 0
    for i, entry in enumerate(bank.entries):
        ranking = oracle_ranking(bank, i, embedding)
        if any(matched(entry.scene_id, sid) for _, sid, _ in ranking[:K]):
            hits += 1
    return hits / len(bank)


def oracle_map(bank, matched, embedding="grp"):
    aps = []
    excluded = []
    for i, entry in enumerate(bank.entries):
        ranking = oracle_ranking(bank, i, embedding)
        flags = [matched(entry.scene_id, sid) for _, sid, _ in ranking]
        if not any(flags):
            excluded.append(entry.scene_id)
            continue
        precisions = []
        seen = 0
        for rank, flag in enumerate(flags, start=1):
            if flag:
                seen += 1
                precisions.append(seen / rank)
        aps.append(sum(precisions) / len(precisions))
    return (np.mean(aps) if aps else float("nan")), excluded


def oracle_knn(bank, K, embedding="grp"):
    labels = [int(l) for l in bank.labels()]
    num_classes = max(labels) + 1
    correct = 0
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    for i, entry in enumerate(bank.entries):
        ranking = oracle_ranking(bank, i, embedding)
        neighbor_labels = [labels[j] for _, _, j in ranking[:K]]
        counts = {}
        for l in neighbor_labels:
            counts[l] = counts.get(l, 0) + 1
        best = max(counts.values())
        tied = [l for l, c in counts.items() if c == best]
        predicted = tied[0] if len(tied) == 1 else neighbor_labels[0]
        confusion[labels[i], predicted] += 1
        correct += predicted == labels[i]
    return correct / len(bank), confusion


# --- histograms -----------------------------------------------------------


class TestActionHistogram:
    def test_all_standing(self):
        scene = scene_with_actions([[0, 0], [0, 0], [0, 0]])
        hist = action_histogram(scene, 3)
        np.testing.assert_array_equal(hist.counts, [3, 0, 0])

    def test_one_spiker_two_standers(self):
        scene = scene_with_actions([[1, 1], [0, 0], [0, 0]])
        hist = action_histogram(scene, 2)
        np.testing.assert_array_equal(hist.counts, [2, 1])

    def test_per_frame_is_t_times_per_person_when_constant(self):
        scene = scene_with_actions([[1, 1], [0, 0], [2, 2]])
        per_person = action_histogram(scene, 3, "per_person").counts
        per_frame = action_histogram(scene, 3, "per_frame").counts
        np.testing.assert_array_equal(per_frame, 2 * per_person)

    def test_modal_tie_goes_to_lowest_id(self):
        scene = scene_with_actions([[2, 1]])
        hist = action_histogram(scene, 3)
        np.testing.assert_array_equal(hist.counts, [0, 1, 0])

    def test_empty_scene_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            action_histogram(Scene("s", []), 3)


class TestActionIoU:
    def test_identical(self):
        assert action_iou([2, 1], [2, 1]) == 1.0

    def test_disjoint(self):
        assert action_iou([2, 0], [0, 3]) == 0.0

    def test_hand_case(self):
        # q={a:2,b:1}, r={a:1,b:1} -> min sum 2, max sum 3
        assert abs(action_iou([2, 1], [1, 1]) - 2.0 / 3.0) < 1e-15

    def test_both_zero_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            action_iou([0, 0], [0, 0])

    @settings(max_examples=60, deadline=None)
    @given(
        q=st.lists(st.integers(min_value=0, max_value=9), min_size=3, max_size=3),
        r=st.lists(st.integers(min_value=0, max_value=9), min_size=3, max_size=3),
    )
    def test_symmetry_and_bounds(self, q, r):
        if sum(np.maximum(q, r)) == 0:
            return
        value = action_iou(q, r)
        assert 0.0 <= value <= 1.0
        assert value == action_iou(r, q)
        if sum(q) > 0:
            assert action_iou(q, q) == 1.0


class TestIsf:
    def test_ubiquitous_action(self):
        hists = [np.array([1, 0]) for _ in range(4)]
        table = compute_isf(hists)
        assert abs(table.isf[0] - 1.0) < 1e-15

    def test_hand_value(self):
        # S=4 scenes, action present in 2: ln(5/3) + 1
        hists = [[1, 1], [1, 1], [1, 0], [1, 0]]
        table = compute_isf([np.array(h) for h in hists])
        assert abs(table.isf[1] - 1.5108256237659907) < 1e-12

    def test_absent_action_finite(self):
        hists = [np.array([1, 0]) for _ in range(5)]
        table = compute_isf(hists)
        assert abs(table.isf[1] - (math.log(6.0) + 1.0)) < 1e-12

    def test_strictly_decreasing_in_presence(self):
        S = 10
        values = []
        for s_m in range(S + 1):
            hists = [np.array([1, 1 if i < s_m else 0]) for i in range(S)]
            values.append(compute_isf(hists).isf[1])
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_from_dataset(self):
        config = GenConfig(
            num_scenes=8, num_people=4, num_frames=3,
            activity_scripts=default_activity_scripts(4), seed=0,
        )
        dataset = generate_synthetic_dataset(config)
        table = compute_isf(dataset)
        assert table.scene_count == 8
        assert np.all(table.isf > 0)
        # background action is in every scene -> minimum weight 1.0
        assert abs(table.isf[0] - 1.0) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_isf([])


class TestAfIsf:
    def test_single_support(self):
        table = compute_isf([np.array([1, 1, 0]), np.array([0, 1, 0])])
        fv = af_isf_vector(np.array([0, 0, 0]) + np.array([2, 0, 0]), table)
        assert fv.fv[0] > 0 and fv.fv[1] == 0 and fv.fv[2] == 0

    def test_unit_isf_returns_counts(self):
        table = compute_isf([np.array([1, 1])] * 3)
        fv = af_isf_vector(np.array([4, 2]), table)
        np.testing.assert_allclose(fv.fv, [4.0, 2.0])

    def test_random_elementwise_oracle(self, rng):
        hists = [rng.integers(0, 4, size=5) for _ in range(6)]
        table = compute_isf(hists)
        h = rng.integers(0, 4, size=5)
        fv = af_isf_vector(h, table)
        np.testing.assert_allclose(fv.fv, h * table.isf, atol=1e-15)

    def test_length_mismatch(self):
        table = compute_isf([np.array([1, 1])])
        with pytest.raises(ValueError, match="length"):
            af_isf_vector(np.array([1, 2, 3]), table)


class TestCosine:
    def test_self_similarity(self, rng):
        v = rng.normal(size=5)
        assert abs(cosine_similarity(v, v) - 1.0) < 1e-12

    def test_orthogonal(self):
        assert abs(cosine_similarity([1.0, 0.0], [0.0, 2.0])) < 1e-15

    def test_hand_value(self):
        assert abs(cosine_similarity([1.0, 1.0], [1.0, 0.0]) - 1 / math.sqrt(2)) < 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])


class TestRetrieve:
    def test_hand_distances(self):
        bank = make_bank([[0, 0], [1, 0], [3, 0], [0, 2]])
        run = retrieve(bank, "s000")
        np.testing.assert_allclose(run.distances, [1.0, 2.0, 3.0])
        assert run.ranked_ids == ["s001", "s003", "s002"]

    def test_duplicate_ranks_first(self):
        bank = make_bank([[1, 1], [1, 1], [5, 5]])
        run = retrieve(bank, "s000")
        assert run.ranked_ids[0] == "s001"
        assert run.distances[0] == 0.0

    def test_leave_one_out(self):
        bank = make_bank([[0, 0], [1, 0], [2, 0]])
        for entry in bank.entries:
            run = retrieve(bank, entry.scene_id)
            assert entry.scene_id not in run.ranked_ids
            assert len(run.ranked_ids) == 2
            assert np.all(np.diff(run.distances) >= 0)

    def test_distance_tie_breaks_by_scene_id(self):
        bank = make_bank([[0, 0], [1, 0], [-1, 0]])
        run = retrieve(bank, "s000")
        assert run.ranked_ids == ["s001", "s002"]

    def test_unknown_query(self):
        bank = make_bank([[0, 0], [1, 0]])
        with pytest.raises(KeyError):
            retrieve(bank, "nope")


class TestHitAtK:
    def test_everything_matches(self):
        bank = make_bank([[0], [1], [2]], labels=[0, 0, 0], group_vocab=["a"])
        for k in (1, 2):
            assert hit_at_k(bank, "group", k) == 1.0

    def test_nothing_matches(self):
        bank = make_bank([[0], [1], [2]], labels=[0, 1, 2], group_vocab=list("abc"))
        assert hit_at_k(bank, "group", 2) == 0.0

    def test_five_scene_bank_vs_oracle(self, rng):
        vectors = rng.normal(size=(5, 3))
        labels = [0, 1, 0, 1, 0]
        bank = make_bank(vectors, labels=labels, group_vocab=["a", "b"])
        matcher = make_matcher(bank, "group", 0.5)
        for k in range(1, 5):
            assert hit_at_k(bank, matcher, k) == oracle_hit(bank, matcher, k)

    def test_monotone_in_k(self, rng):
        vectors = rng.normal(size=(8, 4))
        hists = rng.integers(0, 3, size=(8, 4))
        hists[:, 0] += 1
        bank = make_bank(vectors, histograms=list(hists))
        values = [hit_at_k(bank, "iou", k, tau=0.5) for k in range(1, 8)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_k_exceeding_gallery_rejected(self):
        bank = make_bank([[0], [1], [2]])
        with pytest.raises(ValueError, match="gallery"):
            hit_at_k(bank, "iou", 3)


class TestMeanAveragePrecision:
    def test_all_match(self):
        bank = make_bank([[0], [1], [2]], labels=[0, 0, 0], group_vocab=["a"])
        assert mean_average_precision(bank, "group").value == 1.0

    def test_single_match_positions(self):
        # query s000: nearest s001 (match) -> AP 1; moving the match to
        # second place halves it.
        bank = make_bank([[0.0], [1.0], [5.0]], labels=[0, 0, 1], group_vocab=["a", "b"])
        run_value = mean_average_precision(bank, "group").value
        # s000: match at rank 1 -> 1.0; s001: match (s000) at rank 1 -> 1.0;
        # s002: no match -> excluded
        assert run_value == 1.0
        bank2 = make_bank([[0.0], [0.9], [1.0]], labels=[0, 1, 0], group_vocab=["a", "b"])
        result = mean_average_precision(bank2, "group")
        # both labeled-0 queries see their single match at rank 2 -> AP 0.5
        per_query = {"s000": 0.5, "s002": 0.5}
        expected = np.mean([per_query["s000"], per_query["s002"]])
        assert abs(result.value - expected) < 1e-12
        assert result.excluded_queries == ("s001",)

    def test_six_scene_bank_vs_oracle(self, rng):
        vectors = rng.normal(size=(6, 3))
        hists = rng.integers(0, 3, size=(6, 4))
        hists[:, 0] += 1
        bank = make_bank(vectors, histograms=list(hists))
        matcher = make_matcher(bank, "afisf", 0.5)
        mine = mean_average_precision(bank, matcher)
        expected, excluded = oracle_map(bank, matcher)
        assert abs(mine.value - expected) < 1e-12
        assert list(mine.excluded_queries) == excluded

    def test_map_one_iff_matches_prefix(self, rng):
        # matches occupying a prefix of every ranking -> exactly 1.0
        bank = make_bank([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]],
                         labels=[0, 0, 0, 1, 1, 1], group_vocab=["a", "b"])
        assert mean_average_precision(bank, "group").value == 1.0


class TestKnn:
    def test_separable_clusters(self, rng):
        a = rng.normal(size=(5, 3)) * 0.1
        b = rng.normal(size=(5, 3)) * 0.1 + 10.0
        bank = make_bank(np.vstack([a, b]), labels=[0] * 5 + [1] * 5, group_vocab=["a", "b"])
        result = knn_gar(bank, 1)
        assert result.accuracy == 1.0

    def test_confusion_row_sums(self, rng):
        vectors = rng.normal(size=(9, 3))
        labels = [0, 0, 0, 1, 1, 1, 2, 2, 2]
        bank = make_bank(vectors, labels=labels, group_vocab=list("abc"))
        result = knn_gar(bank, 3)
        np.testing.assert_array_equal(result.confusion.sum(axis=1), [3, 3, 3])

    def test_seven_point_bank_vs_vote_oracle(self, rng):
        vectors = rng.normal(size=(7, 2))
        labels = [0, 1, 2, 0, 1, 2, 0]
        bank = make_bank(vectors, labels=labels, group_vocab=list("abc"))
        mine = knn_gar(bank, 3)
        acc, confusion = oracle_knn(bank, 3)
        assert mine.accuracy == acc
        np.testing.assert_array_equal(mine.confusion, confusion)

    def test_vote_tie_falls_back_to_nearest(self):
        # query s000 at origin; K=2 neighbors with labels 1 and 2 (tied),
        # nearest is label 1.
        bank = make_bank(
            [[0.0], [1.0], [2.0], [50.0]],
            labels=[1, 1, 2, 2],
            group_vocab=["x", "y", "z"],
        )
        result = knn_gar(bank, 2)
        # by construction s000's neighbors are s001 (label 1), s002 (label 2)
        assert result.confusion[1, 1] >= 1

    def test_k_bounds(self, rng):
        bank = make_bank(rng.normal(size=(4, 2)), labels=[0, 1, 0, 1], group_vocab=["a", "b"])
        with pytest.raises(ValueError):
            knn_gar(bank, 4)

    def test_missing_labels(self, rng):
        bank = make_bank(rng.normal(size=(4, 2)))
        with pytest.raises(ValueError, match="labels"):
            knn_gar(bank, 1)


class TestProjection:
    def test_collinear_second_coordinate_vanishes(self):
        base = np.array([1.0, 2.0, -1.0])
        vectors = np.stack([t * base for t in np.linspace(0, 1, 6)])
        points = export_projection(make_bank(vectors))
        assert max(abs(p.c2) for p in points) < 1e-8

    def test_2d_exactness_preserves_distances(self, rng):
        vectors = rng.normal(size=(7, 2))
        points = export_projection(make_bank(vectors))
        coords = np.array([[p.c1, p.c2] for p in points])
        original = np.linalg.norm(vectors[:, None] - vectors[None, :], axis=-1)
        projected = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
        np.testing.assert_allclose(projected, original, atol=1e-6)

    def test_variance_ordering(self, rng):
        vectors = rng.normal(size=(20, 6))
        points = export_projection(make_bank(vectors))
        coords = np.array([[p.c1, p.c2] for p in points])
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_too_few_scenes(self):
        with pytest.raises(ValueError, match="two"):
            export_projection(make_bank([[1.0, 2.0]]))


class TestMatcherSymmetry:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_afisf_match_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        hists = rng.integers(0, 4, size=(6, 3))
        hists[:, 0] += 1  # avoid zero vectors
        bank = make_bank(rng.normal(size=(6, 2)), histograms=list(hists))
        matcher = make_matcher(bank, "afisf", 0.5)
        ids = [e.scene_id for e in bank.entries]
        for a in ids:
            for b in ids:
                assert matcher(a, b) == matcher(b, a)


class TestThreadCap:
    def test_results_identical_under_thread_pool(self, rng, monkeypatch):
        vectors = rng.normal(size=(10, 4))
        labels = [int(l) for l in rng.integers(0, 2, size=10)]
        bank = make_bank(vectors, labels=labels, group_vocab=["a", "b"])
        sequential = [hit_at_k(bank, "group", k) for k in (1, 3)]
        monkeypatch.setenv("GAF_LAB_THREADS", "4")
        threaded = [hit_at_k(bank, "group", k) for k in (1, 3)]
        assert sequential == threaded
        monkeypatch.setenv("GAF_LAB_THREADS", "not-a-number")
        assert hit_at_k(bank, "group", 1) == sequential[0]


class TestEvaluateBankAndIo:
    def test_report_schema_and_round_trip(self, rng, tmp_path):
        vectors = rng.normal(size=(6, 4))
        hists = rng.integers(0, 3, size=(6, 5))
        hists[:, 0] += 1
        bank = make_bank(vectors, labels=[0, 1, 0, 1, 0, 1],
                         histograms=list(hists), group_vocab=["a", "b"])
        report = evaluate_bank(bank, EvalConfig(predicate="group", ks=(1, 2)))
        assert set(report) >= {"predicate", "tau", "embedding", "hit", "map", "knn", "confusion"}
        assert set(report["hit"]) == {"1", "2"}
        assert np.asarray(report["confusion"]).shape == (2, 2)

        path = tmp_path / "bank.zip"
        save_bank(bank, path)
        loaded = load_bank(path)
        np.testing.assert_array_equal(loaded.vectors("grp"), bank.vectors("grp"))
        np.testing.assert_array_equal(loaded.vectors("ind"), bank.vectors("ind"))
        assert loaded.labels() == bank.labels()
        report2 = evaluate_bank(loaded, EvalConfig(predicate="group", ks=(1, 2)))
        assert report2["hit"] == report["hit"]

    def test_eval_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(predicate="bogus")
        with pytest.raises(ValueError):
            EvalConfig(tau=0.0)
        with pytest.raises(ValueError):
            EvalConfig(ks=(0,))
        with pytest.raises(ValueError):
            EvalConfig(embedding="huge")
