import json

import numpy as np
import pytest

from gaflab.scene_data import (
    ActionVocab,
    ActivityScript,
    ActorScript,
    BoundingBox,
    Dataset,
    GenConfig,
    PersonTrack,
    Scene,
    SchemaError,
    dataset_to_json,
    default_activity_scripts,
    expand_phases,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
    validate_scene,
)


def small_config(**kw):
    defaults = dict(
        num_scenes=24,
        num_people=4,
        num_frames=3,
        activity_scripts=default_activity_scripts(4),
        appearance_dim=6,
        seed=7,
    )
    defaults.update(kw)
    return GenConfig(**defaults)


class TestGeneration:
    def test_stratified_counts(self):
        config = GenConfig(
            num_scenes=100, activity_scripts=default_activity_scripts(4), seed=7
        )
        dataset = generate_synthetic_dataset(config)
        counts = np.bincount([s.group_activity for s in dataset.scenes])
        assert len(dataset.scenes) == 100
        np.testing.assert_array_equal(counts, [25, 25, 25, 25])

    def test_uneven_stratification(self):
        dataset = generate_synthetic_dataset(small_config(num_scenes=10))
        counts = np.bincount([s.group_activity for s in dataset.scenes])
        np.testing.assert_array_equal(counts, [3, 3, 2, 2])

    def test_deterministic_bytes(self):
        a = generate_synthetic_dataset(small_config(noise_std=0.0))
        b = generate_synthetic_dataset(small_config(noise_std=0.0))
        assert json.dumps(dataset_to_json(a)) == json.dumps(dataset_to_json(b))

    def test_all_generated_scenes_validate(self):
        config = GenConfig(
            num_scenes=16, num_people=6, num_frames=5,
            activity_scripts=default_activity_scripts(8), seed=1,
        )
        dataset = generate_synthetic_dataset(config)
        for scene in dataset.scenes:
            assert scene.num_people == 6
            assert scene.num_frames == 5
            assert validate_scene(scene, dataset.action_vocab) == []
            for track in scene.tracks:
                assert all(0 <= a < dataset.action_vocab.size for a in track.actions)

    def test_script_fidelity(self):
        config = small_config()
        dataset = generate_synthetic_dataset(config)
        scripts = config.resolved_scripts()
        vocab = dataset.action_vocab
        background = vocab.index(config.background_action)
        for scene in dataset.scenes:
            script = scripts[dataset.group_vocab[scene.group_activity]]
            expected = sorted(
                tuple(vocab.index(a) for a in expand_phases(actor.action_phases, config.num_frames))
                for actor in script.actors
            )
            observed = sorted(
                tuple(t.actions)
                for t in scene.tracks
                if any(a != background for a in t.actions)
            )
            assert observed == expected

    def test_mirrored_pairs_share_action_multiset(self):
        dataset = generate_synthetic_dataset(small_config())
        per_class = {}
        for scene in dataset.scenes:
            hist = np.zeros(dataset.action_vocab.size, dtype=int)
            for t in scene.tracks:
                hist += np.bincount(t.actions, minlength=dataset.action_vocab.size)
            per_class.setdefault(scene.group_activity, hist)
        # l_spike (0) vs r_spike (1) etc.
        np.testing.assert_array_equal(per_class[0], per_class[1])
        np.testing.assert_array_equal(per_class[2], per_class[3])

    def test_unknown_script_action_rejected(self):
        bad = {
            "odd": ActivityScript(
                (ActorScript(("teleporting",), (0.2, 0.2), (0.3, 0.3)),)
            )
        }
        with pytest.raises(ValueError, match="teleporting"):
            generate_synthetic_dataset(small_config(activity_scripts=bad))

    def test_appearance_tracks_actions(self):
        # Same action in two frames -> nearly equal appearance (noise only);
        # different actions -> clearly different basis columns.
        dataset = generate_synthetic_dataset(small_config(noise_std=0.0))
        scene = dataset.scenes[0]
        for track in scene.tracks:
            app = np.asarray(track.appearance)
            for t in range(1, len(track.actions)):
                same = track.actions[t] == track.actions[0]
                close = np.allclose(app[t], app[0], atol=1e-9)
                assert close == same


class TestValidation:
    def make_scene(self):
        boxes = [BoundingBox(0.1, 0.1, 0.2, 0.3), BoundingBox(0.4, 0.4, 0.5, 0.6)]
        return Scene(
            "s0",
            [PersonTrack(0, boxes, [0, 1]), PersonTrack(1, list(boxes), [1, 1])],
        )

    def test_consistent_scene_ok(self):
        assert validate_scene(self.make_scene(), ActionVocab(("a", "b"))) == []

    def test_length_mismatch_reported(self):
        scene = self.make_scene()
        scene.tracks[1].actions = [1]
        violations = validate_scene(scene, ActionVocab(("a", "b")))
        assert any("actions length" in v for v in violations)

    def test_bounds_violation_reported(self):
        scene = self.make_scene()
        scene.tracks[0].boxes[0] = BoundingBox(0.5, 0.1, 0.2, 0.3)
        violations = validate_scene(scene, ActionVocab(("a", "b")))
        assert any("x bounds" in v for v in violations)

    def test_collects_every_violation(self):
        scene = self.make_scene()
        scene.tracks[0].boxes[0] = BoundingBox(0.5, 0.1, 0.2, 0.3)
        scene.tracks[1].actions = [7, 7]
        violations = validate_scene(scene, ActionVocab(("a", "b")))
        assert len(violations) >= 3


class TestRoundTrip:
    def test_save_load_structurally_equal(self, tmp_path):
        dataset = generate_synthetic_dataset(small_config())
        path = tmp_path / "data.json"
        save_dataset(dataset, path)
        loaded = load_dataset(path)
        assert loaded.action_vocab == dataset.action_vocab
        assert loaded.group_vocab == dataset.group_vocab
        assert len(loaded.scenes) == len(dataset.scenes)
        for a, b in zip(dataset.scenes, loaded.scenes):
            assert a.scene_id == b.scene_id
            assert a.group_activity == b.group_activity
            for ta, tb in zip(a.tracks, b.tracks):
                assert ta.actions == tb.actions
                assert ta.boxes == tb.boxes
                np.testing.assert_array_equal(ta.appearance, tb.appearance)

    def test_load_rejects_out_of_range_action(self, tmp_path):
        dataset = generate_synthetic_dataset(small_config())
        payload = dataset_to_json(dataset)
        payload["scenes"][3]["tracks"][0]["actions"][0] = len(payload["action_vocab"])
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="scene_00003"):
            load_dataset(path)

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError, match="JSON"):
            load_dataset(path)


class TestSplit:
    def test_partition(self):
        dataset = generate_synthetic_dataset(small_config(num_scenes=100))
        train, test = split_dataset(dataset, 0.8, seed=3)
        assert len(train.scenes) == 80 and len(test.scenes) == 20
        train_ids = {s.scene_id for s in train.scenes}
        test_ids = {s.scene_id for s in test.scenes}
        assert not train_ids & test_ids
        assert train_ids | test_ids == {s.scene_id for s in dataset.scenes}

    def test_deterministic(self):
        dataset = generate_synthetic_dataset(small_config(num_scenes=60))
        a = split_dataset(dataset, 0.7, seed=5)
        b = split_dataset(dataset, 0.7, seed=5)
        assert [s.scene_id for s in a[0].scenes] == [s.scene_id for s in b[0].scenes]

    def test_stratified_per_class(self):
        dataset = generate_synthetic_dataset(small_config(num_scenes=80))
        train, _ = split_dataset(dataset, 0.75, seed=1)
        counts = np.bincount([s.group_activity for s in train.scenes])
        np.testing.assert_array_equal(counts, [15, 15, 15, 15])

    def test_fraction_bounds(self):
        dataset = generate_synthetic_dataset(small_config())
        with pytest.raises(ValueError):
            split_dataset(dataset, 1.0, seed=0)
        with pytest.raises(ValueError):
            split_dataset(dataset, 0.0, seed=0)
