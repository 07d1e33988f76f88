"""Scene schema, synthetic scripted scene generation, and JSON round-trip.

A scene is N person tracks over T frames on a unit-square court.  The
generator scripts two key actors per group-activity class (what they do and
where) and fills the rest of the group with a background action on a random
walk, so generated datasets have the class imbalance and location structure
the retrieval metrics are designed around.  Mirrored class pairs (l_*/r_*)
share an action multiset and differ only in where the actions happen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DEFAULT_ACTIONS = (
    "standing",
    "spiking",
    "blocking",
    "setting",
    "digging",
    "jumping",
    "falling",
    "waiting",
    "moving",
)

BOX_HALF_W = 0.03
BOX_HALF_H = 0.06
LOC_JITTER_SCALE = 0.4
WALK_STEP_STD = 0.03
IDENTITY_OFFSET_STD = 0.1
# Background walkers keep to the court-edge bands so scripted zones stay
# unambiguous: a mid-court location is always a key actor.
WALK_BANDS = ((0.08, 0.30), (0.70, 0.92))


class SchemaError(ValueError):
    """Raised when a dataset file violates the on-disk schema."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized court coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))


@dataclass
class PersonTrack:
    person_id: int
    boxes: list[BoundingBox]
    actions: list[int]
    appearance: Optional[np.ndarray] = None  # (T, D_raw) when present


@dataclass
class Scene:
    scene_id: str
    tracks: list[PersonTrack]
    group_activity: Optional[int] = None

    @property
    def num_frames(self) -> int:
        return len(self.tracks[0].boxes) if self.tracks else 0

    @property
    def num_people(self) -> int:
        return len(self.tracks)


@dataclass(frozen=True)
class ActionVocab:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("action names must be unique")
        if len(self.names) < 2:
            raise ValueError("need at least two action classes")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass
class Dataset:
    scenes: list[Scene]
    action_vocab: ActionVocab
    group_vocab: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class ActorScript:
    """One key actor: action phases stretched over T frames, and a linear
    anchor path from ``start`` to ``end``."""

    action_phases: tuple[str, ...]
    start: tuple[float, float]
    end: tuple[float, float]


@dataclass(frozen=True)
class ActivityScript:
    actors: tuple[ActorScript, ...]


@dataclass
class GenConfig:
    num_scenes: int = 500
    num_people: int = 6
    num_frames: int = 5
    activity_scripts: Optional[dict[str, ActivityScript]] = None
    appearance_dim: int = 16
    noise_std: float = 0.05
    seed: int = 0
    action_names: tuple[str, ...] = DEFAULT_ACTIONS
    background_action: str = "standing"

    def resolved_scripts(self) -> dict[str, ActivityScript]:
        if self.activity_scripts is not None:
            return self.activity_scripts
        return default_activity_scripts()


def _mirror(actor: ActorScript) -> ActorScript:
    sx, sy = actor.start
    ex, ey = actor.end
    return ActorScript(actor.action_phases, (1.0 - sx, sy), (1.0 - ex, ey))


def default_activity_scripts(num_classes: int = 8) -> dict[str, ActivityScript]:
    """Volleyball-style script set: four base plays, each in a left and a
    mirrored right variant.

    Paired classes share an action multiset and differ only by side, and
    every play on a side reuses the same two actor zones (primary at that
    side's net, secondary across the net), so a location alone never
    determines the action: the same court spot hosts spiking, setting,
    digging, falling, blocking, waiting, or moving depending on the class.
    """
    primary_path = ((0.30, 0.45), (0.36, 0.55))
    secondary_path = ((0.66, 0.55), (0.62, 0.45))
    primary_actions = {
        "spike": ("jumping", "spiking"),
        "set": ("setting",),
        "pass": ("digging",),
        "winpoint": ("jumping", "falling"),
    }
    secondary_actions = {
        "spike": ("blocking",),
        "set": ("waiting",),
        "pass": ("moving",),
        "winpoint": ("waiting",),
    }
    scripts: dict[str, ActivityScript] = {}
    for play in primary_actions:
        actors = (
            ActorScript(primary_actions[play], *primary_path),
            ActorScript(secondary_actions[play], *secondary_path),
        )
        scripts[f"l_{play}"] = ActivityScript(actors)
        scripts[f"r_{play}"] = ActivityScript(tuple(_mirror(a) for a in actors))
    names = list(scripts)
    if not 1 <= num_classes <= len(names):
        raise ValueError(f"num_classes must be in [1, {len(names)}]")
    return {name: scripts[name] for name in names[:num_classes]}


def expand_phases(phases: Sequence[str], num_frames: int) -> list[str]:
    """Stretch an action-phase list over ``num_frames`` frames."""
    count = len(phases)
    return [phases[min(count - 1, t * count // num_frames)] for t in range(num_frames)]


def _clip_center(x: float, y: float) -> tuple[float, float]:
    return (
        float(np.clip(x, BOX_HALF_W + 1e-6, 1.0 - BOX_HALF_W - 1e-6)),
        float(np.clip(y, BOX_HALF_H + 1e-6, 1.0 - BOX_HALF_H - 1e-6)),
    )


def _box_at(x: float, y: float) -> BoundingBox:
    x, y = _clip_center(x, y)
    return BoundingBox(x - BOX_HALF_W, y - BOX_HALF_H, x + BOX_HALF_W, y + BOX_HALF_H)


def generate_synthetic_dataset(config: GenConfig) -> Dataset:
    """Generate a scripted dataset with known group-activity ground truth.

    Deterministic for a fixed config (a single seeded generator drives every
    draw).  Scene i belongs to class ``i % num_classes``, which stratifies
    the class counts.  Raw appearance vectors mix a random action basis with
    a per-person identity offset and Gaussian noise, so appearance carries
    action information without being a one-hot.
    """
    vocab = ActionVocab(tuple(config.action_names))
    scripts = config.resolved_scripts()
    class_names = tuple(scripts)
    if config.num_scenes < len(class_names):
        raise ValueError("num_scenes must be at least the number of group classes")
    if config.noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if config.background_action not in vocab.names:
        raise ValueError(f"unknown background action {config.background_action!r}")
    for name, script in scripts.items():
        for actor in script.actors:
            for action in actor.action_phases:
                if action not in vocab.names:
                    raise ValueError(f"script {name!r} references unknown action {action!r}")
        if len(script.actors) > config.num_people:
            raise ValueError(f"script {name!r} needs more people than num_people")

    rng = np.random.default_rng(config.seed)
    basis = rng.normal(0.0, 1.0, size=(config.appearance_dim, vocab.size))
    background_id = vocab.index(config.background_action)
    T, N = config.num_frames, config.num_people
    loc_jitter = LOC_JITTER_SCALE * config.noise_std

    scenes = []
    for i in range(config.num_scenes):
        class_id = i % len(class_names)
        script = scripts[class_names[class_id]]
        key_slots = rng.choice(N, size=len(script.actors), replace=False)

        actions = np.full((T, N), background_id, dtype=np.int64)
        centers = np.empty((T, N, 2))
        for slot, actor in zip(key_slots, script.actors):
            seq = expand_phases(actor.action_phases, T)
            actions[:, slot] = [vocab.index(a) for a in seq]
            frac = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
            sx, sy = actor.start
            ex, ey = actor.end
            centers[:, slot, 0] = sx + (ex - sx) * frac + rng.normal(0, loc_jitter, T)
            centers[:, slot, 1] = sy + (ey - sy) * frac + rng.normal(0, loc_jitter, T)
        for n in range(N):
            if n in key_slots:
                continue
            band = WALK_BANDS[rng.integers(len(WALK_BANDS))]
            pos = np.array([rng.uniform(0.1, 0.9), rng.uniform(*band)])
            for t in range(T):
                pos = pos + rng.normal(0, WALK_STEP_STD, size=2)
                pos[0] = np.clip(pos[0], 0.05, 0.95)
                pos[1] = np.clip(pos[1], *band)
                centers[t, n] = pos

        offsets = rng.normal(0.0, IDENTITY_OFFSET_STD, size=(N, config.appearance_dim))
        noise = rng.normal(0.0, config.noise_std, size=(T, N, config.appearance_dim))
        tracks = []
        for n in range(N):
            boxes = [_box_at(centers[t, n, 0], centers[t, n, 1]) for t in range(T)]
            appearance = basis[:, actions[:, n]].T + offsets[n] + noise[:, n]
            tracks.append(
                PersonTrack(
                    person_id=n,
                    boxes=boxes,
                    actions=[int(a) for a in actions[:, n]],
                    appearance=appearance,
                )
            )
        scenes.append(Scene(f"scene_{i:05d}", tracks, group_activity=class_id))

    return Dataset(scenes=scenes, action_vocab=vocab, group_vocab=class_names)


def validate_scene(scene: Scene, vocab: ActionVocab) -> list[str]:
    """Collect every invariant violation in a scene (empty list = valid)."""
    violations = []
    if not scene.tracks:
        violations.append(f"{scene.scene_id}: scene has no tracks")
        return violations
    T = len(scene.tracks[0].boxes)
    for track in scene.tracks:
        tag = f"{scene.scene_id}/person {track.person_id}"
        if len(track.boxes) != T:
            violations.append(f"{tag}: boxes length {len(track.boxes)} != {T}")
        if len(track.actions) != len(track.boxes):
            violations.append(
                f"{tag}: actions length {len(track.actions)} != boxes length {len(track.boxes)}"
            )
        for t, box in enumerate(track.boxes):
            if not (0.0 <= box.x_min < box.x_max <= 1.0):
                violations.append(f"{tag}: frame {t} x bounds invalid ({box.x_min}, {box.x_max})")
            if not (0.0 <= box.y_min < box.y_max <= 1.0):
                violations.append(f"{tag}: frame {t} y bounds invalid ({box.y_min}, {box.y_max})")
        for t, action in enumerate(track.actions):
            if not 0 <= action < vocab.size:
                violations.append(f"{tag}: frame {t} action id {action} out of range")
        if track.appearance is not None and len(track.appearance) != len(track.boxes):
            violations.append(
                f"{tag}: appearance length {len(track.appearance)} != boxes length"
            )
    return violations


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive split; stratified per group class when every
    scene is labeled."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    scenes = dataset.scenes
    labeled = all(s.group_activity is not None for s in scenes)

    train_idx: list[int] = []
    if labeled:
        by_class: dict[int, list[int]] = {}
        for i, s in enumerate(scenes):
            by_class.setdefault(s.group_activity, []).append(i)
        for class_id in sorted(by_class):
            members = by_class[class_id]
            order = rng.permutation(len(members))
            take = int(train_fraction * len(members) + 0.5)
            train_idx.extend(members[j] for j in order[:take])
    else:
        order = rng.permutation(len(scenes))
        take = int(train_fraction * len(scenes) + 0.5)
        train_idx.extend(int(j) for j in order[:take])

    chosen = set(train_idx)
    train = [scenes[i] for i in sorted(chosen)]
    test = [scenes[i] for i in range(len(scenes)) if i not in chosen]
    make = lambda part: Dataset(part, dataset.action_vocab, dataset.group_vocab)
    return make(train), make(test)


def _scene_to_json(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "group_activity": scene.group_activity,
        "tracks": [
            {
                "person_id": t.person_id,
                "boxes": [[b.x_min, b.y_min, b.x_max, b.y_max] for b in t.boxes],
                "actions": list(t.actions),
                "appearance": None if t.appearance is None else np.asarray(t.appearance).tolist(),
            }
            for t in scene.tracks
        ],
    }


def dataset_to_json(dataset: Dataset) -> dict:
    return {
        "action_vocab": list(dataset.action_vocab.names),
        "group_vocab": None if dataset.group_vocab is None else list(dataset.group_vocab),
        "scenes": [_scene_to_json(s) for s in dataset.scenes],
    }


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataset_to_json(dataset), f)


def load_dataset(path) -> Dataset:
    """Parse and validate a dataset file; raises SchemaError naming the
    offending scene and field."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    return dataset_from_json(payload)


def dataset_from_json(payload: dict) -> Dataset:
    for key in ("action_vocab", "scenes"):
        if key not in payload:
            raise SchemaError(f"missing top-level field {key!r}")
    try:
        vocab = ActionVocab(tuple(payload["action_vocab"]))
    except ValueError as exc:
        raise SchemaError(f"action_vocab: {exc}") from exc
    group_vocab = payload.get("group_vocab")
    group_vocab = None if group_vocab is None else tuple(group_vocab)

    scenes = []
    for entry in payload["scenes"]:
        scene_id = entry.get("scene_id")
        if not isinstance(scene_id, str):
            raise SchemaError("scene missing string scene_id")
        tracks = []
        for tr in entry.get("tracks", []):
            boxes = [BoundingBox(*map(float, b)) for b in tr["boxes"]]
            appearance = tr.get("appearance")
            if appearance is not None:
                appearance = np.asarray(appearance, dtype=np.float64)
            tracks.append(
                PersonTrack(
                    person_id=int(tr["person_id"]),
                    boxes=boxes,
                    actions=[int(a) for a in tr["actions"]],
                    appearance=appearance,
                )
            )
        group = entry.get("group_activity")
        if group is not None:
            group = int(group)
            if group_vocab is not None and not 0 <= group < len(group_vocab):
                raise SchemaError(f"{scene_id}: group_activity {group} out of range")
        scene = Scene(scene_id, tracks, group_activity=group)
        violations = validate_scene(scene, vocab)
        if violations:
            raise SchemaError("; ".join(violations))
        scenes.append(scene)
    return Dataset(scenes=scenes, action_vocab=vocab, group_vocab=group_vocab)
