"""Person feature extraction: appearance embedding + location encoding.

The per-person feature grid is built by linearly embedding raw appearance
vectors to width C, sinusoidally encoding each box center to the same
width, and adding the two elementwise.  Both pieces are retained because
the location half is reused later as the attribute-prediction guidance.
"""

from dataclasses import dataclass

import numpy as np

from gaflab import autodiff as ad
from gaflab.autodiff import Tensor
from gaflab.nn import Module, xavier_uniform
from gaflab.scene_data import Scene


class AppearanceEmbedder(Module):
    """Linear map from raw appearance vectors (D_raw) to feature width C.

    Trainable in action-class mode; frozen in appearance-feature mode,
    where its output doubles as the prediction target.
    """

    def __init__(self, raw_dim, feature_dim, rng, dtype=np.float32, trainable=True):
        super().__init__()
        self.raw_dim = raw_dim
        self.feature_dim = feature_dim
        self.weight = self.register(
            "weight",
            xavier_uniform(rng, raw_dim, feature_dim, (raw_dim, feature_dim), dtype),
            trainable=trainable,
        )
        self.bias = self.register("bias", np.zeros(feature_dim, dtype=dtype), trainable=trainable)

    @property
    def trainable(self):
        return self.weight.requires_grad


@dataclass
class PersonFeatureSet:
    """app/loc/combined all share a (..., T, N, C) shape; combined = app + loc."""

    app: Tensor
    loc: np.ndarray
    combined: Tensor
    feature_dim: int


def raw_appearance_grid(scene: Scene) -> np.ndarray:
    """Stack per-track appearance into a (T, N, D_raw) grid."""
    columns = []
    for track in scene.tracks:
        if track.appearance is None:
            raise ValueError(f"{scene.scene_id}: person {track.person_id} has no appearance vectors")
        columns.append(np.asarray(track.appearance))
    dims = {c.shape[-1] for c in columns}
    if len(dims) != 1:
        raise ValueError(f"{scene.scene_id}: inconsistent appearance dimensions {sorted(dims)}")
    return np.stack(columns, axis=1)


def embed_appearance(raw, embedder: AppearanceEmbedder) -> Tensor:
    """Embed raw appearance (Scene or (..., D_raw) array) to (..., C)."""
    if isinstance(raw, Scene):
        raw = raw_appearance_grid(raw)
    raw = np.asarray(raw, dtype=embedder.weight.dtype)
    if raw.shape[-1] != embedder.raw_dim:
        raise ValueError(
            f"appearance dimension {raw.shape[-1]} does not match embedder raw_dim {embedder.raw_dim}"
        )
    lead = raw.shape[:-1]
    flat = ad.matmul(Tensor(raw.reshape(-1, embedder.raw_dim)), embedder.weight) + embedder.bias
    return ad.reshape(flat, lead + (embedder.feature_dim,))


def scene_centers(scene: Scene) -> np.ndarray:
    """Box centers as a (T, N, 2) array."""
    T, N = scene.num_frames, scene.num_people
    centers = np.empty((T, N, 2))
    for n, track in enumerate(scene.tracks):
        for t, box in enumerate(track.boxes):
            centers[t, n] = box.center
    return centers


def encode_centers(centers: np.ndarray, feature_dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal 2D encoding of (x, y) centers into ``feature_dim`` channels.

    Channels [0, C/2) encode x and [C/2, C) encode y; within each half the
    even/odd channel pair k holds sin and cos of coord / omega_k, where
    omega_k steps down a base-10000 geometric ladder over C/4 frequencies
    (omega_k = 10000^(-k / (C/4)), so pair k oscillates 10000^(k/(C/4))
    times faster than pair 0).  Coordinates live in [0, 1], which is why
    the ladder runs toward finer wavelengths rather than coarser ones.
    Every sin/cos pair contributes exactly 1 to the squared norm.
    """
    if feature_dim % 4 != 0:
        raise ValueError("feature_dim must be divisible by 4")
    centers = np.asarray(centers, dtype=np.float64)
    n_freq = feature_dim // 4
    omega = np.power(10000.0, -np.arange(n_freq) / n_freq)
    angles = centers[..., :, None] / omega  # (..., 2, n_freq)
    half = np.empty(centers.shape[:-1] + (2, 2 * n_freq))
    half[..., 0::2] = np.sin(angles)
    half[..., 1::2] = np.cos(angles)
    out = np.concatenate([half[..., 0, :], half[..., 1, :]], axis=-1)
    return out.astype(dtype)


def encode_location(boxes, feature_dim: int, dtype=np.float32) -> np.ndarray:
    """Encode a (T, N) grid of boxes (or a Scene) to (T, N, C)."""
    if isinstance(boxes, Scene):
        centers = scene_centers(boxes)
    else:
        rows = [[box.center for box in row] for row in boxes]
        centers = np.asarray(rows, dtype=np.float64)
    return encode_centers(centers, feature_dim, dtype)


def assemble_person_features(app: Tensor, loc: np.ndarray) -> PersonFeatureSet:
    """Combine appearance and location features elementwise."""
    loc = np.asarray(loc, dtype=app.dtype)
    if app.shape != loc.shape:
        raise ValueError(f"appearance shape {app.shape} != location shape {loc.shape}")
    combined = app + Tensor(loc)
    return PersonFeatureSet(app=app, loc=loc, combined=combined, feature_dim=app.shape[-1])


def build_person_features(scene: Scene, embedder: AppearanceEmbedder) -> PersonFeatureSet:
    app = embed_appearance(scene, embedder)
    loc = encode_location(scene, embedder.feature_dim, dtype=embedder.weight.dtype)
    return assemble_person_features(app, loc)
