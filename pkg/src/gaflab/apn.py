"""Location-guided person attribute prediction and the training losses.

The attribute prediction network is three fully-connected layers applied
per frame to the concatenation of the group activity feature (2C) and the
person's location feature for that frame (C).  The group feature is shared
by every person, so the location slice is the only thing distinguishing
one person's prediction from another's.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gaflab import autodiff as ad
from gaflab.autodiff import Tensor
from gaflab.nn import Linear, Module

ACTION = "action"
APPEARANCE = "appearance"


class ApnParams(Module):
    """Three FC layers: 3C -> 2C -> 2C -> R with tanh between layers."""

    def __init__(self, feature_dim, out_dim, rng, dtype=np.float32):
        super().__init__()
        self.feature_dim = feature_dim
        self.out_dim = out_dim
        hidden = 2 * feature_dim
        self.fc1 = self.add_child("fc1", Linear(3 * feature_dim, hidden, rng, dtype))
        self.fc2 = self.add_child("fc2", Linear(hidden, hidden, rng, dtype))
        self.fc3 = self.add_child("fc3", Linear(hidden, out_dim, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc3(ad.tanh(self.fc2(ad.tanh(self.fc1(x)))))


@dataclass
class AttributePrediction:
    values: Tensor  # (..., T, R); logits for the action kind
    kind: str


@dataclass
class AttributeTarget:
    values: np.ndarray  # (..., T, R); one-hot rows for the action kind
    kind: str


def one_hot(actions: np.ndarray, num_classes: int) -> np.ndarray:
    actions = np.asarray(actions)
    out = np.zeros(actions.shape + (num_classes,), dtype=np.float64)
    np.put_along_axis(out, actions[..., None], 1.0, axis=-1)
    return out


def predict_attributes(g: Tensor, f_loc_p, params: ApnParams, kind: str = ACTION) -> AttributePrediction:
    """Predict one person's per-frame attributes from (G, their location)."""
    loc = np.asarray(f_loc_p)
    T, C = loc.shape
    if g.shape != (2 * C,):
        raise ValueError(f"group feature width {g.shape} incompatible with location width {C}")
    tiled = ad.broadcast_to(ad.reshape(g, (1, 2 * C)), (T, 2 * C))
    inputs = ad.concat([tiled, Tensor(loc.astype(g.dtype))], axis=-1)
    return AttributePrediction(values=params(inputs), kind=kind)


def predict_attributes_batch(g: Tensor, loc_grid, params: ApnParams, kind: str = ACTION) -> AttributePrediction:
    """Vectorized prediction for all persons: g is (B, 2C), loc_grid is
    (B, N, T, C); returns values of shape (B, N, T, R)."""
    loc = loc_grid if isinstance(loc_grid, Tensor) else Tensor(np.asarray(loc_grid, dtype=g.dtype))
    B, N, T, C = loc.shape
    tiled = ad.broadcast_to(ad.reshape(g, (B, 1, 1, 2 * C)), (B, N, T, 2 * C))
    inputs = ad.concat([tiled, loc], axis=-1)
    return AttributePrediction(values=params(inputs), kind=kind)


def _check_one_hot(target: np.ndarray):
    ok = np.all((target == 0.0) | (target == 1.0)) and np.allclose(
        target.sum(axis=-1), 1.0
    )
    if not ok:
        raise ValueError("action targets must be one-hot rows")


def action_loss(pred, target) -> Tensor:
    """Mean over frames of -log softmax(logits)[true class]."""
    logits = pred.values if isinstance(pred, AttributePrediction) else pred
    values = target.values if isinstance(target, AttributeTarget) else np.asarray(target)
    if logits.shape != values.shape:
        raise ValueError(f"prediction shape {logits.shape} != target shape {values.shape}")
    _check_one_hot(values)
    return ad.cross_entropy_mean(logits, values)


def appearance_loss(pred, target) -> Tensor:
    """Mean squared error against frozen appearance features (no gradient
    reaches the target)."""
    values = pred.values if isinstance(pred, AttributePrediction) else pred
    target_values = target.values if isinstance(target, AttributeTarget) else target
    if isinstance(target_values, Tensor):
        target_values = target_values.data
    target_values = np.asarray(target_values)
    if values.shape != target_values.shape:
        raise ValueError(f"prediction shape {values.shape} != target shape {target_values.shape}")
    return ad.mse_mean(values, target_values)


LOSS_BY_KIND = {ACTION: action_loss, APPEARANCE: appearance_loss}
KIND_BY_MODE = {"pac": ACTION, "paf": APPEARANCE}


def scene_loss(predictions: Sequence[AttributePrediction], targets: Sequence, mode: str) -> Tensor:
    """Mean over persons (masked ones included) of the per-person loss."""
    kind = KIND_BY_MODE.get(mode)
    if kind is None:
        raise ValueError(f"unknown mode {mode!r}; expected 'pac' or 'paf'")
    total = None
    for pred, target in zip(predictions, targets, strict=True):
        if pred.kind != kind:
            raise ValueError(f"mode {mode!r} expects {kind} predictions, got {pred.kind}")
        term = LOSS_BY_KIND[kind](pred, target)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("scene_loss needs at least one person")
    return total * (1.0 / len(predictions))
