"""Masked person modeling: zero out whole persons during training.

Masking multiplies the combined feature grid by a binary tensor that is
constant per person, so a masked person stays in the token grid as zeros
and the network has to infer their attributes from everyone else.
Inference never masks.
"""

from dataclasses import dataclass

import numpy as np

from gaflab.autodiff import Tensor


@dataclass(frozen=True)
class MaskConfig:
    n_mask: int


@dataclass
class MaskTensor:
    """Binary (T, N, C) mask whose per-person slabs are uniformly 0 or 1."""

    values: np.ndarray
    masked_ids: frozenset[int]


def sample_mask(N: int, T: int, C: int, n_mask: int, rng: np.random.Generator) -> MaskTensor:
    """Zero exactly ``n_mask`` persons chosen uniformly without replacement."""
    if n_mask < 0:
        raise ValueError("n_mask must be nonnegative")
    if n_mask >= N:
        raise ValueError(f"n_mask={n_mask} would mask every one of the {N} people")
    values = np.ones((T, N, C), dtype=np.float32)
    chosen = rng.choice(N, size=n_mask, replace=False) if n_mask else np.empty(0, dtype=int)
    values[:, chosen, :] = 0.0
    return MaskTensor(values=values, masked_ids=frozenset(int(i) for i in chosen))


def inference_mask(N: int, T: int, C: int) -> MaskTensor:
    """All-ones mask: inference preserves every person's features."""
    return MaskTensor(values=np.ones((T, N, C), dtype=np.float32), masked_ids=frozenset())


def apply_mask(feature_set, mask: MaskTensor) -> Tensor:
    """Elementwise product; gradient flows only through unmasked entries."""
    combined = feature_set.combined if hasattr(feature_set, "combined") else feature_set
    if combined.shape[-3:] != mask.values.shape:
        raise ValueError(
            f"feature shape {combined.shape} incompatible with mask shape {mask.values.shape}"
        )
    return combined * mask.values.astype(combined.dtype)
