"""Dual-branch spatial-temporal network producing the group activity feature.

Both branches see the same masked person grid.  The TS branch runs
time-axis attention, a width-preserving MLP, a residual add, then
person-axis attention; the ST branch applies the two encoders in the
opposite order.  Each branch output is max-pooled over time and then over
persons, and the two pooled vectors are concatenated into the 2C-wide
group activity feature.  The person axis carries no index encoding, which
is what makes the pooled feature invariant to person order.
"""

from dataclasses import dataclass

import numpy as np

from gaflab import autodiff as ad
from gaflab.autodiff import Tensor
from gaflab.nn import EncoderLayer, Module, RunCtx, TwoLayerMlp, sinusoidal_table


class BranchParams(Module):
    """One branch: temporal encoder, spatial encoder, and the MLP between."""

    def __init__(self, width, heads, ff_mult, dropout, rng, dtype, use_temporal_pe=True):
        super().__init__()
        self.width = width
        self.use_temporal_pe = use_temporal_pe
        self.temporal_encoder = self.add_child(
            "temporal", EncoderLayer(width, heads, ff_mult, dropout, rng, dtype)
        )
        self.spatial_encoder = self.add_child(
            "spatial", EncoderLayer(width, heads, ff_mult, dropout, rng, dtype)
        )
        self.mlp = self.add_child("mlp", TwoLayerMlp(width, rng, dtype))
        self._pe_cache = {}

    def temporal_pe(self, length, dtype):
        key = (length, np.dtype(dtype).name)
        if key not in self._pe_cache:
            self._pe_cache[key] = sinusoidal_table(length, self.width, dtype)
        return self._pe_cache[key]


@dataclass
class GroupActivityFeature:
    """g = g_ts ++ g_st; f_grp_* are the per-person temporally pooled maps."""

    g: Tensor
    g_ts: Tensor
    g_st: Tensor
    f_grp_ts: Tensor
    f_grp_st: Tensor


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return ad.reshape(x, (1,) + x.shape), False
    if x.ndim == 4:
        return x, True
    raise ValueError(f"expected (T,N,C) or (B,T,N,C) input, got shape {x.shape}")


def temporal_encode(x: Tensor, encoder: EncoderLayer, ctx: RunCtx | None = None,
                    pe_table: np.ndarray | None = None) -> Tensor:
    """Self-attention along time, independently per person."""
    ctx = ctx or RunCtx()
    x4, batched = _as_batched(x)
    if not np.all(np.isfinite(x4.data)):
        raise ValueError("non-finite values in temporal encoder input")
    B, T, N, C = x4.shape
    seqs = ad.reshape(ad.swapaxes(x4, 1, 2), (B * N, T, C))
    if pe_table is not None:
        seqs = seqs + np.asarray(pe_table, dtype=seqs.dtype)
    out = encoder(seqs, ctx)
    out = ad.swapaxes(ad.reshape(out, (B, N, T, C)), 1, 2)
    return out if batched else ad.reshape(out, (T, N, C))


def spatial_encode(x: Tensor, encoder: EncoderLayer, ctx: RunCtx | None = None) -> Tensor:
    """Self-attention along the person axis, independently per frame.

    No index-based position information is added here, so the operation is
    permutation-equivariant over persons.
    """
    ctx = ctx or RunCtx()
    x4, batched = _as_batched(x)
    if not np.all(np.isfinite(x4.data)):
        raise ValueError("non-finite values in spatial encoder input")
    B, T, N, C = x4.shape
    out = ad.reshape(encoder(ad.reshape(x4, (B * T, N, C)), ctx), (B, T, N, C))
    return out if batched else ad.reshape(out, (T, N, C))


def _branch_pe(branch: BranchParams, x: Tensor):
    if not branch.use_temporal_pe:
        return None
    T = x.shape[-3]
    return branch.temporal_pe(T, x.dtype)


def forward_ts_branch(f_mask: Tensor, branch: BranchParams, ctx: RunCtx | None = None) -> Tensor:
    """spatial_encode(f_mask + mlp(temporal_encode(f_mask)))."""
    ctx = ctx or RunCtx()
    inner = temporal_encode(f_mask, branch.temporal_encoder, ctx, _branch_pe(branch, f_mask))
    return spatial_encode(f_mask + branch.mlp(inner), branch.spatial_encoder, ctx)


def forward_st_branch(f_mask: Tensor, branch: BranchParams, ctx: RunCtx | None = None) -> Tensor:
    """temporal_encode(f_mask + mlp(spatial_encode(f_mask)))."""
    ctx = ctx or RunCtx()
    inner = spatial_encode(f_mask, branch.spatial_encoder, ctx)
    return temporal_encode(
        f_mask + branch.mlp(inner), branch.temporal_encoder, ctx, _branch_pe(branch, f_mask)
    )


def pool_branch(branch_out: Tensor) -> tuple[Tensor, Tensor]:
    """Max over time, then max over persons; ties go to the lowest index."""
    f_grp = ad.tmax(branch_out, axis=-3)  # (..., N, C)
    g_vec = ad.tmax(f_grp, axis=-2)  # (..., C)
    return f_grp, g_vec


def concat_gaf(g_ts: Tensor, g_st: Tensor) -> Tensor:
    if g_ts.shape[-1] != g_st.shape[-1]:
        raise ValueError(f"branch widths differ: {g_ts.shape[-1]} vs {g_st.shape[-1]}")
    return ad.concat([g_ts, g_st], axis=-1)


class GafNet(Module):
    def __init__(self, width, heads, ff_mult, dropout, rng, dtype, use_temporal_pe=True):
        super().__init__()
        self.width = width
        self.ts_branch = self.add_child(
            "ts", BranchParams(width, heads, ff_mult, dropout, rng, dtype, use_temporal_pe)
        )
        self.st_branch = self.add_child(
            "st", BranchParams(width, heads, ff_mult, dropout, rng, dtype, use_temporal_pe)
        )


def forward_gaf(f_mask: Tensor, net: GafNet, ctx: RunCtx | None = None) -> GroupActivityFeature:
    """Run both branches, pool, and concatenate."""
    ctx = ctx or RunCtx()
    f_grp_ts, g_ts = pool_branch(forward_ts_branch(f_mask, net.ts_branch, ctx))
    f_grp_st, g_st = pool_branch(forward_st_branch(f_mask, net.st_branch, ctx))
    return GroupActivityFeature(
        g=concat_gaf(g_ts, g_st), g_ts=g_ts, g_st=g_st, f_grp_ts=f_grp_ts, f_grp_st=f_grp_st
    )


def ind_embedding(gaf: GroupActivityFeature) -> Tensor:
    """Per-person variant: both pooled N x C maps flattened in track order
    and concatenated (width 2*N*C)."""
    lead = gaf.f_grp_ts.shape[:-2]
    n, c = gaf.f_grp_ts.shape[-2:]
    flat_ts = ad.reshape(gaf.f_grp_ts, lead + (n * c,))
    flat_st = ad.reshape(gaf.f_grp_st, lead + (n * c,))
    return ad.concat([flat_ts, flat_st], axis=-1)
