"""Optimization loops, checkpointing, embedding extraction, verification.

Two pretext modes train the same architecture end to end:

* ``pac`` predicts per-person action classes (cross-entropy) and fine-tunes
  the appearance embedder.
* ``paf`` predicts per-person appearance features (MSE against the frozen
  embedder's own output), so it needs no manual labels at all.

Everything is driven by one seeded generator per run, which is what makes
fixed-seed loss histories reproduce bitwise in single-worker execution.
"""

import json
import zipfile
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from gaflab import autodiff as ad
from gaflab import backend
from gaflab.apn import ApnParams, KIND_BY_MODE, one_hot, predict_attributes_batch
from gaflab.autodiff import Tensor
from gaflab.bank import BankEntry, EmbeddingBank
from gaflab.gaf_net import GafNet, forward_gaf, ind_embedding
from gaflab.mpm import sample_mask
from gaflab.nn import Linear, Module, RunCtx
from gaflab.person_features import (
    AppearanceEmbedder,
    embed_appearance,
    encode_centers,
    scene_centers,
)
from gaflab.retrieval_eval import action_histogram
from gaflab.scene_data import Dataset, split_dataset

DTYPES = {"float32": np.float32, "float64": np.float64}

# The full-scale preset mirrors the published training setup (wide features,
# ten-frame clips, small learning rate); the desk preset is sized so the
# whole pipeline runs in seconds on a laptop CPU.
PRESETS = {
    "desk": {},
    "full": {"feature_dim": 1024, "learning_rate": 1e-4, "batch_size": 8},
}


@dataclass
class TrainConfig:
    mode: str = "pac"
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 40
    n_mask: Optional[int] = None  # defaults to floor(N/2) at train time
    seed: int = 0
    freeze_extractor: Optional[bool] = None  # derived from mode unless set
    feature_dim: int = 32
    heads: int = 2
    ff_mult: int = 2
    dropout: float = 0.1
    temporal_pe: bool = True
    location_guidance: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in ("pac", "paf"):
            raise ValueError(f"unknown mode {self.mode!r}; expected 'pac' or 'paf'")
        frozen = self.mode == "paf"
        if self.freeze_extractor is None:
            self.freeze_extractor = frozen
        elif self.freeze_extractor != frozen:
            raise ValueError(
                f"mode {self.mode!r} requires freeze_extractor={frozen}"
            )
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")


@dataclass
class ModelSpec:
    """Structural description of a model; round-trips through the manifest."""

    mode: str
    raw_dim: int
    num_actions: int
    group_vocab: Optional[tuple[str, ...]]
    feature_dim: int = 32
    heads: int = 2
    ff_mult: int = 2
    dropout: float = 0.1
    temporal_pe: bool = True
    location_guidance: bool = True
    dtype: str = "float32"
    gar_groups: Optional[int] = None

    @property
    def apn_out_dim(self):
        return self.num_actions if self.mode == "pac" else self.feature_dim


def spec_from_config(config: TrainConfig, dataset: Dataset, raw_dim: int) -> ModelSpec:
    return ModelSpec(
        mode=config.mode,
        raw_dim=raw_dim,
        num_actions=dataset.action_vocab.size,
        group_vocab=tuple(dataset.group_vocab) if dataset.group_vocab else None,
        feature_dim=config.feature_dim,
        heads=config.heads,
        ff_mult=config.ff_mult,
        dropout=config.dropout,
        temporal_pe=config.temporal_pe,
        location_guidance=config.location_guidance,
        dtype=config.dtype,
    )


class GafModel(Module):
    """Embedder + dual-branch network + attribute predictor (+ optional
    group classification head)."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        dtype = DTYPES[spec.dtype]
        self.embedder = self.add_child(
            "embedder",
            AppearanceEmbedder(
                spec.raw_dim, spec.feature_dim, rng, dtype, trainable=spec.mode == "pac"
            ),
        )
        self.net = self.add_child(
            "net",
            GafNet(
                spec.feature_dim, spec.heads, spec.ff_mult, spec.dropout, rng, dtype,
                use_temporal_pe=spec.temporal_pe,
            ),
        )
        self.apn = self.add_child("apn", ApnParams(spec.feature_dim, spec.apn_out_dim, rng, dtype))
        self.gar_head = None
        if spec.gar_groups:
            self.attach_gar_head(spec.gar_groups, rng)

    @property
    def dtype(self):
        return DTYPES[self.spec.dtype]

    def attach_gar_head(self, num_groups: int, rng: np.random.Generator):
        self.spec.gar_groups = num_groups
        self.gar_head = self.add_child(
            "gar_head", Linear(2 * self.spec.feature_dim, num_groups, rng, self.dtype)
        )
        return self.gar_head


def clone_model(model: GafModel) -> GafModel:
    spec = ModelSpec(**asdict(model.spec))
    if spec.group_vocab is not None:
        spec.group_vocab = tuple(spec.group_vocab)
    copy = GafModel(spec, np.random.default_rng(0))
    params = dict(copy.named_parameters())
    for path, p in model.named_parameters():
        params[path].data = p.data.copy()
    return copy


@dataclass
class PreparedScenes:
    """Dataset lowered to dense arrays (uniform T and N)."""

    scene_ids: list[str]
    raw: np.ndarray  # (S, T, N, D_raw)
    loc: np.ndarray  # (S, T, N, C)
    actions: np.ndarray  # (S, T, N)
    labels: Optional[np.ndarray]
    num_actions: int

    @property
    def count(self):
        return self.raw.shape[0]


def prepare_scenes(dataset: Dataset, feature_dim: int, dtype) -> PreparedScenes:
    if not dataset.scenes:
        raise ValueError("dataset has no scenes")
    T = dataset.scenes[0].num_frames
    N = dataset.scenes[0].num_people
    raws, centers, actions, labels = [], [], [], []
    for scene in dataset.scenes:
        if scene.num_frames != T or scene.num_people != N:
            raise ValueError(
                f"{scene.scene_id}: expected uniform {T} frames x {N} people, "
                f"got {scene.num_frames} x {scene.num_people}"
            )
        for track in scene.tracks:
            if track.appearance is None:
                raise ValueError(
                    f"{scene.scene_id}: person {track.person_id} has no appearance "
                    "vectors; this pipeline needs them as network input"
                )
        raws.append(np.stack([np.asarray(t.appearance) for t in scene.tracks], axis=1))
        centers.append(scene_centers(scene))
        actions.append(np.stack([t.actions for t in scene.tracks], axis=1))
        labels.append(scene.group_activity)
    raw = np.stack(raws).astype(dtype)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite appearance values in dataset")
    loc = encode_centers(np.stack(centers), feature_dim, dtype)
    label_arr = None
    if all(l is not None for l in labels):
        label_arr = np.asarray(labels, dtype=np.int64)
    return PreparedScenes(
        scene_ids=[s.scene_id for s in dataset.scenes],
        raw=raw,
        loc=loc,
        actions=np.stack(actions).astype(np.int64),
        labels=label_arr,
        num_actions=dataset.action_vocab.size,
    )


def forward_batch(model: GafModel, raw_b, loc_b, mask_b=None, ctx: RunCtx | None = None):
    """Batched forward through masking and both branches.

    Returns (gaf, app); app is kept because it is the paf target.
    """
    ctx = ctx or RunCtx()
    app = embed_appearance(np.ascontiguousarray(raw_b, dtype=model.dtype), model.embedder)
    combined = app + Tensor(np.ascontiguousarray(loc_b, dtype=model.dtype))
    if mask_b is not None:
        combined = combined * mask_b.astype(model.dtype)
    gaf = forward_gaf(combined, model.net, ctx)
    return gaf, app


def predict_batch(model: GafModel, gaf, loc_b):
    """Per-person attribute predictions of shape (B, N, T, R)."""
    loc_pn = np.ascontiguousarray(np.swapaxes(loc_b, 1, 2), dtype=model.dtype)
    if not model.spec.location_guidance:
        loc_pn = np.zeros_like(loc_pn)
    kind = KIND_BY_MODE[model.spec.mode]
    return predict_attributes_batch(gaf.g, loc_pn, model.apn, kind)


def batch_loss(model: GafModel, preds, actions_b, app):
    if model.spec.mode == "pac":
        targets = one_hot(np.swapaxes(actions_b, 1, 2), model.spec.num_actions)
        return ad.cross_entropy_mean(preds.values, targets)
    targets = np.swapaxes(app.data, 1, 2)
    return ad.mse_mean(preds.values, targets)


class Adam:
    """Adam over the trainable parameters (beta1=0.9, beta2=0.999 defaults)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [(path, p) for path, p in params if p.requires_grad]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = {
            path: (np.zeros_like(p.data), np.zeros_like(p.data)) for path, p in self.params
        }

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for path, p in self.params:
            if p.grad is None:
                continue
            grad = np.ascontiguousarray(p.grad, dtype=p.data.dtype)
            m, v = self.state[path]
            backend.kernels.adam_step(
                p.data.ravel(), grad.ravel(), m.ravel(), v.ravel(),
                self.lr, self.beta1, self.beta2, self.eps, bc1, bc2,
            )
            p.grad = None


@dataclass
class Checkpoint:
    model: GafModel
    manifest: dict


def _batches(count, batch_size, order):
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def train(dataset: Dataset, config: TrainConfig) -> Checkpoint:
    """Run the pretext training loop and return a checkpoint."""
    dtype = DTYPES[config.dtype]
    prepared = prepare_scenes(dataset, config.feature_dim, dtype)
    S, T, N, raw_dim = prepared.raw.shape
    n_mask = config.n_mask if config.n_mask is not None else N // 2
    if not 0 <= n_mask <= N - 1:
        raise ValueError(f"n_mask={n_mask} out of range for {N} people")

    rng = np.random.default_rng(config.seed)
    model = GafModel(spec_from_config(config, dataset, raw_dim), rng)
    opt = Adam(
        model.named_parameters(), config.learning_rate,
        config.adam_beta1, config.adam_beta2, config.adam_eps,
    )

    loss_history = []
    C = config.feature_dim
    for epoch in range(config.epochs):
        order = rng.permutation(S)
        for batch_no, idx in enumerate(_batches(S, config.batch_size, order)):
            masks = (
                np.stack([sample_mask(N, T, C, n_mask, rng).values for _ in idx])
                if n_mask
                else None
            )
            ctx = RunCtx(training=True, rng=rng)
            gaf, app = forward_batch(model, prepared.raw[idx], prepared.loc[idx], masks, ctx)
            preds = predict_batch(model, gaf, prepared.loc[idx])
            loss = batch_loss(model, preds, prepared.actions[idx], app)
            value = float(loss.item())
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch} batch {batch_no} "
                    f"(mode={config.mode}, lr={config.learning_rate})"
                )
            loss_history.append(value)
            loss.backward()
            opt.step()

    manifest = {
        "epoch": config.epochs,
        "loss_history": loss_history,
        "train_config": asdict(config),
    }
    return Checkpoint(model=model, manifest=manifest)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Archive layout: manifest.json plus params/<path>.bin raw float32."""
    model = checkpoint.model
    if model.dtype != np.float32:
        raise ValueError("checkpoints store float32 parameters; model is not float32")
    params = dict(model.named_parameters())
    manifest = {
        "format": "gaflab-checkpoint",
        "version": 1,
        "mode": model.spec.mode,
        "feature_dim": model.spec.feature_dim,
        "heads": model.spec.heads,
        "layers": 1,  # encoder layers per branch direction (fixed in v1)
        "spec": {**asdict(model.spec), "group_vocab": (
            list(model.spec.group_vocab) if model.spec.group_vocab else None
        )},
        "params": {p: list(t.data.shape) for p, t in params.items()},
        **checkpoint.manifest,
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest))
        for name, tensor in params.items():
            zf.writestr(f"params/{name}.bin", tensor.data.astype("<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != "gaflab-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        spec_fields = dict(manifest["spec"])
        if spec_fields.get("group_vocab") is not None:
            spec_fields["group_vocab"] = tuple(spec_fields["group_vocab"])
        spec = ModelSpec(**spec_fields)
        model = GafModel(spec, np.random.default_rng(0))
        params = dict(model.named_parameters())
        expected = set(manifest["params"])
        if expected != set(params):
            raise ValueError(f"{path}: parameter set mismatch with this build")
        for name, tensor in params.items():
            shape = tuple(manifest["params"][name])
            data = np.frombuffer(zf.read(f"params/{name}.bin"), dtype="<f4").reshape(shape)
            if data.shape != tensor.data.shape:
                raise ValueError(f"{path}: shape mismatch for {name}")
            tensor.data = data.copy()  # frombuffer views are read-only
    header = {"format", "version", "spec", "params", "mode", "feature_dim", "heads", "layers"}
    extra = {k: v for k, v in manifest.items() if k not in header}
    return Checkpoint(model=model, manifest=extra)


def _resolve_model(checkpoint_or_model) -> GafModel:
    if isinstance(checkpoint_or_model, Checkpoint):
        return checkpoint_or_model.model
    return checkpoint_or_model


def embed_dataset(checkpoint_or_model, dataset: Dataset, batch_size: int = 64,
                  histogram_level: str = "per_person") -> EmbeddingBank:
    """Inference pass over a dataset: no masking, no dropout."""
    model = _resolve_model(checkpoint_or_model)
    prepared = prepare_scenes(dataset, model.spec.feature_dim, model.dtype)
    if prepared.raw.shape[-1] != model.spec.raw_dim:
        raise ValueError(
            f"appearance width mismatch: dataset has D_raw={prepared.raw.shape[-1]}, "
            f"checkpoint expects D_raw={model.spec.raw_dim}"
        )
    if prepared.num_actions != model.spec.num_actions:
        raise ValueError(
            f"action vocab mismatch: dataset has {prepared.num_actions} actions, "
            f"checkpoint expects {model.spec.num_actions}"
        )
    entries = []
    order = np.arange(prepared.count)
    for idx in _batches(prepared.count, batch_size, order):
        gaf, _ = forward_batch(model, prepared.raw[idx], prepared.loc[idx])
        g = np.asarray(gaf.g.data, dtype=np.float32)
        ind = np.asarray(ind_embedding(gaf).data, dtype=np.float32)
        for row, scene_index in enumerate(idx):
            scene = dataset.scenes[scene_index]
            hist = action_histogram(scene, prepared.num_actions, histogram_level)
            entries.append(
                BankEntry(
                    scene_id=scene.scene_id,
                    g=g[row].copy(),
                    ind=ind[row].copy(),
                    action_histogram=hist.counts,
                    group_label=scene.group_activity,
                )
            )
    manifest = {
        "feature_dim": model.spec.feature_dim,
        "num_people": int(prepared.raw.shape[2]),
        "num_actions": prepared.num_actions,
        "group_vocab": list(dataset.group_vocab) if dataset.group_vocab else None,
        "histogram_level": histogram_level,
        "mode": model.spec.mode,
    }
    return EmbeddingBank(entries=entries, manifest=manifest)


@dataclass
class GarConfig:
    """Supervised group-recognition fine-tuning settings."""

    epochs: int = 15
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    train_fraction: float = 0.8
    freeze_trunk: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


def _gar_logits(model: GafModel, raw_b, loc_b, ctx=None):
    gaf, _ = forward_batch(model, raw_b, loc_b, ctx=ctx)
    return model.gar_head(gaf.g)


def finetune_gar(checkpoint, labeled_dataset: Dataset, config: GarConfig,
                 fresh_config: Optional[TrainConfig] = None):
    """Attach a linear head on g and train with group-label cross-entropy.

    ``checkpoint=None`` trains the same architecture from scratch (the
    comparison baseline); otherwise the pretrained trunk is cloned so the
    caller's checkpoint stays untouched.  Returns (checkpoint, report).
    """
    if labeled_dataset.group_vocab is None or any(
        s.group_activity is None for s in labeled_dataset.scenes
    ):
        raise ValueError("group fine-tuning needs group labels on every scene")
    num_groups = len(labeled_dataset.group_vocab)
    rng = np.random.default_rng(config.seed)

    if checkpoint is None:
        base = fresh_config or TrainConfig()
        raw_dim = np.asarray(labeled_dataset.scenes[0].tracks[0].appearance).shape[-1]
        model = GafModel(spec_from_config(base, labeled_dataset, raw_dim), rng)
    else:
        model = clone_model(_resolve_model(checkpoint))
    model.attach_gar_head(num_groups, rng)
    if config.freeze_trunk:
        for path, p in model.named_parameters():
            if not path.startswith("gar_head."):
                p.requires_grad = False
    else:
        # Whole-network fine-tuning updates the embedder too, whichever
        # pretext froze it.
        model.embedder.set_trainable(True)

    train_split, test_split = split_dataset(labeled_dataset, config.train_fraction, config.seed)
    prepared = prepare_scenes(train_split, model.spec.feature_dim, model.dtype)
    opt = Adam(
        model.named_parameters(), config.learning_rate,
        config.adam_beta1, config.adam_beta2, config.adam_eps,
    )
    loss_history = []
    for epoch in range(config.epochs):
        order = rng.permutation(prepared.count)
        for idx in _batches(prepared.count, config.batch_size, order):
            ctx = RunCtx(training=True, rng=rng)
            logits = _gar_logits(model, prepared.raw[idx], prepared.loc[idx], ctx)
            targets = one_hot(prepared.labels[idx], num_groups)
            loss = ad.cross_entropy_mean(logits, targets)
            value = float(loss.item())
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite GAR loss at epoch {epoch}")
            loss_history.append(value)
            loss.backward()
            opt.step()

    accuracy, confusion = classify_gar(model, test_split)
    report = {
        "accuracy": accuracy,
        "confusion": confusion.tolist(),
        "loss_history": loss_history,
        "train_scenes": prepared.count,
        "test_scenes": len(test_split.scenes),
        "pretrained": checkpoint is not None,
    }
    manifest = {"gar_config": asdict(config), "gar_report": {"accuracy": accuracy}}
    return Checkpoint(model=model, manifest=manifest), report


def classify_gar(model: GafModel, dataset: Dataset, batch_size: int = 64):
    """Head-classifier accuracy and confusion matrix (rows = ground truth)."""
    if model.gar_head is None:
        raise ValueError("model has no group classification head")
    prepared = prepare_scenes(dataset, model.spec.feature_dim, model.dtype)
    if prepared.labels is None:
        raise ValueError("dataset has unlabeled scenes")
    num_groups = model.gar_head.out_dim
    confusion = np.zeros((num_groups, num_groups), dtype=np.int64)
    order = np.arange(prepared.count)
    for idx in _batches(prepared.count, batch_size, order):
        logits = _gar_logits(model, prepared.raw[idx], prepared.loc[idx])
        predicted = np.argmax(logits.data, axis=-1)
        for truth, pred in zip(prepared.labels[idx], predicted):
            confusion[truth, pred] += 1
    accuracy = float(np.trace(confusion) / confusion.sum())
    return accuracy, confusion


def action_accuracy(checkpoint_or_model, dataset: Dataset, batch_size: int = 64) -> float:
    """Per-person-frame action accuracy of the attribute predictor
    (inference path, action mode only)."""
    model = _resolve_model(checkpoint_or_model)
    if model.spec.mode != "pac":
        raise ValueError("action accuracy is defined for action-class models")
    prepared = prepare_scenes(dataset, model.spec.feature_dim, model.dtype)
    correct = 0
    total = 0
    order = np.arange(prepared.count)
    for idx in _batches(prepared.count, batch_size, order):
        gaf, _ = forward_batch(model, prepared.raw[idx], prepared.loc[idx])
        preds = predict_batch(model, gaf, prepared.loc[idx])
        predicted = np.argmax(preds.values.data, axis=-1)  # (B, N, T)
        truth = np.swapaxes(prepared.actions[idx], 1, 2)
        correct += int((predicted == truth).sum())
        total += truth.size
    return correct / total


def gradient_check(step: float = 1e-5, modes=("pac", "paf"), linear_only: bool = False,
                   seed: int = 0) -> dict:
    """Compare analytic gradients with central finite differences.

    Runs a tiny double-precision model (T=2, N=3, C=8, one head) over a
    fixed batch with a fixed mask, and reports the max relative error per
    parameter block for each requested loss mode.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    rng = np.random.default_rng(seed)
    T, N, C, D, M = 2, 3, 8, 5, 4
    raw = rng.normal(size=(2, T, N, D))
    centers = rng.uniform(0.1, 0.9, size=(2, T, N, 2))
    loc = encode_centers(centers, C, np.float64)
    actions = rng.integers(0, M, size=(2, T, N))
    mask_rng = np.random.default_rng(seed + 1)
    masks = np.stack([sample_mask(N, T, C, 1, mask_rng).values for _ in range(2)]).astype(np.float64)

    report = {"step": step, "linear_only": linear_only, "modes": {}}

    def check(loss_fn, params):
        for _, p in params:
            p.grad = None
        loss = loss_fn()
        loss.backward()
        analytic = {path: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                    for path, p in params}
        per_param = {}
        for path, p in params:
            flat = p.data.ravel()
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                hi = float(loss_fn().item())
                flat[i] = keep - step
                lo = float(loss_fn().item())
                flat[i] = keep
                fd[i] = (hi - lo) / (2.0 * step)
            a = analytic[path].ravel()
            denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
            per_param[path] = float(np.max(np.abs(a - fd) / denom))
        return per_param

    if linear_only:
        # Pure linear chain (embedder -> linear head -> MSE): finite
        # differences are exact here up to float64 rounding.
        embedder = AppearanceEmbedder(D, C, rng, np.float64)
        head = Linear(C, M, rng, np.float64)
        target = rng.normal(size=(2, T, N, M))

        def loss_fn():
            lead = raw.shape[:-1]
            flat = ad.matmul(Tensor(raw.reshape(-1, D)), embedder.weight) + embedder.bias
            out = head(ad.reshape(flat, lead + (C,)))
            return ad.mse_mean(out, target)

        params = list(embedder.named_parameters("embedder.")) + list(
            head.named_parameters("head.")
        )
        per_param = check(loss_fn, params)
        report["modes"]["linear"] = {
            "per_param": per_param,
            "max_rel_error": max(per_param.values()),
        }
        return report

    for mode in modes:
        spec = ModelSpec(
            mode=mode, raw_dim=D, num_actions=M, group_vocab=None,
            feature_dim=C, heads=1, ff_mult=2, dropout=0.0, dtype="float64",
        )
        model = GafModel(spec, np.random.default_rng(seed + 2))

        def loss_fn(model=model):
            gaf, app = forward_batch(model, raw, loc, masks)
            preds = predict_batch(model, gaf, loc)
            return batch_loss(model, preds, actions, app)

        params = [(path, p) for path, p in model.named_parameters() if p.requires_grad]
        per_param = check(loss_fn, params)
        report["modes"][mode] = {
            "per_param": per_param,
            "max_rel_error": max(per_param.values()),
        }
    return report
