"""Retrieval evaluation: action IoU, AF-ISF, Hit@K, mAP, KNN, projection.

Scenes match under one of three predicates: multiset IoU of action
histograms above a threshold, cosine similarity of AF-ISF vectors above a
threshold, or equal group-activity labels.  Rankings always use Euclidean
distance between embeddings with a leave-one-out gallery (every other
scene in the bank).

AF-ISF weighs each action count by the inverse frequency of scenes
containing that action, TF-IDF style, so dominant background actions stop
drowning out rare informative ones.  (Report headers alias the AF-IDF
spelling.)
"""

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gaflab.bank import EmbeddingBank
from gaflab.scene_data import Dataset, Scene

PREDICATES = ("iou", "afisf", "group")


@dataclass
class ActionHistogram:
    counts: np.ndarray


@dataclass
class IsfTable:
    isf: np.ndarray
    scene_count: int


@dataclass
class AfIsfVector:
    fv: np.ndarray


@dataclass
class RetrievalRun:
    query_id: str
    ranked_ids: list[str]
    distances: np.ndarray
    matches: Optional[np.ndarray]  # bool per ranked item, when a matcher was given


@dataclass
class EvalConfig:
    predicate: str = "group"
    tau: float = 0.5
    ks: tuple[int, ...] = (1, 2, 3)
    embedding: str = "grp"

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}; expected one of {PREDICATES}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if any(k < 1 for k in self.ks):
            raise ValueError("every K must be >= 1")
        if self.embedding not in ("grp", "ind"):
            raise ValueError(f"unknown embedding {self.embedding!r}")


def max_threads() -> int:
    """Internal parallelism cap, from GAF_LAB_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("GAF_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _map_queries(fn, items):
    threads = max_threads()
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _counts(h) -> np.ndarray:
    return np.asarray(h.counts if isinstance(h, ActionHistogram) else h)


def action_histogram(scene: Scene, num_actions: int, level: str = "per_person") -> ActionHistogram:
    """Count actions per person (modal action over frames, ties to the
    lowest id) or per person-frame."""
    if not scene.tracks:
        raise ValueError(f"{scene.scene_id}: empty scene has no action histogram")
    counts = np.zeros(num_actions, dtype=np.int64)
    if level == "per_person":
        for track in scene.tracks:
            per_track = np.bincount(track.actions, minlength=num_actions)
            counts[int(np.argmax(per_track))] += 1
    elif level == "per_frame":
        for track in scene.tracks:
            counts += np.bincount(track.actions, minlength=num_actions)
    else:
        raise ValueError(f"unknown level {level!r}; expected 'per_person' or 'per_frame'")
    return ActionHistogram(counts=counts)


def action_iou(h_q, h_r) -> float:
    """Multiset IoU: sum of per-action minima over sum of maxima."""
    q, r = _counts(h_q), _counts(h_r)
    if q.shape != r.shape:
        raise ValueError(f"histogram lengths differ: {q.shape} vs {r.shape}")
    denom = np.maximum(q, r).sum()
    if denom == 0:
        raise ValueError("both histograms are all-zero")
    return float(np.minimum(q, r).sum() / denom)


def _isf_from_histograms(histograms) -> IsfTable:
    stacked = np.stack([_counts(h) for h in histograms])
    scene_count = stacked.shape[0]
    present = (stacked > 0).sum(axis=0)
    isf = np.log((1.0 + scene_count) / (1.0 + present)) + 1.0
    return IsfTable(isf=isf, scene_count=scene_count)


def compute_isf(corpus, level: str = "per_person") -> IsfTable:
    """Smoothed inverse scene frequency: ln((1+S)/(1+s_m)) + 1, computed
    over the gallery corpus (a Dataset, a bank, or histograms)."""
    if isinstance(corpus, Dataset):
        if not corpus.scenes:
            raise ValueError("empty dataset has no inverse scene frequencies")
        num_actions = corpus.action_vocab.size
        hists = [action_histogram(s, num_actions, level) for s in corpus.scenes]
    elif isinstance(corpus, EmbeddingBank):
        hists = [e.action_histogram for e in corpus.entries]
    else:
        hists = list(corpus)
    if not hists:
        raise ValueError("no histograms to compute inverse scene frequencies from")
    return _isf_from_histograms(hists)


def af_isf_vector(histogram, isf_table: IsfTable) -> AfIsfVector:
    counts = _counts(histogram)
    if counts.shape != isf_table.isf.shape:
        raise ValueError(f"histogram length {counts.shape} != isf length {isf_table.isf.shape}")
    return AfIsfVector(fv=counts.astype(np.float64) * isf_table.isf)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u.fv if isinstance(u, AfIsfVector) else u, dtype=np.float64)
    v = np.asarray(v.fv if isinstance(v, AfIsfVector) else v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def make_matcher(bank: EmbeddingBank, predicate: str, tau: float = 0.5):
    """Build matched(query_id, other_id) for one predicate over a bank."""
    ids = [e.scene_id for e in bank.entries]
    index = {sid: i for i, sid in enumerate(ids)}
    if predicate == "group":
        labels = bank.labels()
        if any(l is None for l in labels):
            raise ValueError("group-label predicate needs labels on every scene")
        return lambda q, r: labels[index[q]] == labels[index[r]]
    if predicate == "iou":
        hists = [e.action_histogram for e in bank.entries]
        return lambda q, r: action_iou(hists[index[q]], hists[index[r]]) > tau
    if predicate == "afisf":
        isf = compute_isf(bank)
        fvs = [af_isf_vector(e.action_histogram, isf) for e in bank.entries]
        return lambda q, r: cosine_similarity(fvs[index[q]], fvs[index[r]]) > tau
    raise ValueError(f"unknown predicate {predicate!r}")


def retrieve(bank: EmbeddingBank, query_id: str, embedding: str = "grp", matcher=None) -> RetrievalRun:
    """Rank every other scene by ascending Euclidean distance; distance
    ties break by scene_id."""
    if len(bank) < 2:
        raise ValueError("retrieval needs at least two scenes in the bank")
    ids = [e.scene_id for e in bank.entries]
    if query_id not in ids:
        raise KeyError(f"unknown query {query_id!r}")
    vectors = bank.vectors(embedding).astype(np.float64)
    q = vectors[ids.index(query_id)]
    gallery = [(sid, vec) for sid, vec in zip(ids, vectors) if sid != query_id]
    dists = [(float(np.linalg.norm(vec - q)), sid) for sid, vec in gallery]
    dists.sort(key=lambda pair: (pair[0], pair[1]))
    ranked_ids = [sid for _, sid in dists]
    distances = np.array([d for d, _ in dists])
    matches = None
    if matcher is not None:
        matches = np.array([matcher(query_id, sid) for sid in ranked_ids], dtype=bool)
    return RetrievalRun(query_id=query_id, ranked_ids=ranked_ids, distances=distances, matches=matches)


def _resolve_matcher(bank, predicate, tau):
    return predicate if callable(predicate) else make_matcher(bank, predicate, tau)


def hit_at_k(bank: EmbeddingBank, predicate, K: int, embedding: str = "grp", tau: float = 0.5) -> float:
    """Fraction of queries with at least one match among the K nearest."""
    gallery_size = len(bank) - 1
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > gallery_size:
        raise ValueError(f"K={K} exceeds gallery size {gallery_size}")
    matcher = _resolve_matcher(bank, predicate, tau)

    def one(entry):
        run = retrieve(bank, entry.scene_id, embedding, matcher)
        return bool(run.matches[:K].any())

    hits = _map_queries(one, bank.entries)
    return float(np.mean(hits))


@dataclass
class MapResult:
    value: float
    excluded_queries: tuple[str, ...] = field(default_factory=tuple)


def mean_average_precision(bank: EmbeddingBank, predicate, embedding: str = "grp", tau: float = 0.5) -> MapResult:
    """AP per query = mean of precision@k over its match positions; queries
    with no matching gallery scene are excluded and reported."""
    if len(bank) < 2:
        raise ValueError("mAP needs at least two scenes in the bank")
    matcher = _resolve_matcher(bank, predicate, tau)

    def one(entry):
        run = retrieve(bank, entry.scene_id, embedding, matcher)
        positions = np.flatnonzero(run.matches)
        if positions.size == 0:
            return None
        precisions = (np.arange(positions.size) + 1) / (positions + 1)
        return float(precisions.mean())

    results = _map_queries(one, bank.entries)
    included = [r for r in results if r is not None]
    excluded = tuple(
        e.scene_id for e, r in zip(bank.entries, results) if r is None
    )
    if not included:
        return MapResult(value=float("nan"), excluded_queries=excluded)
    return MapResult(value=float(np.mean(included)), excluded_queries=excluded)


@dataclass
class KnnResult:
    accuracy: float
    confusion: np.ndarray  # rows = ground truth, columns = predicted


def knn_gar(bank: EmbeddingBank, K: int, embedding: str = "grp") -> KnnResult:
    """Leave-one-out K-nearest-neighbor group classification.

    Majority vote among the K nearest; a tied vote falls back to the
    nearest neighbor's label.
    """
    if not bank.has_labels():
        raise ValueError("KNN group recognition needs labels on every scene")
    if not 1 <= K <= len(bank) - 1:
        raise ValueError(f"K={K} out of range for bank of {len(bank)} scenes")
    labels = [int(l) for l in bank.labels()]
    vocab = bank.manifest.get("group_vocab")
    num_classes = len(vocab) if vocab else max(labels) + 1
    index = {e.scene_id: i for i, e in enumerate(bank.entries)}

    def one(entry):
        run = retrieve(bank, entry.scene_id, embedding)
        neighbor_labels = [labels[index[sid]] for sid in run.ranked_ids[:K]]
        votes = np.bincount(neighbor_labels, minlength=num_classes)
        top = votes.max()
        tied = np.flatnonzero(votes == top)
        predicted = int(tied[0]) if tied.size == 1 else neighbor_labels[0]
        return labels[index[entry.scene_id]], predicted

    pairs = _map_queries(one, bank.entries)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    correct = 0
    for truth, predicted in pairs:
        confusion[truth, predicted] += 1
        correct += truth == predicted
    return KnnResult(accuracy=correct / len(bank), confusion=confusion)


@dataclass
class ProjectionPoint:
    scene_id: str
    label: Optional[int]
    c1: float
    c2: float


def export_projection(bank: EmbeddingBank, embedding: str = "grp") -> list[ProjectionPoint]:
    """Deterministic top-2 principal-component coordinates per scene."""
    if len(bank) < 2:
        raise ValueError("projection needs at least two scenes")
    vectors = bank.vectors(embedding).astype(np.float64)
    centered = vectors - vectors.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    if components.shape[0] < 2:
        components = np.vstack([components, np.zeros_like(components[0])])
    # Fix each component's sign by its largest-magnitude loading.
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    coords = centered @ components.T
    return [
        ProjectionPoint(e.scene_id, e.group_label, float(c[0]), float(c[1]))
        for e, c in zip(bank.entries, coords)
    ]


def write_projection_csv(points: list[ProjectionPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["scene_id", "label", "c1", "c2"])
        for p in points:
            writer.writerow([p.scene_id, "" if p.label is None else p.label, repr(p.c1), repr(p.c2)])


def evaluate_bank(bank: EmbeddingBank, config: EvalConfig) -> dict:
    """Full metric report for one predicate/embedding choice.

    Keys: predicate, tau, embedding, hit (per K), map, knn (per K, when
    labels exist), confusion (nearest-neighbor, rows = ground truth).
    """
    matcher = make_matcher(bank, config.predicate, config.tau)
    gallery_size = len(bank) - 1
    hits = {
        str(k): hit_at_k(bank, matcher, k, config.embedding)
        for k in config.ks
        if k <= gallery_size
    }
    map_result = mean_average_precision(bank, matcher, config.embedding)
    report = {
        "predicate": config.predicate,
        "predicate_alias": "AF-IDF" if config.predicate == "afisf" else None,
        "tau": config.tau,
        "embedding": config.embedding,
        "hit": hits,
        "map": map_result.value,
        "map_excluded_queries": list(map_result.excluded_queries),
        "knn": None,
        "confusion": None,
    }
    if bank.has_labels():
        knn = {
            str(k): knn_gar(bank, k, config.embedding).accuracy
            for k in config.ks
            if k <= gallery_size
        }
        report["knn"] = knn
        report["confusion"] = knn_gar(bank, 1, config.embedding).confusion.tolist()
    return report
