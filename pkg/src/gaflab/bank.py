"""Embedding bank: the per-scene store all retrieval evaluation runs on.

One entry per scene: the pooled group feature g (2C), the per-person
variant (2NC), the scene's action histogram, and the group label when the
dataset has one.  Persisted as a zip holding a JSON manifest plus raw
little-endian float32 payloads.
"""

import json
import zipfile
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class BankEntry:
    scene_id: str
    g: np.ndarray
    ind: np.ndarray
    action_histogram: np.ndarray
    group_label: Optional[int]


@dataclass
class EmbeddingBank:
    entries: list[BankEntry]
    manifest: dict

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def entry(self, scene_id: str) -> BankEntry:
        for e in self.entries:
            if e.scene_id == scene_id:
                return e
        raise KeyError(f"scene {scene_id!r} not in bank")

    def vectors(self, embedding: str) -> np.ndarray:
        """Stacked embeddings; ``embedding`` is "grp" (g) or "ind"."""
        if embedding == "grp":
            return np.stack([e.g for e in self.entries])
        if embedding == "ind":
            return np.stack([e.ind for e in self.entries])
        raise ValueError(f"unknown embedding {embedding!r}; expected 'grp' or 'ind'")

    def labels(self) -> list[Optional[int]]:
        return [e.group_label for e in self.entries]

    def has_labels(self) -> bool:
        return all(e.group_label is not None for e in self.entries)


def save_bank(bank: EmbeddingBank, path) -> None:
    g = np.stack([e.g for e in bank.entries]).astype("<f4")
    ind = np.stack([e.ind for e in bank.entries]).astype("<f4")
    manifest = dict(bank.manifest)
    manifest.update(
        {
            "format": "gaflab-bank",
            "scene_ids": [e.scene_id for e in bank.entries],
            "group_labels": [e.group_label for e in bank.entries],
            "histograms": [e.action_histogram.tolist() for e in bank.entries],
            "g_width": int(g.shape[1]),
            "ind_width": int(ind.shape[1]),
        }
    )
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest))
        zf.writestr("g.bin", g.tobytes())
        zf.writestr("ind.bin", ind.tobytes())


def load_bank(path) -> EmbeddingBank:
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != "gaflab-bank":
            raise ValueError(f"{path}: not an embedding bank file")
        count = len(manifest["scene_ids"])
        g = np.frombuffer(zf.read("g.bin"), dtype="<f4").reshape(count, manifest["g_width"])
        ind = np.frombuffer(zf.read("ind.bin"), dtype="<f4").reshape(count, manifest["ind_width"])
    entries = [
        BankEntry(
            scene_id=sid,
            g=g[i].copy(),
            ind=ind[i].copy(),
            action_histogram=np.asarray(manifest["histograms"][i], dtype=np.int64),
            group_label=manifest["group_labels"][i],
        )
        for i, sid in enumerate(manifest["scene_ids"])
    ]
    meta = {
        k: v
        for k, v in manifest.items()
        if k not in {"scene_ids", "group_labels", "histograms", "format"}
    }
    return EmbeddingBank(entries=entries, manifest=meta)
