"""Synthetic desk-scale datasets and their on-disk layout."""

from __future__ import annotations

import os

import numpy as np

from .clouds import DatasetPair, ManifestRecord, write_cloud, write_manifest
from .synthetic import CATEGORIES, gen_synthetic, make_partial


def random_viewpoint(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def make_synthetic_dataset(per_category: int = 50, n_complete: int = 2048, n_partial: int = 256,
                           test_fraction: float = 0.2, seed: int = 0, categories=CATEGORIES,
                           visibility: str = "halfspace") -> list[DatasetPair]:
    """Complete clouds plus single-view partial scans of randomly stretched shapes.

    The partial scan keeps the visible half of an independent ``2 * n_partial``
    sampling of the same surface. The last ``test_fraction`` of every
    category goes to the test split.
    """
    pairs = []
    n_test = int(round(per_category * test_fraction))
    for c, cat in enumerate(categories):
        for i in range(per_category):
            rng = np.random.default_rng([seed, c, i])
            scale = rng.uniform(0.75, 1.0, size=3)
            s_complete, s_partial, s_view = (int(x) for x in rng.integers(0, 2**31 - 1, size=3))
            complete = gen_synthetic(cat, n_complete, s_complete, instance_scale=scale)
            dense = gen_synthetic(cat, 2 * n_partial, s_partial, instance_scale=scale)
            partial = make_partial(dense, random_viewpoint(rng), 0.5, s_view, method=visibility)
            rid = f"{cat}-{i:03d}"
            complete.id = partial.id = rid
            split = "test" if i >= per_category - n_test else "train"
            pairs.append(DatasetPair(partial, complete, split))
    return pairs


def write_dataset(pairs, root) -> str:
    """Write pcb-binary clouds and ``manifest.tsv`` under ``root``; returns the manifest path."""
    os.makedirs(root, exist_ok=True)
    records = []
    for pair in pairs:
        rel_p = os.path.join(pair.split, f"{pair.id}.partial.pcb")
        rel_c = os.path.join(pair.split, f"{pair.id}.complete.pcb")
        write_cloud(os.path.join(root, rel_p), pair.partial)
        write_cloud(os.path.join(root, rel_c), pair.complete)
        records.append(ManifestRecord(pair.id, pair.category, pair.split, rel_p, rel_c))
    path = os.path.join(root, "manifest.tsv")
    write_manifest(path, records)
    return path


def split(pairs, name: str):
    return [p for p in pairs if p.split == name]
