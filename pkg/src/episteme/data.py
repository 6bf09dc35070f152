"""Synthetic multi-modal dataset drawn from the world's observation table."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .world import CLASS_MEANS, N_CLASSES, N_MODALITIES


@dataclass
class Dataset:
    classes: np.ndarray
    obs: list[np.ndarray]

    def __len__(self):
        return len(self.classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.classes[idx], [o[idx] for o in self.obs])


def generate_dataset(n: int, sigma_obs: float, rng: np.random.Generator) -> Dataset:
    """Class-balanced complete observations, in shuffled order."""
    if n < 1:
        raise ValueError("dataset size must be positive")
    classes = np.arange(n) % N_CLASSES
    classes = classes[rng.permutation(n)]
    obs = []
    for m in range(N_MODALITIES):
        noise = rng.normal(0.0, 1.0, size=(n, CLASS_MEANS.shape[2])) * sigma_obs
        obs.append(CLASS_MEANS[m, classes] + noise)
    return Dataset(classes.astype(np.int64), obs)


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(ds)):
            rec = {"class": int(ds.classes[i]), "obs": {str(m): ds.obs[m][i].tolist() for m in range(len(ds.obs))}}
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> Dataset:
    classes, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc.msg}") from exc
            classes.append(int(rec["class"]))
            rows.append(rec["obs"])
    if not rows:
        raise ValueError(f"{path}: dataset is empty")
    n_mod = len(rows[0])
    obs = []
    for m in range(n_mod):
        key = str(m)
        if any(key not in r for r in rows):
            raise ValueError(f"{path}: some records lack modality {key}")
        obs.append(np.array([r[key] for r in rows], dtype=np.float64))
    return Dataset(np.array(classes, dtype=np.int64), obs)
