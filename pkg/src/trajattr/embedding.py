"""Set-level data embeddings (sum, scale, softmax) and distances between them."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class DataEmbedding:
    probs: np.ndarray
    source: str = "original"  # "original" or "complement:<cluster_id>"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"{self.source}: not a point on the probability simplex")
        object.__setattr__(self, "probs", p)

    @property
    def dim(self) -> int:
        return len(self.probs)


def complement_label(cluster_id: int) -> str:
    return f"complement:{cluster_id}"


def softmax(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(x, dtype=float) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def data_embedding(embs: Sequence, M: float, T_soft: float = 1.0, source: str = "original") -> DataEmbedding:
    """Softmax over features of (sum of trajectory embeddings) / M.

    ``embs`` holds vectors or objects with a ``vector`` attribute. Summation is
    done in sorted order per coordinate, so any permutation of the input
    gives a bit-identical result.
    """
    if M <= 0 or T_soft <= 0:
        raise ValueError("M and T_soft must be positive")
    vecs = [np.asarray(getattr(e, "vector", e), dtype=float) for e in embs]
    if not vecs:
        raise ValueError("cannot embed an empty set of trajectories")
    if len({v.shape for v in vecs}) != 1:
        raise ValueError("trajectory embeddings differ in dimension")
    total = np.sort(np.stack(vecs), axis=0).sum(axis=0)
    return DataEmbedding(softmax(total / M, T_soft), source)


def _check_dims(p, q):
    p = np.asarray(getattr(p, "probs", p), dtype=float)
    q = np.asarray(getattr(q, "probs", q), dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return p, q


def wasserstein_simplex(p, q) -> float:
    """W1 between two histograms on the ordered support 0..d-1 with unit spacing."""
    p, q = _check_dims(p, q)
    diff = np.cumsum(p)[:-1] - np.cumsum(q)[:-1]
    return float(np.abs(diff).sum())


def total_variation(p, q) -> float:
    p, q = _check_dims(p, q)
    return float(0.5 * np.abs(p - q).sum())


DISTANCES = {"wasserstein": wasserstein_simplex, "tv": total_variation}


def normalize_distances(w: Sequence[tuple[int, float]]) -> tuple[list[tuple[int, float]], bool]:
    """Divide by the maximum so the largest distance becomes 1.0.

    Returns the normalized pairs and a flag that is True when every distance
    was zero (all then map to 0).
    """
    if not w:
        return [], False
    if any(v < 0 for _, v in w):
        raise ValueError("distances must be non-negative")
    top = max(v for _, v in w)
    if top == 0:
        warnings.warn("all data-embedding distances are zero", RuntimeWarning, stacklevel=2)
        return [(c, 0.0) for c, _ in w], True
    return [(c, v / top) for c, v in w], False


def write_data_embeddings_csv(embs: Sequence[DataEmbedding], path: str | Path) -> None:
    d = embs[0].dim
    lines = ["source," + ",".join(f"p{j}" for j in range(d))]
    lines += [e.source + "," + ",".join(repr(float(x)) for x in e.probs) for e in embs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_data_embeddings_csv(path: str | Path, check: bool = True) -> list[DataEmbedding]:
    """Read rows back; with ``check=False`` rows off the simplex are returned unvalidated."""
    out = []
    for row in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        if not row:
            continue
        source, *vals = row.split(",")
        probs = np.array([float(x) for x in vals])
        if check:
            out.append(DataEmbedding(probs, source))
        else:
            e = object.__new__(DataEmbedding)
            object.__setattr__(e, "probs", probs)
            object.__setattr__(e, "source", source)
            out.append(e)
    return out
