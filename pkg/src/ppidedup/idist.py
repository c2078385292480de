"""iDist: SE(3)-invariant interface embeddings and near-duplicate detection.

Each residue mixes its own one-hot features with RBF-weighted averages of
the features of residues on its own chain and on the partner chains; the
interface vector is the mean over chains of the per-chain mean residue
vectors. Two interfaces are near duplicates when the Euclidean distance
between their vectors falls below a calibrated threshold.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .interface import Interface

__all__ = [
    "FEATURE_DIM",
    "PRESETS",
    "IDistConfig",
    "InterfaceEmbedding",
    "EmptyChain",
    "DimensionMismatch",
    "embed_arrays",
    "idist_embed",
    "idist",
    "is_near_duplicate",
    "pairwise_distances",
    "write_embeddings",
    "read_embeddings",
]

FEATURE_DIM = 20

# interface cutoff (A) -> near-duplicate threshold
PRESETS = {
    "dips6": {"cutoff": 6.0, "threshold": 0.04},
    "ppiref10": {"cutoff": 10.0, "threshold": 0.03},
}


class EmptyChain(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class IDistConfig:
    alpha: float = 16.0
    threshold: float = 0.03

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    @classmethod
    def preset(cls, name: str) -> "IDistConfig":
        return cls(threshold=PRESETS[name]["threshold"])

    @classmethod
    def for_cutoff(cls, cutoff: float) -> "IDistConfig":
        for p in PRESETS.values():
            if p["cutoff"] == cutoff:
                return cls(threshold=p["threshold"])
        raise ValueError(f"no calibrated threshold for a {cutoff} A cutoff")

    def relaxed(self, factor: float = 1.5) -> "IDistConfig":
        return replace(self, threshold=self.threshold * factor)


@dataclass(frozen=True)
class InterfaceEmbedding:
    id: str
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 1:
            raise ValueError("embedding must be a vector")
        if not np.all(np.isfinite(z)):
            raise ValueError(f"{self.id}: non-finite embedding")
        object.__setattr__(self, "z", z)


def embed_arrays(coords, features, partners, alpha: float = 16.0) -> np.ndarray:
    """Embed an interface given as arrays.

    Parameters
    ----------
    coords : (N, 3) Ca coordinates
    features : (N, d) residue features
    partners : (N,) chain labels
    alpha : RBF bandwidth in A^2

    The intra-chain set of residue i includes i itself.
    """
    x = np.asarray(coords, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(partners)
    n = len(x)
    if n == 0 or len(f) != n or len(p) != n:
        raise ValueError("coords, features and partners must share a non-zero length")
    labels = np.unique(p)
    if len(labels) < 2:
        raise EmptyChain("an interface needs residues from at least two chains")

    diff = x[:, None, :] - x[None, :, :]
    w = np.exp(-np.sum(diff * diff, axis=-1) / alpha)
    same = p[:, None] == p[None, :]
    w_intra = np.where(same, w, 0.0)
    w_inter = w - w_intra
    n_intra = same.sum(axis=1)[:, None]
    n_inter = n - n_intra
    m_intra = (w_intra @ f) / n_intra
    m_inter = (w_inter @ f) / n_inter
    h = 0.5 * f + 0.25 * m_intra - 0.25 * m_inter

    per_chain = np.stack([h[p == c].mean(axis=0) for c in labels])
    return per_chain.mean(axis=0)


def idist_embed(interface: Interface, config: IDistConfig = IDistConfig()) -> InterfaceEmbedding:
    for c in interface.chains:
        if not interface.residues.get(c):
            raise EmptyChain(f"{interface.id}: chain {c} has no residues")
    z = embed_arrays(interface.coords(), interface.features(), interface.partners(), config.alpha)
    return InterfaceEmbedding(interface.id, z)


def _vec(e) -> np.ndarray:
    return e.z if isinstance(e, InterfaceEmbedding) else np.asarray(e, dtype=np.float64)


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # shared by every distance path so all modes round identically
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def idist(emb_a, emb_b) -> float:
    """Euclidean distance between two embeddings."""
    a, b = _vec(emb_a), _vec(emb_b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions {a.shape} and {b.shape} differ")
    return float(np.sqrt(_sq_dist(a[None], b[None])[0, 0]))


def is_near_duplicate(emb_a, emb_b, config: IDistConfig = IDistConfig()) -> bool:
    return idist(emb_a, emb_b) < config.threshold


def _as_matrix(embeddings) -> np.ndarray:
    if len(embeddings) == 0:
        return np.zeros((0, FEATURE_DIM))
    vecs = [_vec(e) for e in embeddings]
    dims = {v.shape for v in vecs}
    if len(dims) != 1:
        raise DimensionMismatch(f"inconsistent embedding dimensions {sorted(dims)}")
    return np.ascontiguousarray(np.stack(vecs))


def _pairs_all(z: np.ndarray, threshold: float, rows: range | None = None):
    n, d = z.shape
    block = max(1, (1 << 21) // max(1, n * d))
    rows = rows if rows is not None else range(n)
    out = []
    for start in range(rows.start, rows.stop, block):
        stop = min(start + block, rows.stop)
        d2 = _sq_dist(z[start:stop], z)
        dist = np.sqrt(d2)
        ii, jj = np.nonzero(dist < threshold)
        keep = jj > ii + start
        ii, jj = ii[keep] + start, jj[keep]
        out.append((ii, jj, dist[ii - start, jj]))
    return out


def _pairs_grid(z: np.ndarray, threshold: float, n_dims: int = 4):
    """Exact search: bucket on the highest-variance coordinates with cell edge
    ``threshold``; candidates from adjacent buckets are verified in full."""
    n, d = z.shape
    k = min(n_dims, d)
    axes = np.argsort(-z.var(axis=0), kind="stable")[:k]
    cell = threshold * (1 + 1e-9)
    keys = np.floor((z[:, axes] - z[:, axes].min(axis=0)) / cell).astype(np.int64)
    buckets: dict[tuple, list[int]] = {}
    for idx, key in enumerate(map(tuple, keys.tolist())):
        buckets.setdefault(key, []).append(idx)
    members = {key: np.array(v, dtype=np.int64) for key, v in buckets.items()}
    offsets = [np.array(o) for o in itertools.product((-1, 0, 1), repeat=k)]

    out = []
    for key, own in members.items():
        base = np.array(key)
        near = [members.get(tuple((base + o).tolist())) for o in offsets]
        cand = np.concatenate([c for c in near if c is not None])
        dist = np.sqrt(_sq_dist(z[own], z[cand]))
        ii, jj = np.nonzero(dist < threshold)
        gi, gj = own[ii], cand[jj]
        keep = gi < gj
        out.append((gi[keep], gj[keep], dist[ii[keep], jj[keep]]))
    return out


GRID_MIN_SIZE = 10_000


def pairwise_distances(embeddings: Sequence, threshold: float, mode: str = "auto",
                       workers: int = 1) -> list[tuple[int, int, float]]:
    """All pairs ``(i, j, distance)`` with ``i < j`` and distance below ``threshold``.

    ``mode`` is ``"all_pairs"``, ``"grid_index"`` or ``"auto"`` (grid above
    10,000 embeddings). Output is sorted and identical across modes and
    worker counts.
    """
    z = _as_matrix(embeddings)
    n = len(z)
    if n < 2:
        return []
    if mode == "auto":
        mode = "grid_index" if n > GRID_MIN_SIZE else "all_pairs"
    if mode == "all_pairs":
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            step = -(-n // workers)
            chunks = [range(s, min(s + step, n)) for s in range(0, n, step)]
            with ThreadPoolExecutor(workers) as pool:
                parts = [p for res in pool.map(lambda r: _pairs_all(z, threshold, r), chunks)
                         for p in res]
        else:
            parts = _pairs_all(z, threshold)
    elif mode == "grid_index":
        parts = _pairs_grid(z, threshold)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if not parts:
        return []
    i = np.concatenate([p[0] for p in parts])
    j = np.concatenate([p[1] for p in parts])
    dist = np.concatenate([p[2] for p in parts])
    order = np.lexsort((j, i))
    return [(int(a), int(b), float(c)) for a, b, c in zip(i[order], j[order], dist[order])]


# --------------------------------------------------------------------------
# binary format:
#   b"IDST", u8 version, u32 count, u32 dim,
#   per record: u16 id length, utf-8 id, dim x f32, all little-endian

MAGIC = b"IDST"
VERSION = 1


def write_embeddings(embeddings: Sequence[InterfaceEmbedding], fh: BinaryIO | str | Path) -> None:
    if isinstance(fh, (str, Path)):
        with open(fh, "wb") as f:
            return write_embeddings(embeddings, f)
    dim = len(embeddings[0].z) if embeddings else FEATURE_DIM
    fh.write(MAGIC + struct.pack("<BII", VERSION, len(embeddings), dim))
    for e in embeddings:
        if len(e.z) != dim:
            raise DimensionMismatch(f"{e.id}: dimension {len(e.z)} != {dim}")
        raw = e.id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long: {e.id[:40]}...")
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(np.asarray(e.z, dtype="<f4").tobytes())


def read_embeddings(fh: BinaryIO | str | Path) -> list[InterfaceEmbedding]:
    if isinstance(fh, (str, Path)):
        with open(fh, "rb") as f:
            return read_embeddings(f)
    head = fh.read(13)
    if len(head) != 13 or head[:4] != MAGIC:
        raise ValueError("not an IDST embedding file")
    version, count, dim = struct.unpack("<BII", head[4:])
    if version != VERSION:
        raise ValueError(f"unsupported IDST version {version}")
    out = []
    for _ in range(count):
        (length,) = struct.unpack("<H", fh.read(2))
        name = fh.read(length).decode("utf-8")
        buf = fh.read(4 * dim)
        if len(buf) != 4 * dim:
            raise ValueError("truncated IDST file")
        out.append(InterfaceEmbedding(name, np.frombuffer(buf, dtype="<f4").astype(np.float64)))
    return out
