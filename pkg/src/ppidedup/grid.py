"""Fixed-radius neighbour search on a uniform 3D hash grid."""

from __future__ import annotations

import itertools

import numpy as np

__all__ = ["neighbor_pairs", "neighbor_pairs_brute"]

# Self cell plus the 13 "forward" neighbours: every unordered pair of
# adjacent cells is visited exactly once.
_FORWARD = np.array(
    [o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0)],
    dtype=np.int64,
)


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _finish(i: list, j: list) -> tuple[np.ndarray, np.ndarray]:
    if not i:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    i = np.concatenate(i)
    j = np.concatenate(j)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    order = np.lexsort((hi, lo))
    return lo[order], hi[order]


def neighbor_pairs(coords, cutoff: float, groups=None) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs ``i < j`` with ``|x_i - x_j| <= cutoff``.

    Parameters
    ----------
    coords : (n, 3) array_like
    cutoff : float
        Search radius; also the grid cell edge.
    groups : (n,) array_like, optional
        When given, only pairs from different groups are reported.

    Returns
    -------
    i, j : int64 arrays sorted lexicographically by ``(i, j)``.
    """
    x = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    g = None if groups is None else np.asarray(groups)
    n = len(x)
    if n < 2:
        return _finish([], [])
    cut2 = cutoff * cutoff

    # cell edge padded so rounding can never push a within-cutoff pair two cells apart
    cells = np.floor((x - x.min(axis=0)) / (cutoff * (1 + 1e-9))).astype(np.int64)
    keys, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    lookup = {tuple(k): c for c, k in enumerate(keys.tolist())}

    out_i: list[np.ndarray] = []
    out_j: list[np.ndarray] = []
    for c, key in enumerate(keys):
        own = order[bounds[c]:bounds[c + 1]]
        # pairs inside the cell
        if len(own) > 1:
            d2 = _sq_dist(x[own], x[own])
            mask = np.triu(d2 <= cut2, k=1)
            if g is not None:
                mask &= g[own][:, None] != g[own][None, :]
            a, b = np.nonzero(mask)
            out_i.append(own[a])
            out_j.append(own[b])
        # pairs with forward neighbour cells
        other = [lookup.get(tuple(k)) for k in (key + _FORWARD).tolist()]
        other = [order[bounds[o]:bounds[o + 1]] for o in other if o is not None]
        if not other:
            continue
        other = np.concatenate(other)
        d2 = _sq_dist(x[own], x[other])
        mask = d2 <= cut2
        if g is not None:
            mask &= g[own][:, None] != g[other][None, :]
        a, b = np.nonzero(mask)
        out_i.append(own[a])
        out_j.append(other[b])
    return _finish(out_i, out_j)


def neighbor_pairs_brute(coords, cutoff: float, groups=None) -> tuple[np.ndarray, np.ndarray]:
    """O(n^2) reference for :func:`neighbor_pairs` with the same arithmetic."""
    x = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = len(x)
    if n < 2:
        return _finish([], [])
    d2 = _sq_dist(x, x)
    mask = np.triu(d2 <= cutoff * cutoff, k=1)
    if groups is not None:
        g = np.asarray(groups)
        mask &= g[:, None] != g[None, :]
    i, j = np.nonzero(mask)
    return _finish([i], [j])
