"""Shrake-Rupley solvent accessible surface area and buried surface area.

Sphere points come from a Fibonacci lattice, so any point count is allowed
and results are deterministic. Van der Waals radii are the Bondi (1964)
element radii.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .grid import neighbor_pairs
from .structure import Structure

__all__ = [
    "PROBE_RADIUS",
    "VDW_RADII",
    "DEFAULT_RADIUS",
    "MissingChain",
    "fibonacci_sphere",
    "shrake_rupley_sasa",
    "element_radii",
    "chain_sasa",
    "compute_bsa",
    "buried_surface_area",
]

PROBE_RADIUS = 1.4

# Bondi, J. Phys. Chem. 68, 441 (1964)
VDW_RADII = {
    "H": 1.20, "C": 1.70, "N": 1.55, "O": 1.52, "F": 1.47, "P": 1.80,
    "S": 1.80, "Cl": 1.75, "Se": 1.90, "Br": 1.85, "I": 1.98,
}
DEFAULT_RADIUS = 1.80


class MissingChain(KeyError):
    pass


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on the sphere."""
    k = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(1.0 - z * z)
    phi = k * (math.pi * (3.0 - math.sqrt(5.0)))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def shrake_rupley_sasa(positions, radii, probe: float = PROBE_RADIUS,
                       n_points: int = 960) -> np.ndarray:
    """Per-atom solvent accessible area in A^2.

    Parameters
    ----------
    positions : (n, 3) array_like
    radii : (n,) array_like
        Van der Waals radii, all positive.
    probe : float
        Solvent probe radius.
    n_points : int
        Quadrature points per atom sphere, at least 32.

    Returns
    -------
    (n,) array; the total SASA is its sum.
    """
    x = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    rad = np.asarray(radii, dtype=np.float64).reshape(-1)
    if len(rad) != len(x):
        raise ValueError("positions and radii differ in length")
    if np.any(rad <= 0):
        raise ValueError("radii must be positive")
    if n_points < 32:
        raise ValueError("n_points must be at least 32")
    n = len(x)
    if n == 0:
        return np.zeros(0)

    big = rad + probe
    unit = fibonacci_sphere(n_points)

    i, j = neighbor_pairs(x, 2.0 * big.max())
    if len(i):
        d2 = np.sum((x[i] - x[j]) ** 2, axis=1)
        keep = d2 < (big[i] + big[j]) ** 2
        i, j = i[keep], j[keep]
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    order = np.argsort(src, kind="stable")
    src, dst = src[order], dst[order]
    starts = np.searchsorted(src, np.arange(n + 1))

    # padded neighbour table; empty slots sit far away with zero radius
    deg = np.diff(starts)
    k = max(1, int(deg.max()))
    slot = np.arange(len(src)) - starts[src]
    nb = np.full((n, k), -1, dtype=np.int64)
    nb[src, slot] = dst
    pad = nb < 0
    offset = np.where(pad[..., None], 1e6, x[:, None, :] - x[np.where(pad, 0, nb)])
    reach2 = np.where(pad, 0.0, big[np.where(pad, 0, nb)] ** 2)

    # sphere point c_a + R u lies inside neighbour b when
    # |c_a - c_b|^2 + R^2 + 2 R u.(c_a - c_b) < reach_b^2, i.e. u.(c_a - c_b) < bound
    areas = np.empty(n)
    chunk = max(1, 4_000_000 // (n_points * k))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        off = offset[s:e]
        r = big[s:e, None]
        bound = (reach2[s:e] - np.sum(off * off, axis=-1) - r * r) / (2.0 * r)
        buried = np.any(off @ unit.T < bound[:, :, None], axis=1)
        exposed = n_points - np.count_nonzero(buried, axis=1)
        areas[s:e] = 4.0 * math.pi * big[s:e] ** 2 * exposed / n_points
    return areas


def element_radii(elements: Sequence[str]) -> np.ndarray:
    return np.array([VDW_RADII.get(e.capitalize(), DEFAULT_RADIUS) for e in elements])


def _chain_atoms(structure: Structure, chain_ids: Sequence[str]):
    table = structure.atom_table
    ids = structure.chain_ids
    idx = []
    for c in chain_ids:
        if c not in ids:
            raise MissingChain(f"{structure.entry_id}: chain {c!r} not present")
        idx.append(ids.index(c))
    mask = np.isin(table.chain_index, idx)
    elements = [e for e, m in zip(table.elements, mask) if m]
    return table.coords[mask], element_radii(elements)


def chain_sasa(structure: Structure, chain_ids: Sequence[str],
               probe: float = PROBE_RADIUS, n_points: int = 960) -> float:
    """Total SASA of the given chains taken together, all other chains removed."""
    x, r = _chain_atoms(structure, chain_ids)
    return float(shrake_rupley_sasa(x, r, probe, n_points).sum())


def buried_surface_area(structure: Structure, chain_ids: Sequence[str],
                        probe: float = PROBE_RADIUS, n_points: int = 960,
                        single: dict | None = None) -> float:
    """Sum of isolated-chain SASAs minus the SASA of the chains together.

    The full difference is reported (not halved) and clamped at zero.
    ``single`` optionally caches isolated-chain SASA by chain id.
    """
    if len(chain_ids) < 2:
        raise ValueError("need at least two chains")
    alone = 0.0
    for c in chain_ids:
        if single is not None and c in single:
            alone += single[c]
            continue
        s = chain_sasa(structure, [c], probe, n_points)
        if single is not None:
            single[c] = s
        alone += s
    together = chain_sasa(structure, list(chain_ids), probe, n_points)
    return max(0.0, alone - together)


def compute_bsa(structure: Structure, chain_a: str, chain_b: str,
                probe: float = PROBE_RADIUS, n_points: int = 960) -> float:
    """Buried surface area (A^2) between two chains."""
    return buried_surface_area(structure, [chain_a, chain_b], probe, n_points)
