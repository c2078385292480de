"""Protein-protein interface extraction at a heavy-atom distance cutoff."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np

from .grid import neighbor_pairs, neighbor_pairs_brute
from .structure import Chain, Residue, Structure, residue_one_hot, write_pdb

__all__ = [
    "CUTOFF_PRESETS",
    "InterfaceResidue",
    "Interface",
    "extract_interfaces",
    "residue_contact_map",
    "interface_record",
    "write_manifest",
    "read_manifest",
    "interface_to_pdb",
]

log = logging.getLogger(__name__)

# heavy-atom cutoffs (A): 6 A for DIPS-style comparisons, 10 A for mining
CUTOFF_PRESETS = {"dips6": 6.0, "ppiref10": 10.0}


@dataclass(frozen=True)
class InterfaceResidue:
    residue: Residue
    ca: tuple[float, float, float]

    @property
    def chain_id(self) -> str:
        return self.residue.chain_id

    @property
    def one_hot(self) -> np.ndarray:
        return residue_one_hot(self.residue.aa)


@dataclass(frozen=True, eq=False)
class Interface:
    """Contact residues of a set of chains.

    ``residues`` maps each participating chain id to its interface residues
    in structure order.
    """

    id: str
    source: str
    chains: tuple[str, ...]
    residues: Mapping[str, tuple[InterfaceResidue, ...]]
    cutoff: float
    _arrays: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if len(self.chains) < 2:
            raise ValueError("an interface needs at least two chains")
        for c in self.chains:
            if not self.residues.get(c):
                raise ValueError(f"chain {c} contributes no residues")

    @property
    def n_residues(self) -> dict[str, int]:
        return {c: len(self.residues[c]) for c in self.chains}

    def __len__(self) -> int:
        return sum(len(self.residues[c]) for c in self.chains)

    def iter_residues(self):
        for c in self.chains:
            yield from self.residues[c]

    def coords(self) -> np.ndarray:
        """Ca coordinates, shape (N, 3)."""
        if "x" not in self._arrays:
            self._arrays["x"] = np.array([r.ca for r in self.iter_residues()], dtype=np.float64)
        return self._arrays["x"]

    def features(self) -> np.ndarray:
        """One-hot amino-acid features, shape (N, 20)."""
        if "f" not in self._arrays:
            self._arrays["f"] = np.array([r.one_hot for r in self.iter_residues()])
        return self._arrays["f"]

    def partners(self) -> np.ndarray:
        """Chain label of each residue as an index into ``chains``."""
        if "p" not in self._arrays:
            self._arrays["p"] = np.repeat(
                np.arange(len(self.chains)), [len(self.residues[c]) for c in self.chains])
        return self._arrays["p"]


def _interface_id(entry_id: str, chains: Iterable[str]) -> str:
    return "_".join([entry_id, *sorted(chains)])


def extract_interfaces(structure: Structure, cutoff: float = 10.0,
                       method: str = "grid") -> list[Interface]:
    """One interface per chain pair with a heavy-atom contact within ``cutoff``.

    A residue belongs to the interface when any of its heavy atoms lies within
    ``cutoff`` (inclusive) of a heavy atom of the partner chain. Residues
    without a Ca atom are dropped with a warning. ``method="brute"`` runs the
    all-pairs scan instead of the hash grid.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if len(structure.chains) < 2:
        return []
    table = structure.atom_table
    search = {"grid": neighbor_pairs, "brute": neighbor_pairs_brute}[method]
    i, j = search(table.coords, cutoff, groups=table.chain_index)
    if len(i) == 0:
        return []

    chains: tuple[Chain, ...] = structure.chains
    all_res: list[Residue] = [r for c in chains for r in c.residues]
    n_chains = len(chains)
    ci, cj = table.chain_index[i], table.chain_index[j]
    ri, rj = table.residue_index[i], table.residue_index[j]
    pair = np.minimum(ci, cj) * n_chains + np.maximum(ci, cj)
    hits = np.unique(np.stack([np.concatenate([pair, pair]), np.concatenate([ri, rj])], axis=1), axis=0)

    out = []
    for key in np.unique(hits[:, 0]):
        a, b = divmod(int(key), n_chains)
        res_ids = hits[hits[:, 0] == key, 1]
        members: dict[str, list[InterfaceResidue]] = {chains[a].chain_id: [], chains[b].chain_id: []}
        for r in np.sort(res_ids):
            res = all_res[r]
            ca = res.ca
            if ca is None:
                log.warning("%s: residue %s%s has no CA atom; excluded from interface",
                            structure.entry_id, res.chain_id, res.label)
                continue
            members[res.chain_id].append(InterfaceResidue(res, ca.position))
        ids = sorted(members)
        if any(not members[c] for c in ids):
            log.warning("%s: chains %s have no CA-bearing contact residues on one side; skipped",
                        structure.entry_id, "/".join(ids))
            continue
        out.append(Interface(
            id=_interface_id(structure.entry_id, ids),
            source=structure.entry_id,
            chains=tuple(ids),
            residues={c: tuple(members[c]) for c in ids},
            cutoff=float(cutoff),
        ))
    out.sort(key=lambda f: f.id)
    return out


def residue_contact_map(interface: Interface) -> np.ndarray:
    """Symmetric (N, N) boolean matrix, True where residues sit on different chains."""
    p = interface.partners()
    return p[:, None] != p[None, :]


def interface_record(interface: Interface, **extra) -> dict:
    rec = {
        "id": interface.id,
        "source": interface.source,
        "chains": list(interface.chains),
        "n_residues": interface.n_residues,
        "cutoff": interface.cutoff,
    }
    rec.update(extra)
    return rec


def write_manifest(records: Iterable[Mapping], fh: IO[str]) -> None:
    """Write records as JSON Lines."""
    for rec in records:
        fh.write(json.dumps(rec) + "\n")


def read_manifest(fh: IO[str]) -> list[dict]:
    out = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"manifest line {lineno}: {exc}") from None
    return out


def interface_to_pdb(interface: Interface) -> str:
    """PDB text holding only the interface residues (all their heavy atoms)."""
    trimmed = Structure(
        entry_id=interface.source,
        chains=tuple(Chain(c, tuple(r.residue for r in interface.residues[c]))
                     for c in interface.chains),
    )
    return write_pdb(trimmed)
