import json
from pathlib import Path

import numpy as np
import pytest

from ppidedup.structure import ALPHABET, Atom, Chain, Residue, Structure

DATA = Path(__file__).parent / "data"


def pdb_line(serial, name, resname, chain, resseq, xyz, occ=1.0, element=None,
             altloc=" ", record="ATOM", icode=" "):
    element = element or name.strip()[0]
    padded = f" {name:<3}" if len(name) < 4 and len(element) == 1 else f"{name:<4}"
    x, y, z = xyz
    return (f"{record:<6}{serial:5d} {padded}{altloc}{resname:>3} {chain}{resseq:4d}{icode}   "
            f"{x:8.3f}{y:8.3f}{z:8.3f}{occ:6.2f}{0.0:6.2f}          {element:>2}")


def make_structure(chains, entry_id="TEST", method="X-RAY DIFFRACTION", resolution=2.0):
    """``chains`` maps chain id -> list of (resname, [(atom name, element, xyz), ...])."""
    out = []
    for cid, residues in chains.items():
        res = []
        for k, (resname, atoms) in enumerate(residues, start=1):
            res.append(Residue(cid, k, "", resname, resname if resname in ALPHABET else "UNK",
                               tuple(Atom(n, e, tuple(map(float, xyz))) for n, e, xyz in atoms)))
        out.append(Chain(cid, tuple(res)))
    return Structure(entry_id, tuple(out), method, resolution)


def random_structure(rng, n_chains=3, n_res=6, spread=12.0, entry_id="RND"):
    """Random residues with a CA and a couple of side atoms each."""
    chains = {}
    for c in range(n_chains):
        centre = rng.uniform(-spread, spread, 3)
        residues = []
        for _ in range(n_res):
            ca = centre + rng.normal(0, 3.0, 3)
            atoms = [("CA", "C", ca), ("CB", "C", ca + rng.normal(0, 1.0, 3)),
                     ("O", "O", ca + rng.normal(0, 1.5, 3))]
            residues.append((ALPHABET[int(rng.integers(20))], atoms))
        chains["ABCDEFGH"[c]] = residues
    return make_structure(chains, entry_id=entry_id)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def transform_structure(structure, rot, shift):
    chains = []
    for ch in structure.chains:
        res = []
        for r in ch.residues:
            atoms = tuple(Atom(a.name, a.element, tuple(rot @ np.array(a.position) + shift), a.occupancy)
                          for a in r.atoms)
            res.append(Residue(r.chain_id, r.seq_number, r.insertion_code, r.resname, r.aa, atoms))
        chains.append(Chain(ch.chain_id, tuple(res)))
    return Structure(structure.entry_id, tuple(chains), structure.method, structure.resolution)


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def oracles():
    return json.loads((DATA / "oracles.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
