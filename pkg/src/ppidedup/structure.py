"""Parsing of PDB and mmCIF files into an immutable structure model.

Only protein residues with at least one heavy atom survive parsing. Waters,
ligands, nucleic acids and hydrogens are dropped, alternate locations are
resolved to the highest-occupancy conformer and only the first model of a
multi-model file is read.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ALPHABET",
    "ONE_LETTER",
    "UNKNOWN",
    "MODIFIED_PARENTS",
    "Atom",
    "Residue",
    "Chain",
    "Structure",
    "StructureError",
    "UnparsableRecord",
    "EmptyStructure",
    "parse_structure",
    "read_structure",
    "write_pdb",
    "residue_one_hot",
    "aa_index",
]

# Fixed ordering: alphabetical by three-letter code. Index i of every
# 20-dim feature vector refers to ALPHABET[i].
ALPHABET: tuple[str, ...] = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
ONE_LETTER: tuple[str, ...] = (
    "A", "R", "N", "D", "C", "Q", "E", "G", "H", "I",
    "L", "K", "M", "F", "P", "S", "T", "W", "Y", "V",
)
UNKNOWN = "UNK"

_INDEX = {code: i for i, code in enumerate(ALPHABET)}
_INDEX.update({code: i for i, code in enumerate(ONE_LETTER)})

# Modified / non-canonical residue -> standard parent.
MODIFIED_PARENTS: dict[str, str] = {
    # selenium and sulfur variants
    "MSE": "MET", "FME": "MET", "MED": "MET", "SEC": "CYS",
    "CSO": "CYS", "CSD": "CYS", "CME": "CYS", "OCS": "CYS", "CSS": "CYS",
    "CAS": "CYS", "SMC": "CYS", "CSX": "CYS", "SCH": "CYS", "CYX": "CYS",
    "CYM": "CYS",
    # phosphorylation and other PTMs
    "SEP": "SER", "TPO": "THR", "PTR": "TYR", "TYS": "TYR",
    "HYP": "PRO", "MLY": "LYS", "M3L": "LYS", "KCX": "LYS", "ALY": "LYS",
    "LLP": "LYS", "MLZ": "LYS", "PYL": "LYS", "LYN": "LYS",
    "CGU": "GLU", "PCA": "GLU", "GLH": "GLU", "ASH": "ASP",
    "MLE": "LEU", "NLE": "LEU", "AIB": "ALA", "ABA": "ALA",
    "HIC": "HIS", "HID": "HIS", "HIE": "HIS", "HIP": "HIS",
    "HSD": "HIS", "HSE": "HIS", "HSP": "HIS",
    # D-amino acids
    "DAL": "ALA", "DAR": "ARG", "DSG": "ASN", "DAS": "ASP", "DCY": "CYS",
    "DGN": "GLN", "DGL": "GLU", "DHI": "HIS", "DIL": "ILE", "DLE": "LEU",
    "DLY": "LYS", "DPN": "PHE", "DPR": "PRO", "DSN": "SER", "DTH": "THR",
    "DTR": "TRP", "DTY": "TYR", "DVA": "VAL",
}

_WATERS = frozenset({"HOH", "WAT", "DOD", "H2O", "TIP", "TIP3", "SOL"})
_NUCLEOTIDES = frozenset({
    "A", "C", "G", "U", "I", "T", "N",
    "DA", "DC", "DG", "DT", "DU", "DI", "DN",
})
_HYDROGENS = frozenset({"H", "D"})


class StructureError(ValueError):
    """Base class for parse failures."""


class UnparsableRecord(StructureError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyStructure(StructureError):
    pass


@dataclass(frozen=True)
class Atom:
    name: str
    element: str
    position: tuple[float, float, float]
    occupancy: float = 1.0

    @property
    def is_heavy(self) -> bool:
        return self.element.upper() not in _HYDROGENS


@dataclass(frozen=True)
class Residue:
    """A protein residue.

    ``resname`` is the residue name as written in the file; ``aa`` is the
    standard parent (three-letter code) or ``UNKNOWN``.
    """

    chain_id: str
    seq_number: int
    insertion_code: str
    resname: str
    aa: str
    atoms: tuple[Atom, ...]

    @property
    def label(self) -> str:
        return f"{self.seq_number}{self.insertion_code}"

    def atom(self, name: str) -> Atom | None:
        for a in self.atoms:
            if a.name == name:
                return a
        return None

    @property
    def ca(self) -> Atom | None:
        return self.atom("CA")


@dataclass(frozen=True)
class Chain:
    chain_id: str
    residues: tuple[Residue, ...]


@dataclass(frozen=True)
class Structure:
    entry_id: str
    chains: tuple[Chain, ...]
    method: str | None = None
    resolution: float | None = None

    @property
    def chain_ids(self) -> tuple[str, ...]:
        return tuple(c.chain_id for c in self.chains)

    def chain(self, chain_id: str) -> Chain:
        for c in self.chains:
            if c.chain_id == chain_id:
                return c
        raise KeyError(chain_id)

    def residues(self) -> Iterator[Residue]:
        for c in self.chains:
            yield from c.residues

    @cached_property
    def atom_table(self) -> "AtomTable":
        return AtomTable.from_structure(self)


@dataclass(frozen=True)
class AtomTable:
    """Flat numpy view of all atoms of a structure, in parse order."""

    coords: np.ndarray  # (A, 3) float64
    elements: tuple[str, ...]
    chain_index: np.ndarray  # (A,) index into Structure.chains
    residue_index: np.ndarray  # (A,) global residue index

    @classmethod
    def from_structure(cls, structure: Structure) -> "AtomTable":
        coords, elements, chain_idx, res_idx = [], [], [], []
        r = 0
        for ci, chain in enumerate(structure.chains):
            for res in chain.residues:
                for atom in res.atoms:
                    coords.append(atom.position)
                    elements.append(atom.element)
                    chain_idx.append(ci)
                    res_idx.append(r)
                r += 1
        return cls(
            coords=np.asarray(coords, dtype=np.float64).reshape(-1, 3),
            elements=tuple(elements),
            chain_index=np.asarray(chain_idx, dtype=np.int64),
            residue_index=np.asarray(res_idx, dtype=np.int64),
        )


def aa_index(code: str) -> int | None:
    """Alphabet index of a one- or three-letter code (modified codes map to
    their parent); ``None`` for anything unrecognised."""
    code = code.strip().upper()
    code = MODIFIED_PARENTS.get(code, code)
    return _INDEX.get(code)


def residue_one_hot(aa: str) -> np.ndarray:
    """20-dim one-hot vector under ``ALPHABET`` ordering.

    Unknown and unmapped codes give the zero vector.
    """
    out = np.zeros(len(ALPHABET))
    i = aa_index(aa)
    if i is not None:
        out[i] = 1.0
    return out


def _standard_parent(resname: str) -> str:
    resname = resname.upper()
    if resname in _INDEX and len(resname) == 3:
        return resname
    return MODIFIED_PARENTS.get(resname, UNKNOWN)


def _element_from_name(name4: str) -> str:
    # PDB convention: element right-justified in columns 13-14.
    if name4[:1].isdigit():
        return "H"
    head = name4[:2].strip()
    if not head:
        return ""
    if name4[0] == " " or len(head) == 1:
        return head[-1].upper()
    if head[0] in "HD" and len(name4.strip()) == 4:
        return head[0]
    return head.upper()


# --------------------------------------------------------------------------
# shared assembly

@dataclass
class _RawAtom:
    record: str
    name: str
    altloc: str
    resname: str
    chain_id: str
    seq: int
    icode: str
    x: float
    y: float
    z: float
    occupancy: float
    element: str
    order: int


def _assemble(entry_id: str, raw: Sequence[_RawAtom], method: str | None,
              resolution: float | None) -> Structure:
    # group per residue, keeping first-appearance order of chains and residues
    chains: dict[str, dict[tuple[int, str], list[_RawAtom]]] = {}
    for ra in raw:
        if ra.resname.upper() in _WATERS:
            continue
        if ra.element.upper() in _HYDROGENS:
            continue
        chains.setdefault(ra.chain_id, {}).setdefault((ra.seq, ra.icode), []).append(ra)

    out_chains = []
    for chain_id, residues in chains.items():
        out_res = []
        for (seq, icode), atoms in residues.items():
            res = _resolve_residue(chain_id, seq, icode, atoms)
            if res is not None:
                out_res.append(res)
        if out_res:
            out_chains.append(Chain(chain_id, tuple(out_res)))

    if not out_chains:
        raise EmptyStructure(f"{entry_id}: no protein residues")
    return Structure(entry_id=entry_id, chains=tuple(out_chains),
                     method=method, resolution=resolution)


def _resolve_residue(chain_id: str, seq: int, icode: str,
                     atoms: list[_RawAtom]) -> Residue | None:
    # Microheterogeneity: keep the residue name of the first record.
    resname = atoms[0].resname
    atoms = [a for a in atoms if a.resname == resname]

    best: dict[str, _RawAtom] = {}
    for a in atoms:
        cur = best.get(a.name)
        if cur is None or a.occupancy > cur.occupancy:
            best[a.name] = a
    picked = sorted(best.values(), key=lambda a: a.order)

    parent = _standard_parent(resname)
    is_protein = (
        parent != UNKNOWN
        or resname.upper() == UNKNOWN
        or (
            all(a.record == "ATOM" for a in picked)
            and resname.upper() not in _NUCLEOTIDES
            and "CA" in best
        )
    )
    if not is_protein or not picked:
        return None
    return Residue(
        chain_id=chain_id,
        seq_number=seq,
        insertion_code=icode,
        resname=resname,
        aa=parent,
        atoms=tuple(
            Atom(a.name, a.element, (a.x, a.y, a.z), a.occupancy) for a in picked
        ),
    )


# --------------------------------------------------------------------------
# PDB

_RES_RE = re.compile(r"RESOLUTION\.\s+([0-9.]+)\s+ANGSTROM")


def _parse_pdb(text: str, entry_id: str | None) -> Structure:
    raw: list[_RawAtom] = []
    methods: list[str] = []
    resolution = None
    header_id = None
    seen_model = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        rec = line[:6]
        if rec == "HEADER" and len(line) >= 66:
            header_id = line[62:66].strip() or None
        elif rec == "EXPDTA":
            methods.append(line[10:].strip())
        elif rec == "REMARK" and line[6:10].strip() == "2":
            m = _RES_RE.search(line)
            if m:
                resolution = float(m.group(1))
        elif rec == "MODEL ":
            if seen_model:
                break
            seen_model = True
        elif rec == "ENDMDL":
            break
        elif rec in ("ATOM  ", "HETATM"):
            raw.append(_pdb_atom(line, lineno, len(raw)))
    method = " ".join(methods).strip() or None
    return _assemble(entry_id or header_id or "UNKNOWN", raw, method, resolution)


def _pdb_atom(line: str, lineno: int, order: int) -> _RawAtom:
    if len(line) < 54:
        raise UnparsableRecord("coordinate record too short", lineno)
    try:
        x = float(line[30:38])
        y = float(line[38:46])
        z = float(line[46:54])
    except ValueError:
        raise UnparsableRecord(f"bad coordinates {line[30:54]!r}", lineno) from None
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise UnparsableRecord("non-finite coordinate", lineno)
    try:
        seq = int(line[22:26])
    except ValueError:
        raise UnparsableRecord(f"bad residue number {line[22:26]!r}", lineno) from None
    occ_field = line[54:60].strip()
    try:
        occupancy = float(occ_field) if occ_field else 1.0
    except ValueError:
        raise UnparsableRecord(f"bad occupancy {occ_field!r}", lineno) from None
    if not 0.0 <= occupancy <= 1.0:
        raise UnparsableRecord(f"occupancy {occupancy} outside [0, 1]", lineno)
    name4 = line[12:16]
    element = line[76:78].strip() if len(line) >= 78 else ""
    if not element:
        element = _element_from_name(name4)
    return _RawAtom(
        record=line[:6].strip(),
        name=name4.strip(),
        altloc=line[16],
        resname=line[17:20].strip(),
        chain_id=line[21],
        seq=seq,
        icode=line[26].strip() if len(line) > 26 else "",
        x=x, y=y, z=z,
        occupancy=occupancy,
        element=element.capitalize(),
        order=order,
    )


def write_pdb(structure: Structure) -> str:
    """Serialise to fixed-column PDB text (coordinates at 3 decimals)."""
    lines = [f"HEADER{'':56}{structure.entry_id[:4]:<4}"]
    if structure.method:
        lines.append(f"EXPDTA    {structure.method}")
    if structure.resolution is not None:
        lines.append(f"REMARK   2 RESOLUTION.    {structure.resolution:.2f} ANGSTROMS.")
    serial = 1
    for chain in structure.chains:
        if len(chain.chain_id) != 1:
            raise ValueError(f"chain id {chain.chain_id!r} does not fit PDB format")
        for res in chain.residues:
            record = "ATOM  " if res.resname in _INDEX else "HETATM"
            for atom in res.atoms:
                name = atom.name
                if len(name) < 4 and len(atom.element) == 1:
                    name = " " + name
                x, y, z = atom.position
                lines.append(
                    f"{record}{serial % 100000:5d} {name:<4} {res.resname:>3} "
                    f"{chain.chain_id}{res.seq_number:4d}{res.insertion_code or ' ':1}   "
                    f"{x:8.3f}{y:8.3f}{z:8.3f}{atom.occupancy:6.2f}{0.0:6.2f}"
                    f"          {atom.element.upper():>2}"
                )
                serial += 1
        lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# mmCIF

_CIF_TOKEN = re.compile(
    r"""'(?:[^']|'(?=\S))*'(?=\s|$)|"(?:[^"]|"(?=\S))*"(?=\s|$)|\S+"""
)


def _cif_tokens(text: str) -> Iterator[tuple[str, bool, int]]:
    """Yield (value, quoted, line) tokens of a CIF document."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith(";"):
            start = i + 1
            buf = [line[1:]]
            i += 1
            while i < len(lines) and not lines[i].startswith(";"):
                buf.append(lines[i])
                i += 1
            if i == len(lines):
                raise UnparsableRecord("unterminated text field", start)
            yield "\n".join(buf).strip(), True, start
            i += 1
            continue
        for m in _CIF_TOKEN.finditer(line):
            tok = m.group(0)
            if tok.startswith("#"):
                break
            if tok[0] in "'\"" and len(tok) >= 2 and tok[-1] == tok[0]:
                yield tok[1:-1], True, i + 1
            else:
                yield tok, False, i + 1
        i += 1


def _parse_cif_categories(text: str) -> dict[str, dict[str, list[tuple[str, int]]]]:
    cats: dict[str, dict[str, list[tuple[str, int]]]] = {}
    tokens = list(_cif_tokens(text))
    n = len(tokens)
    i = 0
    while i < n:
        tok, quoted, lineno = tokens[i]
        low = tok.lower()
        if not quoted and low == "loop_":
            i += 1
            names = []
            while i < n and not tokens[i][1] and tokens[i][0].startswith("_"):
                names.append(tokens[i][0])
                i += 1
            values = []
            while i < n:
                t, q, ln = tokens[i]
                if not q and (t.startswith("_") or t.lower() in ("loop_",)
                              or t.lower().startswith(("data_", "save_"))):
                    break
                values.append((t, ln))
                i += 1
            if not names:
                raise UnparsableRecord("loop_ without item names", lineno)
            if len(values) % len(names):
                raise UnparsableRecord(
                    f"loop with {len(names)} items has {len(values)} values", lineno)
            for k, name in enumerate(names):
                cat, _, item = name[1:].partition(".")
                cats.setdefault(cat, {})[item] = values[k::len(names)]
        elif not quoted and tok.startswith("_"):
            if i + 1 >= n:
                raise UnparsableRecord(f"item {tok} without value", lineno)
            cat, _, item = tok[1:].partition(".")
            cats.setdefault(cat, {})[item] = [(tokens[i + 1][0], tokens[i + 1][2])]
            i += 2
        else:
            i += 1
    return cats


def _cif_missing(v: str) -> bool:
    return v in ("?", ".")


def _parse_mmcif(text: str, entry_id: str | None) -> Structure:
    cats = _parse_cif_categories(text)
    site = cats.get("atom_site")
    if not site:
        raise EmptyStructure("no atom_site category")

    def col(*names: str) -> list[tuple[str, int]] | None:
        for name in names:
            if name in site:
                return site[name]
        return None

    group = col("group_PDB")
    xs, ys, zs = col("Cartn_x"), col("Cartn_y"), col("Cartn_z")
    if xs is None or ys is None or zs is None:
        raise EmptyStructure("atom_site lacks Cartesian coordinates")
    n = len(xs)
    symbol = col("type_symbol")
    atom_name = col("auth_atom_id", "label_atom_id")
    alt = col("label_alt_id")
    comp = col("auth_comp_id", "label_comp_id")
    asym = col("auth_asym_id", "label_asym_id")
    seq = col("auth_seq_id", "label_seq_id")
    icode = col("pdbx_PDB_ins_code")
    occ = col("occupancy")
    model = col("pdbx_PDB_model_num")
    if atom_name is None or comp is None or asym is None or seq is None:
        raise EmptyStructure("atom_site lacks residue identification items")

    first_model = model[0][0] if model else None
    raw: list[_RawAtom] = []
    for k in range(n):
        if model is not None and model[k][0] != first_model:
            continue
        lineno = xs[k][1]
        try:
            x, y, z = float(xs[k][0]), float(ys[k][0]), float(zs[k][0])
        except ValueError:
            raise UnparsableRecord(
                f"bad coordinates {xs[k][0]!r} {ys[k][0]!r} {zs[k][0]!r}", lineno) from None
        if not all(math.isfinite(v) for v in (x, y, z)):
            raise UnparsableRecord("non-finite coordinate", lineno)
        try:
            resseq = int(seq[k][0])
        except ValueError:
            raise UnparsableRecord(f"bad residue number {seq[k][0]!r}", lineno) from None
        o = occ[k][0] if occ else "1"
        try:
            occupancy = 1.0 if _cif_missing(o) else float(o)
        except ValueError:
            raise UnparsableRecord(f"bad occupancy {o!r}", lineno) from None
        if not 0.0 <= occupancy <= 1.0:
            raise UnparsableRecord(f"occupancy {occupancy} outside [0, 1]", lineno)
        name = atom_name[k][0]
        element = symbol[k][0] if symbol and not _cif_missing(symbol[k][0]) else ""
        if not element:
            element = _element_from_name(f" {name:<3}" if len(name) < 4 else name)
        ic = icode[k][0] if icode else ""
        raw.append(_RawAtom(
            record=group[k][0] if group else "ATOM",
            name=name,
            altloc="" if not alt or _cif_missing(alt[k][0]) else alt[k][0],
            resname=comp[k][0],
            chain_id=asym[k][0],
            seq=resseq,
            icode="" if _cif_missing(ic) else ic,
            x=x, y=y, z=z,
            occupancy=occupancy,
            element=element.capitalize(),
            order=k,
        ))

    method = None
    exptl = cats.get("exptl", {}).get("method")
    if exptl:
        method = "; ".join(v for v, _ in exptl if not _cif_missing(v)) or None

    resolution = None
    for cat, item in (("refine", "ls_d_res_high"),
                      ("em_3d_reconstruction", "resolution"),
                      ("reflns", "d_resolution_high")):
        vals = cats.get(cat, {}).get(item)
        if vals and not _cif_missing(vals[0][0]):
            try:
                resolution = float(vals[0][0])
                break
            except ValueError:
                pass

    if entry_id is None:
        ent = cats.get("entry", {}).get("id")
        block = re.search(r"^data_(\S+)", text, re.MULTILINE)
        entry_id = ent[0][0] if ent else block.group(1) if block else "UNKNOWN"
    return _assemble(entry_id, raw, method, resolution)


# --------------------------------------------------------------------------
# entry points

def _sniff(text: str) -> str:
    for line in text.splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.startswith(("data_", "loop_", "_")):
            return "mmcif"
        return "pdb"
    return "pdb"


def parse_structure(content: bytes | str, format: str = "auto",
                    entry_id: str | None = None) -> Structure:
    """Parse PDB or mmCIF content.

    ``format`` is one of ``"pdb"``, ``"mmcif"`` or ``"auto"`` (sniffed from the
    first non-blank line). ``entry_id`` overrides the identifier found in the
    file header.
    """
    text = content.decode("utf-8", errors="replace") if isinstance(content, bytes) else content
    if format == "auto":
        format = _sniff(text)
    if format == "pdb":
        return _parse_pdb(text, entry_id)
    if format in ("mmcif", "cif"):
        return _parse_mmcif(text, entry_id)
    raise ValueError(f"unknown format {format!r}")


_PDB_SUFFIXES = (".pdb", ".ent")
_CIF_SUFFIXES = (".cif", ".mmcif")


def read_structure(path: str | Path, entry_id: str | None = None) -> Structure:
    """Read a structure file; gzip-compressed files are accepted.

    The entry id defaults to the file stem, upper-cased when it looks like a
    4-character PDB code.
    """
    import gzip

    path = Path(path)
    name = path.name
    data = path.read_bytes()
    if name.endswith(".gz"):
        data = gzip.decompress(data)
        name = name[:-3]
    stem = name.rsplit(".", 1)[0]
    if entry_id is None:
        entry_id = stem.upper() if len(stem) == 4 else stem
    lower = name.lower()
    fmt = "pdb" if lower.endswith(_PDB_SUFFIXES) else "mmcif" if lower.endswith(_CIF_SUFFIXES) else "auto"
    return parse_structure(data, fmt, entry_id=entry_id)
