"""Mutation notation, structural masking, masked-modelling loss and the
log-odds binding-energy-change estimator.

Amino-acid classes are indices into :data:`ppidedup.structure.ALPHABET`.
"""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, BinaryIO, Iterable, Sequence

import numpy as np

from .structure import ALPHABET, ONE_LETTER, aa_index

__all__ = [
    "N_CLASSES",
    "IMPUTED_DDG",
    "Substitution",
    "MutationRecord",
    "MutationError",
    "BadAminoAcid",
    "BadPosition",
    "DuplicateSite",
    "IdentityMutation",
    "DuplicateIdentity",
    "ZeroProbability",
    "IndexOutOfRange",
    "parse_mutation",
    "mask_features",
    "masked_ce_loss",
    "class_weights",
    "log_odds_ddg",
    "check_probability_matrix",
    "read_mutations_csv",
    "write_pmat",
    "read_pmat",
    "read_pmat_csv",
    "write_pmat_csv",
]

N_CLASSES = len(ALPHABET)

# mean ddG (kcal/mol) of the SKEMPI v2.0 training data; used to impute
# predictions a method fails to produce
IMPUTED_DDG = 0.69


class MutationError(ValueError):
    pass


class BadAminoAcid(MutationError):
    pass


class BadPosition(MutationError):
    pass


class DuplicateSite(MutationError):
    pass


class IdentityMutation(MutationError):
    pass


DuplicateIdentity = IdentityMutation


class ZeroProbability(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class Substitution:
    wt: str
    chain: str
    position: int
    insertion_code: str
    mut: str

    @property
    def site(self) -> tuple[str, int, str]:
        return (self.chain, self.position, self.insertion_code)

    def __str__(self) -> str:
        return f"{self.wt}{self.chain}{self.position}{self.insertion_code}{self.mut}"


@dataclass(frozen=True)
class MutationRecord:
    complex_id: str
    substitutions: tuple[Substitution, ...]
    label: float | None = None

    def __post_init__(self):
        if not self.substitutions:
            raise MutationError("a mutation needs at least one substitution")

    @property
    def mutation_string(self) -> str:
        return ",".join(map(str, self.substitutions))


_SUB_RE = re.compile(r"^(?P<wt>\S)(?P<chain>[A-Za-z0-9])(?P<pos>.*?)(?P<mut>\S)$")
_POS_RE = re.compile(r"^(-?\d+)([A-Za-z]?)$")


def parse_mutation(text: str) -> tuple[Substitution, ...]:
    """Parse SKEMPI-style notation such as ``"TH31W"`` or ``"KC74Q,KC130E"``.

    Each substitution is wild-type letter, chain id, residue number with an
    optional insertion code, mutant letter.
    """
    if not text or not text.strip():
        raise MutationError("empty mutation string")
    subs = []
    seen = set()
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        m = _SUB_RE.match(part)
        if m is None or len(part) < 4:
            raise BadPosition(f"cannot parse substitution {part!r}")
        wt, mut = m["wt"].upper(), m["mut"].upper()
        for letter in (wt, mut):
            if letter not in ONE_LETTER:
                raise BadAminoAcid(f"{part!r}: {letter!r} is not a standard amino acid")
        pos = _POS_RE.match(m["pos"])
        if pos is None:
            raise BadPosition(f"{part!r}: bad residue number {m['pos']!r}")
        if wt == mut:
            raise IdentityMutation(f"{part!r}: wild type equals mutant")
        sub = Substitution(wt, m["chain"], int(pos[1]), pos[2].upper(), mut)
        if sub.site in seen:
            raise DuplicateSite(f"site {sub.chain}{sub.position}{sub.insertion_code} mutated twice")
        seen.add(sub.site)
        subs.append(sub)
    return tuple(subs)


def _classes(values) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, str):
            i = aa_index(v)
            if i is None:
                raise BadAminoAcid(v)
            out.append(i)
        else:
            out.append(int(v))
    arr = np.asarray(out, dtype=np.int64)
    if np.any((arr < 0) | (arr >= N_CLASSES)):
        raise IndexOutOfRange("amino-acid class outside the alphabet")
    return arr


def _sites(mask, n: int) -> np.ndarray:
    m = np.asarray(list(mask), dtype=np.int64)
    if m.size and (m.min() < 0 or m.max() >= n):
        raise IndexOutOfRange(f"mask index outside [0, {n})")
    return m


def mask_features(features, mask: Iterable[int]) -> np.ndarray:
    """Copy of ``features`` with the rows in ``mask`` set to zero."""
    f = np.array(features, dtype=np.float64, copy=True)
    f[_sites(mask, len(f))] = 0.0
    return f


def check_probability_matrix(P, atol: float = 1e-6) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != N_CLASSES or P.shape[0] < 1:
        raise ValueError(f"probability matrix must be (N, {N_CLASSES}), got {P.shape}")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=atol):
        raise ValueError("rows must be non-negative and sum to 1")
    return P


def _log_at(P: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    p = P[rows, cols]
    if np.any(p <= 0):
        k = int(np.flatnonzero(p <= 0)[0])
        raise ZeroProbability(f"zero probability at row {rows[k]}, class {ALPHABET[cols[k]]}")
    return np.log(p)


def masked_ce_loss(P, native, mask: Iterable[int], epsilon: float = 0.0,
                   weights=None) -> float:
    """Class-weighted, label-smoothed cross-entropy over masked positions.

    For each masked residue i with native class c::

        -w_c * [(1 - eps) * log P[i, c] + eps * sum_{j != c} log P[i, j] / 20]

    summed over the mask. ``native`` holds the class of every residue.
    """
    P = check_probability_matrix(P)
    c = _classes(native)
    if len(c) != len(P):
        raise ValueError("native classes and probability rows differ in length")
    sites = np.sort(_sites(mask, len(P)))
    w = np.ones(N_CLASSES) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (N_CLASSES,):
        raise ValueError(f"weights must have {N_CLASSES} entries")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    if sites.size == 0:
        return 0.0

    native_c = c[sites]
    total = (1.0 - epsilon) * _log_at(P, sites, native_c)
    if epsilon > 0:
        rows = np.repeat(sites, N_CLASSES)
        cols = np.tile(np.arange(N_CLASSES), len(sites))
        logs = _log_at(P, rows, cols).reshape(len(sites), N_CLASSES)
        others = logs.sum(axis=1) - logs[np.arange(len(sites)), native_c]
        total = total + epsilon * others / N_CLASSES
    return float(-np.sum(w[native_c] * total))


def class_weights(counts, smoothing: float = 1.0) -> np.ndarray:
    """Inverse-frequency class weights ``1 / (count + smoothing)`` scaled to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (N_CLASSES,) or np.any(counts < 0):
        raise ValueError(f"expected {N_CLASSES} non-negative counts")
    if counts.sum() <= 0:
        raise ValueError("total count must be positive")
    raw = 1.0 / (counts + smoothing)
    return raw / raw.mean()


def log_odds_ddg(P, wt, mut, mask: Sequence[int]) -> float:
    """Log-odds estimate of the binding energy change.

    ``wt`` and ``mut`` give the wild-type and mutant class at each position of
    ``mask`` (aligned with it). Returns
    ``sum log P[i, wt_i] - sum log P[i, mut_i]``; negative values mean the
    mutant is predicted to bind more strongly. Sites are summed in index
    order, so swapping ``wt`` and ``mut`` negates the result exactly.
    """
    P = check_probability_matrix(P)
    sites = _sites(mask, len(P))
    w, m = _classes(wt), _classes(mut)
    if not (len(sites) == len(w) == len(m)):
        raise ValueError("mask, wt and mut must have equal length")
    if len(sites) == 0:
        raise ValueError("empty mutation")
    if len(set(sites.tolist())) != len(sites):
        raise DuplicateSite("repeated site in mask")
    if np.any(w == m):
        raise IdentityMutation("wild type equals mutant at a mutated site")
    order = np.argsort(sites, kind="stable")
    sites, w, m = sites[order], w[order], m[order]
    log_wt = float(np.sum(_log_at(P, sites, w)))
    log_mut = float(np.sum(_log_at(P, sites, m)))
    return log_wt - log_mut


# --------------------------------------------------------------------------
# io

def read_mutations_csv(fh: IO[str]) -> list[MutationRecord]:
    """Rows of ``complex_id, mutation_string[, ddg_label]``."""
    out = []
    reader = csv.DictReader(fh)
    for lineno, row in enumerate(reader, start=2):
        try:
            subs = parse_mutation(row["mutation_string"])
        except MutationError as exc:
            raise MutationError(f"line {lineno}: {exc}") from None
        raw = (row.get("ddg_label") or "").strip()
        out.append(MutationRecord(row["complex_id"], subs, float(raw) if raw else None))
    return out


PMAT_MAGIC = b"PMAT"


def write_pmat(P, fh: BinaryIO | str | Path) -> None:
    """Binary layout: b"PMAT", u32 N, then N x 20 float64, little-endian."""
    if isinstance(fh, (str, Path)):
        with open(fh, "wb") as f:
            return write_pmat(P, f)
    P = check_probability_matrix(P)
    fh.write(PMAT_MAGIC + struct.pack("<I", len(P)))
    fh.write(np.ascontiguousarray(P, dtype="<f8").tobytes())


def read_pmat(fh: BinaryIO | str | Path) -> np.ndarray:
    if isinstance(fh, (str, Path)):
        with open(fh, "rb") as f:
            return read_pmat(f)
    head = fh.read(8)
    if len(head) != 8 or head[:4] != PMAT_MAGIC:
        raise ValueError("not a PMAT file")
    (n,) = struct.unpack("<I", head[4:])
    buf = fh.read(8 * N_CLASSES * n)
    if len(buf) != 8 * N_CLASSES * n:
        raise ValueError("truncated PMAT file")
    return check_probability_matrix(np.frombuffer(buf, dtype="<f8").reshape(n, N_CLASSES).copy())


def write_pmat_csv(P, fh: IO[str], sites: Sequence[tuple[str, str]] | None = None) -> None:
    """CSV with columns ``chain, position`` then one column per alphabet code."""
    P = check_probability_matrix(P)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["chain", "position", *ALPHABET])
    for k, row in enumerate(P):
        chain, pos = sites[k] if sites is not None else ("", str(k))
        w.writerow([chain, pos, *(repr(float(v)) for v in row)])


def read_pmat_csv(fh: IO[str]) -> tuple[np.ndarray, list[tuple[str, str]]]:
    reader = csv.DictReader(fh)
    missing = [a for a in ALPHABET if a not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"PMAT csv lacks columns {missing}")
    rows, sites = [], []
    for row in reader:
        rows.append([float(row[a]) for a in ALPHABET])
        sites.append(((row.get("chain") or "").strip(), (row.get("position") or "").strip()))
    return check_probability_matrix(np.array(rows)), sites
