"""Near-duplicate graphs, deduplication and split leakage auditing."""

from __future__ import annotations

import csv
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .idist import IDistConfig, InterfaceEmbedding, pairwise_distances

__all__ = [
    "NearDuplicateGraph",
    "ComponentStats",
    "LeakageReport",
    "UnassignedNode",
    "InfeasibleFractions",
    "build_graph",
    "connected_components",
    "greedy_dedup",
    "audit_split",
    "component_safe_split",
    "write_edges",
    "read_edges",
    "write_split",
    "read_split",
]

log = logging.getLogger(__name__)


class UnassignedNode(KeyError):
    pass


class InfeasibleFractions(UserWarning):
    pass


@dataclass
class NearDuplicateGraph:
    nodes: list[str]
    edges: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids")
        self.adjacency: dict[str, set[str]] = {n: set() for n in self.nodes}
        edges, self.edges = self.edges, {}
        for (a, b), d in edges.items():
            self.add_edge(a, b, d)

    def add_edge(self, a: str, b: str, distance: float = 0.0) -> None:
        if a == b:
            raise ValueError(f"self-loop on {a}")
        if a not in self.adjacency or b not in self.adjacency:
            raise KeyError(f"edge ({a}, {b}) references an unknown node")
        key = (a, b) if a < b else (b, a)
        self.edges[key] = distance
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)

    def neighbors(self, node: str) -> set[str]:
        return self.adjacency[node]

    def degree(self, node: str) -> int:
        return len(self.adjacency[node])

    def distance(self, a: str, b: str) -> float:
        return self.edges[(a, b) if a < b else (b, a)]

    def __len__(self) -> int:
        return len(self.nodes)


def build_graph(embeddings: Sequence[InterfaceEmbedding], config: IDistConfig = IDistConfig(),
                mode: str = "auto", workers: int = 1) -> NearDuplicateGraph:
    """Connect every pair of interfaces closer than ``config.threshold``."""
    ids = [e.id for e in embeddings]
    graph = NearDuplicateGraph(ids)
    for i, j, d in pairwise_distances(embeddings, config.threshold, mode=mode, workers=workers):
        graph.add_edge(ids[i], ids[j], d)
    return graph


@dataclass
class ComponentStats:
    components: list[list[str]]

    @property
    def count(self) -> int:
        return len(self.components)

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.components]

    @property
    def largest_fraction(self) -> float:
        total = sum(self.sizes)
        return max(self.sizes) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "largest": max(self.sizes, default=0),
            "largest_fraction": self.largest_fraction,
            "singletons": sum(1 for s in self.sizes if s == 1),
        }


def connected_components(graph: NearDuplicateGraph) -> ComponentStats:
    """Components by breadth-first search; each sorted, listed by smallest member."""
    seen: set[str] = set()
    comps = []
    for start in sorted(graph.nodes):
        if start in seen:
            continue
        seen.add(start)
        comp = [start]
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in graph.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return ComponentStats(comps)


def _node_order(graph: NearDuplicateGraph, order) -> list[str]:
    if order is None or order == "lexicographic":
        return sorted(graph.nodes)
    if order == "max_degree":
        return sorted(graph.nodes, key=lambda n: (-graph.degree(n), n))
    order = list(order)
    if sorted(order) != sorted(graph.nodes):
        raise ValueError("order must be a permutation of the graph nodes")
    return order


def greedy_dedup(graph: NearDuplicateGraph, order=None) -> list[str]:
    """Greedy maximal independent set.

    Nodes are visited in ``order`` (``"lexicographic"`` by default,
    ``"max_degree"``, or an explicit sequence); a visited node that has not
    been removed is kept and its neighbours are removed. Returns the kept ids
    in visiting order.
    """
    removed: set[str] = set()
    kept = []
    for node in _node_order(graph, order):
        if node in removed:
            continue
        kept.append(node)
        removed.update(graph.adjacency[node])
    return kept


@dataclass
class LeakageReport:
    ratios: dict[str, float]
    counts: dict[str, tuple[int, int]]  # fold -> (leaking, total)
    witnesses: list[tuple[str, str, float]]

    @property
    def ratio(self) -> float | None:
        leak = sum(c[0] for c in self.counts.values())
        total = sum(c[1] for c in self.counts.values())
        return leak / total if total else None

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "folds": {
                f: {"ratio": self.ratios.get(f), "leaking": c[0], "total": c[1]}
                for f, c in self.counts.items()
            },
            "witnesses": [
                {"test": t, "reference": r, "distance": d} for t, r, d in self.witnesses
            ],
        }


def audit_split(graph: NearDuplicateGraph, split: Mapping[str, str],
                test_folds: Iterable[str] | None = None) -> LeakageReport:
    """Fraction of test items with a near duplicate outside the test folds.

    With ``test_folds=None`` a fold named ``"test"`` is the test fold if present;
    otherwise every fold is audited in turn against all others
    (cross-validation). Items of other test folds never count as leaks.
    """
    for node in graph.nodes:
        if node not in split:
            raise UnassignedNode(node)
    extra = set(split) - set(graph.adjacency)
    if extra:
        log.warning("%d split ids are not graph nodes and are ignored", len(extra))

    folds = sorted({split[n] for n in graph.nodes})
    if test_folds is None:
        test_folds = ["test"] if "test" in folds else folds
        rotate = "test" not in folds
    else:
        test_folds = list(test_folds)
        rotate = False
    test_set = set(test_folds)

    ratios, counts, witnesses = {}, {}, []
    for fold in test_folds:
        members = sorted(n for n in graph.nodes if split[n] == fold)
        leaking = 0
        for node in members:
            bad = sorted(
                v for v in graph.adjacency[node]
                if (split[v] != fold if rotate else split[v] not in test_set)
            )
            if bad:
                leaking += 1
                witnesses.extend((node, v, graph.distance(node, v)) for v in bad)
        counts[fold] = (leaking, len(members))
        if members:
            ratios[fold] = leaking / len(members)
    return LeakageReport(ratios, counts, witnesses)


def component_safe_split(graph: NearDuplicateGraph, fold_fractions: Mapping[str, float],
                         labels: Mapping[str, float] | None = None) -> dict[str, str]:
    """Assign whole connected components to folds so no edge crosses folds.

    Components go, largest first, to the fold furthest below its target size.
    With ``labels`` (e.g. ddG values) components are instead visited in order
    of their mean label so every fold receives a similar label spread.
    """
    names = list(fold_fractions)
    fracs = np.array([fold_fractions[f] for f in names], dtype=np.float64)
    if np.any(fracs < 0) or not np.isclose(fracs.sum(), 1.0, atol=1e-9):
        raise ValueError("fold fractions must be non-negative and sum to 1")

    comps = connected_components(graph).components
    if labels is None:
        comps.sort(key=lambda c: (-len(c), c[0]))
    else:
        def mean_label(c):
            vals = [labels[n] for n in c if n in labels]
            return float(np.mean(vals)) if vals else 0.0
        comps.sort(key=lambda c: (mean_label(c), -len(c), c[0]))

    n = len(graph.nodes)
    target = fracs * n
    filled = np.zeros(len(names))
    split: dict[str, str] = {}
    for comp in comps:
        deficit = target - filled
        if labels is not None:
            deficit = np.where(target > 0, deficit / np.where(target > 0, target, 1), -np.inf)
        k = int(np.argmax(deficit))
        filled[k] += len(comp)
        for node in comp:
            split[node] = names[k]

    for k, f in enumerate(names):
        if fracs[k] > 0 and filled[k] == 0:
            warnings.warn(f"fold {f!r} received no items", InfeasibleFractions, stacklevel=2)
    return split


# --------------------------------------------------------------------------
# CSV io

def write_edges(graph: NearDuplicateGraph, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id_a", "id_b", "distance"])
    for (a, b), d in sorted(graph.edges.items()):
        w.writerow([a, b, repr(float(d))])


def read_edges(fh: IO[str], nodes: Iterable[str] | None = None) -> NearDuplicateGraph:
    rows = list(csv.DictReader(fh))
    ids = list(nodes) if nodes is not None else sorted(
        {r["id_a"] for r in rows} | {r["id_b"] for r in rows})
    graph = NearDuplicateGraph(ids)
    for r in rows:
        graph.add_edge(r["id_a"], r["id_b"], float(r["distance"]))
    return graph


def write_split(split: Mapping[str, str], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "fold"])
    for k in sorted(split):
        w.writerow([k, split[k]])


def read_split(fh: IO[str]) -> dict[str, str]:
    out = {}
    for row in csv.DictReader(fh):
        if row["id"] in out:
            raise ValueError(f"id {row['id']} assigned twice")
        out[row["id"]] = row["fold"]
    return out
