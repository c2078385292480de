"""Protein-protein interface mining, near-duplicate removal, split auditing
and ddG evaluation."""

__version__ = "0.1.0"

from .structure import Structure, parse_structure, read_structure  # noqa: E402
from .interface import Interface, extract_interfaces  # noqa: E402
from .idist import IDistConfig, InterfaceEmbedding, idist, idist_embed  # noqa: E402
from .dedup import audit_split, build_graph, component_safe_split, greedy_dedup  # noqa: E402

__all__ = [
    "Structure",
    "parse_structure",
    "read_structure",
    "Interface",
    "extract_interfaces",
    "IDistConfig",
    "InterfaceEmbedding",
    "idist",
    "idist_embed",
    "build_graph",
    "greedy_dedup",
    "audit_split",
    "component_safe_split",
]
