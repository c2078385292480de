"""Command-line pipeline: extract -> filter -> embed -> dedup -> audit -> evaluate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .ddg import (IMPUTED_DDG, MutationError, N_CLASSES, log_odds_ddg, read_mutations_csv,
                  read_pmat, read_pmat_csv)
from .dedup import (audit_split, build_graph, component_safe_split, connected_components,
                    greedy_dedup, read_split, write_edges, write_split)
from .filter import FilterCriteria, filter_interfaces
from .idist import PRESETS, IDistConfig, idist, idist_embed, read_embeddings, write_embeddings
from .interface import (extract_interfaces, interface_record, interface_to_pdb, read_manifest,
                        write_manifest)
from .metrics import PredictionSet, evaluate, format_table, precision_at
from .structure import StructureError, aa_index, read_structure

log = logging.getLogger("ppidedup")

STRUCTURE_SUFFIXES = (".pdb", ".ent", ".cif", ".mmcif", ".pdb.gz", ".ent.gz", ".cif.gz", ".mmcif.gz")


class CLIError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration

@dataclass
class PipelineConfig:
    cutoff: float = 10.0
    alpha: float = 16.0
    tau: float = 0.03
    workers: int = 1
    methods: list[str] | None = field(default_factory=lambda: ["x-ray diffraction", "electron microscopy"])
    max_resolution: float | None = 3.5
    min_bsa: float = 500.0

    @property
    def idist(self) -> IDistConfig:
        return IDistConfig(alpha=self.alpha, threshold=self.tau)

    @property
    def criteria(self) -> FilterCriteria:
        return FilterCriteria(
            allowed_methods=None if self.methods is None else frozenset(self.methods),
            max_resolution=self.max_resolution,
            min_bsa=self.min_bsa,
        )


def _load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults < config file < --preset < explicit flags.

    A cutoff without a threshold picks the calibrated threshold of the
    matching preset; an uncalibrated cutoff requires an explicit --tau.
    """
    values: dict = {}
    if getattr(args, "config", None):
        values.update(_load_toml(args.config))
    preset = getattr(args, "preset", None) or values.pop("preset", None)
    if preset:
        values.setdefault("cutoff", PRESETS[preset]["cutoff"])
        values.setdefault("tau", PRESETS[preset]["threshold"])
        if getattr(args, "preset", None):
            values["cutoff"] = PRESETS[preset]["cutoff"]
            values["tau"] = PRESETS[preset]["threshold"]
    for key in ("cutoff", "alpha", "tau", "workers", "max_resolution", "min_bsa"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "methods", None):
        values["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "permissive", False):
        values.update(methods=None, max_resolution=None, min_bsa=0.0)

    unknown = set(values) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise CLIError(f"unknown configuration keys: {sorted(unknown)}")
    if "cutoff" in values and "tau" not in values:
        match = [p for p in PRESETS.values() if p["cutoff"] == values["cutoff"]]
        if not match:
            raise CLIError(f"no calibrated threshold for cutoff {values['cutoff']}; pass --tau")
        values["tau"] = match[0]["threshold"]
    cfg = PipelineConfig(**values)
    if cfg.cutoff <= 0 or cfg.tau <= 0 or cfg.alpha <= 0 or cfg.workers < 1:
        raise CLIError("cutoff, tau, alpha must be positive and workers at least 1")
    return cfg


# --------------------------------------------------------------------------
# helpers

def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map, in-process for one worker."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _structure_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise CLIError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.name.lower().endswith(STRUCTURE_SUFFIXES))


def _open_out(path: str | None, binary: bool = False):
    if path is None or path == "-":
        return sys.stdout.buffer if binary else sys.stdout
    return open(path, "wb" if binary else "w", newline="" if not binary else None)


def _close(fh) -> None:
    if fh not in (sys.stdout, sys.stdout.buffer):
        fh.close()


def _write_json(obj, path: str | None) -> None:
    fh = _open_out(path)
    json.dump(obj, fh, indent=2, sort_keys=False)
    fh.write("\n")
    _close(fh)


def _manifest_paths(manifest: str) -> tuple[list[dict], Path]:
    with open(manifest) as fh:
        records = read_manifest(fh)
    return records, Path(manifest).resolve().parent


def _group_by_path(records: list[dict], base: Path) -> list[tuple[str, float, list[str]]]:
    groups: dict[tuple[str, float], list[str]] = {}
    for rec in records:
        if "path" not in rec:
            raise CLIError(f"manifest record {rec.get('id')} has no path")
        key = (str(base / rec["path"]), float(rec["cutoff"]))
        groups.setdefault(key, []).append(rec["id"])
    return [(p, c, ids) for (p, c), ids in groups.items()]


def _load_interfaces(path: str, cutoff: float, ids: Iterable[str]):
    if not os.path.exists(path):
        raise CLIError(f"{path}: structure file not found")
    structure = read_structure(path)
    by_id = {f.id: f for f in extract_interfaces(structure, cutoff)}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise CLIError(f"{path}: interfaces {missing} not reproduced at cutoff {cutoff}")
    return structure, [by_id[i] for i in ids]


# --------------------------------------------------------------------------
# workers (module level so they pickle)

def _extract_one(job):
    path, cutoff, trimmed_dir, rel_to = job
    try:
        structure = read_structure(path)
    except (OSError, StructureError) as exc:
        return None, f"{path}: {exc}"
    out = []
    for iface in extract_interfaces(structure, cutoff):
        rel = os.path.relpath(path, rel_to)
        out.append(interface_record(iface, path=rel))
        if trimmed_dir:
            Path(trimmed_dir, f"{iface.id}.pdb").write_text(interface_to_pdb(iface))
    return out, None


def _filter_one(job):
    path, cutoff, ids, criteria = job
    structure, ifaces = _load_interfaces(path, cutoff, ids)
    return filter_interfaces(ifaces, {structure.entry_id: structure}, criteria)[1].records


def _embed_one(job):
    path, cutoff, ids, config = job
    _, ifaces = _load_interfaces(path, cutoff, ids)
    return [idist_embed(f, config) for f in ifaces]


# --------------------------------------------------------------------------
# commands

def cmd_extract(args, cfg: PipelineConfig) -> int:
    files = _structure_files(Path(args.dir))
    out_dir = Path(args.out).resolve().parent if args.out not in (None, "-") else Path.cwd()
    if args.trimmed_dir:
        Path(args.trimmed_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(str(f), cfg.cutoff, args.trimmed_dir, str(out_dir)) for f in files]
    results = _pmap(_extract_one, jobs, cfg.workers)
    records, failed = [], 0
    for recs, err in results:
        if err:
            print(f"error: {err}", file=sys.stderr)
            failed += 1
        else:
            records.extend(recs)
    records.sort(key=lambda r: r["id"])
    ids = [r["id"] for r in records]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        print(f"error: duplicate interface ids {dup[:5]}", file=sys.stderr)
        failed += 1
    fh = _open_out(args.out)
    write_manifest(records, fh)
    _close(fh)
    log.info("%d files, %d interfaces", len(files), len(records))
    return 1 if failed else 0


def cmd_filter(args, cfg: PipelineConfig) -> int:
    records, base = _manifest_paths(args.manifest)
    groups = _group_by_path(records, base)
    results = _pmap(_filter_one, [(p, c, ids, cfg.criteria) for p, c, ids in groups], cfg.workers)
    by_id = {r["id"]: r for recs in results for r in recs}

    retained = []
    passed = {"method": 0, "resolution": 0, "bsa": 0}
    rows = []
    for rec in records:
        r = by_id[rec["id"]]
        rows.append(r)
        for k in passed:
            passed[k] += k not in r["reasons"]
        if r["passed"]:
            retained.append({**rec, "method": r["method"], "resolution": r["resolution"], "bsa": r["bsa"]})
    fh = _open_out(args.out)
    write_manifest(retained, fh)
    _close(fh)
    n = len(records)
    report = {
        "total": n,
        "retained": len(retained),
        "passed": passed,
        "fraction_passed": {k: (v / n if n else None) for k, v in passed.items()},
        "criteria": {
            "methods": None if cfg.methods is None else sorted(cfg.criteria.allowed_methods),
            "max_resolution": cfg.max_resolution,
            "min_bsa": cfg.min_bsa,
        },
        "interfaces": rows,
    }
    if args.report:
        _write_json(report, args.report)
    return 0


def cmd_embed(args, cfg: PipelineConfig) -> int:
    records, base = _manifest_paths(args.manifest)
    groups = _group_by_path(records, base)
    results = _pmap(_embed_one, [(p, c, ids, cfg.idist) for p, c, ids in groups], cfg.workers)
    by_id = {e.id: e for embs in results for e in embs}
    embs = [by_id[r["id"]] for r in records]
    fh = _open_out(args.out, binary=True)
    write_embeddings(embs, fh)
    _close(fh)
    return 0


def _single_interface(path: str, chains: str | None, cutoff: float):
    structure = read_structure(path)
    ifaces = extract_interfaces(structure, cutoff)
    if chains:
        want = sorted(c.strip() for c in chains.split(","))
        ifaces = [f for f in ifaces if list(f.chains) == want]
    if len(ifaces) != 1:
        ids = ", ".join(f.id for f in ifaces) or "none"
        raise CLIError(f"{path}: expected exactly one interface, found {ids}; use --chains-a/--chains-b")
    return ifaces[0]


def cmd_compare(args, cfg: PipelineConfig) -> int:
    a = idist_embed(_single_interface(args.a, args.chains_a, cfg.cutoff), cfg.idist)
    b = idist_embed(_single_interface(args.b, args.chains_b, cfg.cutoff), cfg.idist)
    d = idist(a, b)
    print(repr(d))
    log.info("near duplicate (tau=%g): %s", cfg.tau, d < cfg.tau)
    return 0


def _graph(args, cfg):
    embs = read_embeddings(args.embeddings)
    return embs, build_graph(embs, cfg.idist, workers=cfg.workers)


def cmd_dedup(args, cfg: PipelineConfig) -> int:
    embs, graph = _graph(args, cfg)
    kept = greedy_dedup(graph, args.order)
    fh = _open_out(args.out)
    for k in kept:
        fh.write(k + "\n")
    _close(fh)
    if args.edges:
        with open(args.edges, "w", newline="") as efh:
            write_edges(graph, efh)
    if args.summary:
        comps = connected_components(graph)
        _write_json({
            "nodes": len(graph),
            "edges": len(graph.edges),
            "tau": cfg.tau,
            "components": comps.to_dict(),
            "retained": len(kept),
            "retained_fraction": len(kept) / len(graph) if len(graph) else None,
        }, args.summary)
    return 0


def cmd_audit(args, cfg: PipelineConfig) -> int:
    _, graph = _graph(args, cfg)
    with open(args.split) as fh:
        split = read_split(fh)
    tests = [t.strip() for t in args.test_folds.split(",")] if args.test_folds else None
    report = audit_split(graph, split, tests)
    _write_json(report.to_dict(), args.out)
    if args.out not in (None, "-"):
        print(repr(report.ratio))
    return 0


def _parse_fractions(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        name, _, val = part.partition("=")
        if not val:
            raise CLIError(f"bad fraction {part!r}; expected name=value")
        out[name.strip()] = float(val)
    return out


def cmd_safe_split(args, cfg: PipelineConfig) -> int:
    _, graph = _graph(args, cfg)
    labels = None
    if args.labels:
        with open(args.labels) as fh:
            labels = {r["id"]: float(r["label"]) for r in csv.DictReader(fh)}
    split = component_safe_split(graph, _parse_fractions(args.fractions), labels)
    fh = _open_out(args.out)
    write_split(split, fh)
    _close(fh)
    return 0


def _read_label_csv(path: str) -> dict[tuple[str, str], dict]:
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            mut = row.get("mutation") or row.get("mutation_string")
            out[(row["complex_id"], mut)] = row
    return out


def cmd_eval_ddg(args, cfg: PipelineConfig) -> int:
    impute = IMPUTED_DDG if args.impute else None
    rows = []
    with open(args.pred) as fh:
        preds = list(csv.DictReader(fh))
    if args.labels:
        labels = _read_label_csv(args.labels)
        pred_by_key = {(r["complex_id"], r.get("mutation") or r.get("mutation_string")): r for r in preds}
        for key, lab in labels.items():
            p = pred_by_key.get(key, {}).get("pred_ddg", "")
            true = lab.get("true_ddg") or lab.get("ddg_label")
            rows.append((key[0], key[1], p, true, lab.get("favorable")))
    else:
        for r in preds:
            rows.append((r["complex_id"], r.get("mutation", ""), r.get("pred_ddg", ""),
                         r.get("true_ddg") or r.get("ddg_label"), r.get("favorable")))

    ps = PredictionSet()
    retrieval_in: dict[str, tuple[list, list]] = {}
    for cid, mut, p, t, fav in rows:
        p = (p or "").strip()
        if not p:
            if impute is None:
                raise CLIError(f"missing prediction for {cid} {mut}; use --impute")
            p = str(impute)
        if t is None or not str(t).strip():
            raise CLIError(f"missing label for {cid} {mut}")
        ps.add(cid, float(p), float(t))
        favorable = float(t) < 0 if fav in (None, "") else fav.strip().lower() in ("1", "true", "yes")
        lst = retrieval_in.setdefault(cid, ([], []))
        lst[0].append(float(p))
        lst[1].append(favorable)

    report = evaluate(ps)
    ks = [float(k) for k in args.k.split(",")] if args.k else [5, 10]
    retrieval = {cid: precision_at(p, f, ks) for cid, (p, f) in sorted(retrieval_in.items())}
    out = report.to_dict()
    out["retrieval"] = retrieval
    if args.out:
        _write_json(out, args.out)
    sys.stdout.write(format_table({args.name: report}))
    for cid, vals in retrieval.items():
        sys.stdout.write(f"{cid}  " + "  ".join(f"{k}={v:.1%}" for k, v in vals.items()) + "\n")
    return 0


def _row_sites_from_structure(path: str) -> list[tuple[str, str]]:
    s = read_structure(path)
    return [(r.chain_id, r.label) for r in s.residues()]


def cmd_score_ddg(args, cfg: PipelineConfig) -> int:
    if args.pmat.lower().endswith(".csv"):
        with open(args.pmat) as fh:
            P, sites = read_pmat_csv(fh)
        if args.structure:
            sites = _row_sites_from_structure(args.structure)
    else:
        P = read_pmat(args.pmat)
        if not args.structure:
            raise CLIError("binary PMAT rows need --structure to name residues")
        sites = _row_sites_from_structure(args.structure)
    if len(sites) != len(P):
        raise CLIError(f"{len(P)} probability rows but {len(sites)} residues")
    row_of = {s: k for k, s in enumerate(sites)}
    if len(row_of) != len(sites):
        raise CLIError("residue labels in the probability matrix are not unique")

    with open(args.mutations) as fh:
        try:
            muts = read_mutations_csv(fh)
        except MutationError as exc:
            raise CLIError(str(exc)) from None
    fh = _open_out(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["complex_id", "mutation", "pred_ddg", "true_ddg"])
    for rec in muts:
        rows, wt, mt = [], [], []
        for sub in rec.substitutions:
            key = (sub.chain, f"{sub.position}{sub.insertion_code}")
            if key not in row_of:
                raise CLIError(f"{rec.complex_id} {sub}: residue not in probability matrix")
            rows.append(row_of[key])
            wt.append(aa_index(sub.wt))
            mt.append(aa_index(sub.mut))
        pred = log_odds_ddg(P, wt, mt, rows)
        w.writerow([rec.complex_id, rec.mutation_string, repr(pred),
                    "" if rec.label is None else repr(rec.label)])
    _close(fh)
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of key = value settings")
    common.add_argument("--preset", choices=sorted(PRESETS),
                        help="cutoff/threshold pair: dips6 (6 A, 0.04) or ppiref10 (10 A, 0.03)")
    common.add_argument("--cutoff", type=float, help="heavy-atom interface cutoff in A")
    common.add_argument("--tau", type=float, help="near-duplicate iDist threshold")
    common.add_argument("--alpha", type=float, help="RBF bandwidth (A^2)")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ppidedup", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="mine interfaces from a directory")
    p.add_argument("dir")
    p.add_argument("--out", help="JSON Lines manifest (default stdout)")
    p.add_argument("--trimmed-dir", help="also write each interface as a PDB file here")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("filter", parents=[common], help="apply method/resolution/BSA criteria")
    p.add_argument("manifest")
    p.add_argument("--out", help="retained manifest (default stdout)")
    p.add_argument("--report", help="FilterReport JSON")
    p.add_argument("--methods", help="comma-separated allowed methods")
    p.add_argument("--max-resolution", type=float)
    p.add_argument("--min-bsa", type=float)
    p.add_argument("--permissive", action="store_true", help="disable all criteria")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("embed", parents=[common], help="iDist embeddings for a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="IDST embedding file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("compare", parents=[common], help="iDist between two structures")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--chains-a")
    p.add_argument("--chains-b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dedup", parents=[common], help="greedy near-duplicate removal")
    p.add_argument("embeddings")
    p.add_argument("--out", help="retained ids, one per line (default stdout)")
    p.add_argument("--order", choices=["lexicographic", "max_degree"], default="lexicographic")
    p.add_argument("--edges", help="write the near-duplicate graph as CSV")
    p.add_argument("--summary", help="component statistics JSON")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("audit-split", parents=[common], help="structural leakage of a split")
    p.add_argument("embeddings")
    p.add_argument("split", help="CSV with columns id,fold")
    p.add_argument("--test-folds", help="comma-separated test fold names")
    p.add_argument("--out", help="LeakageReport JSON (default stdout)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("safe-split", parents=[common], help="component-respecting split")
    p.add_argument("embeddings")
    p.add_argument("--fractions", default="train=0.8,val=0.1,test=0.1")
    p.add_argument("--labels", help="CSV id,label for label-stratified assignment")
    p.add_argument("--out", help="split CSV (default stdout)")
    p.set_defaults(func=cmd_safe_split)

    p = sub.add_parser("eval-ddg", parents=[common], help="per-PPI ddG metrics")
    p.add_argument("pred", help="CSV complex_id,mutation,pred_ddg[,true_ddg]")
    p.add_argument("labels", nargs="?", help="CSV complex_id,mutation,true_ddg[,favorable]")
    p.add_argument("--out", help="MetricReport JSON")
    p.add_argument("--name", default="model", help="row name in the table")
    p.add_argument("--impute", action="store_true",
                   help=f"fill missing predictions with {IMPUTED_DDG}")
    p.add_argument("-k", help="comma-separated P@k%% levels (default 5,10)")
    p.set_defaults(func=cmd_eval_ddg)

    p = sub.add_parser("score-ddg", parents=[common], help="log-odds ddG from probabilities")
    p.add_argument("pmat", help=f"PMAT binary or CSV (N x {N_CLASSES})")
    p.add_argument("mutations", help="CSV complex_id,mutation_string[,ddg_label]")
    p.add_argument("--structure", help="structure whose residues label the matrix rows")
    p.add_argument("--out", help="prediction CSV (default stdout)")
    p.set_defaults(func=cmd_score_ddg)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (CLIError, StructureError, MutationError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
