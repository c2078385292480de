import csv
import json
import shutil

import numpy as np
import pytest

from ppidedup.cli import build_parser, main, resolve_config, CLIError
from ppidedup.ddg import write_pmat, write_pmat_csv
from ppidedup.idist import idist, read_embeddings
from ppidedup.structure import ALPHABET, ONE_LETTER, read_structure


FIXTURES = ("1hvr", "4E43", "5a7u")


@pytest.fixture
def work(tmp_path, data_dir):
    src = tmp_path / "in"
    src.mkdir()
    for name in FIXTURES:
        shutil.copy(data_dir / f"{name}.pdb", src)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def with_copy(work, data_dir, new_id="9ZZZ"):
    # same coordinates under another entry id
    text = (data_dir / "1hvr.pdb").read_text().replace("1HVR", new_id, 1)
    (work / "in" / f"{new_id.lower()}.pdb").write_text(text)


def pipeline(work, *extra):
    assert run("extract", work / "in", "--out", work / "m.jsonl", *extra) == 0
    assert run("embed", work / "m.jsonl", "--out", work / "e.idst", *extra) == 0
    return work / "e.idst"


# --------------------------------------------------------------------------
# config

def parse(*argv):
    return resolve_config(build_parser().parse_args(["compare", "a", "b", *map(str, argv)]))


def test_default_config():
    cfg = parse()
    assert (cfg.cutoff, cfg.tau, cfg.alpha) == (10.0, 0.03, 16.0)


def test_presets_and_cutoff_pairing():
    assert (parse("--preset", "dips6").cutoff, parse("--preset", "dips6").tau) == (6.0, 0.04)
    assert parse("--cutoff", "6").tau == 0.04
    assert parse("--preset", "dips6", "--tau", "0.05").tau == 0.05
    with pytest.raises(CLIError):
        parse("--cutoff", "8")
    assert parse("--cutoff", "8", "--tau", "0.02").tau == 0.02


def test_config_file_overridden_by_flags(tmp_path):
    conf = tmp_path / "c.toml"
    conf.write_text("cutoff = 6.0\nworkers = 2\nmin_bsa = 700.0\n")
    cfg = parse("--config", conf)
    assert (cfg.cutoff, cfg.tau, cfg.workers, cfg.min_bsa) == (6.0, 0.04, 2, 700.0)
    assert parse("--config", conf, "--workers", "1").workers == 1
    conf.write_text("bogus = 1\n")
    with pytest.raises(CLIError):
        parse("--config", conf)


# --------------------------------------------------------------------------
# extract

def test_extract_golden_manifest(work, data_dir):
    assert run("extract", work / "in", "--out", work / "m.jsonl") == 0
    assert (work / "m.jsonl").read_text() == (data_dir / "golden_manifest.jsonl").read_text()


def test_extract_trimmed_structures(work):
    assert run("extract", work / "in", "--out", work / "m.jsonl", "--trimmed-dir", work / "t") == 0
    assert sorted(p.name for p in (work / "t").iterdir()) == \
        ["1HVR_A_B.pdb", "4E43_A_B.pdb", "4E43_A_C.pdb", "4E43_B_C.pdb"]


def test_extract_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run("extract", tmp_path / "empty", "--out", tmp_path / "m.jsonl") == 0
    assert (tmp_path / "m.jsonl").read_text() == ""


def test_extract_unreadable_file(work, capsys):
    (work / "in" / "broken.pdb").write_text("this is not a structure\n")
    assert run("extract", work / "in", "--out", work / "m.jsonl") != 0
    assert "broken.pdb" in capsys.readouterr().err


def test_extract_missing_dir(tmp_path, capsys):
    assert run("extract", tmp_path / "nope") == 1
    assert "nope" in capsys.readouterr().err


# --------------------------------------------------------------------------
# filter

def manifest_ids(path):
    return [json.loads(line)["id"] for line in path.read_text().splitlines()]


def test_filter_permissive_is_identity(work):
    run("extract", work / "in", "--out", work / "m.jsonl")
    assert run("filter", work / "m.jsonl", "--permissive", "--out", work / "f.jsonl") == 0
    assert manifest_ids(work / "f.jsonl") == manifest_ids(work / "m.jsonl")


def test_filter_strict_bsa_subset(work):
    run("extract", work / "in", "--out", work / "m.jsonl")
    assert run("filter", work / "m.jsonl", "--min-bsa", "900", "--out", work / "f.jsonl",
               "--report", work / "r.json") == 0
    assert manifest_ids(work / "f.jsonl") == ["1HVR_A_B", "4E43_A_B", "4E43_B_C"]
    report = json.loads((work / "r.json").read_text())
    assert report["total"] == 4 and report["retained"] == 3
    assert report["passed"] == {"method": 4, "resolution": 4, "bsa": 3}


def test_filter_missing_structure(work, capsys):
    run("extract", work / "in", "--out", work / "m.jsonl")
    (work / "in" / "4E43.pdb").unlink()
    assert run("filter", work / "m.jsonl", "--out", work / "f.jsonl") == 1
    assert "4E43.pdb" in capsys.readouterr().err


# --------------------------------------------------------------------------
# compare / embed / dedup / audit

def test_compare_identical_files(data_dir, capsys):
    assert run("compare", data_dir / "1hvr.pdb", data_dir / "1hvr.pdb") == 0
    assert capsys.readouterr().out == "0.0\n"


def test_compare_needs_chain_choice(data_dir, capsys):
    assert run("compare", data_dir / "4E43.pdb", data_dir / "1hvr.pdb") == 1
    assert "--chains-a" in capsys.readouterr().err
    assert run("compare", data_dir / "4E43.pdb", data_dir / "1hvr.pdb", "--chains-a", "A,B") == 0
    assert float(capsys.readouterr().out) > 0


def greedy_trace(ids, vectors, tau):
    """Lexicographic greedy pass written out directly from pairwise distances."""
    kept = []
    for i in sorted(ids):
        if all(idist(vectors[i], vectors[k]) >= tau for k in kept):
            kept.append(i)
    return kept


def test_dedup_of_duplicated_entry(work, data_dir):
    with_copy(work, data_dir)
    emb = pipeline(work)
    assert run("dedup", emb, "--out", work / "kept.txt", "--summary", work / "s.json",
               "--edges", work / "edges.csv") == 0
    kept = (work / "kept.txt").read_text().split()
    vectors = {e.id: e.z for e in read_embeddings(emb)}
    assert kept == greedy_trace(vectors, vectors, 0.03)
    assert "1HVR_A_B" in kept and "9ZZZ_A_B" not in kept
    with open(work / "edges.csv") as fh:
        edges = {(r["id_a"], r["id_b"]) for r in csv.DictReader(fh)}
    assert ("1HVR_A_B", "9ZZZ_A_B") in edges
    summary = json.loads((work / "s.json").read_text())
    assert summary["nodes"] == 5 and summary["retained"] == len(kept)


def test_safe_split_audits_clean(work, data_dir, capsys):
    with_copy(work, data_dir)
    emb = pipeline(work)
    assert run("safe-split", emb, "--fractions", "train=0.5,test=0.5", "--out", work / "split.csv") == 0
    assert run("audit-split", emb, work / "split.csv", "--out", work / "a.json") == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "0.0"
    assert json.loads((work / "a.json").read_text())["ratio"] == 0.0


def test_audit_reports_leak(work, data_dir):
    with_copy(work, data_dir)
    emb = pipeline(work)
    ids = [e.id for e in read_embeddings(emb)]
    rows = ["id,fold"] + [f"{i},{'test' if i == '9ZZZ_A_B' else 'train'}" for i in ids]
    (work / "split.csv").write_text("\n".join(rows) + "\n")
    assert run("audit-split", emb, work / "split.csv", "--out", work / "a.json") == 0
    report = json.loads((work / "a.json").read_text())
    assert report["ratio"] == 1.0 and report["witnesses"][0]["test"] == "9ZZZ_A_B"


# --------------------------------------------------------------------------
# ddG commands

def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_eval_pred_equals_labels(tmp_path, rng, capsys):
    rows = []
    for cid in ("1ABC", "2XYZ"):
        for k, v in enumerate(rng.normal(size=6)):
            rows.append((cid, f"m{k}", v, v))
    write_rows(tmp_path / "p.csv", ["complex_id", "mutation", "pred_ddg", "true_ddg"], rows)
    assert run("eval-ddg", tmp_path / "p.csv", "--out", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["metrics"]["spearman"]["groups"] == {"1ABC": 1.0, "2XYZ": 1.0}
    assert rep["aggregate"]["spearman"] == 1.0
    assert "Spearman" in capsys.readouterr().out


def test_eval_joins_labels_and_imputes(tmp_path, capsys):
    write_rows(tmp_path / "p.csv", ["complex_id", "mutation", "pred_ddg"],
               [("A", "x", "-1"), ("A", "y", "2")])
    write_rows(tmp_path / "l.csv", ["complex_id", "mutation", "true_ddg"],
               [("A", "x", "-0.5"), ("A", "y", "1"), ("A", "z", "0.3")])
    assert run("eval-ddg", tmp_path / "p.csv", tmp_path / "l.csv") == 1
    assert "--impute" in capsys.readouterr().err
    assert run("eval-ddg", tmp_path / "p.csv", tmp_path / "l.csv", "--impute",
               "--out", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    # imputed 0.69 for z sits between the other two predictions, as does its label
    assert rep["aggregate"]["spearman"] == 1.0


def test_eighty_mutation_retrieval(tmp_path):
    rng = np.random.default_rng(7)
    scores = rng.permutation(np.linspace(-3, 3, 80))
    labels = rng.normal(size=80)
    order = np.argsort(scores, kind="stable")
    favorable = np.zeros(80, bool)
    favorable[order[[0, 2, 3]]] = True  # three of the four best-ranked
    favorable[order[[10, 40, 79]]] = True
    rows = [("SAK", f"m{i}", repr(float(s)), repr(float(t)), int(f))
            for i, (s, t, f) in enumerate(zip(scores, labels, favorable))]
    write_rows(tmp_path / "p.csv", ["complex_id", "mutation", "pred_ddg", "true_ddg", "favorable"], rows)
    assert run("eval-ddg", tmp_path / "p.csv", "-k", "5,10", "--out", tmp_path / "r.json") == 0
    retrieval = json.loads((tmp_path / "r.json").read_text())["retrieval"]["SAK"]
    assert retrieval == {"P@1": 1.0, "P@5%": 3 / 4, "P@10%": 3 / 8}


def test_score_uniform_pmat_is_zero(tmp_path):
    sites = [("A", str(i)) for i in range(1, 6)] + [("B", "3A")]
    P = np.full((6, 20), 1 / 20)
    with open(tmp_path / "p.csv", "w", newline="") as fh:
        write_pmat_csv(P, fh, sites)
    write_rows(tmp_path / "m.csv", ["complex_id", "mutation_string", "ddg_label"],
               [("X", "KA1Q", "-1.0"), ("X", "GA2W,LB3aF", "0.5"), ("X", "DA5E", "")])
    assert run("score-ddg", tmp_path / "p.csv", tmp_path / "m.csv", "--out", tmp_path / "o.csv") == 0
    with open(tmp_path / "o.csv") as fh:
        out = list(csv.DictReader(fh))
    assert [float(r["pred_ddg"]) for r in out] == [0.0, 0.0, 0.0]
    assert [r["true_ddg"] for r in out] == ["-1.0", "0.5", ""]


def test_score_binary_pmat_with_structure(tmp_path, data_dir, rng):
    residues = list(read_structure(data_dir / "1hvr.pdb").residues())
    P = rng.dirichlet(np.ones(20), size=len(residues))
    write_pmat(P, tmp_path / "p.pmat")
    k = 5
    res = residues[k]
    wt = ONE_LETTER[ALPHABET.index(res.aa)]
    mut = "W" if wt != "W" else "A"
    write_rows(tmp_path / "m.csv", ["complex_id", "mutation_string"],
               [("1HVR", f"{wt}{res.chain_id}{res.label}{mut}")])
    assert run("score-ddg", tmp_path / "p.pmat", tmp_path / "m.csv", "--out", tmp_path / "o.csv") == 1
    assert run("score-ddg", tmp_path / "p.pmat", tmp_path / "m.csv", "--structure", data_dir / "1hvr.pdb",
               "--out", tmp_path / "o.csv") == 0
    with open(tmp_path / "o.csv") as fh:
        (row,) = list(csv.DictReader(fh))
    expected = np.log(P[k, ALPHABET.index(res.aa)]) - np.log(P[k, ONE_LETTER.index(mut)])
    assert float(row["pred_ddg"]) == pytest.approx(expected, abs=1e-12)


def test_score_unknown_residue(tmp_path, capsys):
    with open(tmp_path / "p.csv", "w", newline="") as fh:
        write_pmat_csv(np.full((1, 20), 0.05), fh, [("A", "1")])
    write_rows(tmp_path / "m.csv", ["complex_id", "mutation_string"], [("X", "KA9Q")])
    assert run("score-ddg", tmp_path / "p.csv", tmp_path / "m.csv") == 1
    assert "KA9Q" in capsys.readouterr().err


# --------------------------------------------------------------------------
# determinism

def all_outputs(work, workers):
    out = work / f"w{workers}"
    out.mkdir()
    flags = ("--workers", workers)
    assert run("extract", work / "in", "--out", out / "m.jsonl", *flags) == 0
    assert run("filter", out / "m.jsonl", "--out", out / "f.jsonl", "--report", out / "r.json", *flags) == 0
    assert run("embed", out / "f.jsonl", "--out", out / "e.idst", *flags) == 0
    assert run("dedup", out / "e.idst", "--out", out / "k.txt", "--edges", out / "g.csv",
               "--summary", out / "s.json", *flags) == 0
    assert run("safe-split", out / "e.idst", "--out", out / "split.csv", *flags) == 0
    assert run("audit-split", out / "e.idst", out / "split.csv", "--out", out / "a.json", *flags) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.filterwarnings("ignore::ppidedup.dedup.InfeasibleFractions")
def test_bit_identical_across_runs_and_workers(work, data_dir):
    with_copy(work, data_dir)
    one = all_outputs(work, 1)
    # manifests hold paths relative to their own directory, so directories compare directly
    assert all_outputs(work, 3) == one
    shutil.rmtree(work / "w1")
    assert all_outputs(work, 1) == one
