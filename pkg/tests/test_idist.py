import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppidedup.idist import (PRESETS, DimensionMismatch, EmptyChain, IDistConfig, InterfaceEmbedding,
                            embed_arrays, idist, idist_embed, is_near_duplicate, pairwise_distances,
                            read_embeddings, write_embeddings)
from ppidedup.interface import extract_interfaces
from ppidedup.structure import read_structure

from conftest import random_rotation


def reference_embedding(x, f, p, alpha=16.0):
    """Loop-by-loop transcription of the embedding, no vectorisation."""
    n = len(x)
    h = []
    for i in range(n):
        intra, inter = [], []
        for j in range(n):
            w = math.exp(-sum((x[i][k] - x[j][k]) ** 2 for k in range(3)) / alpha)
            (intra if p[i] == p[j] else inter).append(w * np.asarray(f[j], dtype=float))
        h.append(0.5 * np.asarray(f[i], float) + 0.25 * np.mean(intra, axis=0) - 0.25 * np.mean(inter, axis=0))
    chains = sorted(set(p))
    return np.mean([np.mean([h[i] for i in range(n) if p[i] == c], axis=0) for c in chains], axis=0)


def random_interface(rng, n=None, chains=None):
    n = n or int(rng.integers(2, 40))
    chains = chains or int(rng.integers(2, 5))
    p = np.concatenate([np.arange(chains), rng.integers(0, chains, n - chains)]) if n >= chains \
        else np.arange(n)
    x = rng.normal(0, 6, size=(len(p), 3))
    f = np.eye(20)[rng.integers(0, 20, len(p))]
    return x, f, p


def two_residues(d, aa_a=0, aa_b=0):
    x = np.array([[0.0, 0.0, 0.0], [d, 0.0, 0.0]])
    f = np.eye(20)[[aa_a, aa_b]]
    return x, f, np.array([0, 1])


@pytest.mark.parametrize("d", [0.0, 1.0, 3.8, 4.0, 8.0, 12.5])
def test_two_residue_closed_form(d):
    z = embed_arrays(*two_residues(d))
    expected = 0.75 - 0.25 * math.exp(-d * d / 16)
    assert abs(z[0] - expected) <= 1e-12
    assert np.all(z[1:] == 0)


def test_two_residue_different_types():
    d = 5.0
    z = embed_arrays(*two_residues(d, 3, 7))
    half = (0.75 - 0.25 * math.exp(-d * d / 16)) / 2
    assert z[3] == pytest.approx(half, abs=1e-12) and z[7] == pytest.approx(half, abs=1e-12)


def test_distance_between_hand_traces():
    a = InterfaceEmbedding("a", embed_arrays(*two_residues(4.0)))
    b = InterfaceEmbedding("b", embed_arrays(*two_residues(8.0)))
    assert idist(a, b) == pytest.approx(0.25 * abs(math.exp(-1) - math.exp(-4)), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matches_loop_reference(seed):
    rng = np.random.default_rng(seed)
    x, f, p = random_interface(rng)
    assert np.allclose(embed_arrays(x, f, p), reference_embedding(x, f, p), atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    x, f, p = random_interface(rng)
    moved = x @ random_rotation(rng).T + rng.normal(0, 100, 3)
    assert np.max(np.abs(embed_arrays(x, f, p) - embed_arrays(moved, f, p))) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_joint_rescaling(seed, s):
    rng = np.random.default_rng(seed)
    x, f, p = random_interface(rng)
    assert np.allclose(embed_arrays(x, f, p, 16.0), embed_arrays(s * x, f, p, s * s * 16.0),
                       atol=1e-12, rtol=0)


def test_residue_order_and_chain_labels_irrelevant(rng):
    x, f, p = random_interface(rng, 30, 3)
    perm = rng.permutation(30)
    z = embed_arrays(x, f, p)
    assert np.allclose(z, embed_arrays(x[perm], f[perm], p[perm]), atol=1e-14)
    assert np.allclose(z, embed_arrays(x, f, (p + 1) * 10), atol=1e-14)


def test_components_bounded(rng):
    for _ in range(50):
        z = embed_arrays(*random_interface(rng))
        assert np.all(z >= -0.25) and np.all(z <= 1.0)


def test_single_chain_rejected():
    with pytest.raises(EmptyChain):
        embed_arrays(np.zeros((3, 3)), np.eye(20)[:3], np.zeros(3))
    with pytest.raises(ValueError):
        embed_arrays(np.zeros((0, 3)), np.zeros((0, 20)), np.zeros(0))


def test_idist_embed_fixture(data_dir):
    (iface,) = extract_interfaces(read_structure(data_dir / "1hvr.pdb"))
    e = idist_embed(iface)
    assert e.id == "1HVR_A_B" and e.z.shape == (20,)
    x, f, p = iface.coords(), iface.features(), iface.partners()
    assert np.allclose(e.z, reference_embedding(x, f, p), atol=1e-12)


def test_metric_axioms(rng):
    z = rng.uniform(-0.25, 1, size=(300, 20))
    for a, b, c in rng.integers(0, 300, size=(1000, 3)):
        dab, dba = idist(z[a], z[b]), idist(z[b], z[a])
        assert dab >= 0 and dab == dba
        assert (dab == 0) == np.array_equal(z[a], z[b])
        assert idist(z[a], z[c]) <= dab + idist(z[b], z[c]) + 1e-15


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        idist(np.zeros(20), np.zeros(19))


def test_threshold_is_strict():
    cfg = IDistConfig(threshold=0.5)
    assert not is_near_duplicate(np.zeros(20), np.r_[0.5, np.zeros(19)], cfg)
    assert is_near_duplicate(np.zeros(20), np.r_[0.4999, np.zeros(19)], cfg)


def test_presets():
    assert PRESETS == {"dips6": {"cutoff": 6.0, "threshold": 0.04},
                       "ppiref10": {"cutoff": 10.0, "threshold": 0.03}}
    assert IDistConfig.preset("dips6").threshold == 0.04
    assert IDistConfig.for_cutoff(10.0).threshold == 0.03
    assert IDistConfig().alpha == 16.0
    assert IDistConfig.preset("dips6").relaxed().threshold == pytest.approx(0.06)
    with pytest.raises(ValueError):
        IDistConfig.for_cutoff(8.0)


def brute_pairs(z, tau):
    out = []
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            d = float(np.sqrt(np.sum((z[i] - z[j]) ** 2)))
            if d < tau:
                out.append((i, j))
    return out


def clustered(rng, n, spread=0.02):
    centres = rng.uniform(-0.25, 1, size=(max(1, n // 8), 20))
    return centres[rng.integers(0, len(centres), n)] + rng.normal(0, spread, size=(n, 20))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.01, 0.03, 0.04, 0.1]))
def test_grid_equals_all_pairs(seed, tau):
    rng = np.random.default_rng(seed)
    z = clustered(rng, int(rng.integers(2, 300)))
    grid = pairwise_distances(z, tau, mode="grid_index")
    full = pairwise_distances(z, tau, mode="all_pairs")
    assert grid == full
    assert [(i, j) for i, j, _ in full] == brute_pairs(z, tau)


def test_workers_do_not_change_result(rng):
    z = clustered(rng, 400)
    base = pairwise_distances(z, 0.04, mode="all_pairs")
    for w in (2, 3, 7):
        assert pairwise_distances(z, 0.04, mode="all_pairs", workers=w) == base


def test_pairwise_edge_cases():
    assert pairwise_distances([], 0.03) == []
    assert pairwise_distances([np.zeros(20)], 0.03) == []
    with pytest.raises(ValueError):
        pairwise_distances([np.zeros(20)] * 2, 0.03, mode="kd")


def test_embedding_file_round_trip(rng):
    embs = [InterfaceEmbedding(f"E{i}_A_B", rng.uniform(-0.25, 1, 20)) for i in range(5)]
    embs.append(InterfaceEmbedding("ünïcode_A_B", np.zeros(20)))
    buf = io.BytesIO()
    write_embeddings(embs, buf)
    raw = buf.getvalue()
    assert raw[:4] == b"IDST" and raw[4] == 1
    buf.seek(0)
    back = read_embeddings(buf)
    assert [e.id for e in back] == [e.id for e in embs]
    for a, b in zip(embs, back):
        # single-precision storage; far below any threshold in use
        assert np.max(np.abs(a.z - b.z)) < 1e-7
        assert np.array_equal(b.z, a.z.astype(np.float32).astype(np.float64))


def test_embedding_file_rejects_garbage():
    with pytest.raises(ValueError):
        read_embeddings(io.BytesIO(b"NOPE" + bytes(9)))
    buf = io.BytesIO()
    write_embeddings([InterfaceEmbedding("a", np.zeros(20))], buf)
    with pytest.raises(ValueError):
        read_embeddings(io.BytesIO(buf.getvalue()[:-4]))
