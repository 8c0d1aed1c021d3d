"""Vector database: chain keys, build validation, retrieval, persistence."""

import numpy as np
import pytest

from mera.errors import FormatError, NormError, RetrievalError, StoreError
from mera.store import (
    ProteinRecord,
    build_store,
    chain_key,
    load_store,
    retrieve,
    save_store,
)

from oracles import retrieval_full_scan

formula = pytest.mark.formula


def make_record(rec_id, seq, active=(0,), cluster=None):
    return ProteinRecord(
        id=rec_id, seq_emb=np.asarray(seq, dtype=float), active_indices=active,
        cluster_id=cluster,
    )


def random_store(rng, count, dim, clusters=None):
    recs = []
    for i in range(count):
        n = int(rng.integers(2, 8))
        seq = rng.standard_normal((n, dim))
        n_act = int(rng.integers(1, n + 1))
        active = tuple(sorted(rng.choice(n, size=n_act, replace=False).tolist()))
        cluster = None if clusters is None else f"c{rng.integers(clusters)}"
        recs.append(make_record(f"r{i:04d}", seq, active, cluster))
    return build_store(recs), recs


class TestChainKey:
    @formula
    def test_single_row_is_identity(self, rng):
        v = rng.standard_normal((1, 6))
        assert np.array_equal(chain_key(v), v)

    @formula
    def test_hand_arithmetic(self):
        out = chain_key(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.array_equal(out, [[0.5, 0.5]])

    @formula
    def test_matches_summation_oracle(self, rng):
        seq = rng.standard_normal((10, 7))
        expected = np.array([[seq[:, j].sum() / 10.0 for j in range(7)]])
        assert np.allclose(chain_key(seq), expected, atol=1e-12, rtol=0)

    def test_record_chain_key_invariant(self, rng):
        rec = make_record("a", rng.standard_normal((5, 4)), (1, 3))
        assert np.allclose(rec.chain_key, rec.seq_emb.mean(axis=0), atol=1e-9)


class TestBuildStore:
    @formula
    def test_empty_store_is_valid_but_unqueryable(self):
        store = build_store([])
        assert len(store) == 0
        with pytest.raises(RetrievalError):
            retrieve(store, np.ones((1, 3)), k=1)

    @formula
    def test_single_record(self, rng):
        store = build_store([make_record("only", rng.standard_normal((3, 4)))])
        assert len(store) == 1

    @formula
    def test_no_active_sites_rejected_with_id(self, rng):
        rec = ProteinRecord(id="empty-sites", seq_emb=rng.standard_normal((3, 4)),
                            active_indices=())
        with pytest.raises(StoreError, match="empty-sites"):
            build_store([rec])

    def test_duplicate_id_rejected(self, rng):
        a = make_record("dup", rng.standard_normal((2, 3)))
        b = make_record("dup", rng.standard_normal((4, 3)))
        with pytest.raises(StoreError, match="dup"):
            build_store([a, b])

    def test_zero_norm_chain_key_rejected(self):
        rec = make_record("zero", np.zeros((2, 3)))
        with pytest.raises(NormError, match="zero"):
            build_store([rec])

    def test_inconsistent_widths_rejected(self, rng):
        a = make_record("a", rng.standard_normal((2, 3)))
        b = make_record("b", rng.standard_normal((2, 4)))
        with pytest.raises(StoreError, match="width"):
            build_store([a, b])

    def test_labels_must_match_active_indices(self, rng):
        with pytest.raises(StoreError):
            ProteinRecord(
                id="x", seq_emb=rng.standard_normal((4, 3)),
                active_indices=(0,), labels=[0, 1, 0, 0],
            )


class TestRetrieve:
    @formula
    def test_exact_match_ranks_first(self):
        base = np.eye(4)
        recs = [make_record(f"r{i}", base[i : i + 1].repeat(2, axis=0)) for i in range(3)]
        store = build_store(recs)
        result = retrieve(store, base[1:2], k=2)
        assert result.ids()[0] == "r1"
        assert abs(result.entries[0][1] - 1.0) <= 1e-12

    @formula
    def test_excluding_only_record_errors(self, rng):
        store = build_store([make_record("solo", rng.standard_normal((2, 4)))])
        with pytest.raises(RetrievalError):
            retrieve(store, np.ones((1, 4)), k=1, exclude_id="solo")

    @formula
    def test_matches_full_scan_oracle(self, rng):
        store, recs = random_store(rng, 100, 8)
        keys = {r.id: store.get(r.id).chain_key for r in recs}
        for _ in range(1000):
            q = rng.standard_normal((1, 8))
            got = retrieve(store, q, k=3).ids()
            expected = retrieval_full_scan(keys, q, 3)
            assert got == expected

    def test_query_scale_invariance(self, rng):
        store, _ = random_store(rng, 40, 6)
        q = rng.standard_normal((1, 6))
        base = retrieve(store, q, k=5).ids()
        for c in (1e-6, 0.5, 3.0, 1e6):
            assert retrieve(store, c * q, k=5).ids() == base

    def test_k_prefix_monotonicity(self, rng):
        store, _ = random_store(rng, 30, 5)
        q = rng.standard_normal((1, 5))
        for k in range(1, 12):
            assert retrieve(store, q, k=k + 1).ids()[:k] == retrieve(store, q, k=k).ids()

    def test_ties_break_by_ascending_id(self):
        v = np.array([[1.0, 0.0, 0.0]])
        recs = [make_record(name, np.vstack([v, v])) for name in ("zeta", "alpha", "mid")]
        store = build_store(recs)
        assert retrieve(store, v, k=3).ids() == ["alpha", "mid", "zeta"]

    def test_k_larger_than_store(self, rng):
        store, _ = random_store(rng, 4, 5)
        result = retrieve(store, rng.standard_normal((1, 5)), k=10, exclude_id="r0000")
        assert len(result) == 3

    def test_cluster_restriction(self, rng):
        store, recs = random_store(rng, 50, 6, clusters=4)
        keys = {r.id: store.get(r.id).chain_key for r in recs}
        clusters = {r.id: r.cluster_id for r in recs}
        q = rng.standard_normal((1, 6))
        got = retrieve(store, q, k=5, cluster_id="c1").ids()
        expected = retrieval_full_scan(keys, q, 5, clusters=clusters, cluster_id="c1")
        assert got == expected
        assert all(store.get(i).cluster_id == "c1" for i in got)

    def test_no_cluster_id_means_global(self, rng):
        store, _ = random_store(rng, 30, 6, clusters=3)
        q = rng.standard_normal((1, 6))
        unrestricted = retrieve(store, q, k=30).ids()
        assert len(unrestricted) == 30

    def test_zero_norm_query(self, rng):
        store, _ = random_store(rng, 5, 4)
        with pytest.raises(NormError):
            retrieve(store, np.zeros((1, 4)), k=1)

    def test_similarity_bounds_and_ordering(self, rng):
        store, _ = random_store(rng, 60, 7)
        q = rng.standard_normal((1, 7))
        result = retrieve(store, q, k=60)
        sims = [s for _, s in result.entries]
        assert all(-1.0 <= s <= 1.0 for s in sims)
        assert all(a >= b for a, b in zip(sims, sims[1:]))

    def test_determinism_across_runs(self, rng):
        store, _ = random_store(rng, 25, 5)
        q = rng.standard_normal((1, 5))
        first = retrieve(store, q, k=6)
        second = retrieve(store, q, k=6)
        assert first.ids() == second.ids()
        assert [s for _, s in first.entries] == [s for _, s in second.entries]


class TestPersistence:
    @formula
    def test_round_trip_retrieval_identical(self, rng, tmp_path):
        store, _ = random_store(rng, 30, 6, clusters=3)
        path = tmp_path / "db.store"
        save_store(store, path)
        loaded = load_store(path)
        for _ in range(50):
            q = rng.standard_normal((1, 6))
            a = retrieve(store, q, k=4)
            b = retrieve(loaded, q, k=4)
            assert a.ids() == b.ids()
            assert [s for _, s in a.entries] == [s for _, s in b.entries]

    @formula
    def test_truncated_file(self, rng, tmp_path):
        store, _ = random_store(rng, 5, 4)
        path = tmp_path / "db.store"
        save_store(store, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FormatError, match="offset"):
            load_store(path)

    @formula
    def test_wrong_magic_names_expected(self, tmp_path):
        path = tmp_path / "bad.store"
        path.write_bytes(b"NOTMAGIC" + bytes(100))
        with pytest.raises(FormatError, match="MERASTO1"):
            load_store(path)

    def test_active_indices_and_cluster_survive(self, rng, tmp_path):
        rec = make_record("keep", rng.standard_normal((6, 3)), (1, 4, 5), cluster="c9")
        store = build_store([rec])
        path = tmp_path / "db.store"
        save_store(store, path)
        loaded = load_store(path).get("keep")
        assert loaded.active_indices == (1, 4, 5)
        assert loaded.cluster_id == "c9"

    def test_save_load_save_is_stable(self, rng, tmp_path):
        store, _ = random_store(rng, 10, 5)
        p1, p2 = tmp_path / "a.store", tmp_path / "b.store"
        save_store(store, p1)
        save_store(load_store(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
