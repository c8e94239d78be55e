import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempograd.numerics import ContractError
from tempograd.tgraph import (
    DatasetBundle,
    DatasetFormatError,
    EdgeLog,
    NodeTable,
    TemporalEdge,
    build_index,
    chronological_batches,
    load_dataset,
    save_dataset,
)


def random_log(rng, n_nodes, n_edges, d_e=2, integer_times=True):
    t = rng.integers(0, 15, n_edges).astype(float) if integer_times else rng.uniform(0, 10, n_edges)
    t.sort()
    return EdgeLog(rng.integers(0, n_nodes, n_edges), rng.integers(0, n_nodes, n_edges), t,
                   rng.normal(size=(n_edges, d_e)))


def brute_lists(edges, n_nodes, mode):
    """Per-node (nbr, eid, t) lists by filtering the log then sorting."""
    out = []
    for i in range(n_nodes):
        rows = []
        for k in range(len(edges)):
            s, d, t = int(edges.src[k]), int(edges.dst[k]), float(edges.t[k])
            if mode in ("directed-out", "undirected") and s == i:
                rows.append((d, k, t))
            if mode in ("directed-in", "undirected") and d == i:
                rows.append((s, k, t))
        rows.sort(key=lambda r: (r[2], r[1]))
        out.append(rows)
    return out


def brute_before(edges, i, t, k):
    rows = [r for r in brute_lists(edges, max(edges.src.max(), edges.dst.max(), i) + 1, "undirected")[i]
            if r[2] < t]
    return [(r[0], r[2]) for r in reversed(rows)][:k]


class TestBuildIndex:
    def test_empty_log(self):
        idx = build_index(EdgeLog.empty(3), n_nodes=4)
        assert all(idx.events(i) == [] for i in range(4))

    def test_single_edge_undirected(self):
        log = EdgeLog.from_edges([TemporalEdge(0, 1, 5.0, (0.1,))], d_e=1)
        idx = build_index(log, 2)
        assert idx.events(0) == [(1, 0, 5.0)]
        assert idx.events(1) == [(0, 0, 5.0)]

    @pytest.mark.parametrize("mode", ["directed-out", "directed-in", "undirected"])
    def test_matches_brute_force(self, mode):
        rng = np.random.default_rng(5)
        log = random_log(rng, 12, 100)
        idx = build_index(log, 12, mode)
        assert [idx.events(i) for i in range(12)] == brute_lists(log, 12, mode)

    @pytest.mark.parametrize("mode", ["directed-out", "directed-in"])
    def test_directed_modes_are_bijective(self, mode):
        rng = np.random.default_rng(6)
        log = random_log(rng, 9, 60)
        idx = build_index(log, 9, mode)
        assert sorted(e for i in range(9) for _, e, _ in idx.events(i)) == list(range(60))

    def test_lists_are_time_sorted(self):
        idx = build_index(random_log(np.random.default_rng(2), 7, 80), 7)
        for i in range(7):
            times = [t for _, _, t in idx.events(i)]
            assert times == sorted(times)

    def test_unsorted_rejected(self):
        log = EdgeLog([0, 1], [1, 0], [2.0, 1.0], np.zeros((2, 1)))
        with pytest.raises(ContractError, match="record 1"):
            build_index(log, 2)

    def test_unknown_mode(self):
        with pytest.raises(ContractError):
            build_index(EdgeLog.empty(1), 1, "both")


class TestNeighborsBefore:
    def setup_method(self):
        feats = np.arange(3.0).reshape(3, 1)
        self.log = EdgeLog([0, 0, 0], [1, 2, 3], [1.0, 2.0, 3.0], feats)
        self.idx = build_index(self.log, 5)

    def test_no_prior_events(self):
        assert self.idx.neighbors_before(4, 100.0, 3) == []
        assert self.idx.neighbors_before(0, 1.0, 3) == []

    def test_strict_cutoff_most_recent_first(self):
        got = self.idx.neighbors_before(0, 2.5, 10)
        assert [(j, t) for j, _, t in got] == [(2, 2.0), (1, 1.0)]
        assert got[0][1].tolist() == [1.0]

    def test_cap(self):
        got = self.idx.neighbors_before(0, 10.0, 2)
        assert [j for j, _, _ in got] == [3, 2]

    def test_unknown_node(self):
        with pytest.raises(ContractError):
            self.idx.neighbors_before(9, 1.0, 1)

    def test_bad_cap(self):
        with pytest.raises(ContractError):
            self.idx.neighbors_before(0, 1.0, 0)

    def test_random_queries_match_scan(self):
        rng = np.random.default_rng(9)
        log = random_log(rng, 10, 80)
        idx = build_index(log, 10)
        for _ in range(300):
            i, t, k = int(rng.integers(10)), float(rng.integers(0, 17)) + rng.choice([0, 0.5]), int(rng.integers(1, 8))
            got = [(j, tj) for j, _, tj in idx.neighbors_before(i, t, k)]
            assert got == brute_before(log, i, t, k)

    def test_gather_agrees_with_scalar_lookup(self):
        rng = np.random.default_rng(10)
        log = random_log(rng, 8, 50)
        idx = build_index(log, 8)
        nodes = rng.integers(0, 8, 40)
        times = rng.uniform(0, 16, 40)
        nb = idx.gather(nodes, times, 4)
        for q in range(40):
            ref = idx.neighbors_before(int(nodes[q]), float(times[q]), 4)
            n = len(ref)
            assert nb.mask[q].tolist() == [True] * n + [False] * (4 - n)
            assert nb.nbr[q, :n].tolist() == [j for j, _, _ in ref]
            assert nb.t[q, :n].tolist() == [t for _, _, t in ref]

    @given(st.integers(0, 2**32 - 1), st.floats(0, 16), st.integers(1, 10))
    @settings(max_examples=60, deadline=None)
    def test_causal_and_prefix_monotone(self, seed, t, k):
        rng = np.random.default_rng(seed)
        log = random_log(rng, 6, 30)
        idx = build_index(log, 6)
        for i in range(6):
            small = idx.neighbors_before(i, t, k)
            big = idx.neighbors_before(i, t, k + 1)
            assert all(tj < t for _, _, tj in big)
            assert [(j, tj) for j, _, tj in small] == [(j, tj) for j, _, tj in big][:len(small)]


class TestBatches:
    def test_sizes(self):
        log = random_log(np.random.default_rng(0), 4, 5)
        assert [len(b) for b in chronological_batches(log, 2)] == [2, 2, 1]

    def test_single_batch(self):
        log = random_log(np.random.default_rng(0), 4, 5)
        assert [len(b) for b in chronological_batches(log, 50)] == [5]

    def test_order_preserved_across_boundaries(self):
        log = random_log(np.random.default_rng(1), 30, 1000, integer_times=False)
        batches = list(chronological_batches(log, 200))
        assert len(batches) == 5
        joined = np.concatenate([b.t for b in batches])
        assert np.array_equal(joined, log.t)
        for a, b in zip(batches, batches[1:]):
            assert a.t[-1] <= b.t[0]

    def test_bad_size(self):
        with pytest.raises(ContractError):
            list(chronological_batches(EdgeLog.empty(1), 0))


def random_bundle(seed, n=15, m=40, d_v=3, d_e=2):
    rng = np.random.default_rng(seed)
    labels = rng.integers(-1, 2, n)
    split = np.where(labels < 0, 3, rng.integers(0, 3, n))
    nodes = NodeTable(rng.normal(size=(n, d_v)) * 10.0 ** rng.integers(-8, 8, (n, d_v)), labels, split)
    log = random_log(rng, n, m, d_e, integer_times=False)
    return DatasetBundle(nodes, log, name="rand", seed=seed, meta={"note": "x"})


class TestFiles:
    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_bit_exact(self, tmp_path, seed):
        b = random_bundle(seed)
        save_dataset(b, tmp_path)
        assert load_dataset(tmp_path).equals(b)

    def test_hand_written_fixture(self, tmp_path):
        (tmp_path / "nodes.tsv").write_text(
            "#nodes 3 dim 2\n"
            "0\t0\ttrain\t0.5\t-1\n"
            "1\t1\ttest\t2\t3.25\n"
            "2\t-1\tbg\t0\t0\n"
        )
        (tmp_path / "edges.tsv").write_text(
            "#edges 2 dim 1\n"
            "0\t1\t1.5\t0.25\n"
            "2\t0\t4\t-1\n"
        )
        b = load_dataset(tmp_path)
        assert b.nodes.features.tolist() == [[0.5, -1.0], [2.0, 3.25], [0.0, 0.0]]
        assert b.nodes.labels.tolist() == [0, 1, -1]
        assert b.nodes.ids("train").tolist() == [0]
        assert b.nodes.ids("test").tolist() == [1]
        assert b.edges.src.tolist() == [0, 2] and b.edges.dst.tolist() == [1, 0]
        assert b.edges.t.tolist() == [1.5, 4.0]
        assert b.edges.feat.tolist() == [[0.25], [-1.0]]

    def test_dim_mismatch_names_record(self, tmp_path):
        save_dataset(random_bundle(1), tmp_path)
        lines = (tmp_path / "edges.tsv").read_text().splitlines()
        lines[4] += "\t1.0"
        (tmp_path / "edges.tsv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match=r"edges.tsv:5: record 3"):
            load_dataset(tmp_path)

    def test_unsorted_edges_rejected(self, tmp_path):
        save_dataset(random_bundle(2), tmp_path)
        lines = (tmp_path / "edges.tsv").read_text().splitlines()
        lines[1], lines[-1] = lines[-1], lines[1]
        (tmp_path / "edges.tsv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="earlier than previous"):
            load_dataset(tmp_path)

    def test_malformed_header(self, tmp_path):
        save_dataset(random_bundle(3), tmp_path)
        text = (tmp_path / "nodes.tsv").read_text().replace("#nodes", "#vertices", 1)
        (tmp_path / "nodes.tsv").write_text(text)
        with pytest.raises(DatasetFormatError, match="nodes.tsv:1"):
            load_dataset(tmp_path)

    def test_accepts_short_float_format(self, tmp_path):
        b = random_bundle(4)
        save_dataset(b, tmp_path)
        text = (tmp_path / "nodes.tsv").read_text().splitlines()
        head, rest = text[:4], text[4:]
        rest = ["\t".join(c if k < 3 else "%.9g" % float(c) for k, c in enumerate(r.split("\t"))) for r in rest]
        (tmp_path / "nodes.tsv").write_text("\n".join(head + rest) + "\n")
        np.testing.assert_allclose(load_dataset(tmp_path).nodes.features, b.nodes.features, rtol=1e-8)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="cannot read"):
            load_dataset(tmp_path / "nope")
