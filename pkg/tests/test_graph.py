import numpy as np
import pytest

from latentgraph import tensor as T
from latentgraph.exceptions import ConfigurationError, NoAdjacencyError, TopologyError
from latentgraph.graph import (BPGNN, FCGNN, NEGNN, AdjacencySnapshot, GclParams, Topology, bipartite_edges,
                               bp_path_matrix, dense_aggregate, fully_connected_edges, gcl_forward,
                               linear_gcl_forward, snapshot_from_alphas)
from latentgraph.rng import RngStream

from conftest import fd_check


def np_swish(x):
    return x / (1.0 + np.exp(-x))


def np_lin(x, lin):
    return x @ lin.weight.data + lin.bias.data


def oracle_message(p: GclParams, hi, hj):
    e = p.phi_e
    return np_swish(np_lin(np_swish(np_lin(np.concatenate([hi, hj]), e.lin1)), e.lin2))


def oracle_gcl(p: GclParams, h, edges, alpha_override=None):
    """Loop over edges one at a time; h is [M, nf] for a single window."""
    M, nf = h.shape
    agg = np.zeros((M, nf))
    for j, i in edges:
        m = oracle_message(p, h[i], h[j])
        a = 1.0 / (1.0 + np.exp(-np_lin(m, p.phi_alpha)[0])) if alpha_override is None else alpha_override
        agg[i] += a * m
    upd = p.phi_h
    return h + np_lin(np_swish(np_lin(np.concatenate([h, agg], axis=1), upd.lin1)), upd.lin2)


class TestTopology:
    @pytest.mark.parametrize("n, k, fc, bp", [(8, 4, 56, 64), (207, 4, 42642, 1656), (256, 4, 65280, 2048)])
    def test_edge_counts(self, n, k, fc, bp):
        assert Topology.fully_connected().n_edges(n) == fc
        assert Topology.bipartite(k).n_edges(n) == bp
        assert Topology.no_edges().n_edges(n) == 0
        assert len(fully_connected_edges(n)) == fc
        assert sum(len(e) for e in bipartite_edges(n, k)) == bp

    def test_bp_needs_aux(self):
        with pytest.raises(ConfigurationError):
            Topology.bipartite(0)

    def test_linear_rejects_self_loops(self):
        with pytest.raises(TopologyError):
            Topology.linear(np.eye(3))

    def test_fc_edges_exclude_self(self):
        e = fully_connected_edges(5)
        assert not np.any(e[:, 0] == e[:, 1])
        assert len({tuple(r) for r in e}) == 20


class TestPathMatrix:
    def test_single_path(self):
        np.testing.assert_array_equal(bp_path_matrix(1, 1)[2], [[1, 0], [0, 0]])

    def test_block_is_k(self):
        _, _, P = bp_path_matrix(2, 3)
        np.testing.assert_array_equal(P[:2, :2], 3.0)
        np.testing.assert_array_equal(P[2:], 0.0)

    def test_matches_edge_lists(self):
        n, k = 3, 2
        A1, A2, _ = bp_path_matrix(n, k)
        up, down = bipartite_edges(n, k)
        B1, B2 = np.zeros_like(A1), np.zeros_like(A2)
        B1[up[:, 1], up[:, 0]] = 1
        B2[down[:, 1], down[:, 0]] = 1
        np.testing.assert_array_equal(A1, B1)
        np.testing.assert_array_equal(A2, B2)


class TestGcl:
    def setup_method(self):
        self.p = GclParams(4, RngStream(5))

    def test_explicit_matches_loop_oracle(self, rng):
        h = rng.normal(size=(2, 3, 4))
        edges = fully_connected_edges(3)
        out, alphas = gcl_forward(h, edges, self.p)
        assert alphas.shape == (2, 6)
        for b in range(2):
            np.testing.assert_allclose(out.data[b], oracle_gcl(self.p, h[b], edges), atol=1e-12)

    def test_partial_edge_list_matches_oracle(self, rng):
        h = rng.normal(size=(1, 4, 4))
        edges = np.array([[0, 1], [2, 1], [3, 0]])
        out, _ = gcl_forward(h, edges, self.p)
        np.testing.assert_allclose(out.data[0], oracle_gcl(self.p, h[0], edges), atol=1e-12)

    def test_empty_edges_is_node_update(self, rng):
        h = rng.normal(size=(2, 3, 4))
        out, alphas = gcl_forward(h, np.zeros((0, 2)), self.p)
        expected = self.p.phi_h(h, np.zeros_like(h)).data
        np.testing.assert_array_equal(out.data, expected)
        assert alphas.shape == (2, 0)

    def test_zero_gate_equals_empty_edges(self, rng):
        h = rng.normal(size=(2, 3, 4))
        gated, _ = gcl_forward(h, fully_connected_edges(3), self.p, alpha_override=0.0)
        empty, _ = gcl_forward(h, np.zeros((0, 2)), self.p)
        np.testing.assert_array_equal(gated.data, empty.data)

    def test_rejects_self_edges_and_bad_indices(self, rng):
        h = rng.normal(size=(1, 3, 4))
        with pytest.raises(TopologyError):
            gcl_forward(h, [[1, 1]], self.p)
        with pytest.raises(TopologyError):
            gcl_forward(h, [[0, 3]], self.p)

    def test_dense_matches_explicit(self, rng):
        h = rng.normal(size=(2, 5, 4))
        agg, gates = dense_aggregate(T.Tensor(h), T.Tensor(h), self.p, mask=1.0 - np.eye(5))
        out_dense = self.p.phi_h(h, agg).data
        edges = fully_connected_edges(5)
        out_edges, alphas = gcl_forward(h, edges, self.p)
        np.testing.assert_allclose(out_dense, out_edges.data, atol=1e-12)
        np.testing.assert_allclose(gates.data[:, edges[:, 1], edges[:, 0]], alphas, atol=1e-14)

    def test_dense_chunking_is_exact(self, rng, monkeypatch):
        import latentgraph.graph as G

        h = T.Tensor(rng.normal(size=(2, 7, 4)))
        full, g_full = dense_aggregate(h, h, self.p, mask=1.0 - np.eye(7))
        monkeypatch.setattr(G, "CHUNK_ELEMENTS", 2 * 7 * 4 * 2)
        part, g_part = dense_aggregate(h, h, self.p, mask=1.0 - np.eye(7))
        np.testing.assert_allclose(part.data, full.data, atol=1e-13)
        np.testing.assert_array_equal(g_part.data, g_full.data)

    def test_gates_in_open_unit_interval(self, rng):
        _, alphas = gcl_forward(rng.normal(size=(3, 4, 4)) * 10, fully_connected_edges(4), self.p)
        assert np.all((alphas > 0) & (alphas < 1))


class TestAggregators:
    def test_fc_permutation_equivariance(self, rng):
        agg = FCGNN(4, 2, RngStream(1))
        h = rng.normal(size=(2, 5, 4))
        perm = rng.permutation(5)
        out, snaps = agg(h)
        out_p, snaps_p = agg(h[:, perm])
        np.testing.assert_allclose(out_p.data, out.data[:, perm], atol=1e-12)
        np.testing.assert_allclose(snaps_p[0]["alpha"].data, snaps[0]["alpha"].data[:, perm][:, :, perm], atol=1e-14)

    def test_fc_single_node_is_ne_path(self, rng):
        fc = FCGNN(4, 1, RngStream(1))
        h = rng.normal(size=(2, 1, 4))
        out, _ = fc(h)
        np.testing.assert_array_equal(out.data, fc.layers[0].phi_h(h, np.zeros_like(h)).data)

    def test_fc_identical_nodes_give_equal_gates(self, rng):
        fc = FCGNN(4, 1, RngStream(1))
        h = np.repeat(rng.normal(size=(1, 1, 4)), 4, axis=1)
        _, snaps = fc(h)
        a = snaps[0]["alpha"].data[0]
        off = a[~np.eye(4, dtype=bool)]
        np.testing.assert_allclose(off, off[0], atol=1e-15)
        np.testing.assert_array_equal(np.diag(a), 0.0)

    def test_fc_zero_gate_equals_ne(self, rng):
        fc, ne = FCGNN(4, 2, RngStream(1)), NEGNN(4, 2, RngStream(2))
        for lf, ln in zip(fc.layers, ne.layers):
            for (_, p), (_, q) in zip(lf.phi_h.named_parameters(), ln.named_parameters()):
                q.data = p.data.copy()
        h = rng.normal(size=(3, 6, 4))
        np.testing.assert_array_equal(fc(h, alpha_override=0.0)[0].data, ne(h)[0].data)

    def test_bp_matches_explicit_two_step(self, rng):
        n, k, nf = 4, 3, 4
        bp = BPGNN(nf, 1, k, RngStream(3))
        h = rng.normal(size=(2, n, nf))
        out, snaps = bp(h)
        up, down = bipartite_edges(n, k)
        for b in range(2):
            nodes = np.concatenate([h[b], bp.aux.data])
            after_up = oracle_gcl(bp.step1[0], nodes, up)
            nodes = np.concatenate([nodes[:n], after_up[n:]])
            after_down = oracle_gcl(bp.step2[0], nodes, down)
            np.testing.assert_allclose(out.data[b], after_down[:n], atol=1e-12)
        assert snaps[0]["alpha_up"].shape == (2, k, n)
        assert snaps[0]["alpha_down"].shape == (2, n, k)

    def test_bp_unit_gates_linear_messages_count_paths(self):
        """With gates fixed at 1, a linear single-hop sum reproduces A2 @ A1."""
        n, k = 3, 2
        A1, A2, P = bp_path_matrix(n, k)
        x = np.concatenate([np.eye(n), np.zeros((k, n))])
        np.testing.assert_array_equal((A2 @ (A1 @ x))[:n], P[:n, :n])

    def test_ne_ignores_other_nodes(self, rng):
        ne = NEGNN(4, 2, RngStream(1))
        h = rng.normal(size=(1, 3, 4))
        h2 = h.copy()
        h2[0, 1] += 5.0
        np.testing.assert_array_equal(ne(h)[0].data[0, [0, 2]], ne(h2)[0].data[0, [0, 2]])

    @pytest.mark.parametrize("make", [
        lambda: FCGNN(4, 2, RngStream(0)),
        lambda: BPGNN(4, 2, 2, RngStream(0)),
        lambda: NEGNN(4, 2, RngStream(0)),
    ])
    def test_aggregator_gradients(self, make, rng):
        agg = make()
        h = T.parameter(rng.normal(size=(2, 3, 4)))
        probe = rng.normal(size=(2, 3, 4))
        assert fd_check(lambda: (agg(h)[0] * probe).sum(), [h] + agg.parameters(), rng) < 1e-4


class TestLinearGcl:
    def test_edgeless(self, rng):
        H, te, th = rng.normal(size=(3, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        np.testing.assert_allclose(linear_gcl_forward(H, np.zeros((3, 3)), te, th).data, np_swish(H @ th), atol=1e-15)

    def test_two_node_scalar_trace(self):
        H = np.array([[1.0], [2.0]])
        out = linear_gcl_forward(H, np.array([[0, 1], [1, 0]]), np.array([[0.5]]), np.array([[-1.0]])).data
        np.testing.assert_allclose(out[:, 0], [np_swish(0.5 * 2 - 1.0), np_swish(0.5 * 1 - 2.0)], atol=1e-15)

    def test_message_depends_on_sender_only(self, rng):
        H, te = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
        A = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
        np.fill_diagonal(A, 0)
        msgs = A @ H @ te
        for i in range(4):
            np.testing.assert_allclose(msgs[i], sum(A[i, j] * (H[j] @ te) for j in range(4)), atol=1e-13)

    def test_rejects_self_loops(self, rng):
        with pytest.raises(TopologyError):
            linear_gcl_forward(rng.normal(size=(2, 2)), np.eye(2), np.eye(2), np.eye(2))


class TestSnapshots:
    def test_fc_average(self, rng):
        a = [{"alpha": T.Tensor(rng.uniform(size=(2, 3, 3)))}, {"alpha": T.Tensor(rng.uniform(size=(1, 3, 3)))}]
        snap = snapshot_from_alphas("fc", a, 3)
        np.testing.assert_allclose(snap.matrix, np.concatenate([a[0]["alpha"].data, a[1]["alpha"].data]).mean(0))

    def test_ne_has_no_adjacency(self):
        with pytest.raises(NoAdjacencyError):
            snapshot_from_alphas("ne", [], 10)

    def test_top_incoming_ignores_diagonal(self):
        M = np.array([[0.9, 0.2, 0.3], [0.1, 0.9, 0.05], [0.0, 0.7, 0.9]])
        np.testing.assert_array_equal(AdjacencySnapshot("fc", M, 1).top_incoming(), [2, 0, 1])

    def test_csv_and_pgm(self, tmp_path, rng):
        M = rng.uniform(size=(4, 4))
        snap = AdjacencySnapshot("fc", M, 1)
        snap.to_csv(tmp_path / "a.csv")
        np.testing.assert_allclose(np.loadtxt(tmp_path / "a.csv", delimiter=","), M, atol=5e-7)
        snap.to_pgm(tmp_path / "a.pgm")
        raw = (tmp_path / "a.pgm").read_bytes()
        assert raw.startswith(b"P5\n4 4\n255\n")
        np.testing.assert_array_equal(np.frombuffer(raw[-16:], np.uint8).reshape(4, 4), np.rint(255 * M))
