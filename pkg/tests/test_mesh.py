import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_nearest, oracle_neighbor_map, random_mesh, subset_mesh, superset_mesh
from gfnrom.mesh import (
    Mesh,
    NeighborMap,
    build_neighbor_map,
    classify_transform,
    load_mesh,
    master_mesh_union,
    nearest_neighbor,
    save_mesh,
)


def line_mesh(*coords):
    return Mesh(np.array(coords).reshape(-1, 1))


class TestMesh:
    def test_basic_shape(self):
        m = line_mesh(0.0, 1.0)
        assert len(m) == 2
        assert m.dim == 1

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            Mesh(np.zeros((0, 2)))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Mesh(np.array([[0.0], [np.nan]]))
        with pytest.raises(ValueError):
            Mesh(np.array([[np.inf, 0.0]]))

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            Mesh(np.array([[0.0, 1.0], [0.0, 1.0]]))

    def test_nodes_are_read_only(self):
        m = line_mesh(0.0, 1.0)
        with pytest.raises(ValueError):
            m.nodes[0, 0] = 5.0


class TestNearest:
    def test_closer_point(self):
        assert nearest_neighbor(line_mesh(0.0, 1.0), [0.4]) == 0

    def test_tie_breaks_low_index(self):
        assert nearest_neighbor(line_mesh(0.0, 1.0), [0.5]) == 0
        # order matters on ties: swap the nodes, the answer follows
        assert nearest_neighbor(line_mesh(1.0, 0.0), [0.5]) == 0

    def test_2d_case(self):
        m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        assert m.nearest([0.9, 0.2]) == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            line_mesh(0.0, 1.0).nearest([0.5, 0.5])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 200))
    def test_matches_exhaustive_scan(self, seed, dim, n):
        rng = np.random.default_rng(seed)
        m = random_mesh(rng, n, dim)
        qs = rng.uniform(-0.2, 1.2, size=(25, dim))
        got = m.nearest_many(qs)
        want = [oracle_nearest(m.nodes, q) for q in qs]
        assert got.tolist() == want

    def test_tie_rich_grid_matches_oracle(self):
        # integer grid with mid-cell queries exercises exact ties
        xs, ys = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
        m = Mesh(np.column_stack([xs.ravel(), ys.ravel()]))
        qs = np.column_stack([xs.ravel() + 0.5, ys.ravel() + 0.5])
        got = m.nearest_many(qs)
        want = [oracle_nearest(m.nodes, q) for q in qs]
        assert got.tolist() == want


class TestNeighborMap:
    def test_worked_pair(self):
        nm = build_neighbor_map(line_mesh(0.0, 1.0), line_mesh(0.0, 0.4, 1.0))
        assert nm.fwd.tolist() == [0, 2]
        assert nm.bwd.tolist() == [0, 0, 1]
        assert nm.n_source == 2
        assert nm.n_target == 3

    def test_identity_pair(self):
        nm = build_neighbor_map(line_mesh(0.0, 1.0), line_mesh(0.0, 1.0))
        assert nm.fwd.tolist() == [0, 1]
        assert nm.bwd.tolist() == [0, 1]

    def test_reverse_pair(self):
        nm = build_neighbor_map(line_mesh(0.0, 0.4, 1.0), line_mesh(0.0, 1.0))
        assert nm.fwd.tolist() == [0, 0, 1]
        assert nm.bwd.tolist() == [0, 2]

    def test_dimension_mismatch(self):
        m1 = line_mesh(0.0, 1.0)
        m2 = Mesh(np.array([[0.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(ValueError, match="dimension"):
            build_neighbor_map(m1, m2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.integers(1, 60))
    def test_matches_oracle(self, seed, n_o, n_n):
        rng = np.random.default_rng(seed)
        m_o = random_mesh(rng, n_o)
        m_n = random_mesh(rng, n_n)
        nm = build_neighbor_map(m_o, m_n)
        fwd, bwd = oracle_neighbor_map(m_o.nodes, m_n.nodes)
        assert nm.fwd.tolist() == fwd.tolist()
        assert nm.bwd.tolist() == bwd.tolist()


class TestClassify:
    def classify(self, m_o, m_n):
        return classify_transform(build_neighbor_map(m_o, m_n))

    def test_worked_examples(self):
        assert self.classify(line_mesh(0.0, 1.0), line_mesh(0.0, 0.4, 1.0)) == (True, False)
        assert self.classify(line_mesh(0.0, 0.4, 1.0), line_mesh(0.0, 1.0)) == (False, True)
        assert self.classify(line_mesh(0.0, 1.0), line_mesh(0.0, 1.0)) == (True, True)
        assert self.classify(line_mesh(0.0, 0.3, 1.0), line_mesh(0.1, 1.0, 2.0)) == (False, False)

    def test_named_fields(self):
        kind = self.classify(line_mesh(0.0, 1.0), line_mesh(0.0, 0.4, 1.0))
        assert kind.expansive and not kind.agglomerative

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_subset_relations(self, seed):
        rng = np.random.default_rng(seed)
        base = random_mesh(rng, 30)
        assert self.classify(base, superset_mesh(rng, base, 12)).expansive
        assert self.classify(base, subset_mesh(rng, base, 11)).agglomerative

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_definition(self, seed):
        rng = np.random.default_rng(seed)
        nm = build_neighbor_map(random_mesh(rng, 25), random_mesh(rng, 20))
        kind = classify_transform(nm)
        assert kind.expansive == all(nm.bwd[nm.fwd[i]] == i for i in range(nm.n_source))
        assert kind.agglomerative == all(nm.fwd[nm.bwd[j]] == j for j in range(nm.n_target))


class TestMasterMeshUnion:
    def test_appends_unmatched_target_nodes(self):
        master = master_mesh_union(line_mesh(0.0, 1.0), line_mesh(0.0, 0.4, 1.0))
        assert master.nodes.ravel().tolist() == [0.0, 1.0, 0.4]

    def test_agglomerative_adds_nothing(self):
        m_o = line_mesh(0.0, 0.4, 1.0)
        master = master_mesh_union(m_o, line_mesh(0.0, 1.0))
        assert master is m_o

    def test_identity(self):
        m = line_mesh(0.0, 1.0)
        assert master_mesh_union(m, m) is m

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
    def test_expansion_premise(self, seed, n_o, n_n):
        # the union keeps every original node, so the first decomposition
        # stage is expansive for arbitrary pairs
        rng = np.random.default_rng(seed)
        m_o = random_mesh(rng, n_o)
        m_n = random_mesh(rng, n_n)
        master = master_mesh_union(m_o, m_n)
        assert np.array_equal(master.nodes[: len(m_o)], m_o.nodes)
        assert classify_transform(build_neighbor_map(m_o, master)).expansive

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_agglomeration_premise_for_nested_pairs(self, seed):
        # the second stage classifies agglomerative whenever the target is
        # contained in the union, as in refinement hierarchies; for generic
        # point clouds the formal condition can fail even though the
        # decomposed transform still equals the direct one (covered by the
        # equivalence tests)
        rng = np.random.default_rng(seed)
        m_o = random_mesh(rng, 30)
        m_n = subset_mesh(rng, m_o, 11)
        master = master_mesh_union(m_o, m_n)
        assert master is m_o
        assert classify_transform(build_neighbor_map(master, m_n)).agglomerative


class TestMeshIO:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        m = random_mesh(rng, 23, dim=3)
        path = tmp_path / "mesh.csv"
        save_mesh(m, path)
        back = load_mesh(path)
        assert np.array_equal(back.nodes, m.nodes)

    def test_plain_csv(self, tmp_path):
        path = tmp_path / "mesh.csv"
        path.write_text("0.0,0.0\n1.0,0.5\n")
        m = load_mesh(path)
        assert m.nodes.tolist() == [[0.0, 0.0], [1.0, 0.5]]
