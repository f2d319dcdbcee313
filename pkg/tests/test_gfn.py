import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    oracle_transform,
    random_bundle,
    random_mesh,
    subset_mesh,
    superset_mesh,
)
from gfnrom.gfn import (
    TransferChain,
    WeightBundle,
    agglomerate,
    agglomerate_transfer,
    expand,
    expand_transfer,
    general_transfer,
    gfn_transform,
    gfn_transform_decomposed,
    load_bundle,
    make_transfer_chain,
    save_bundle,
)
from gfnrom.mesh import Mesh


def line_mesh(*coords):
    return Mesh(np.array(coords).reshape(-1, 1))


def line_bundle(w_enc, w_dec, b_dec, coords, b_enc=None):
    w_enc = np.atleast_2d(np.asarray(w_enc, dtype=np.float64))
    if b_enc is None:
        b_enc = np.zeros(w_enc.shape[0])
    return WeightBundle(w_enc, b_enc, np.asarray(w_dec, dtype=np.float64),
                        np.asarray(b_dec, dtype=np.float64), line_mesh(*coords))


def assert_bundles_equal(a, b, atol=0.0):
    for name in ("w_enc", "b_enc", "w_dec", "b_dec"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=0.0, atol=atol)


class TestWeightBundle:
    def test_shape_validation(self):
        mesh = line_mesh(0.0, 1.0)
        with pytest.raises(ValueError, match="chain"):
            WeightBundle(np.zeros((3, 5)), np.zeros(3), np.zeros((5, 3)), np.zeros(5), mesh)
        with pytest.raises(ValueError):
            WeightBundle(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 3)), np.zeros(2), mesh)

    def test_dimensions(self):
        wb = line_bundle([[1.0, 2.0]], [[10.0], [20.0]], [1.0, 2.0], (0.0, 1.0))
        assert wb.width == 1
        assert wb.n_nodes == 2


class TestGeneralTransform:
    def test_split_to_finer_mesh(self):
        # node 0.0 relates to two target nodes, so its column halves
        wb = line_bundle([[1.0, 2.0]], [[10.0], [20.0]], [1.0, 2.0], (0.0, 1.0), b_enc=[0.25])
        out = gfn_transform(wb, line_mesh(0.0, 0.4, 1.0))
        assert out.w_enc.tolist() == [[0.5, 0.5, 2.0]]
        assert out.w_dec.tolist() == [[10.0], [10.0], [20.0]]
        assert out.b_dec.tolist() == [1.0, 1.0, 2.0]
        assert out.b_enc.tolist() == [0.25]
        assert out.mesh.nodes.ravel().tolist() == [0.0, 0.4, 1.0]

    def test_merge_to_coarser_mesh(self):
        wb = line_bundle([[1.0, 2.0, 4.0]], [[10.0], [20.0], [40.0]], [1.0, 2.0, 4.0],
                         (0.0, 0.4, 1.0))
        out = gfn_transform(wb, line_mesh(0.0, 1.0))
        assert out.w_enc.tolist() == [[3.0, 4.0]]
        assert out.w_dec.tolist() == [[15.0], [40.0]]
        assert out.b_dec.tolist() == [1.5, 4.0]

    def test_same_mesh_is_copy(self):
        rng = np.random.default_rng(0)
        mesh = random_mesh(rng, 17)
        wb = random_bundle(rng, 4, mesh)
        assert_bundles_equal(gfn_transform(wb, mesh), wb)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40),
           st.integers(1, 4), st.integers(1, 2))
    def test_matches_enumeration_oracle(self, seed, n_o, n_n, width, dim):
        rng = np.random.default_rng(seed)
        wb = random_bundle(rng, width, random_mesh(rng, n_o, dim))
        m_n = random_mesh(rng, n_n, dim)
        out = gfn_transform(wb, m_n)
        w_enc, b_enc, w_dec, b_dec = oracle_transform(wb, m_n)
        np.testing.assert_allclose(out.w_enc, w_enc, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(out.w_dec, w_dec, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(out.b_dec, b_dec, rtol=1e-13, atol=1e-15)
        assert np.array_equal(out.b_enc, b_enc)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 50), st.integers(1, 50))
    def test_encoder_mass_conservation(self, seed, n_o, n_n):
        # every source column is split by counts that sum back to one
        rng = np.random.default_rng(seed)
        wb = random_bundle(rng, 3, random_mesh(rng, n_o))
        out = gfn_transform(wb, random_mesh(rng, n_n))
        np.testing.assert_allclose(out.w_enc.sum(axis=1), wb.w_enc.sum(axis=1), rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
    def test_constant_decoder_preserved(self, seed, n_o, n_n):
        rng = np.random.default_rng(seed)
        mesh = random_mesh(rng, n_o)
        wb = WeightBundle(
            w_enc=rng.standard_normal((3, n_o)),
            b_enc=np.zeros(3),
            w_dec=np.tile(np.array([1.5, -2.0, 0.25]), (n_o, 1)),
            b_dec=np.full(n_o, 0.75),
            mesh=mesh,
        )
        out = gfn_transform(wb, random_mesh(rng, n_n))
        np.testing.assert_allclose(out.w_dec, np.tile(np.array([1.5, -2.0, 0.25]), (n_n, 1)))
        np.testing.assert_allclose(out.b_dec, np.full(n_n, 0.75))


class TestFastPaths:
    def test_expand_matches_general(self):
        wb = line_bundle([[1.0, 2.0]], [[10.0], [20.0]], [1.0, 2.0], (0.0, 1.0))
        m_n = line_mesh(0.0, 0.4, 1.0)
        assert_bundles_equal(expand(wb, m_n), gfn_transform(wb, m_n))

    def test_expand_single_source(self):
        wb = line_bundle([[7.0]], [[3.0]], [5.0], (0.0,))
        out = expand(wb, line_mesh(-1.0, 0.0, 2.0))
        np.testing.assert_allclose(out.w_enc, [[7.0 / 3, 7.0 / 3, 7.0 / 3]])
        assert out.w_dec.tolist() == [[3.0], [3.0], [3.0]]
        assert out.b_dec.tolist() == [5.0, 5.0, 5.0]

    def test_agglomerate_matches_general(self):
        wb = line_bundle([[1.0, 2.0, 4.0]], [[10.0], [20.0], [40.0]], [1.0, 2.0, 4.0],
                         (0.0, 0.4, 1.0))
        m_n = line_mesh(0.0, 1.0)
        assert_bundles_equal(agglomerate(wb, m_n), gfn_transform(wb, m_n))

    def test_agglomerate_groups(self):
        wb = line_bundle([[1.0, 2.0, 3.0, 4.0]], np.zeros((4, 1)), np.zeros(4),
                         (0.0, 0.1, 0.9, 1.0))
        out = agglomerate(wb, line_mesh(0.0, 1.0))
        assert out.w_enc.tolist() == [[3.0, 7.0]]

    def test_identity_both_ways(self):
        rng = np.random.default_rng(1)
        mesh = random_mesh(rng, 9)
        wb = random_bundle(rng, 2, mesh)
        assert_bundles_equal(expand(wb, mesh), wb)
        assert_bundles_equal(agglomerate(wb, mesh), wb)

    def test_precondition_errors(self):
        wb = line_bundle([[1.0, 2.0, 4.0]], [[10.0], [20.0], [40.0]], [1.0, 2.0, 4.0],
                         (0.0, 0.4, 1.0))
        with pytest.raises(ValueError, match="not expansive"):
            expand(wb, line_mesh(0.0, 1.0))
        wb2 = line_bundle([[1.0, 2.0]], [[10.0], [20.0]], [1.0, 2.0], (0.0, 1.0))
        with pytest.raises(ValueError, match="not agglomerative"):
            agglomerate(wb2, line_mesh(0.0, 0.4, 1.0))

    def test_unchecked_skips_validation(self):
        wb = line_bundle([[1.0, 2.0, 4.0]], [[10.0], [20.0], [40.0]], [1.0, 2.0, 4.0],
                         (0.0, 0.4, 1.0))
        # not expansive, but the one-sided formula is still computable
        out = expand(wb, line_mesh(0.0, 1.0), check=False)
        assert out.n_nodes == 2

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(0, 25))
    def test_expand_matches_general_randomized(self, seed, n_o, extra):
        rng = np.random.default_rng(seed)
        base = random_mesh(rng, n_o)
        wb = random_bundle(rng, 3, base)
        m_n = superset_mesh(rng, base, extra) if extra else base
        got = expand(wb, m_n)
        want = gfn_transform(wb, m_n)
        assert_bundles_equal(got, want, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 40))
    def test_agglomerate_matches_general_randomized(self, seed, n_o):
        rng = np.random.default_rng(seed)
        base = random_mesh(rng, n_o)
        wb = random_bundle(rng, 3, base)
        m_n = subset_mesh(rng, base, int(rng.integers(1, n_o + 1)))
        got = agglomerate(wb, m_n)
        want = gfn_transform(wb, m_n)
        assert_bundles_equal(got, want, atol=1e-14)

    def test_expansive_decoder_rows_are_bitwise_copies(self):
        rng = np.random.default_rng(5)
        base = random_mesh(rng, 20)
        wb = random_bundle(rng, 4, base)
        m_n = superset_mesh(rng, base, 15)
        out = expand(wb, m_n)
        bwd = base.nearest_many(m_n.nodes)
        assert np.array_equal(out.w_dec, wb.w_dec[bwd])
        assert np.array_equal(out.b_dec, wb.b_dec[bwd])


class TestDecomposition:
    def test_worked_example(self):
        wb = line_bundle([[1.0, 2.0]], [[10.0], [20.0]], [1.0, 2.0], (0.0, 1.0))
        m_n = line_mesh(0.0, 0.4, 1.0)
        assert_bundles_equal(gfn_transform_decomposed(wb, m_n), gfn_transform(wb, m_n))

    def test_neither_case_pair(self):
        wb = line_bundle([[1.0, 2.0, 3.0]], [[1.0], [2.0], [3.0]], [0.1, 0.2, 0.3],
                         (0.0, 0.3, 1.0))
        m_n = line_mesh(0.1, 1.0, 2.0)
        got = gfn_transform_decomposed(wb, m_n)
        w_enc, _, w_dec, b_dec = oracle_transform(wb, m_n)
        np.testing.assert_allclose(got.w_enc, w_enc, rtol=1e-14)
        np.testing.assert_allclose(got.w_dec, w_dec, rtol=1e-14)
        np.testing.assert_allclose(got.b_dec, b_dec, rtol=1e-14)

    def test_identity(self):
        rng = np.random.default_rng(2)
        mesh = random_mesh(rng, 11)
        wb = random_bundle(rng, 3, mesh)
        assert_bundles_equal(gfn_transform_decomposed(wb, mesh), wb)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.integers(1, 60),
           st.integers(1, 2))
    def test_equals_direct_transform(self, seed, n_o, n_n, dim):
        rng = np.random.default_rng(seed)
        wb = random_bundle(rng, 3, random_mesh(rng, n_o, dim))
        m_n = random_mesh(rng, n_n, dim)
        got = gfn_transform_decomposed(wb, m_n)
        want = gfn_transform(wb, m_n)
        scale = max(float(np.abs(want.w_enc).max()), 1.0)
        assert np.abs(got.w_enc - want.w_enc).max() <= 1e-12 * scale
        assert_bundles_equal(got, want, atol=1e-12)


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(0, 20))
    def test_expansive_forth_and_back(self, seed, n_o, extra):
        rng = np.random.default_rng(seed)
        base = random_mesh(rng, n_o)
        wb = random_bundle(rng, 3, base)
        m_n = superset_mesh(rng, base, extra) if extra else base
        back = gfn_transform(gfn_transform(wb, m_n), base)
        assert_bundles_equal(back, wb, atol=1e-14)


class TestTransferAdjoints:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 30))
    def test_inner_product_identity(self, seed, n_o, n_n):
        # <A x, y> must equal <x, At y> for each of the three operators
        rng = np.random.default_rng(seed)
        m_o = random_mesh(rng, n_o)
        m_n = random_mesh(rng, n_n)
        t = general_transfer(m_o, m_n)
        x = rng.standard_normal((4, n_o))
        y = rng.standard_normal((4, n_n))
        lhs = float((t.apply_enc(x) * y).sum())
        rhs = float((x * t.adjoint_enc(y)).sum())
        assert abs(lhs - rhs) < 1e-10
        xw = rng.standard_normal((n_o, 4))
        yw = rng.standard_normal((n_n, 4))
        assert abs(float((t.apply_dec_w(xw) * yw).sum()) - float((xw * t.adjoint_dec_w(yw)).sum())) < 1e-10
        xb = rng.standard_normal(n_o)
        yb = rng.standard_normal(n_n)
        assert abs(float(t.apply_dec_b(xb) @ yb) - float(xb @ t.adjoint_dec_b(yb))) < 1e-10

    def test_chain_applies_stages_in_order(self):
        rng = np.random.default_rng(3)
        m_o = random_mesh(rng, 12)
        m_n = random_mesh(rng, 19)
        chain = make_transfer_chain(m_o, m_n)
        wb = random_bundle(rng, 3, m_o)
        assert_bundles_equal(chain.apply(wb), gfn_transform(wb, m_n), atol=1e-12)


class TestBundleIO:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(4)
        wb = random_bundle(rng, 5, random_mesh(rng, 13, dim=2))
        save_bundle(wb, tmp_path / "ckpt", extra={"note": 7})
        back, extra = load_bundle(tmp_path / "ckpt")
        for name in ("w_enc", "b_enc", "w_dec", "b_dec"):
            assert np.array_equal(getattr(back, name), getattr(wb, name))
        assert np.array_equal(back.mesh.nodes, wb.mesh.nodes)
        assert extra["note"] == 7
