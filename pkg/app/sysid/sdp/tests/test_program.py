import numpy as np
import pytest
import scipy.sparse as sp

from app.sysid.sdp.program import (
    AffineMatrix,
    ConicProgram,
    PsdBlock,
    VariableLayout,
    svec,
    to_sdpa,
    to_standard_form,
    unvech,
    vech,
    vech_index,
)


def random_affine(rng, shape, n_vars):
    return AffineMatrix(const=rng.standard_normal(shape), lin=sp.random(shape[0] * shape[1], n_vars, density=0.5, random_state=1))


def completion_program():
    """min x0 + x1 subject to [[x0, 1], [1, x1]] >= 0; optimum 2 at x0 = x1 = 1."""
    layout = VariableLayout(n_coef=2)
    M = AffineMatrix.variables([[0, -1], [-1, 1]], 2) + np.array([[0.0, 1.0], [1.0, 0.0]])
    return ConicProgram(layout=layout, objective=np.ones(2), blocks=[PsdBlock(name="completion", group="trie", matrix=M)])


def test_vech_helpers():
    M = np.array([[1.0, 2.0, 4.0], [2.0, 3.0, 5.0], [4.0, 5.0, 6.0]])

    np.testing.assert_array_equal(vech(M), [1.0, 2.0, 4.0, 3.0, 5.0, 6.0])
    np.testing.assert_array_equal(unvech(vech(M), 3), M)
    np.testing.assert_array_equal(vech_index(2), [[0, 1], [1, 2]])


def test_svec_preserves_the_inner_product():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((2, 4, 4))
    A, B = A + A.T, B + B.T

    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))


def test_layout_offsets():
    layout = VariableLayout(n_coef=13, n_metric=2, n_slack=10)

    assert layout.n_vars == 13 + 3 + 10
    assert layout.slack(0) == 16
    np.testing.assert_array_equal(layout.metric_indices(), [[13, 14], [14, 15]])
    with pytest.raises(IndexError):
        layout.slack(10)

    x = np.arange(layout.n_vars, dtype=float)
    np.testing.assert_array_equal(layout.slacks(x), np.arange(16, 26))
    np.testing.assert_array_equal(layout.metric(x), [[13.0, 14.0], [14.0, 15.0]])
    assert VariableLayout(n_coef=2).metric(np.zeros(2)) is None


def test_affine_algebra_matches_numpy():
    rng = np.random.default_rng(4)
    n_vars = 6
    A = random_affine(rng, (3, 2), n_vars)
    B = random_affine(rng, (3, 2), n_vars)
    L, R = rng.standard_normal((4, 3)), rng.standard_normal((2, 5))
    x = rng.standard_normal(n_vars)
    a, b = A.evaluate(x), B.evaluate(x)

    np.testing.assert_allclose((A + B).evaluate(x), a + b)
    np.testing.assert_allclose((A - 2.0 * B).evaluate(x), a - 2.0 * b)
    np.testing.assert_allclose(A.lmul(L).evaluate(x), L @ a)
    np.testing.assert_allclose(A.rmul(R).evaluate(x), a @ R)
    np.testing.assert_allclose(A.T.evaluate(x), a.T)
    np.testing.assert_allclose(A.lmul(A.const.T).sym().evaluate(x), 0.5 * (A.const.T @ a + a.T @ A.const))
    np.testing.assert_allclose(A.fix(x).evaluate(np.zeros(n_vars)), a)


def test_bmat_places_blocks():
    rng = np.random.default_rng(5)
    n_vars = 3
    A, B = random_affine(rng, (2, 2), n_vars), random_affine(rng, (1, 2), n_vars)
    C = AffineMatrix.constant([[7.0]], n_vars)
    x = rng.standard_normal(n_vars)
    a, b, c = A.evaluate(x), B.evaluate(x), np.array([[7.0]])

    M = AffineMatrix.bmat([[A, B.T], [B, C]]).evaluate(x)
    Z = AffineMatrix.bmat([[A, None], [None, C]]).evaluate(x)

    assert M.shape == (3, 3)
    np.testing.assert_allclose(M[:2, :2], a)
    np.testing.assert_allclose(M[:2, 2:], b.T)
    np.testing.assert_allclose(M[2:, :2], b)
    np.testing.assert_allclose(M[2:, 2:], c)
    np.testing.assert_allclose(M, np.block([[a, b.T], [b, c]]))
    np.testing.assert_allclose(Z[:2, :2], a)
    np.testing.assert_allclose(Z[:2, 2], 0.0)
    np.testing.assert_allclose(Z[2, :2], 0.0)
    np.testing.assert_allclose(Z[2:, 2:], c)
    with pytest.raises(ValueError, match="shape"):
        AffineMatrix.bmat([[A, B], [B, C]])


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        AffineMatrix.zeros(2, 2, 1) + AffineMatrix.zeros(2, 3, 1)
    with pytest.raises(ValueError, match="rows"):
        AffineMatrix(const=np.zeros((2, 2)), lin=sp.csr_matrix((3, 1)))


def test_program_validation():
    layout = VariableLayout(n_coef=2)
    square = PsdBlock(name="b", group="trie", matrix=AffineMatrix.zeros(2, 2, 2))

    with pytest.raises(ValueError, match="objective"):
        ConicProgram(layout=layout, objective=np.zeros(3), blocks=[square])
    with pytest.raises(ValueError, match="acts on"):
        ConicProgram(layout=layout, objective=np.zeros(2), blocks=[PsdBlock("b", "trie", AffineMatrix.zeros(2, 2, 3))])
    with pytest.raises(ValueError, match="not square"):
        ConicProgram(layout=layout, objective=np.zeros(2), blocks=[PsdBlock("b", "trie", AffineMatrix.zeros(2, 3, 2))])


def test_program_diagnostics():
    program = completion_program()

    np.testing.assert_allclose(program.block_min_eigs(np.array([1.0, 1.0])), [0.0], atol=1e-12)
    assert program.block_min_eigs(np.array([0.0, 0.0]))[0] == pytest.approx(-1.0)
    assert program.block_counts() == {"trie": 1}
    assert program.equality_residual(np.zeros(2)) == 0.0
    assert program.objective_value(np.array([1.0, 2.0])) == 3.0


def test_standard_form_reproduces_the_blocks():
    program = completion_program()
    x = np.array([0.3, -1.2])

    form = to_standard_form(program)

    assert form.sizes == [2]
    np.testing.assert_allclose(form.b0 + form.A @ x, svec(program.blocks[0].matrix.evaluate(x)))


def test_sdpa_export(tmp_path):
    program = completion_program()
    program = ConicProgram(
        layout=program.layout,
        objective=program.objective,
        blocks=program.blocks,
        eq_matrix=sp.csr_matrix([[1.0, -1.0]]),
        eq_rhs=np.array([0.0]),
    )

    path = to_sdpa(program, tmp_path / "program.dat-s")
    lines = path.read_text().splitlines()

    assert lines[0].startswith("*")
    assert lines[1:4] == ["2", "2", "2 -2"]
    assert lines[4] == "1 1"
    assert "0 1 1 2 -1" in lines
    assert "1 1 1 1 1" in lines
    assert "2 1 2 2 1" in lines
    assert "1 2 1 1 1" in lines and "2 2 2 2 1" in lines
