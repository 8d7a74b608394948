import numpy as np
import pydantic
import pytest
from hypothesis import given, settings, strategies as st

from app.services.errors import ModelSpecError
from app.sysid.model import (
    ModelCoefficients,
    PolyModelSpec,
    affine_maps,
    default_spec,
    equation_errors,
    eval_e,
    eval_f,
    eval_g,
    flatten,
    identity_coefficients,
    jacobian_e,
    jacobian_f_u,
    jacobian_f_x,
    load_model,
    monomials,
    sample_points,
    save_model,
    unflatten,
)
from app.sysid.systems import SyntheticSystem, reference_model


def test_monomials_are_graded():
    assert monomials(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert monomials(2, 2, min_degree=2) == [(2, 0), (1, 1), (0, 2)]
    assert monomials(0, 3) == [()]


def test_default_spec_sizes():
    spec = default_spec(2, 1, 1, deg_e=1, deg_f=3, deg_g=1, deg_f_u=1)

    assert len(spec.basis_e) == 2
    assert len(spec.basis_f) == 20
    assert len(spec.basis_g) == 3
    assert spec.n_coef == 2 * 2 + 2 * 20 + 3
    assert all(mono[2] == 0 for mono in spec.basis_g)


@pytest.mark.parametrize("basis_e,basis_f", [
    ([(1, 0), (1, 0)], [(0, 0)]),
    ([(1, 0, 0)], [(0, 0)]),
    ([], [(0, 0)]),
    ([(1, 0)], [(0, 0, 1)]),
])
def test_spec_validation(basis_e, basis_f):
    with pytest.raises(pydantic.ValidationError):
        PolyModelSpec(n=2, m=0, p=1, basis_e=basis_e, basis_f=basis_f, basis_g=[(1, 0)])


def test_identity_model_evaluates_to_state():
    spec = default_spec(2, 0, 1)
    coefs = identity_coefficients(spec)

    np.testing.assert_array_equal(eval_e(spec, coefs, [1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_array_equal(jacobian_e(spec, coefs, [[1.0, 2.0], [-3.0, 0.5]]), [np.eye(2), np.eye(2)])
    np.testing.assert_array_equal(eval_g(spec, coefs, [1.0, 2.0]), [1.0])
    np.testing.assert_array_equal(eval_f(spec, coefs, [1.0, 2.0]), [0.0, 0.0])


def test_single_monomial_with_input():
    spec = PolyModelSpec(n=2, m=1, p=1, basis_e=[(1, 0), (0, 1)], basis_f=[(1, 0, 1)], basis_g=[(1, 0, 0)])
    coefs = ModelCoefficients(coef_e=np.eye(2), coef_f=[[1.0], [0.0]], coef_g=[[1.0]])

    np.testing.assert_array_equal(eval_f(spec, coefs, [3.0, 7.0], [2.0]), [6.0, 0.0])
    np.testing.assert_array_equal(jacobian_f_x(spec, coefs, [3.0, 7.0], [2.0]), [[2.0, 0.0], [0.0, 0.0]])
    np.testing.assert_array_equal(jacobian_f_u(spec, coefs, [3.0, 7.0], [2.0]), [[3.0], [0.0]])


def test_jacobian_of_square():
    spec = PolyModelSpec(n=2, m=0, p=1, deg_e=2, basis_e=[(2, 0), (0, 1)], basis_f=[(0, 0)], basis_g=[(1, 0)])
    coefs = ModelCoefficients(coef_e=np.eye(2), coef_f=[[0.0], [0.0]], coef_g=[[1.0]])

    np.testing.assert_array_equal(jacobian_e(spec, coefs, [3.0, 1.0]), [[6.0, 0.0], [0.0, 1.0]])


def test_inputs_are_required_when_the_model_has_them():
    spec = default_spec(2, 1, 1)

    with pytest.raises(ModelSpecError, match="u was not given"):
        eval_f(spec, identity_coefficients(spec), [1.0, 2.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=2), st.integers(0, 2 ** 31 - 1))
def test_jacobians_match_finite_differences(x, seed):
    spec = default_spec(2, 1, 1, deg_e=3, deg_f=3, deg_g=2)
    theta = np.random.default_rng(seed).standard_normal(spec.n_coef)
    coefs = unflatten(spec, theta)
    x, u, h = np.array(x), np.array([0.3]), 1e-6

    for j in range(2):
        step = h * np.eye(2)[j]
        fd_e = (eval_e(spec, coefs, x + step) - eval_e(spec, coefs, x - step)) / (2 * h)
        fd_f = (eval_f(spec, coefs, x + step, u) - eval_f(spec, coefs, x - step, u)) / (2 * h)
        np.testing.assert_allclose(jacobian_e(spec, coefs, x)[:, j], fd_e, atol=1e-6)
        np.testing.assert_allclose(jacobian_f_x(spec, coefs, x, u)[:, j], fd_f, atol=1e-6)


def test_flatten_layout():
    spec = default_spec(2, 0, 1, deg_f=1)
    theta = np.arange(spec.n_coef, dtype=float)

    coefs = unflatten(spec, theta)

    np.testing.assert_array_equal(coefs.coef_e, [[0, 1], [2, 3]])
    np.testing.assert_array_equal(coefs.coef_f[0], [4, 5, 6])
    np.testing.assert_array_equal(flatten(coefs), theta)
    with pytest.raises(ModelSpecError):
        unflatten(spec, theta[:-1])


def test_coefficients_reject_non_finite_entries():
    with pytest.raises(ModelSpecError, match="non-finite"):
        ModelCoefficients(coef_e=[[np.nan]], coef_f=[[0.0]], coef_g=[[1.0]])


def test_coefficient_shapes_are_checked():
    spec = default_spec(2, 0, 1)

    with pytest.raises(ModelSpecError, match="coef_e"):
        ModelCoefficients(coef_e=np.eye(3), coef_f=np.zeros((2, 10)), coef_g=np.zeros((1, 3))).check(spec)


def test_generator_has_zero_equation_error(van_der_pol_truth):
    spec, coefs = reference_model(SyntheticSystem(kind="van_der_pol", mu=1.0))

    eps_x, eps_y = equation_errors(spec, coefs, van_der_pol_truth)

    assert np.abs(eps_x).max() < 1e-12
    assert np.abs(eps_y).max() == 0.0


def test_zero_dynamics_errors(van_der_pol_truth):
    spec, coefs = reference_model(SyntheticSystem(kind="van_der_pol"))
    zero = ModelCoefficients(coef_e=coefs.coef_e, coef_f=np.zeros_like(coefs.coef_f), coef_g=np.zeros_like(coefs.coef_g))

    eps_x, eps_y = equation_errors(spec, zero, van_der_pol_truth)

    np.testing.assert_array_equal(eps_x, van_der_pol_truth.xdot)
    np.testing.assert_array_equal(eps_y, van_der_pol_truth.y)


def test_record_dimensions_must_match(circle_record):
    spec = default_spec(2, 1, 1)

    with pytest.raises(ModelSpecError, match="do not match"):
        equation_errors(spec, identity_coefficients(spec), circle_record)


def test_affine_maps_constant_part(van_der_pol_truth):
    spec = default_spec(2, 1, 1)

    maps = affine_maps(spec, van_der_pol_truth)
    zero = np.zeros(spec.n_coef)

    assert maps.N == van_der_pol_truth.N
    assert not maps.E.evaluate(zero).any()
    assert not maps.F.evaluate(zero).any()
    assert not maps.eps_x.evaluate(zero).any()
    np.testing.assert_array_equal(maps.eps_y.evaluate(zero), van_der_pol_truth.y)


def test_affine_maps_agree_with_numeric_model(van_der_pol_truth):
    spec = default_spec(2, 1, 1, deg_e=2)
    theta = np.random.default_rng(3).standard_normal(spec.n_coef)
    coefs = unflatten(spec, theta)
    record = van_der_pol_truth.segment(0, 50)

    maps = affine_maps(spec, record)
    points = sample_points(spec, coefs, record)

    eps_x, eps_y = equation_errors(spec, coefs, record)
    np.testing.assert_allclose(maps.eps_x.evaluate(theta), eps_x, atol=1e-10)
    np.testing.assert_allclose(maps.eps_y.evaluate(theta), eps_y, atol=1e-10)
    for k in (0, 17, 49):
        at = maps.at(k)
        np.testing.assert_allclose(at.E.evaluate(theta), points[k].E, atol=1e-10)
        np.testing.assert_allclose(at.F.evaluate(theta), points[k].F, atol=1e-10)
        np.testing.assert_allclose(at.G.evaluate(theta), points[k].G, atol=1e-10)


def test_sample_points_without_frames_are_full_space(circle_record, rotation_model):
    spec, coefs = rotation_model

    points = sample_points(spec, coefs, circle_record)

    assert all(point.degenerate for point in points)
    np.testing.assert_array_equal(points[0].Pi_r, np.eye(2))


def test_model_file_round_trip(tmp_path):
    spec, coefs = reference_model(SyntheticSystem(kind="fitzhugh_nagumo"))
    P = np.array([[2.0, 0.1], [0.1, 1.0 / 3.0]])

    path = save_model(tmp_path / "model.json", spec, coefs, P=P, meta={"kind": "trie"})
    document = load_model(path)

    assert document.spec == spec
    np.testing.assert_array_equal(document.to_coefficients().coef_f, coefs.coef_f)
    np.testing.assert_array_equal(np.array(document.metric["P"]), P)
    assert document.meta == {"kind": "trie"}


def test_load_model_errors(tmp_path):
    with pytest.raises(ModelSpecError, match="not found"):
        load_model(tmp_path / "absent.json")

    broken = tmp_path / "broken.json"
    broken.write_text('{"spec": {"n": 2}}')
    with pytest.raises(ModelSpecError, match="invalid model file"):
        load_model(broken)
