import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from app.services.errors import ModelSpecError
from app.sysid.geometry import frame_at, frames_along
from app.sysid.model import SamplePointData, sample_points
from app.sysid.objective import (
    Metric,
    breakdown,
    integrate_costs,
    relaxation_terms,
    rie_hat_local,
    rie_local,
    storage,
    sup_quadratic,
    total_cost,
    trie_form,
    trie_hat_form,
    trie_hat_local,
    trie_hat_quadratic,
    trie_local,
    trie_quadratic,
)
from app.sysid.systems import SyntheticSystem, reference_model


def make_sample(E, F, G, eps_x, eps_y, xdot=None, xddot=None):
    E, F, G = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (E, F, G))
    n = E.shape[0]
    if xdot is None:
        frame = dict(pi=np.zeros((n, n)), Pi=np.eye(n), Pi_r=np.eye(n), Pi_dot=np.zeros((n, n)), degenerate=True)
    else:
        f = frame_at(xdot, np.zeros(n) if xddot is None else xddot)
        frame = dict(pi=f.pi, Pi=f.Pi, Pi_r=f.Pi_r, Pi_dot=f.Pi_dot, degenerate=f.degenerate)
    return SamplePointData(
        E=E, F=F, G=G, eps_x=np.atleast_1d(np.asarray(eps_x, dtype=float)),
        eps_y=np.atleast_1d(np.asarray(eps_y, dtype=float)), **frame,
    )


def random_sample(rng, n=3, p=1, contracting=True):
    E = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    F = (-5.0 if contracting else 0.0) * np.eye(n) + 0.3 * rng.standard_normal((n, n))
    G = 0.3 * rng.standard_normal((p, n))
    xdot = rng.standard_normal(n)
    return make_sample(
        E, F, G, rng.standard_normal(n), rng.standard_normal(p),
        xdot=xdot / np.linalg.norm(xdot), xddot=0.2 * rng.standard_normal(n),
    )


@pytest.mark.parametrize("H,h,c,expected", [
    (-1.0, 1.0, 0.0, 1.0),
    (0.0, 0.0, 5.0, 5.0),
    (-2.0, 1.0, 0.0, 0.5),
    ([[-1.0, 0.0], [0.0, 0.0]], [1.0, 0.0], 2.0, 3.0),
    ([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], 0.0, np.inf),
    (0.0, 1.0, 0.0, np.inf),
    ([[-1.0, 0.0], [0.0, 1e-12]], [0.0, 0.0], 1.0, 1.0),
])
def test_sup_quadratic(H, h, c, expected):
    assert sup_quadratic(H, h, c) == pytest.approx(expected)


def test_metric_validation():
    with pytest.raises(ModelSpecError, match="symmetric"):
        Metric(Q=[[1.0, 1.0], [0.0, 1.0]], P=np.eye(2))
    with pytest.raises(ModelSpecError, match="positive definite"):
        Metric.from_Q([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ModelSpecError, match="inconsistent"):
        Metric(Q=np.eye(2), P=2 * np.eye(2))

    metric = Metric.from_P([[2.0, 0.0], [0.0, 0.5]])
    np.testing.assert_allclose(metric.Q, [[0.5, 0.0], [0.0, 2.0]])


def test_metric_pair_tolerance_is_absolute():
    Q = np.diag([1.0, 1e5])
    P = np.linalg.inv(Q)
    Metric(Q=Q, P=P + np.diag([0.0, 0.5e-8 / 1e5]))
    with pytest.raises(ModelSpecError, match="inconsistent"):
        Metric(Q=Q, P=P + np.diag([0.0, 2e-8 / 1e5]))

    rng = np.random.default_rng(11)
    V = ortho_group.rvs(3, random_state=rng)
    metric = Metric.from_P(V @ np.diag([1e-3, 1.0, 5.0]) @ V.T)
    assert np.linalg.norm(metric.Q @ metric.P - np.eye(3)) < 1e-8


def test_rie_local_scalar_examples():
    metric = Metric.identity(1)

    assert rie_local(make_sample(1.0, -1.0, 1.0, 1.0, 0.0), metric) == pytest.approx(1.0)
    assert rie_local(make_sample(1.0, -1.0, 0.0, 0.0, 0.0), metric) == 0.0
    assert rie_local(make_sample(1.0, 1.0, 0.0, 0.0, 0.0), metric) == np.inf


def test_rie_local_matches_grid_search():
    rng = np.random.default_rng(11)
    sample = random_sample(rng, n=2).without_frame()
    metric = Metric.identity(2)
    H, h, c = trie_quadratic(sample, metric)
    best = -np.linalg.solve(H, h)

    value = rie_local(sample, metric)

    grid = best + np.stack(np.meshgrid(np.linspace(-1, 1, 41), np.linspace(-1, 1, 41)), -1).reshape(-1, 2)
    assert max(trie_form(sample, metric, d) for d in grid) <= value + 1e-9
    assert trie_form(sample, metric, best) == pytest.approx(value, abs=1e-9)


def test_trie_is_finite_where_rie_is_not():
    # the only expanding direction of F is the velocity
    sample = make_sample(np.eye(2), np.diag([1.0, -1.0]), [[0.0, 0.0]], [0.0, 0.0], [0.0], xdot=[1.0, 0.0])
    metric = Metric.identity(2)

    np.testing.assert_array_equal(sample.Pi, [[0.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(np.abs(sample.Pi_r), [[0.0], [1.0]])
    assert rie_local(sample, metric) == np.inf
    assert trie_local(sample, metric) == 0.0


def test_degenerate_samples_use_the_full_space():
    sample = make_sample(np.eye(2), np.diag([1.0, -1.0]), [[0.0, 0.0]], [0.0, 0.0], [0.0], xdot=[0.0, 0.0])

    assert sample.degenerate
    assert trie_local(sample, Metric.identity(2)) == np.inf
    assert trie_hat_local(sample, Metric.identity(2)) == rie_hat_local(sample, Metric.identity(2))


def test_trie_local_is_the_subspace_supremum():
    rng = np.random.default_rng(5)
    sample, metric = random_sample(rng), Metric.from_Q(np.diag([1.0, 2.0, 0.5]))
    H, h, _ = trie_quadratic(sample, metric)
    best = -np.linalg.solve(H, h)

    value = trie_local(sample, metric)

    assert np.isfinite(value)
    assert trie_form(sample, metric, best) == pytest.approx(value, rel=1e-9, abs=1e-9)
    for d in best + 0.5 * rng.standard_normal((200, 2)):
        assert trie_form(sample, metric, d) <= value + 1e-9 * (1 + abs(value))


def test_local_costs_ignore_the_reduced_basis():
    rng = np.random.default_rng(8)
    sample, metric = random_sample(rng, n=4), Metric.identity(4)
    R = ortho_group.rvs(3, random_state=3)
    remixed = SamplePointData(**{**sample.__dict__, "Pi_r": sample.Pi_r @ R})

    assert trie_local(remixed, metric) == pytest.approx(trie_local(sample, metric), rel=1e-9)
    assert trie_hat_local(remixed, metric) == pytest.approx(trie_hat_local(sample, metric), rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 4), st.booleans())
def test_relaxed_cost_bounds_the_transverse_cost(seed, n, contracting):
    rng = np.random.default_rng(seed)
    sample = random_sample(rng, n=n, contracting=contracting)
    metric = Metric.from_Q(np.eye(n) + 0.1 * np.diag(rng.random(n)))

    exact, relaxed = trie_local(sample, metric), trie_hat_local(sample, metric)

    if np.isfinite(relaxed):
        assert exact <= relaxed + 1e-8 * (1 + abs(relaxed))
    delta = rng.standard_normal(n - 1)
    assert trie_form(sample, metric, delta) <= trie_hat_form(sample, metric, delta) + 1e-9 * (1 + abs(trie_hat_form(sample, metric, delta)))


def test_relaxed_quadratic_matches_its_form():
    rng = np.random.default_rng(2)
    sample, metric = random_sample(rng), Metric.from_Q(np.diag([2.0, 1.0, 0.5]))
    H, h, c = trie_hat_quadratic(sample, metric)

    for d in rng.standard_normal((20, 2)):
        assert d @ H @ d + 2 * h @ d + c == pytest.approx(trie_hat_form(sample, metric, d), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_difference_of_squares_identity(seed):
    rng = np.random.default_rng(seed)
    sample = random_sample(rng)
    Q = ortho_group.rvs(3, random_state=seed % 1000)
    Q = Q @ np.diag(0.5 + rng.random(3)) @ Q.T
    metric = Metric.from_Q(Q)
    delta = rng.standard_normal(2)
    z = sample.Pi_r @ delta

    e_plus, e_minus, _ = relaxation_terms(sample, delta)
    lhs = 4 * (sample.E @ z) @ metric.Q @ ((sample.F + sample.E @ sample.Pi_dot) @ z + sample.eps_x)
    rhs = e_plus @ metric.Q @ e_plus - e_minus @ metric.Q @ e_minus

    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_scalar_relaxation_inequality(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    metric = Metric.from_Q(A @ A.T + 0.1 * np.eye(3))
    a, delta = rng.standard_normal(3), rng.standard_normal(3)

    def bound(d):
        return d @ metric.P @ d - 2 * d @ a

    assert -a @ metric.Q @ a <= bound(delta) + 1e-9 * (1 + abs(bound(delta)))
    assert bound(metric.Q @ a) == pytest.approx(-a @ metric.Q @ a, rel=1e-9, abs=1e-12)


def test_limit_cycle_costs(hopf_system, hopf_truth):
    spec, coefs = reference_model(hopf_system)
    frames = frames_along(hopf_truth)
    metric = Metric.identity(2)

    assert total_cost(hopf_truth, frames, spec, coefs, metric, "eq") == 0.0
    assert total_cost(hopf_truth, frames, spec, coefs, metric, "trie") == 0.0
    assert total_cost(hopf_truth, frames, spec, coefs, metric, "trie_hat") == pytest.approx(0.0, abs=1e-12)
    assert total_cost(hopf_truth, frames, spec, coefs, metric, "rie") == np.inf


def test_circle_without_output_has_zero_transverse_cost(circle_record, rotation_model):
    spec, coefs = rotation_model
    record = type(circle_record)(
        dt=circle_record.dt, x=circle_record.x, xdot=circle_record.xdot, xddot=circle_record.xddot,
        u=circle_record.u, y=np.zeros_like(circle_record.y),
    )
    silent = type(coefs)(coef_e=coefs.coef_e, coef_f=coefs.coef_f, coef_g=np.zeros_like(coefs.coef_g))

    samples = sample_points(spec, silent, record, frames_along(record))

    assert max(trie_local(sample, Metric.identity(2)) for sample in samples) == pytest.approx(0.0, abs=1e-12)


def test_storage_splits_along_the_projectors():
    sample = make_sample(2 * np.eye(2), -np.eye(2), [[1.0, 0.0]], [0.0, 0.0], [0.0], xdot=[1.0, 0.0])

    assert storage(sample, Metric.identity(2), [3.0, 4.0]) == pytest.approx(4 * 16 + 9)


def test_integrate_costs():
    assert integrate_costs([1.0, 2.0, 3.0], 0.5) == 3.0
    assert integrate_costs([1.0, 2.0, 3.0], 0.5, weighting="sum") == 6.0
    assert integrate_costs([0.0, np.inf, 1.0], 0.1) == np.inf
    assert integrate_costs(np.zeros(5), 0.1) == 0.0


def test_total_cost_matches_a_naive_sum(van_der_pol_truth):
    spec, coefs = reference_model(SyntheticSystem(kind="van_der_pol"))
    coefs = type(coefs)(coef_e=coefs.coef_e, coef_f=0.9 * coefs.coef_f, coef_g=coefs.coef_g)
    frames = frames_along(van_der_pol_truth)
    samples = sample_points(spec, coefs, van_der_pol_truth)

    naive = 0.0
    for sample in samples:
        naive += sample.eps_x @ sample.eps_x + sample.eps_y @ sample.eps_y

    assert total_cost(van_der_pol_truth, frames, spec, coefs, Metric.identity(2), "eq") == pytest.approx(
        naive * van_der_pol_truth.dt, rel=1e-12
    )
    with pytest.raises(ValueError, match="unknown cost kind"):
        total_cost(van_der_pol_truth, frames, spec, coefs, Metric.identity(2), "huber")


def test_breakdown_frame(hopf_system, hopf_truth):
    spec, coefs = reference_model(hopf_system)
    record = hopf_truth.segment(0, 20)

    table = breakdown(sample_points(spec, coefs, record, frames_along(record)), Metric.identity(2)).to_frame()

    assert list(table.columns) == [
        "sample", "eq_error", "rie_bar", "trie_bar", "trie_hat", "rie_finite", "trie_finite", "trie_hat_finite", "degenerate",
    ]
    assert table["trie_finite"].all()
    assert not table["degenerate"].any()
