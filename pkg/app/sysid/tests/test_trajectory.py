import numpy as np
import pydantic
import pytest

from app.services.errors import DataValidationError
from app.sysid.systems import SyntheticSystem
from app.sysid.trajectory import (
    ForcingSpec,
    LaguerreBank,
    RawSeries,
    SmootherConfig,
    TrajectoryRecord,
    build_state,
    gen_synthetic,
    laguerre_states,
    load_csv,
    load_record_csv,
    resample_uniform,
    save_raw_csv,
    save_record_csv,
    smooth_and_differentiate,
    split_record,
)


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_csv(tmp_path):
    path = write_csv(tmp_path, "t,u1,y1\n0,0,1\n0.1,0,2\n0.2,0,3\n")

    raw = load_csv(path)

    assert (raw.N, raw.m, raw.p) == (3, 1, 1)
    np.testing.assert_array_equal(raw.outputs[:, 0], [1.0, 2.0, 3.0])
    assert raw.is_uniform()


def test_load_csv_without_inputs(tmp_path):
    raw = load_csv(write_csv(tmp_path, "t,y1,y2\n0,1,4\n1,2,5\n2,3,6\n"))

    assert (raw.m, raw.p) == (0, 2)


def test_load_csv_rejects_non_monotone_time(tmp_path):
    path = write_csv(tmp_path, "t,u1,y1\n0,0,1\n0.1,0,2\n0.1,0,3\n")

    with pytest.raises(DataValidationError, match="non-monotone time at row 3") as e:
        load_csv(path)
    assert e.value.row == 3


def test_load_csv_rejects_nan(tmp_path):
    path = write_csv(tmp_path, "t,u1,y1\n0,0,1\n0.1,0,NaN\n0.2,0,3\n")

    with pytest.raises(DataValidationError, match="column y1 at row 2") as e:
        load_csv(path)
    assert e.value.column == "y1"


@pytest.mark.parametrize("text,message", [
    ("time,y1\n0,1\n1,2\n", "first column must be 't'"),
    ("t,u1,z1\n0,0,1\n1,0,2\n", "unexpected columns"),
    ("t,u1\n0,0\n1,0\n", "output column"),
])
def test_load_csv_rejects_bad_headers(tmp_path, text, message):
    with pytest.raises(DataValidationError, match=message):
        load_csv(write_csv(tmp_path, text))


def test_load_csv_missing_file_names_the_path(tmp_path):
    with pytest.raises(DataValidationError, match="absent.csv"):
        load_csv(tmp_path / "absent.csv")


def test_smoother_keeps_constants():
    smoothed, derivative = smooth_and_differentiate(np.full(40, 5.0), 0.1, SmootherConfig(window=7, poly_degree=3))

    np.testing.assert_allclose(smoothed, 5.0, atol=1e-12)
    np.testing.assert_allclose(derivative, 0.0, atol=1e-12)


def test_smoother_reproduces_linear_slope():
    dt = 0.1
    t = dt * np.arange(50)

    _, derivative = smooth_and_differentiate(2.0 * t, dt, SmootherConfig(window=5, poly_degree=2))

    assert np.abs(derivative[2:-2] - 2.0).max() < 1e-10


def test_smoother_differentiates_sine():
    dt = 0.01
    t = dt * np.arange(1000)

    _, derivative = smooth_and_differentiate(np.sin(t), dt, SmootherConfig(window=11, poly_degree=3))

    assert np.abs(derivative[5:-5] - np.cos(t[5:-5])).max() < 1e-6


def test_smoother_window_larger_than_record():
    with pytest.raises(DataValidationError, match="smoothing window"):
        smooth_and_differentiate(np.zeros(5), 0.1, SmootherConfig(window=11, poly_degree=3))


@pytest.mark.parametrize("settings", [{"window": 10}, {"window": 5, "poly_degree": 5}, {"window": 3}])
def test_smoother_config_validation(settings):
    with pytest.raises(pydantic.ValidationError):
        SmootherConfig(**settings)


def test_laguerre_zero_input():
    z, rates = laguerre_states(np.zeros(100), 0.01, LaguerreBank(pole=2.0, order=3))

    assert z.shape == (100, 3)
    assert not z.any()
    assert not rates.any()


@pytest.mark.parametrize("hold", ["foh", "zoh"])
def test_laguerre_first_order_step(hold):
    dt = 0.01
    z, rates = laguerre_states(np.ones(2001), dt, LaguerreBank(pole=2.0, order=1, hold=hold))

    assert abs(z[100, 0] - (1.0 - np.exp(-2.0))) < 1e-9
    assert abs(z[-1, 0] - 1.0) < 1e-12
    np.testing.assert_allclose(rates[:, 0], 2.0 * (1.0 - z[:, 0]), atol=1e-12)


def test_laguerre_rates_match_central_differences():
    dt = 0.001
    t = dt * np.arange(5000)
    z, rates = laguerre_states(np.sin(2.0 * t), dt, LaguerreBank(pole=1.5, order=2))

    central = (z[2:] - z[:-2]) / (2 * dt)
    assert np.abs(central - rates[1:-1]).max() < 1e-5


def test_laguerre_bank_needs_a_filter():
    with pytest.raises(pydantic.ValidationError):
        LaguerreBank(pole=1.0, order=0)
    with pytest.raises(pydantic.ValidationError):
        LaguerreBank()


def test_build_state_dimensions():
    t = 0.01 * np.arange(500)
    raw = RawSeries(times=t, inputs=np.zeros((500, 1)), outputs=np.sin(t)[:, None])

    record = build_state(raw, LaguerreBank(pole=1.0, order=2), SmootherConfig())

    assert (record.n, record.m, record.p) == (3, 1, 1)
    assert record.N == 500
    np.testing.assert_allclose(record.x[5:-5, 0], np.sin(t[5:-5]), atol=1e-6)


def test_build_state_settles_on_constant_output():
    t = 0.01 * np.arange(3001)
    raw = RawSeries(times=t, inputs=np.zeros((3001, 0)), outputs=np.full((3001, 1), 1.5))

    record = build_state(raw, LaguerreBank(pole=1.0, order=2), SmootherConfig())

    np.testing.assert_allclose(record.x[-1], [1.5, 1.5, 1.5], atol=1e-6)
    np.testing.assert_allclose(record.xdot[-1], 0.0, atol=1e-6)


def test_build_state_resamples_irregular_times():
    rng = np.random.default_rng(0)
    t = np.cumsum(0.01 + 0.001 * rng.random(400))
    raw = RawSeries(times=t, inputs=np.zeros((400, 0)), outputs=np.cos(t)[:, None])

    record = build_state(raw, LaguerreBank(pole=1.0, order=1), SmootherConfig())

    assert record.n == 2
    assert record.dt == pytest.approx(float(np.median(np.diff(t))))


def test_resample_uniform_keeps_linear_signals():
    t = np.array([0.0, 0.1, 0.25, 0.3, 0.4])
    raw = RawSeries(times=t, inputs=np.zeros((5, 0)), outputs=(3.0 * t)[:, None])

    uniform = resample_uniform(raw, dt=0.1)

    np.testing.assert_allclose(uniform.times, [0.0, 0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(uniform.outputs[:, 0], 3.0 * uniform.times)


def test_van_der_pol_limit_cycle_amplitude():
    _, truth = gen_synthetic(SyntheticSystem(kind="van_der_pol", mu=1.0), ForcingSpec(), duration=50.0, dt=0.02)

    last_period = truth.times >= 50.0 - 7.0
    assert np.abs(truth.x[last_period, 0]).max() == pytest.approx(2.0086, abs=0.01)


def test_linear_oscillator_matches_closed_form():
    zeta, omega = 0.1, 1.0
    system = SyntheticSystem(kind="linear_osc", omega=omega, zeta=zeta, x0=[1.0, 0.0])

    raw, truth = gen_synthetic(system, ForcingSpec(), duration=10.0, dt=0.01)

    t = truth.times
    wd = omega * np.sqrt(1 - zeta ** 2)
    expected = np.exp(-zeta * omega * t) * (np.cos(wd * t) + zeta / np.sqrt(1 - zeta ** 2) * np.sin(wd * t))
    assert np.abs(truth.x[:, 0] - expected).max() < 1e-6
    np.testing.assert_array_equal(raw.outputs[:, 0], truth.x[:, 0])


def test_synthetic_noise():
    system = SyntheticSystem(kind="van_der_pol")
    clean, _ = gen_synthetic(system, ForcingSpec(), duration=10.0, dt=0.01)
    noisy, _ = gen_synthetic(system, ForcingSpec(), duration=10.0, dt=0.01, noise_std=0.1, seed=1)
    other, _ = gen_synthetic(system, ForcingSpec(), duration=10.0, dt=0.01, noise_std=0.1, seed=2)
    again, _ = gen_synthetic(system, ForcingSpec(), duration=10.0, dt=0.01, noise_std=0.1, seed=1)

    assert np.var(noisy.outputs - clean.outputs) == pytest.approx(0.01, abs=1.5e-3)
    assert not np.array_equal(noisy.outputs, other.outputs)
    np.testing.assert_array_equal(noisy.outputs, again.outputs)
    assert clean.N == 1001


def test_synthetic_record_carries_forcing():
    forcing = ForcingSpec(kind="sine", amplitude=0.5, frequency=0.2)

    raw, truth = gen_synthetic(SyntheticSystem(kind="hopf"), forcing, duration=5.0, dt=0.01)

    np.testing.assert_allclose(raw.inputs[:, 0], forcing.evaluate(raw.times))
    np.testing.assert_array_equal(truth.u, raw.inputs)


def test_forcing_kinds():
    t = np.array([0.0, 0.5, 1.0, 1.5, 2.5])

    np.testing.assert_array_equal(ForcingSpec(kind="step", level=2.0, at=1.0).evaluate(t), [0, 0, 2, 2, 2])
    np.testing.assert_array_equal(
        ForcingSpec(kind="steps", levels=[1.0, 3.0], durations=[1.0, 1.0]).evaluate(t), [1, 1, 3, 3, 0]
    )
    multisine = ForcingSpec(kind="multisine", amplitudes=[1.0, 0.5], frequencies=[0.1, 0.3])
    assert multisine.phases == [0.0, 0.0]
    np.testing.assert_allclose(
        multisine.evaluate(t), np.sin(2 * np.pi * 0.1 * t) + 0.5 * np.sin(2 * np.pi * 0.3 * t)
    )
    with pytest.raises(pydantic.ValidationError):
        ForcingSpec(kind="multisine", amplitudes=[1.0], frequencies=[0.1, 0.2])


def test_record_csv_round_trip(tmp_path, van_der_pol_truth):
    path = save_record_csv(van_der_pol_truth, tmp_path / "truth.csv")

    loaded = load_record_csv(path)

    np.testing.assert_array_equal(loaded.x, van_der_pol_truth.x)
    np.testing.assert_array_equal(loaded.xddot, van_der_pol_truth.xddot)
    np.testing.assert_array_equal(loaded.u, van_der_pol_truth.u)
    assert loaded.dt == pytest.approx(van_der_pol_truth.dt, rel=1e-9)


def test_raw_csv_round_trip(tmp_path):
    raw = RawSeries(times=[0.0, 0.1, 0.2], inputs=[[0.5], [0.25], [0.125]], outputs=[[1.0 / 3.0], [2.0], [3.0]])

    loaded = load_csv(save_raw_csv(raw, tmp_path / "data.csv"))

    np.testing.assert_array_equal(loaded.outputs, raw.outputs)
    np.testing.assert_array_equal(loaded.inputs, raw.inputs)


def test_split_record(van_der_pol_truth):
    train, validation = split_record(van_der_pol_truth, 0.5)

    assert train.N + validation.N == van_der_pol_truth.N + 1
    np.testing.assert_array_equal(train.x[-1], validation.x[0])
    assert validation.t0 == pytest.approx(train.times[-1])

    whole, none = split_record(van_der_pol_truth, 1.0)
    assert none is None and whole is van_der_pol_truth

    with pytest.raises(DataValidationError):
        split_record(van_der_pol_truth, 0.0)


def test_record_rejects_mismatched_channels():
    with pytest.raises(DataValidationError, match="sample counts"):
        TrajectoryRecord(dt=0.1, x=np.zeros((5, 2)), xdot=np.zeros((5, 2)), xddot=np.zeros((5, 2)),
                         u=np.zeros((4, 1)), y=np.zeros((5, 1)))
