import numpy as np
import pytest
from unittest.mock import MagicMock

from app.actions.configurations import RunConfig
from app.services.activity_logger import (
    ActionCustomLog,
    ActionExecutionComplete,
    ActionExecutionFailed,
    ActionExecutionStarted,
    ActionComplete,
    ActionFailed,
    ActionStarted,
    CustomActivityLog,
    LogLevel,
)
from app.services.state import ArtifactStore
from app.sysid.model import ModelCoefficients, default_spec, identity_coefficients
from app.sysid.systems import SyntheticSystem
from app.sysid.trajectory import ForcingSpec, LaguerreBank, TrajectoryRecord, gen_synthetic


@pytest.fixture
def artifact_store(tmp_path):
    return ArtifactStore(tmp_path / "run")


@pytest.fixture
def run_config(tmp_path):
    return RunConfig(
        seed=7,
        output_dir=str(tmp_path / "run"),
        bank=LaguerreBank(pole=1.0),
        synthetic={"duration": 2.0, "dt": 0.01},
    )


@pytest.fixture
def config_file(tmp_path):
    def write(lines):
        path = tmp_path / "run.env"
        path.write_text("\n".join(lines) + "\n")
        return str(path)
    return write


@pytest.fixture(scope="session")
def van_der_pol_truth():
    _, truth = gen_synthetic(SyntheticSystem(kind="van_der_pol", mu=1.0), ForcingSpec(), duration=10.0, dt=0.01)
    return truth


@pytest.fixture(scope="session")
def hopf_system():
    return SyntheticSystem(kind="hopf", growth=1.0, omega=0.5, x0=[1.0, 0.0])


@pytest.fixture(scope="session")
def hopf_truth(hopf_system):
    _, truth = gen_synthetic(hopf_system, ForcingSpec(), duration=10.0, dt=0.01)
    return truth


@pytest.fixture
def circle_record():
    """Unit circle at unit angular rate, no input, y = x1."""
    dt = 0.01
    t = dt * np.arange(int(round(2 * np.pi / dt)) + 1)
    x = np.column_stack([np.cos(t), np.sin(t)])
    xdot = np.column_stack([-np.sin(t), np.cos(t)])
    return TrajectoryRecord(dt=dt, x=x, xdot=xdot, xddot=-x, u=np.zeros((len(t), 0)), y=x[:, :1])


@pytest.fixture
def mock_action_handlers(mocker):
    mock_action_handler = MagicMock()
    mock_action_handler.__name__ = "cmd_fit"
    mock_action_handler.return_value = {"status": "optimal"}
    mock_action_handlers = MagicMock()
    mock_action_handlers.__getitem__.return_value = (mock_action_handler, RunConfig)
    return mock_action_handlers


@pytest.fixture
def mock_publish_event(mocker):
    return mocker.MagicMock(side_effect=lambda event, store=None: event)


@pytest.fixture
def action_started_event():
    return ActionStarted(payload=ActionExecutionStarted(action_id="fit", config_data={"seed": 0}))


@pytest.fixture
def action_complete_event():
    return ActionComplete(
        payload=ActionExecutionComplete(action_id="fit", config_data={"seed": 0}, result={"status": "optimal"})
    )


@pytest.fixture
def action_failed_event():
    return ActionFailed(
        payload=ActionExecutionFailed(action_id="fit", config_data={"seed": 0}, error="program infeasible")
    )


@pytest.fixture
def custom_activity_log_event():
    return ActionCustomLog(
        payload=CustomActivityLog(
            action_id="fit",
            config_data={"seed": 0},
            title="trie fit finished",
            level=LogLevel.INFO,
            data={"objective": 0.25},
        )
    )


@pytest.fixture
def system_event(request):
    return request.getfixturevalue(request.param)


@pytest.fixture
def rotation_model():
    """e(x) = x, f(x) = (-x2, x1), y = x1: generates circle_record exactly."""
    spec = default_spec(2, 0, 1, deg_e=1, deg_f=1, deg_g=1)
    coefs = identity_coefficients(spec)
    coef_f = np.zeros((2, len(spec.basis_f)))
    coef_f[0, spec.basis_f.index((0, 1))] = -1.0
    coef_f[1, spec.basis_f.index((1, 0))] = 1.0
    return spec, ModelCoefficients(coef_e=coefs.coef_e, coef_f=coef_f, coef_g=coefs.coef_g)
