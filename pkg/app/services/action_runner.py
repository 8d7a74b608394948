import logging
from typing import Any, Dict, Optional

import pydantic

from app.actions import action_handlers, get_handler
from app.actions.utils import load_config_document
from .core import ExitCode
from .errors import (
    ActionNotFound,
    ConfigurationNotFound,
    ConfigurationValidationError,
    DataValidationError,
    GeometryError,
    ModelSpecError,
    SolverFailure,
)
from .state import ArtifactStore
from .utils import config_hash, merge_overrides


logger = logging.getLogger(__name__)


class ActionOutcome(pydantic.BaseModel):
    action_id: str
    exit_code: ExitCode
    result: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
    output_dir: Optional[str] = None
    config_hash: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.exit_code == ExitCode.OK


def _failed(action_id: str, exit_code: ExitCode, message: str, **kwargs) -> ActionOutcome:
    return ActionOutcome(action_id=action_id, exit_code=exit_code, error=message, **kwargs)


def execute_action(action_id: str, config_path: str = None, config_overrides: dict = None) -> ActionOutcome:
    """
    Interface for executing commands.
    :param action_id: "synth", "fit", "eval" or "verify"
    :param config_path: key=value configuration file; None uses the defaults
    :param config_overrides: Optional dictionary with configuration overrides (dotted keys allowed)
    :return: ActionOutcome with the exit code, the handler's result or an error message
    """
    logger.info(f"Executing command '{action_id}' with configuration '{config_path}'...")
    try:
        handler, config_model = get_handler(action_handlers, action_id)
    except ActionNotFound as e:
        logger.error(str(e))
        return _failed(action_id, ExitCode.USAGE, str(e))

    try:
        config_data = merge_overrides(load_config_document(config_path), config_overrides)
        parsed_config = config_model.parse_obj(config_data)
    except ConfigurationNotFound as e:
        logger.error(str(e))
        return _failed(action_id, ExitCode.USAGE, str(e))
    except pydantic.ValidationError as e:
        message = f"Invalid configuration for command '{action_id}': {e.errors()}"
        logger.error(message)
        return _failed(action_id, ExitCode.USAGE, message)

    store = ArtifactStore(getattr(parsed_config, "output_dir", None))
    digest = config_hash(parsed_config)
    store.set_run_info(digest, getattr(parsed_config, "seed", None))
    context = dict(output_dir=str(store.root), config_hash=digest)
    extra = {"action_id": action_id, "config_hash": digest}
    try:
        result = handler(store=store, action_config=parsed_config)
    except ConfigurationValidationError as e:
        logger.error(f"Invalid configuration for command '{action_id}': {e}", extra=extra)
        return _failed(action_id, ExitCode.USAGE, str(e), **context)
    except (DataValidationError, ModelSpecError, GeometryError) as e:
        logger.error(f"Data error in command '{action_id}': {e}", extra=extra)
        return _failed(action_id, ExitCode.DATA_ERROR, str(e), **context)
    except SolverFailure as e:
        status = None if e.solution is None else e.solution.status.value
        logger.error(f"Solver failure in command '{action_id}': {e}", extra=dict(extra, status=status))
        return _failed(action_id, ExitCode.SOLVER_FAILURE, str(e), **context)
    except Exception as e:
        message = f"Internal error executing command '{action_id}': {e}"
        logger.exception(message, extra=dict(extra, needs_attention=True))
        return _failed(action_id, ExitCode.INTERNAL_ERROR, message, **context)
    else:
        logger.info(f"Command '{action_id}' finished. Artifacts in {store.root}.")
        return ActionOutcome(action_id=action_id, exit_code=ExitCode.OK, result=result, **context)
