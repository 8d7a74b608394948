import logging
import math
from typing import List

from fastapi import APIRouter, BackgroundTasks, status
from fastapi.encoders import jsonable_encoder
from fastapi.responses import JSONResponse

from app.actions import get_actions
from app.api_schemas import ActionRequest
from app.services import action_runner
from app.services.core import ExitCode

logger = logging.getLogger(__name__)

router = APIRouter()


HTTP_STATUS = {
    ExitCode.OK: status.HTTP_200_OK,
    ExitCode.USAGE: status.HTTP_422_UNPROCESSABLE_ENTITY,
    ExitCode.DATA_ERROR: status.HTTP_422_UNPROCESSABLE_ENTITY,
    ExitCode.SOLVER_FAILURE: status.HTTP_500_INTERNAL_SERVER_ERROR,
    ExitCode.INTERNAL_ERROR: status.HTTP_500_INTERNAL_SERVER_ERROR,
}


def json_safe(value):
    """Non-finite floats become strings; JSON responses reject them."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


@router.get(
    "/",
    summary="List the available commands",
    response_model=List[str]
)
def list_actions():
    return get_actions()


@router.post(
    "/execute",
    summary="Execute a command with given settings",
)
def execute(
    request: ActionRequest,
    background_tasks: BackgroundTasks
):
    if request.run_in_background:
        background_tasks.add_task(
            action_runner.execute_action,
            action_id=request.action_id,
            config_path=request.config_path,
            config_overrides=request.config_overrides
        )
        return {"message": "Command execution started in background"}
    outcome = action_runner.execute_action(
        action_id=request.action_id,
        config_path=request.config_path,
        config_overrides=request.config_overrides
    )
    return JSONResponse(
        status_code=HTTP_STATUS[outcome.exit_code],
        content=json_safe(jsonable_encoder(outcome.dict())),
    )
