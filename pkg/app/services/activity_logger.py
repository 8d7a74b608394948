import datetime
import logging
import uuid
from enum import Enum
from functools import wraps
from typing import Any, Dict, Optional

import pydantic
import stamina


logger = logging.getLogger(__name__)


class LogLevel(str, Enum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"


class ActivityPayload(pydantic.BaseModel):
    action_id: str
    config_data: Dict[str, Any] = {}


class ActionExecutionStarted(ActivityPayload):
    pass


class ActionExecutionComplete(ActivityPayload):
    result: Optional[Dict[str, Any]] = None


class ActionExecutionFailed(ActivityPayload):
    error: str


class CustomActivityLog(ActivityPayload):
    title: str
    level: LogLevel = LogLevel.INFO
    data: Optional[Dict[str, Any]] = None


class SystemEvent(pydantic.BaseModel):
    event_id: uuid.UUID = pydantic.Field(default_factory=uuid.uuid4)
    timestamp: datetime.datetime = pydantic.Field(default_factory=lambda: datetime.datetime.now(datetime.timezone.utc))
    event_type: str = ""
    payload: ActivityPayload

    @pydantic.validator("event_type", always=True)
    def default_event_type(cls, val, values):
        return val or cls.__name__


class ActionStarted(SystemEvent):
    payload: ActionExecutionStarted


class ActionComplete(SystemEvent):
    payload: ActionExecutionComplete


class ActionFailed(SystemEvent):
    payload: ActionExecutionFailed


class ActionCustomLog(SystemEvent):
    payload: CustomActivityLog


@stamina.retry(on=OSError, attempts=3, wait_initial=0.05, wait_max=0.5, wait_jitter=0.05)
def publish_event(event: SystemEvent, store=None):
    """Log the event and append it to the run's activity log when a store is given."""
    logger.debug(f"Activity event {event.event_type}: {event.payload}")
    if store is not None:
        store.append_activity(event.dict())
    return event


def log_activity(store, action_id: str, title: str, level=LogLevel.INFO, config_data: dict = None, data: dict = None):
    """
    Records a custom activity entry for a running command.
    :param store: ArtifactStore of the run, or None to log only
    :param action_id: command being executed, e.g. "fit"
    :param title: human-readable summary
    :param level: DEBUG, INFO, WARNING or ERROR
    :param data: extra data as a dict
    """
    logger.log(logging.getLevelName(LogLevel(level).value), f"[{action_id}] {title}")
    return publish_event(
        event=ActionCustomLog(
            payload=CustomActivityLog(
                action_id=action_id,
                config_data=config_data or {},
                title=title,
                level=level,
                data=data,
            )
        ),
        store=store,
    )


def activity_logger(on_start=True, on_completion=True, on_error=True):
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            store = kwargs.get("store")
            action_id = func.__name__.replace("cmd_", "")
            action_config = kwargs.get("action_config")
            config_data = action_config.dict() if action_config else {}
            if on_start:
                publish_event(
                    event=ActionStarted(payload=ActionExecutionStarted(action_id=action_id, config_data=config_data)),
                    store=store,
                )
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                if on_error:
                    publish_event(
                        event=ActionFailed(
                            payload=ActionExecutionFailed(action_id=action_id, config_data=config_data, error=str(e))
                        ),
                        store=store,
                    )
                raise e
            else:
                if on_completion:
                    publish_event(
                        event=ActionComplete(
                            payload=ActionExecutionComplete(action_id=action_id, config_data=config_data, result=result)
                        ),
                        store=store,
                    )
                return result
        return wrapper
    return decorator
