import importlib
import inspect
from typing import Callable, Dict, Tuple, Type

from pydantic import BaseModel

from app.services.errors import ActionNotFound


HANDLERS_MODULE = "app.actions.handlers"
COMMAND_PREFIX = "cmd_"


class ActionConfiguration(BaseModel):
    pass


class GenericActionConfiguration(ActionConfiguration):
    pass


ActionHandlers = Dict[str, Tuple[Callable, Type[BaseModel]]]


def discover_actions(module_name, prefix) -> ActionHandlers:
    """
    Commands are the module's functions named <prefix><id>, called as
    handler(store=..., action_config=...); the annotation of action_config picks the
    configuration model.
    """
    action_handlers = {}
    module = importlib.import_module(module_name)
    for name, func in sorted(inspect.getmembers(module, inspect.isfunction)):
        if not name.startswith(prefix):
            continue
        parameters = inspect.signature(func).parameters
        if "action_config" not in parameters or "store" not in parameters:
            continue
        annotation = parameters["action_config"].annotation
        config_model = annotation if annotation is not inspect.Parameter.empty else GenericActionConfiguration
        action_handlers[name[len(prefix):]] = (func, config_model)
    return action_handlers


def get_actions():
    return list(discover_actions(module_name=HANDLERS_MODULE, prefix=COMMAND_PREFIX).keys())


def get_handler(action_handlers: ActionHandlers, action_id: str):
    try:
        return action_handlers[action_id]
    except KeyError:
        raise ActionNotFound(f"Unknown command '{action_id}'. Available: {', '.join(sorted(action_handlers))}")
