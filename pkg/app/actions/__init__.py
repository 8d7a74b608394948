from .core import *


def setup_action_handlers():
    return discover_actions(module_name=HANDLERS_MODULE, prefix=COMMAND_PREFIX)


action_handlers = setup_action_handlers()
