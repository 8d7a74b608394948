import logging.config
import sys
from environs import Env

env = Env()
env.read_env()

LOGGING_LEVEL = env.str("LOGGING_LEVEL", "INFO")

DEFAULT_LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "level": LOGGING_LEVEL,
            "class": "logging.StreamHandler",
            "formatter": "plain",
            "stream": sys.stdout
        },
    },
    "loggers": {
        "": {
            "handlers": ["console"],
            "level": LOGGING_LEVEL,
        },
        # cvxpy and the solvers are chatty at INFO
        "__cvxpy__": {
            "level": "WARNING",
        },
    },
}
logging.config.dictConfig(DEFAULT_LOGGING)

# Where commands write their artifacts unless --out is given
OUTPUT_DIR = env.str("OUTPUT_DIR", "runs/latest")
DEFAULT_SEED = env.int("DEFAULT_SEED", 0)

# Settings for the HTTP surface
SERVICE_ROOT_PATH = env.str("ROOT_PATH", "")
ACTIVITY_LOG_NAME = env.str("ACTIVITY_LOG_NAME", "activity.jsonl")
