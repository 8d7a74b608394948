import json
import logging
from pathlib import Path

from dotenv import dotenv_values

from app.services.errors import ConfigurationNotFound
from app.services.utils import merge_overrides


logger = logging.getLogger(__name__)


def parse_value(raw: str):
    """JSON lists/objects and literals are decoded; anything else stays a string for pydantic to coerce."""
    text = raw.strip()
    if text.startswith(("[", "{")) or text in ("null", "true", "false"):
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text
    return text


def load_config_document(path=None) -> dict:
    """
    Reads a key=value run configuration (dotenv syntax). Dotted keys nest:
    "bank.pole=2.0" becomes {"bank": {"pole": "2.0"}}. No path means all defaults.
    """
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigurationNotFound(f"configuration file not found: {path}")
    values = {key: parse_value(value) for key, value in dotenv_values(path).items() if value is not None}
    logger.debug(f"Read {len(values)} configuration keys from {path}.")
    return merge_overrides({}, values)
