import copy
import hashlib
import json

import pydantic


def merge_overrides(data: dict, overrides: dict = None) -> dict:
    """
    Deep-merge overrides into a nested configuration dict. Dotted keys
    ("fit.kind") address nested sections.
    """
    merged = copy.deepcopy(data or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        *parents, leaf = str(key).split(".")
        node = merged
        for part in parents:
            child = node.get(part)
            if not isinstance(child, dict):
                child = node[part] = {}
            node = child
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf] = merge_overrides(node[leaf], value)
        else:
            node[leaf] = value
    return merged


def canonical_json(config: pydantic.BaseModel) -> str:
    return json.dumps(json.loads(config.json()), sort_keys=True, separators=(",", ":"))


def config_hash(config: pydantic.BaseModel) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()
