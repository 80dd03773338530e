"""Frontier- and uncertainty-aware scan planning for a rotating lidar."""

import json as _json

from ._scanplan import *  # noqa: F401,F403
from ._scanplan import _run_episode_json, default_config


def run_episode(config=None, **overrides):
    """Runs one episode. `config` is a (partial) key tree; dotted keyword
    overrides use '__' in place of '.', e.g. weights__beta=1.0."""
    tree = dict(config or {})
    for key, value in overrides.items():
        node = tree
        parts = key.split("__")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return _run_episode_json(_json.dumps(tree))
