"""Multi-agent search over ML pipeline configurations.

Thin Python layer over the C++ core. Spaces, configs and reports are plain
JSON-compatible dicts.
"""

import json as _json

from ._core import (
    Space,
    certify,
    compare,
    multi_objective_reward,
    resume,
    search,
    tilt_best_response,
)

__all__ = [
    "Space",
    "certify",
    "compare",
    "load_space",
    "space_from_dict",
    "multi_objective_reward",
    "resume",
    "search",
    "tilt_best_response",
]

__version__ = "0.1.0"


def load_space(path):
    """Reads a space config file."""
    with open(path, encoding="utf-8") as f:
        return Space(f.read())


def space_from_dict(doc):
    return Space(_json.dumps(doc))
