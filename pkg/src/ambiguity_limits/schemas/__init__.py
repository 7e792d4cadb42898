"""JSON schemas for model files, scenario configs and order files."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema


class ConfigError(ValueError):
    """Malformed input document; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files(__name__).joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def _location(err: jsonschema.ValidationError) -> str:
    path = "$"
    for part in err.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def validate_document(doc, name: str) -> None:
    """Raise ``ConfigError`` naming the first offending location in ``doc``."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, _location(err))
