import json
import logging
import pathlib
import re

from typing import Any, Dict, Optional

import yaml

from pydantic import ValidationError

from mop_kernel.common import read_file
from mop_kernel.ensemble import (
    EnsembleConfig,
    Potential,
    SourceSpectrum,
    format_validation_error,
    validate,
)
from mop_kernel.errors import ConfigurationError


logger = logging.getLogger(__name__)

KNOWN_KEYS = {"potential", "spectrum", "ordering"}


def _line_of(content: str, key: str) -> Optional[int]:
    pattern = re.compile(r"""^\s*["']?%s["']?\s*:""" % re.escape(key))
    for lineno, line in enumerate(content.splitlines(), start=1):
        if pattern.search(line) or f'"{key}"' in line:
            return lineno
    return None


def _context(path: pathlib.Path, content: str, lineno: Optional[int]) -> str:
    if lineno is None:
        return str(path)
    lines = content.splitlines()
    text = lines[lineno - 1].strip() if 0 < lineno <= len(lines) else ""
    return f"{path}:{lineno}: {text}"


def _load_document(path: pathlib.Path, content: str) -> Any:
    if path.suffix in (".yml", ".yaml"):
        try:
            return yaml.safe_load(content)
        except yaml.MarkedYAMLError as e:
            lineno = e.problem_mark.line + 1 if e.problem_mark is not None else None
            raise ConfigurationError(
                f"{_context(path, content, lineno)}: {e.problem}"
            ) from e
    try:
        return json.loads(content)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{_context(path, content, e.lineno)}: {e.msg}") from e


def parse_config_document(
    document: Any, path: pathlib.Path, content: str = ""
) -> EnsembleConfig:
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: expected a mapping at the top level")
    unknown = sorted(set(document) - KNOWN_KEYS)
    if unknown:
        raise ConfigurationError(
            f"{_context(path, content, _line_of(content, unknown[0]))}: "
            f"unknown key(s) {', '.join(unknown)}"
        )
    for key in ("potential", "spectrum"):
        if key not in document:
            raise ConfigurationError(f"{path}: missing required key '{key}'")

    spectrum = document["spectrum"]
    if not isinstance(spectrum, list) or not all(
        isinstance(pair, list) and len(pair) == 2 for pair in spectrum
    ):
        raise ConfigurationError(
            f"{_context(path, content, _line_of(content, 'spectrum'))}: "
            "spectrum must be a list of [eigenvalue, multiplicity] pairs"
        )

    def located(key: str, message: str) -> ConfigurationError:
        return ConfigurationError(
            f"{_context(path, content, _line_of(content, key))}: {message}"
        )

    try:
        potential = Potential(coeffs=tuple(document["potential"]))
    except (ValidationError, TypeError) as e:
        raise located("potential", _message(e)) from e
    try:
        source = SourceSpectrum(pairs=tuple((pair[0], pair[1]) for pair in spectrum))
    except (ValidationError, TypeError) as e:
        raise located("spectrum", _message(e)) from e
    try:
        return validate(potential, source, document.get("ordering"))
    except ConfigurationError as e:
        raise located("ordering", str(e)) from e


def _message(error: Exception) -> str:
    if isinstance(error, ValidationError):
        return format_validation_error(error)
    return str(error)


def parse_config_file(path: pathlib.Path) -> EnsembleConfig:
    """
    Parse an ensemble configuration from JSON (or YAML when the suffix says so)::

        {"potential": [0, 0, 0.5], "spectrum": [[-1, 1], [1, 2]], "ordering": [...]}

    The ordering is optional; errors name the file and the offending line.
    """
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    content = read_file(str(path))
    document = _load_document(path, content)
    config = parse_config_document(document, path, content)
    logger.debug(
        "Parsed %s: n=%s p=%s ordering=%s", path, config.n, config.p, config.ordering.alpha
    )
    return config


def config_from_mapping(document: Dict) -> EnsembleConfig:
    return parse_config_document(document, pathlib.Path("<mapping>"))
