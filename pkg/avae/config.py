"""
avae/config.py

Run configuration files.
Includes:
- load_config (built-in defaults < INI file < `section.key=value` overrides)
- parse_override
- write_config (resolved config next to a run's outputs)
"""

import configparser
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

from pydantic import ValidationError

from avae.errors import StorageError, UsageError
from avae.models import RunConfig

SECTIONS = ("model", "train", "data", "score")
CONFIG_FILE = "config.ini"


def _check_section(section: str, source: str) -> None:
    if section not in SECTIONS:
        raise UsageError(f"{source}: unknown config section [{section}] (expected one of {', '.join(SECTIONS)})")


def parse_override(text: str) -> Tuple[str, str, str]:
    """'train.lr=1e-4' -> ('train', 'lr', '1e-4')."""
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not name:
        raise UsageError(f"override {text!r}: expected section.key=value")
    _check_section(section, f"override {text!r}")
    return section, name.strip(), value.strip()


def load_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> RunConfig:
    raw: Dict[str, Dict[str, str]] = {section: {} for section in SECTIONS}

    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError as e:
            raise UsageError(f"{path}: config file not found") from e
        except (OSError, configparser.Error) as e:
            raise UsageError(f"{path}: cannot parse config ({e})") from e
        for section in parser.sections():
            _check_section(section, str(path))
            raw[section].update(parser.items(section))

    for text in overrides:
        section, name, value = parse_override(text)
        raw[section][name] = value

    values = {section: {k: v for k, v in items.items() if v != ""} for section, items in raw.items()}
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise UsageError(f"invalid configuration: {problems}") from e


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(config: RunConfig, folder: Union[str, Path]) -> Path:
    """Write the resolved config as <folder>/config.ini; None-valued keys are omitted."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in config.model_dump(mode="json").items():
        parser[section] = {key: _format(value) for key, value in values.items() if value is not None}

    path = Path(folder) / CONFIG_FILE
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)
    except OSError as e:
        raise StorageError(f"{path}: cannot write config ({e})") from e
    return path
