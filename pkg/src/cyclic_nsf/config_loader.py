"""
Configuration loader with environment variable support.

Configuration files are YAML. Values may reference environment variables so
that output locations or seeds can be injected at runtime:
- ${VAR_NAME} - Required variable (raises error if not set)
- ${VAR_NAME:default_value} - Optional variable with default
"""
import os
import re
from pathlib import Path
from typing import Any, Dict

import yaml

from .errors import ConfigurationError

CONFIG_VERSION = 1


def load_config(config_path: Path) -> Dict[str, Any]:
    """
    Load configuration from YAML file with environment variable substitution.

    Args:
        config_path: Path to YAML configuration file

    Returns:
        Configuration dictionary with environment variables substituted

    Raises:
        FileNotFoundError: If config file doesn't exist
        ConfigurationError: If a required environment variable is missing, the
            YAML is malformed or the config version is not supported
    """
    config_path = Path(config_path)
    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_path) as f:
        content = f.read()

    content = _substitute_env_vars(content)

    try:
        config = yaml.safe_load(content) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML in {config_path}: {e}") from e

    if not isinstance(config, dict):
        raise ConfigurationError(f"{config_path} must contain a mapping at top level")

    version = config.get('version', CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigurationError(
            f"config version mismatch: {config_path} declares version {version}, "
            f"this build supports version {CONFIG_VERSION}"
        )
    config['version'] = version
    return config


def section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    """Return a config section as a dict (empty if absent)."""
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"config section '{name}' must be a mapping")
    return value


def check_keys(values: Dict[str, Any], allowed, where: str) -> None:
    """Reject keys a typed config does not know about."""
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _substitute_env_vars(content: str) -> str:
    """
    Substitute environment variables in string content.

    Supports:
    - ${VAR_NAME} - Required (raises error if not set)
    - ${VAR_NAME:default} - Optional with default value
    """
    def replace_var(match):
        var_expr = match.group(1)

        if ':' in var_expr:
            var_name, default_value = var_expr.split(':', 1)
            return os.getenv(var_name, default_value)

        value = os.getenv(var_expr)
        if value is None:
            raise ConfigurationError(
                f"Required environment variable '{var_expr}' is not set. "
                f"Please set it before running the application."
            )
        return value

    pattern = r'\$\{([^}]+)\}'
    return re.sub(pattern, replace_var, content)
