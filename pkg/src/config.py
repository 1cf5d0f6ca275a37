"""
Runtime settings for the NV control toolkit

Environment variables only steer logging, default paths and the ensemble
thread count. Numeric results never depend on them.
"""
import os
from typing import Any, Callable, Optional

from dotenv import load_dotenv

# Load environment variables (for local development)
load_dotenv()

_MISSING = object()


def get_setting(name: str, default: Any = _MISSING, cast: Optional[Callable[[str], Any]] = None) -> Any:
    """Get a setting from the environment, falling back to a default

    Args:
        name: Environment variable name
        default: Value used when the variable is unset
        cast: Converter applied to the raw string

    Returns:
        The setting value

    Raises:
        ValueError: if the variable is unset and there is no default
    """
    value = os.getenv(name)
    if value is None or value == "":
        if default is _MISSING:
            raise ValueError(f"Required configuration not found: {name}")
        return default
    if cast is None:
        return value
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"Invalid value for {name}: {value!r} ({exc})") from exc


LOG_LEVEL = get_setting("LOG_LEVEL", "INFO")
LOG_DIR = get_setting("LOG_DIR", "logs")
RESULTS_DIR = get_setting("RESULTS_DIR", os.path.join("data", "results"))
PRESETS_FILE = get_setting("PRESETS_FILE", os.path.join("config", "problem_presets.json"))
MAX_WORKERS = get_setting("MAX_WORKERS", 1, int)

DEFAULT_SEED = 20240501
FD_STEP = 1e-4
P_FLOOR = 1e-12
FISHER_SENTINEL = 1e18
