import logging
from pathlib import Path
from typing import Any, Dict, Optional

from config.config_loader import get_server_section
from config.run_config import RunConfig, apply_env_overrides, load_run_config

logger = logging.getLogger("catp_mcp_utils")

SECTION = "catp-server"
REQUIRED_KEYS = ["serverName", "outputDir"]


def get_catp_settings() -> Dict[str, Any]:
    """The catp-server section of the server configuration."""
    return get_server_section(SECTION, REQUIRED_KEYS)


def resolve_run_config(config_path: Optional[str]) -> RunConfig:
    """Run config from the tool argument, else the server default, then CATP_SEED."""
    settings = get_catp_settings()
    path = config_path or settings.get("runConfigPath")
    config = apply_env_overrides(load_run_config(path))
    logger.info(f"Resolved run config from {path or 'defaults'}")
    return config


def resolve_output_dir(output_dir: Optional[str], tool: str) -> str:
    if output_dir:
        return output_dir
    return str(Path(get_catp_settings()["outputDir"]) / tool)


def handle_catp_error(e: Exception) -> Dict[str, Any]:
    """Handle pipeline errors and return JSON-serializable error response."""
    logger.error(f"CATP tool error: {str(e)}")
    return {"error": str(e), "type": type(e).__name__}
