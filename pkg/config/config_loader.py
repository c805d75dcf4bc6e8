import json
import os
import logging
from pathlib import Path

logger = logging.getLogger("catp_config_loader")

# Path to the CATP server configuration file
CATP_SERVER_CONFIG_PATH = os.environ.get(
    "CATP_SERVER_CONFIG", str(Path(__file__).parent / "catp_server_config.json"))


def load_server_config(path: str = None) -> dict:
    """
    Load the CATP server configuration from catp_server_config.json.

    Returns:
        dict: The full configuration as a dictionary.

    Raises:
        FileNotFoundError: If the config file is missing.
        ValueError: If the config file is invalid JSON or lacks catpServers.
    """
    path = path or CATP_SERVER_CONFIG_PATH
    try:
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, "r") as f:
            config = json.load(f)
        if not isinstance(config, dict):
            raise ValueError(f"Invalid JSON format in {path}")
        if "catpServers" not in config:
            raise ValueError(f"Missing catpServers section in {path}")
        return config
    except Exception as e:
        logger.error(f"Failed to load CATP server config: {str(e)}")
        raise


def get_server_section(name: str, required: list, path: str = None) -> dict:
    """Return one server's section after checking its required keys."""
    config = load_server_config(path)
    if name not in config["catpServers"]:
        raise ValueError(f"Invalid catpServers configuration: missing {name}")
    section = config["catpServers"][name]
    missing = [key for key in required if key not in section]
    if missing:
        raise ValueError(f"Missing {', '.join(missing)} in {name} configuration")
    return section
