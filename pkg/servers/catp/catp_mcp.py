from fastmcp import FastMCP
import logging
from .pipeline_tools import mcp as pipeline_mcp
from .validation_tools import mcp as validation_mcp
from .utils import get_catp_settings

logger = logging.getLogger("mcp_server_catp")

# Load configuration
try:
    server_config = get_catp_settings()
    SERVER_NAME = server_config["serverName"]
except Exception as e:
    logger.error(f"Failed to load configuration: {str(e)}")
    raise

# Initialize MCP server
mcp = FastMCP(SERVER_NAME)

# Mount subservers
try:
    mcp.mount(pipeline_mcp, prefix="pipeline")
    logger.info("Mounted pipeline subserver")
except Exception as e:
    logger.error(f"Failed to mount pipeline subserver: {str(e)}")
    raise

try:
    mcp.mount(validation_mcp, prefix="validation")
    logger.info("Mounted validation subserver")
except Exception as e:
    logger.error(f"Failed to mount validation subserver: {str(e)}")
    raise

if __name__ == "__main__":
    logger.info(f"Starting {SERVER_NAME}")
    # Note: Not running standalone; will be mounted by master server
