from fastmcp import FastMCP
from pydantic import BaseModel, Field
from typing import Any, Dict, Optional
from functools import partial
import json
import anyio

from catp import harness
from .utils import handle_catp_error, resolve_run_config

mcp = FastMCP("CatpValidation")


class GradcheckArgs(BaseModel):
    config_path: Optional[str] = Field(default=None, description="key = value run configuration")
    draws: int = Field(default=100, ge=1, description="Random draws to check")


class MeanAbsoluteErrorArgs(BaseModel):
    pred_path: str = Field(description="Predicted map (P5)")
    ref_path: str = Field(description="Reference map (P5)")


@mcp.tool()
async def gradcheck(args: Dict[str, Any]) -> str:
    """Compare the analytic score Jacobian with central differences."""
    try:
        parsed = GradcheckArgs(**args)
        config = resolve_run_config(parsed.config_path)
        report = await anyio.to_thread.run_sync(partial(harness.cmd_gradcheck, config, parsed.draws))
        return json.dumps(report)
    except Exception as e:
        return json.dumps(handle_catp_error(e))


@mcp.tool()
async def mean_absolute_error(args: Dict[str, Any]) -> str:
    """Mean absolute error between a prediction map and a reference mask."""
    try:
        parsed = MeanAbsoluteErrorArgs(**args)
        mae = harness.cmd_mae(parsed.pred_path, parsed.ref_path)
        return json.dumps({"mae": mae})
    except Exception as e:
        return json.dumps(handle_catp_error(e))
