from fastmcp import FastMCP
from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional
from functools import partial
import json
import anyio

from catp import harness
from .utils import get_catp_settings, handle_catp_error, resolve_output_dir, resolve_run_config

mcp = FastMCP("CatpPipeline")


class RunPipelineArgs(BaseModel):
    image_path: Optional[str] = Field(
        default=None, description="P5/P6 image; a seeded synthetic disk when omitted")
    config_path: Optional[str] = Field(default=None, description="key = value run configuration")
    output_dir: Optional[str] = Field(default=None, description="Artifact directory")


class SweepThresholdsArgs(BaseModel):
    grid: str = Field(default="0.2/0.8,0.25/0.75,0.3/0.7,0.35/0.65,0.4/0.6",
                      description="theta_d/theta_u pairs, comma separated")
    image_path: Optional[str] = Field(default=None, description="P5/P6 image (optional)")
    config_path: Optional[str] = Field(default=None, description="key = value run configuration")
    output_dir: Optional[str] = Field(default=None, description="Directory for sweep.json")


class SweepBoundariesArgs(BaseModel):
    layouts: str = Field(description="Boundary layouts separated by ';', e.g. '2;2,4;2,4,6'")
    image_path: Optional[str] = Field(default=None, description="P5/P6 image (optional)")
    config_path: Optional[str] = Field(default=None, description="key = value run configuration")
    output_dir: Optional[str] = Field(default=None, description="Directory for stages.json")


class CompareCompensationArgs(BaseModel):
    image_path: Optional[str] = Field(default=None, description="P5/P6 image (optional)")
    config_path: Optional[str] = Field(default=None, description="key = value run configuration")
    output_dir: Optional[str] = Field(default=None, description="Directory for compare.json")


class RunBatchArgs(BaseModel):
    image_paths: List[str] = Field(description="P5/P6 images, one artifact folder each")
    config_path: Optional[str] = Field(default=None, description="key = value run configuration")
    output_dir: Optional[str] = Field(default=None, description="Parent artifact directory")
    workers: Optional[int] = Field(default=None, ge=1, description="Worker threads (server default)")


@mcp.tool()
async def run_pipeline(args: Dict[str, Any]) -> str:
    """Prune, refill and decode one image; returns the run report."""
    try:
        parsed = RunPipelineArgs(**args)
        config = resolve_run_config(parsed.config_path)
        out = resolve_output_dir(parsed.output_dir, "run")
        report = await anyio.to_thread.run_sync(partial(harness.cmd_run, config, parsed.image_path, out))
        return json.dumps({"output_dir": out, "report": report})
    except Exception as e:
        return json.dumps(handle_catp_error(e))


@mcp.tool()
async def sweep_thresholds(args: Dict[str, Any]) -> str:
    """FLOPs reduction for each threshold pair in a grid, each pair applied at every boundary."""
    try:
        parsed = SweepThresholdsArgs(**args)
        config = resolve_run_config(parsed.config_path)
        out = resolve_output_dir(parsed.output_dir, "sweep")
        payload = await anyio.to_thread.run_sync(
            partial(harness.cmd_sweep, config, parsed.grid, parsed.image_path, out))
        return json.dumps(payload)
    except Exception as e:
        return json.dumps(handle_catp_error(e))


@mcp.tool()
async def sweep_boundaries(args: Dict[str, Any]) -> str:
    """FLOPs reduction for each pruning-boundary layout."""
    try:
        parsed = SweepBoundariesArgs(**args)
        config = resolve_run_config(parsed.config_path)
        out = resolve_output_dir(parsed.output_dir, "stages")
        payload = await anyio.to_thread.run_sync(
            partial(harness.cmd_stages, config, parsed.layouts, parsed.image_path, out))
        return json.dumps(payload)
    except Exception as e:
        return json.dumps(handle_catp_error(e))


@mcp.tool()
async def compare_compensation(args: Dict[str, Any]) -> str:
    """Costs of the same image with no, average and weighted compensation."""
    try:
        parsed = CompareCompensationArgs(**args)
        config = resolve_run_config(parsed.config_path)
        out = resolve_output_dir(parsed.output_dir, "compare")
        payload = await anyio.to_thread.run_sync(
            partial(harness.cmd_compare, config, parsed.image_path, out))
        return json.dumps(payload)
    except Exception as e:
        return json.dumps(handle_catp_error(e))


@mcp.tool()
async def run_batch(args: Dict[str, Any]) -> str:
    """Run the pipeline over several images on the server's worker pool."""
    try:
        parsed = RunBatchArgs(**args)
        config = resolve_run_config(parsed.config_path)
        out = resolve_output_dir(parsed.output_dir, "batch")
        workers = parsed.workers or int(get_catp_settings().get("workers", 2))
        # cmd_batch drives its own event loop, so it runs off the server loop
        reports = await anyio.to_thread.run_sync(
            partial(harness.cmd_batch, config, parsed.image_paths, out, workers))
        return json.dumps({"output_dir": out,
                           "reduction_ratios": [r["cost"]["reduction_ratio"] for r in reports]})
    except Exception as e:
        return json.dumps(handle_catp_error(e))
