"""Commands behind the CLI and the tool server: run, sweep, stages, compare, gradcheck, mae, batch."""
import json
import logging
import time
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import anyio
import numpy as np

from catp.cost_model import (ModelSource, boundary_sweep, compensation_comparison,
                             pipeline_flops, threshold_sweep)
from catp.errors import ConfigParseError, InvalidArgumentError
from catp.models import EncoderConfig
from catp.netpbm import read_image, write_pgm
from catp.numerics import Rng, gaussian_init
from catp.pipeline import CatpModel, PipelineResult
from catp.pruning import ScoringHead, finite_difference_jacobian, relative_error, score_jacobian
from catp.refill import confidence_heatmap, retention_mask
from catp.synthetic import disk_image
from catp.weights import load_weights
from config.run_config import RunConfig, parse_threshold_pair

logger = logging.getLogger("catp_harness")

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_STEP = 1e-6


def dump_json(path: Path, payload) -> None:
    """Stable key order and a trailing newline, so artifacts diff cleanly."""
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_model(config: RunConfig, encoder: Optional[EncoderConfig] = None) -> CatpModel:
    encoder = encoder or config.encoder
    return CatpModel(encoder, load_weights(config.weights_path, encoder, config.seed))


def load_input(config: RunConfig, image_path: Optional[str]) -> np.ndarray:
    """Image from disk, or a seeded synthetic disk when no path is given."""
    enc = config.encoder
    if image_path is None:
        logger.info("No image given; using the seeded synthetic disk")
        return disk_image(enc.image_h, enc.image_w, Rng(config.seed).derive("input-image"),
                          channels=enc.in_channels)
    image = read_image(image_path)
    if image.shape[:2] != (enc.image_h, enc.image_w):
        raise InvalidArgumentError(
            f"{image_path} is {image.shape[0]}x{image.shape[1]}, config expects "
            f"{enc.image_h}x{enc.image_w}")
    return image


def parse_grid(text: str) -> List[Tuple[float, float]]:
    """'0.2/0.8,0.3/0.7' -> [(0.2, 0.8), (0.3, 0.7)]; blank -> []."""
    try:
        return [parse_threshold_pair(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise ConfigParseError(f"malformed threshold grid: {e}") from e


def parse_layouts(text: str) -> List[List[int]]:
    """'2;2,4;2,4,6' -> [[2], [2, 4], [2, 4, 6]]; an empty item means no pruning."""
    try:
        return [[int(v) for v in item.split(",") if v.strip()] for item in text.split(";")]
    except ValueError as e:
        raise ConfigParseError(f"malformed boundary layouts: {e}") from e


def run_report(config: RunConfig, result: PipelineResult) -> dict:
    enc = config.encoder
    cost = pipeline_flops(enc, result.stage_counts, config.compensation_mode)
    return {
        "config": config.model_dump(mode="json", exclude={"output_dir"}),
        "stage_counts": [
            {"stage": s + 1, "patches": c.patches, "prototypes": c.prototypes, "tokens": c.tokens}
            for s, c in enumerate(result.stage_counts)
        ],
        "records": [r.summary() for r in result.records],
        "cost": cost.model_dump(mode="json"),
        "prediction": {
            "height": int(result.prediction.shape[0]),
            "width": int(result.prediction.shape[1]),
            "min": float(result.prediction.min()),
            "max": float(result.prediction.max()),
            "mean": float(result.prediction.mean()),
        },
    }


def write_run_artifacts(config: RunConfig, result: PipelineResult, out_dir: Path) -> dict:
    enc = config.encoder
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(out_dir / "prediction.pgm", result.prediction)
    grid = (enc.grid_h, enc.grid_w)
    for k, record in enumerate(result.records):
        kept = retention_mask(record, enc.num_tokens).astype(np.float64)
        write_pgm(out_dir / f"mask_{record.stage}.pgm", kept.reshape(grid))
        heat = confidence_heatmap(record, enc.num_tokens, result.records[:k])
        write_pgm(out_dir / f"heatmap_{record.stage}.pgm", heat.reshape(grid))
    report = run_report(config, result)
    dump_json(out_dir / "report.json", report)
    return report


def cmd_run(config: RunConfig, image_path: Optional[str], out_dir: Optional[str] = None,
            model: Optional[CatpModel] = None) -> dict:
    out = Path(out_dir or config.output_dir)
    started = time.perf_counter()
    model = model or build_model(config)
    image = load_input(config, image_path)
    result = model.forward(image, config.thresholds, config.compensation_mode)
    report = write_run_artifacts(config, result, out)
    logger.info(f"Run finished in {time.perf_counter() - started:.3f}s; artifacts in {out}")
    return report


def cmd_sweep(config: RunConfig, grid_text: str, image_path: Optional[str] = None,
              out_dir: Optional[str] = None) -> dict:
    if config.thresholds.stage_overrides is not None:
        raise InvalidArgumentError(
            "stage_thresholds is set; a threshold sweep applies each grid pair at every boundary")
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = parse_grid(grid_text)
    source = ModelSource(build_model(config), load_input(config, image_path), config.compensation_mode)
    entries = threshold_sweep(source, grid, config.encoder, config.thresholds.tau)
    payload = {"entries": [e.model_dump(mode="json") for e in entries]}
    dump_json(out / "sweep.json", payload)
    return payload


def cmd_stages(config: RunConfig, layouts_text: str, image_path: Optional[str] = None,
               out_dir: Optional[str] = None) -> dict:
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    image = load_input(config, image_path)

    def source_for(encoder: EncoderConfig) -> ModelSource:
        return ModelSource(build_model(config, encoder), image, config.compensation_mode)

    entries = boundary_sweep(source_for, parse_layouts(layouts_text), config.encoder, config.thresholds)
    payload = {"entries": [e.model_dump(mode="json") for e in entries]}
    dump_json(out / "stages.json", payload)
    return payload


def cmd_compare(config: RunConfig, image_path: Optional[str] = None,
                out_dir: Optional[str] = None) -> dict:
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    image = load_input(config, image_path)
    entries = compensation_comparison(
        lambda mode: ModelSource(model, image, mode), config.thresholds, config.encoder)
    payload = {"entries": [e.model_dump(mode="json") for e in entries]}
    dump_json(out / "compare.json", payload)
    return payload


def _gradcheck_draw(rng: Rng, num_tokens: int, width: int):
    n = 1 + int(rng.next_u64() % num_tokens)
    patches = gaussian_init(rng, n, width, 1.0)
    head = ScoringHead(weight=gaussian_init(rng, width, 1, 1.0), bias=rng.normal(1)[0])
    return patches, head


def cmd_gradcheck(config: RunConfig, draws: int = 100) -> dict:
    """Analytic score Jacobian against central differences on seeded draws."""
    enc, tau = config.encoder, config.thresholds.tau
    rng = Rng(config.seed).derive("gradcheck")
    worst = 0.0
    for _ in range(draws):
        patches, head = _gradcheck_draw(rng, enc.num_tokens, enc.embed_dim)
        err = relative_error(score_jacobian(patches, head, tau),
                             finite_difference_jacobian(patches, head, tau, GRADCHECK_STEP))
        worst = max(worst, err)
    patches, head = _gradcheck_draw(rng, enc.num_tokens, enc.embed_dim)
    scaling = [{"tau": tau * f, "jacobian_norm": float(np.linalg.norm(score_jacobian(patches, head, tau * f)))}
               for f in (1, 10, 100)]
    report = {
        "draws": draws,
        "tau": tau,
        "step": GRADCHECK_STEP,
        "max_relative_error": worst,
        "tolerance": GRADCHECK_TOLERANCE,
        "passed": worst <= GRADCHECK_TOLERANCE,
        "tau_scaling": scaling,
    }
    logger.info(f"Gradient check over {draws} draws: max relative error {worst:.3e}")
    return report


def compute_mae(pred: np.ndarray, reference: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if pred.shape != reference.shape:
        raise InvalidArgumentError(
            f"prediction shape {pred.shape} does not match reference {reference.shape}")
    return float(np.mean(np.abs(pred - reference)))


def _read_field(path: str) -> np.ndarray:
    image = read_image(path)
    return image[:, :, 0] if image.shape[2] == 1 else image


def cmd_mae(pred_path: str, ref_path: str) -> float:
    mae = compute_mae(_read_field(pred_path), _read_field(ref_path))
    logger.info(f"MAE {pred_path} vs {ref_path}: {mae:.6f}")
    return mae


def batch_dirs(image_paths: Sequence[str]) -> List[str]:
    """One artifact directory name per image: the file stem, index-prefixed when stems collide."""
    stems = [Path(p).stem for p in image_paths]
    if len(set(stems)) == len(stems):
        return stems
    return [f"{index:03d}_{stem}" for index, stem in enumerate(stems)]


def cmd_batch(config: RunConfig, image_paths: Sequence[str], out_dir: Optional[str] = None,
              workers: int = 2) -> List[dict]:
    """cmd_run per image on a worker pool; each image writes into its own out_dir/<name>/."""
    out = Path(out_dir or config.output_dir)
    model = build_model(config)
    names = batch_dirs(image_paths)
    reports: List[Optional[dict]] = [None] * len(image_paths)

    async def run_all():
        limiter = anyio.CapacityLimiter(max(1, workers))

        async def run_one(index: int, path: str):
            job = partial(cmd_run, config, path, str(out / names[index]), model)
            reports[index] = await anyio.to_thread.run_sync(job, limiter=limiter)

        async with anyio.create_task_group() as tg:
            for index, path in enumerate(image_paths):
                tg.start_soon(run_one, index, path)

    anyio.run(run_all)
    return reports
