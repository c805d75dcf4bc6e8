"""Run configuration: a plain-text ``key = value`` file validated into RunConfig.

'#' starts a comment. Unknown or repeated keys are rejected. Every error
names the line it comes from; cross-field violations point at the last line
that contributed to the failing group.
"""
import logging
import os
from typing import Callable, Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError

from catp.errors import ConfigParseError
from catp.models import CompensationMode, EncoderConfig, PruneThresholds

logger = logging.getLogger("catp_run_config")

SEED_ENV_VAR = "CATP_SEED"
DEFAULT_SEED = 0x9E3779B97F4A7C15


class RunConfig(BaseModel):
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    thresholds: PruneThresholds = Field(default_factory=PruneThresholds)
    compensation_mode: CompensationMode = Field(
        default=CompensationMode.WEIGHTED, description="none | average | weighted")
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=1 << 64, description="64-bit seed")
    weights_path: Optional[str] = Field(default=None, description="CATPW1 weight file")
    output_dir: str = Field(default="catp_out", description="Artifact directory")


def _int(raw: str) -> int:
    return int(raw, 0)


def _pairs(raw: str) -> Tuple[Tuple[float, float], ...]:
    return tuple(parse_threshold_pair(p) for p in raw.split(",") if p.strip())


def _boundaries(raw: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)


def parse_threshold_pair(raw: str) -> Tuple[float, float]:
    """'0.3/0.7' -> (0.3, 0.7)."""
    low, sep, high = raw.strip().partition("/")
    if not sep:
        raise ValueError(f"expected theta_d/theta_u, got {raw.strip()!r}")
    return float(low), float(high)


_ENCODER_KEYS: Dict[str, Callable[[str], object]] = {
    "image_h": int, "image_w": int, "patch_size": int, "in_channels": int,
    "embed_dim": int, "num_layers": int, "num_heads": int, "mlp_ratio": float,
    "stage_boundaries": _boundaries,
}
_THRESHOLD_KEYS: Dict[str, Callable[[str], object]] = {
    "theta_d": float, "theta_u": float, "tau": float, "stage_thresholds": _pairs,
}
_RUN_KEYS: Dict[str, Callable[[str], object]] = {
    "compensation": lambda raw: CompensationMode(raw.lower()),
    "seed": _int,
    "weights_path": str,
    "output_dir": str,
}


def _validated(model, values: dict, lines: Dict[str, int], what: str):
    try:
        return model(**values)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first["loc"][0] if first["loc"] else None
        line = lines.get(loc, max(lines.values(), default=0))
        raise ConfigParseError(f"invalid {what}: {first['msg']}", line) from e


def parse_config(text: str) -> RunConfig:
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    converters = {**_ENCODER_KEYS, **_THRESHOLD_KEYS, **_RUN_KEYS}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigParseError(f"expected 'key = value', got {raw_line.strip()!r}", number)
        if key not in converters:
            raise ConfigParseError(f"unknown key {key!r}", number)
        if key in values:
            raise ConfigParseError(f"duplicate key {key!r} (first set on line {lines[key]})", number)
        try:
            values[key] = converters[key](raw)
        except ValueError as e:
            raise ConfigParseError(f"malformed value for {key!r}: {e}", number) from e
        lines[key] = number

    def group(keys):
        return ({k: values[k] for k in keys if k in values},
                {k: lines[k] for k in keys if k in lines})

    enc_values, enc_lines = group(_ENCODER_KEYS)
    encoder = _validated(EncoderConfig, enc_values, enc_lines, "encoder settings")

    thr_values, thr_lines = group(_THRESHOLD_KEYS)
    if "stage_thresholds" in thr_values:
        thr_values["stage_overrides"] = thr_values.pop("stage_thresholds")
        thr_lines["stage_overrides"] = thr_lines.pop("stage_thresholds")
    thresholds = _validated(PruneThresholds, thr_values, thr_lines, "thresholds")
    overrides = thresholds.stage_overrides
    if overrides is not None and len(overrides) != len(encoder.stage_boundaries):
        raise ConfigParseError(
            f"stage_thresholds has {len(overrides)} pairs for "
            f"{len(encoder.stage_boundaries)} pruning boundaries", lines["stage_thresholds"])

    run_values, run_lines = group(_RUN_KEYS)
    if "compensation" in run_values:
        run_values["compensation_mode"] = run_values.pop("compensation")
        run_lines["compensation_mode"] = run_lines.pop("compensation")
    config = _validated(RunConfig, {**run_values, "encoder": encoder, "thresholds": thresholds},
                        run_lines, "run settings")
    logger.debug(f"Parsed run config: {config.model_dump()}")
    return config


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return parse_config("")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config(f.read())
    except Exception as e:
        logger.error(f"Failed to load run config {path}: {str(e)}")
        raise


def apply_env_overrides(config: RunConfig, environ: Mapping[str, str] = None) -> RunConfig:
    """CATP_SEED replaces the configured seed."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV_VAR)
    if raw is None or not raw.strip():
        return config
    try:
        seed = int(raw.strip(), 0)
    except ValueError as e:
        raise ConfigParseError(f"{SEED_ENV_VAR} is not an integer: {raw!r}") from e
    if not 0 <= seed < 1 << 64:
        raise ConfigParseError(f"{SEED_ENV_VAR} must fit in 64 bits, got {seed}")
    logger.info(f"Seed overridden from {SEED_ENV_VAR}: {seed}")
    return config.model_copy(update={"seed": seed})
