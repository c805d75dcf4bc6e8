# create_weights.py
import argparse
from pathlib import Path

from catp.weights import load_weights, write_weight_file
from config.run_config import apply_env_overrides, load_run_config

# Output weight file
WEIGHTS_PATH = Path("catp_weights.bin")


def create_weights(path: Path, config_path: str = None) -> int:
    """Write every canonical tensor for the run config, seeded, to a CATPW1 file."""
    config = apply_env_overrides(load_run_config(config_path))
    weights = load_weights(None, config.encoder, config.seed)
    tensors = weights.to_tensors()
    path.parent.mkdir(parents=True, exist_ok=True)
    write_weight_file(path, tensors)
    return len(tensors)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Write a seeded CATPW1 weight file")
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=str(WEIGHTS_PATH))
    args = parser.parse_args()
    try:
        count = create_weights(Path(args.out), args.config)
        print(f"Wrote {count} tensors to {args.out}")
    except Exception as e:
        print(f"Error writing weights: {e}")
        raise
