# create_images.py
import argparse
from pathlib import Path

from catp.netpbm import write_pgm, write_ppm
from catp.numerics import Rng
from catp.synthetic import disk_image, disk_mask
from config.run_config import apply_env_overrides, load_run_config

# Output directory for images and their ground-truth masks
IMAGES_DIR = Path("catp_images")


def create_images(out_dir: Path, count: int, config_path: str = None) -> list:
    """Disks of varying radius as PPM, each with its binary mask as PGM."""
    config = apply_env_overrides(load_run_config(config_path))
    enc = config.encoder
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = Rng(config.seed).derive("seeder-images")
    written = []
    for i in range(count):
        # radius between a sixth and a third of the short side
        short = min(enc.image_h, enc.image_w)
        radius = short / 6.0 + rng.uniform(1)[0] * short / 6.0
        image = disk_image(enc.image_h, enc.image_w, rng, channels=3, radius=radius)
        mask = disk_mask(enc.image_h, enc.image_w, radius).astype(float)
        image_path = out_dir / f"disk_{i:03d}.ppm"
        mask_path = out_dir / f"disk_{i:03d}_mask.pgm"
        write_ppm(image_path, image)
        write_pgm(mask_path, mask)
        written.append((image_path, mask_path))
    return written


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Write synthetic disk images and masks")
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=str(IMAGES_DIR))
    parser.add_argument("--count", type=int, default=10)
    args = parser.parse_args()
    try:
        pairs = create_images(Path(args.out), args.count, args.config)
        print(f"Wrote {len(pairs)} image/mask pairs to {args.out}")
    except Exception as e:
        print(f"Error writing images: {e}")
        raise
