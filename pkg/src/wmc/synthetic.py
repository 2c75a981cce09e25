"""Deterministic synthetic multimodal fixtures.

Small class-separable datasets for end-to-end checks: each class gets a
disjoint pool of body-map locations (so the location modality alone is
informative) and an image blob whose position and channel emphasis are
class-dependent, with seeded noise on top.  Images are written as WIMG
rasters so no codec is involved.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data_io import ManifestRecord, save_manifest, save_raster
from .rng import SplitMix64

# raw body-map ids >= 313 map to themselves in the default table; the pools
# are disjoint per class, which makes location alone fully informative
CLASS_LOCATIONS = {
    "D": (400, 401, 402),
    "P": (410, 411, 412),
    "S": (420, 421, 422),
    "V": (430, 431, 432),
    "N": (450, 451, 452),
    "BG": (460, 461, 462),
}

_QUADRANTS = ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))


def blob_image(class_index: int, size: int, rng: SplitMix64) -> np.ndarray:
    """3xSxS image: gaussian bump in a class quadrant, class-tinted, noisy."""
    cy, cx = _QUADRANTS[class_index % 4]
    ys = (np.arange(size) + 0.5) / size
    xs = (np.arange(size) + 0.5) / size
    d2 = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2
    bump = np.exp(-d2 / (2 * (0.12 ** 2)))
    img = np.empty((3, size, size))
    emphasis = class_index % 3
    for c in range(3):
        amp = 0.8 if c == emphasis else 0.15
        img[c] = amp * bump
    img += 0.08 * rng.uniform((3, size, size))
    return np.clip(img, 0.0, 0.999)


def make_synthetic_dataset(out_dir, classes=("D", "P", "S", "V"),
                           samples_per_class=16, image_size=32, seed=2024):
    """Write rasters plus manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(seed)
    records = []
    for ci, cls in enumerate(classes):
        pool = CLASS_LOCATIONS[cls]
        for k in range(samples_per_class):
            img = blob_image(ci, image_size, rng)
            name = f"{cls}_{k:03d}.wimg"
            save_raster(img, out_dir / name)
            records.append(ManifestRecord(str(out_dir / name), cls,
                                          pool[rng.randint(len(pool))]))
    manifest = out_dir / "manifest.csv"
    save_manifest(records, manifest)
    return manifest
