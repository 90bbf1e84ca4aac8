from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from mristage import manifest as manifest_mod


def write_png(path: Path, array: np.ndarray) -> Path:
    """Write a uint8 HxW or HxWx3 array as a PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8)).save(path)
    return path


def random_image(rng: np.random.Generator, size: int = 24) -> np.ndarray:
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)


def build_tree(root: Path, class_counts: dict[str, int], seed: int = 0, size: int = 24) -> Path:
    """Create a class-per-directory image tree with distinct random PNGs."""
    rng = np.random.default_rng(seed)
    for name, count in class_counts.items():
        for i in range(count):
            write_png(root / name / f"img_{i:03d}.png", random_image(rng, size))
    return root


@pytest.fixture
def dataset_pair(tmp_path):
    """A small augmented/original tree pair sharing a two-class roster."""
    augmented = build_tree(tmp_path / "augmented", {"ClassA": 6, "ClassB": 6}, seed=1)
    original = build_tree(tmp_path / "original", {"ClassA": 4, "ClassB": 4}, seed=2)
    return augmented, original


@pytest.fixture
def scanned_pair(dataset_pair):
    augmented, original = dataset_pair
    return (
        manifest_mod.scan_dataset(augmented, "augmented"),
        manifest_mod.scan_dataset(original, "original"),
    )
