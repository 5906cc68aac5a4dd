import numpy as np
import pytest

from limecell.imagestore import CellImage, RawImage, encode_bmp


def make_bmp_bytes(height, width, seed=0, base=None):
    rs = np.random.RandomState(seed)
    if base is None:
        px = rs.randint(0, 256, size=(height, width, 3), dtype=np.uint8)
    else:
        px = np.clip(base + rs.randn(height, width, 3) * 25, 0, 255).astype(np.uint8)
    return encode_bmp(RawImage(height, width, px)), px


@pytest.fixture
def bmp_tree(tmp_path):
    """Builds data/<all|hem>/imgN.bmp trees; returns (root, per-class count)."""

    def build(n_per_class=6, size=48):
        root = tmp_path / "data"
        for cls, base, seed0 in (("all", 200, 100), ("hem", 60, 500)):
            d = root / cls
            d.mkdir(parents=True, exist_ok=True)
            for i in range(n_per_class):
                data, _ = make_bmp_bytes(size, size, seed=seed0 + i, base=base)
                (d / f"img{i}.bmp").write_bytes(data)
        return root

    return build


def separable_cell_images(n=200, size=32, seed=7):
    """Bright class 1 (mean > 0.7) versus dark class 0 (mean < 0.3)."""
    rs = np.random.RandomState(seed)
    images = []
    for i in range(n):
        label = i % 2
        base = 0.85 if label else 0.15
        arr = np.clip(base + 0.05 * rs.randn(size, size, 3), 0.0, 1.0).astype(np.float32)
        images.append(
            CellImage(pixels=arr, label=label, sample_id=str(i), source_path="", digest="")
        )
    return images


@pytest.fixture
def separable_set():
    return separable_cell_images
