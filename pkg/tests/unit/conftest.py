import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to Python path for importing dualstr
src_path = Path(__file__).parent.parent.parent / "src"
sys.path.insert(0, str(src_path))

from dualstr.config import RunConfig  # noqa: E402

# Tiny recognizer: 8x16 images in 4x4 patches, width 32, two-layer encoders,
# labels of up to 5 characters (N = 6 decoder rows)
TOY_MODEL = {
    "image_h": 8,
    "image_w": 16,
    "patch": 4,
    "image_layers": 2,
    "image_dim": 32,
    "image_heads": 2,
    "text_layers": 2,
    "text_dim": 32,
    "text_heads": 2,
    "joint_dim": 32,
    "dec_depth": 1,
    "dec_head_dim": 16,
    "mlp_ratio": 2,
    "dropout": 0.0,
    "max_label_length": 5,
    "text_length": 8,
    "init_seed": 0,
}

TOY_WORDS = ["ab", "Cat", "dog1", "x", "hello", "Q7z"]


def make_config(**sections) -> RunConfig:
    """Toy configuration; keyword arguments override whole-section keys."""
    overrides = {
        "model": TOY_MODEL,
        "freezing": {"image_freeze_layers": 0, "text_freeze_layers": 0},
        "adapter": {"connected_layers": "1,2", "text_connected_layers": "1,2"},
    }
    for name, values in sections.items():
        overrides[name] = {**overrides.get(name, {}), **values}
    return RunConfig().with_overrides(**overrides)


def random_images(n: int, seed: int = 0, h: int = 8, w: int = 16) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, h, w, 3), dtype=np.uint8)


@pytest.fixture
def toy_config() -> RunConfig:
    return make_config()


@pytest.fixture
def toy_model(toy_config):
    from dualstr.model import DualBranchRecognizer

    return DualBranchRecognizer(toy_config)


@pytest.fixture
def images() -> np.ndarray:
    return random_images(len(TOY_WORDS))


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    """Write an INI file and point DUALSTR_CONFIG at it."""

    def write(text: str) -> Path:
        path = tmp_path / "config.ini"
        path.write_text(text, encoding="utf-8")
        monkeypatch.setenv("DUALSTR_CONFIG", str(path))
        return path

    return write
