"""
RandAugment over a fixed seven-operation pool.

Three operations are drawn per image at magnitude 5 out of 10. Sharpness and
invert are never part of the pool.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from dualstr.errors import ConfigError

logger = logging.getLogger(__name__)

MAX_MAGNITUDE = 10

OpFn = Callable[[Image.Image, float, tuple[int, ...]], Image.Image]


def _fill(img: Image.Image) -> tuple[int, ...]:
    corner = img.getpixel((0, 0))
    return tuple(corner) if isinstance(corner, tuple) else (int(corner),)  # type: ignore[arg-type]


def _rotate(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return img.rotate(30.0 * v, resample=Image.Resampling.NEAREST, fillcolor=fill)


def _affine(img: Image.Image, matrix: tuple[float, ...], fill: tuple[int, ...]) -> Image.Image:
    return img.transform(
        img.size,
        Image.Transform.AFFINE,
        matrix,
        resample=Image.Resampling.NEAREST,
        fillcolor=fill,
    )


def _shear_x(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return _affine(img, (1.0, 0.3 * v, 0.0, 0.0, 1.0, 0.0), fill)


def _shear_y(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return _affine(img, (1.0, 0.0, 0.0, 0.3 * v, 1.0, 0.0), fill)


def _translate(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return _affine(img, (1.0, 0.0, 0.45 * v * img.width, 0.0, 1.0, 0.0), fill)


def _contrast(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return ImageEnhance.Contrast(img).enhance(1.0 + 0.9 * v)


def _brightness(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return ImageEnhance.Brightness(img).enhance(1.0 + 0.9 * v)


def _posterize(img: Image.Image, v: float, fill: tuple[int, ...]) -> Image.Image:
    return ImageOps.posterize(img, 8 - int(round(4 * abs(v))))


OPS: dict[str, OpFn] = {
    "rotate": _rotate,
    "shear_x": _shear_x,
    "shear_y": _shear_y,
    "translate": _translate,
    "contrast": _contrast,
    "brightness": _brightness,
    "posterize": _posterize,
}


@dataclass(kw_only=True, frozen=True)
class AugmentOp:
    name: str
    sign: float


class RandAugment:
    def __init__(self, depth: int = 3, magnitude: int = 5):
        if not 0 <= magnitude <= MAX_MAGNITUDE:
            raise ConfigError(f"magnitude must be in 0..{MAX_MAGNITUDE}, got {magnitude}")
        self.depth = depth
        self.magnitude = magnitude
        self.training = True

    def sample_ops(self, rng: np.random.Generator) -> list[AugmentOp]:
        names = list(OPS)
        picks = rng.integers(len(names), size=self.depth)
        signs = rng.choice([-1.0, 1.0], size=self.depth)
        return [AugmentOp(name=names[i], sign=float(s)) for i, s in zip(picks, signs)]

    def apply(self, image: np.ndarray, ops: list[AugmentOp]) -> np.ndarray:
        img = Image.fromarray(np.asarray(image, dtype=np.uint8))
        fill = _fill(img)
        strength = self.magnitude / MAX_MAGNITUDE
        for op in ops:
            img = OPS[op.name](img, op.sign * strength, fill)
        return np.asarray(img, dtype=np.uint8)

    def __call__(self, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if not self.training:
            return image
        return self.apply(image, self.sample_ops(rng))

    def augment_batch(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if not self.training:
            return images
        return np.stack([self(img, rng) for img in images])
