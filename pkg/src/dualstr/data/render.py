"""
Synthetic word images from the embedded bitmap font.

A word is drawn onto a canvas 32 pixels high at glyph scale 3, optionally
corrupted, then resized to the model image size with nearest-neighbour
sampling. Every random choice comes from the generator passed in, so a
(word, seed) pair always yields the same bytes.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, ImageFilter

from dualstr.data.font import GLYPH_H, GLYPH_W, glyph, has_glyph
from dualstr.errors import CharsetError, ContractError, LengthError
from dualstr.tokenizer import MAX_LABEL_LENGTH

logger = logging.getLogger(__name__)

CANVAS_H = 32
GLYPH_SCALE = 3
MAX_OCCLUDED_FRACTION = 0.30
MAX_ROTATION_DEG = 25.0
MAX_SHEAR = 0.3

CLEAN = "clean"
ROTATED = "rotated"
BLURRED = "blurred"
OCCLUDED = "occluded"
PERSPECTIVE = "perspective"
CATEGORIES = (CLEAN, ROTATED, BLURRED, OCCLUDED, PERSPECTIVE)

_BLUR_KERNELS = {
    3: np.outer([1, 2, 1], [1, 2, 1]),
    5: np.outer([1, 4, 6, 4, 1], [1, 4, 6, 4, 1]),
}


@dataclass(kw_only=True, frozen=True)
class Sample:
    image: np.ndarray
    label: str
    tags: tuple[str, ...]


@dataclass(kw_only=True, frozen=True)
class RenderedWord:
    """A rendered sample together with the canvas-level bookkeeping used by tests."""

    image: np.ndarray
    canvas: np.ndarray
    label: str
    tags: tuple[str, ...]
    glyph_mask: np.ndarray
    occlusion_mask: np.ndarray
    glyph_origins: list[tuple[int, int]] = field(default_factory=list)
    foreground: tuple[int, int, int] = (0, 0, 0)
    background: tuple[int, int, int] = (255, 255, 255)

    @property
    def occluded_fraction(self) -> float:
        glyph_pixels = int(self.glyph_mask.sum())
        if glyph_pixels == 0:
            return 0.0
        return float((self.glyph_mask & self.occlusion_mask).sum()) / glyph_pixels

    def sample(self) -> Sample:
        return Sample(image=self.image, label=self.label, tags=self.tags)


def parse_corruptions(text: str) -> tuple[str, ...]:
    """Comma-separated category names, e.g. "clean,rotated"."""
    names = tuple(part.strip() for part in text.split(",") if part.strip())
    unknown = [n for n in names if n not in CATEGORIES]
    if unknown or not names:
        raise ContractError(
            f"unknown corruption categories {unknown}; choose from {', '.join(CATEGORIES)}"
        )
    return names


def glyph_layer(ch: str) -> np.ndarray:
    """Boolean bitmap of one character at the rendering scale."""
    return np.kron(glyph(ch), np.ones((GLYPH_SCALE, GLYPH_SCALE), dtype=bool)).astype(bool)


def _colors(rng: np.random.Generator) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    light = tuple(int(v) for v in rng.integers(170, 256, size=3))
    dark = tuple(int(v) for v in rng.integers(0, 86, size=3))
    if rng.random() < 0.5:
        return dark, light  # type: ignore[return-value]
    return light, dark  # type: ignore[return-value]


def _layout(
    word: str, rng: np.random.Generator
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    gh, gw = GLYPH_H * GLYPH_SCALE, GLYPH_W * GLYPH_SCALE
    gaps = rng.integers(1, 5, size=max(len(word) - 1, 0))
    margin_left, margin_right = (int(m) for m in rng.integers(3, 9, size=2))
    width = margin_left + margin_right + gw * len(word) + int(gaps.sum())
    width = max(width, gw)
    mask = np.zeros((CANVAS_H, width), dtype=bool)
    origins = []
    x = margin_left
    for i, ch in enumerate(word):
        # Per-glyph vertical jitter of at most two pixels around the centre line
        y = (CANVAS_H - gh) // 2 + int(rng.integers(-2, 3))
        mask[y : y + gh, x : x + gw] |= glyph_layer(ch)
        origins.append((y, x))
        x += gw + (int(gaps[i]) if i < len(gaps) else 0)
    return mask, origins


def _paint(mask: np.ndarray, fg: Sequence[int], bg: Sequence[int]) -> np.ndarray:
    return np.where(mask[..., None], np.asarray(fg, np.uint8), np.asarray(bg, np.uint8))


def _shear(img: Image.Image, amount: float, fill: object) -> Image.Image:
    h = img.height
    return img.transform(
        img.size,
        Image.Transform.AFFINE,
        (1.0, amount, -amount * h / 2.0, 0.0, 1.0, 0.0),
        resample=Image.Resampling.NEAREST,
        fillcolor=fill,  # type: ignore[arg-type]
    )


def _blur(img: Image.Image, size: int) -> Image.Image:
    kernel = _BLUR_KERNELS[size]
    return img.filter(
        ImageFilter.Kernel((size, size), kernel.flatten().tolist(), scale=int(kernel.sum()))
    )


def _occluders(
    glyph_mask: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Union of 1-2 rectangles, shrunk until they hide at most 30% of the glyph pixels."""
    height, width = glyph_mask.shape
    rects = []
    for _ in range(int(rng.integers(1, 3))):
        rh = int(rng.integers(height // 3, height + 1))
        rw = int(rng.integers(max(2, width // 10), max(3, width * 2 // 5) + 1))
        top = int(rng.integers(0, height - rh + 1))
        left = int(rng.integers(0, width - rw + 1))
        rects.append([top, left, rh, rw])
    glyph_pixels = max(int(glyph_mask.sum()), 1)
    while True:
        union = np.zeros_like(glyph_mask)
        for top, left, rh, rw in rects:
            union[top : top + rh, left : left + rw] = True
        if (union & glyph_mask).sum() / glyph_pixels <= MAX_OCCLUDED_FRACTION:
            return union
        for rect in rects:
            rect[3] = int(rect[3] * 0.8)


def render_word(
    word: str,
    rng: np.random.Generator,
    corruptions: Iterable[str] = (CLEAN,),
    image_h: Optional[int] = 32,
    image_w: Optional[int] = 128,
    max_length: int = MAX_LABEL_LENGTH,
) -> RenderedWord:
    """Render `word` with one category drawn from `corruptions`.

    Corruptions of the chosen category are applied in the fixed order
    perspective, rotation, blur, occlusion; any non-clean render also gets
    additive Gaussian noise. `image_h`/`image_w` of None keep the canvas size.
    """
    for ch in word:
        if not has_glyph(ch):
            raise CharsetError(f"character {ch!r} in {word!r} has no glyph")
    if len(word) > max_length:
        raise LengthError(f"word {word!r} has {len(word)} characters, the limit is {max_length}")
    allowed = tuple(corruptions)
    for name in allowed:
        if name not in CATEGORIES:
            raise ContractError(f"unknown corruption category {name!r}")

    category = allowed[int(rng.integers(len(allowed)))] if len(allowed) > 1 else allowed[0]
    fg, bg = _colors(rng)
    glyph_mask, origins = _layout(word, rng)
    img = Image.fromarray(_paint(glyph_mask, fg, bg))
    mask_img = Image.fromarray(glyph_mask.astype(np.uint8) * 255)

    if category == PERSPECTIVE:
        amount = float(rng.uniform(-MAX_SHEAR, MAX_SHEAR))
        img = _shear(img, amount, bg)
        mask_img = _shear(mask_img, amount, 0)
    if category == ROTATED:
        angle = float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
        img = img.rotate(angle, resample=Image.Resampling.NEAREST, fillcolor=bg)
        mask_img = mask_img.rotate(angle, resample=Image.Resampling.NEAREST, fillcolor=0)
    if category == BLURRED:
        img = _blur(img, 3 if rng.random() < 0.5 else 5)

    glyph_mask = np.asarray(mask_img) > 127
    pixels = np.asarray(img).copy()
    occlusion = np.zeros_like(glyph_mask)
    if category == OCCLUDED and glyph_mask.any():
        occlusion = _occluders(glyph_mask, rng)
        pixels[occlusion] = rng.integers(0, 256, size=3).astype(np.uint8)

    if category != CLEAN:
        sigma = float(rng.uniform(4.0, 12.0))
        noisy = pixels.astype(np.float64) + rng.normal(0.0, sigma, size=pixels.shape)
        pixels = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)

    canvas = pixels
    if image_h is not None and image_w is not None:
        image = np.asarray(
            Image.fromarray(canvas).resize((image_w, image_h), Image.Resampling.NEAREST)
        )
    else:
        image = canvas
    return RenderedWord(
        image=np.ascontiguousarray(image, dtype=np.uint8),
        canvas=canvas,
        label=word,
        tags=(category,),
        glyph_mask=glyph_mask,
        occlusion_mask=occlusion,
        glyph_origins=origins,
        foreground=fg,
        background=bg,
    )


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Generator of sample `index`, independent of every other index."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_samples(
    words: Sequence[str],
    count: int,
    seed: int,
    corruptions: Sequence[str] = (CLEAN,),
    image_h: int = 32,
    image_w: int = 128,
    workers: int = 1,
) -> list[Sample]:
    """Render `count` samples; sample i draws its word and category from its own seed."""
    if not words:
        raise ContractError("cannot generate samples from an empty vocabulary")

    def one(index: int) -> Sample:
        rng = sample_rng(seed, index)
        word = words[int(rng.integers(len(words)))]
        return render_word(word, rng, corruptions, image_h, image_w).sample()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(one, range(count)))
    else:
        samples = [one(i) for i in range(count)]
    logger.info(f"Rendered {count} samples from {len(words)} words (seed {seed})")
    return samples
