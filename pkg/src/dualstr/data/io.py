"""
Dataset directories: binary PPM images plus a labels.tsv manifest.

labels.tsv holds one `relpath<TAB>label<TAB>tags` line per sample, tags
comma-separated. PPM files are written as `P6\\n<w> <h>\\n255\\n` followed by
the raw RGB bytes.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from dualstr.data.render import Sample
from dualstr.errors import ContractError, DatasetIOError, PPMParseError

logger = logging.getLogger(__name__)

MANIFEST = "labels.tsv"
IMAGE_DIR = "images"
_WHITESPACE = b" \t\r\n"


def encode_ppm(image: np.ndarray) -> bytes:
    pixels = np.asarray(image)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ContractError(f"PPM needs uint8 [h, w, 3] pixels, got {pixels.dtype} {pixels.shape}")
    h, w = pixels.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def write_ppm(path: Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))


def _token(data: bytes, pos: int, what: str) -> tuple[bytes, int]:
    """Skip whitespace and comments, then return the next header token."""
    while pos < len(data):
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise PPMParseError(f"missing {what}", start)
    return data[start:pos], pos


def _number(data: bytes, pos: int, what: str) -> tuple[int, int]:
    start = pos
    token, pos = _token(data, pos, what)
    if not token.isdigit():
        raise PPMParseError(f"invalid {what} {token!r}", pos - len(token))
    value = int(token)
    if value <= 0:
        raise PPMParseError(f"{what} must be positive", start)
    return value, pos


def decode_ppm(data: bytes) -> np.ndarray:
    magic, pos = _token(data, 0, "magic number")
    if magic != b"P6":
        raise PPMParseError(f"expected magic P6, found {magic[:8]!r}", 0)
    width, pos = _number(data, pos, "width")
    height, pos = _number(data, pos, "height")
    maxval, pos = _number(data, pos, "maxval")
    if maxval != 255:
        raise PPMParseError(f"maxval {maxval} is not supported, only 255", pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise PPMParseError("expected a single whitespace byte after maxval", pos)
    pos += 1
    expected = width * height * 3
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise PPMParseError(
            f"truncated pixel data: {len(payload)} of {expected} bytes", pos + len(payload)
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def read_ppm(path: Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def load_image(path: Path) -> np.ndarray:
    """Read a PPM with the strict parser, anything else through Pillow, as RGB uint8."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".ppm":
            return read_ppm(path)
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as e:
        if isinstance(e, UnidentifiedImageError):
            raise DatasetIOError(str(path), "not a readable image")
        raise DatasetIOError(str(path), e.strerror or str(e))


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image
    img = Image.fromarray(image).resize((width, height), Image.Resampling.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


@dataclass(kw_only=True, frozen=True)
class ManifestEntry:
    relpath: str
    label: str
    tags: tuple[str, ...]


def parse_manifest(text: str) -> list[ManifestEntry]:
    """Parse labels.tsv content; CRLF line endings are normalized."""
    entries = []
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise DatasetIOError(
                MANIFEST, f"line {number}: expected relpath<TAB>label<TAB>tags"
            )
        tags = tuple(t for t in parts[2].split(",") if t) if len(parts) == 3 else ()
        entries.append(ManifestEntry(relpath=parts[0], label=parts[1], tags=tags))
    return entries


def format_manifest(entries: Iterable[ManifestEntry]) -> str:
    return "".join(f"{e.relpath}\t{e.label}\t{','.join(e.tags)}\n" for e in entries)


def write_dataset(out_dir: Path, samples: Sequence[Sample]) -> Counter[str]:
    """Write samples as images/NNNNNN.ppm plus the manifest; return per-tag counts."""
    out_dir = Path(out_dir)
    (out_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    counts: Counter[str] = Counter()
    for i, sample in enumerate(samples):
        relpath = f"{IMAGE_DIR}/{i:06d}.ppm"
        try:
            write_ppm(out_dir / relpath, sample.image)
        except OSError as e:
            raise DatasetIOError(relpath, e.strerror or str(e))
        entries.append(ManifestEntry(relpath=relpath, label=sample.label, tags=sample.tags))
        counts.update(sample.tags)
    (out_dir / MANIFEST).write_text(format_manifest(entries), encoding="utf-8")
    logger.info(f"Wrote {len(entries)} samples to {out_dir}")
    return counts


class Dataset:
    """An in-memory dataset: images [n, h, w, 3] uint8, labels, tags and relpaths."""

    def __init__(
        self,
        images: np.ndarray,
        labels: Sequence[str],
        tags: Sequence[tuple[str, ...]],
        relpaths: Optional[Sequence[str]] = None,
    ):
        if len(images) != len(labels) or len(labels) != len(tags):
            raise ContractError("images, labels and tags must have equal lengths")
        self.images = images
        self.labels = list(labels)
        self.tags = list(tags)
        self.relpaths = list(relpaths) if relpaths is not None else [
            f"{IMAGE_DIR}/{i:06d}.ppm" for i in range(len(labels))
        ]

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        return cls(
            np.stack([s.image for s in samples]),
            [s.label for s in samples],
            [s.tags for s in samples],
        )

    @classmethod
    def load(
        cls,
        root: Path,
        image_h: Optional[int] = None,
        image_w: Optional[int] = None,
    ) -> "Dataset":
        """Load a dataset directory, resizing images to (image_h, image_w) when given."""
        root = Path(root)
        manifest = root / MANIFEST
        try:
            text = manifest.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise DatasetIOError(MANIFEST, f"missing in {root}")
        except UnicodeDecodeError:
            raise DatasetIOError(MANIFEST, "not valid UTF-8")
        entries = parse_manifest(text)
        images = []
        for entry in entries:
            path = root / entry.relpath
            if not path.is_file():
                raise DatasetIOError(entry.relpath, "file does not exist")
            try:
                image = read_ppm(path)
            except PPMParseError as e:
                raise DatasetIOError(entry.relpath, e.message)
            if image_h is not None and image_w is not None:
                image = resize_image(image, image_h, image_w)
            images.append(image)
        if not images:
            raise DatasetIOError(MANIFEST, "dataset is empty")
        shapes = {img.shape for img in images}
        if len(shapes) > 1:
            raise DatasetIOError(MANIFEST, f"images have mixed sizes {sorted(shapes)}")
        logger.info(f"Loaded {len(entries)} samples from {root}")
        return cls(
            np.stack(images),
            [e.label for e in entries],
            [e.tags for e in entries],
            [e.relpath for e in entries],
        )

    def tag_indices(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if tag in t], dtype=np.int64)

    def tag_counts(self) -> Counter[str]:
        counts: Counter[str] = Counter()
        for t in self.tags:
            counts.update(t)
        return counts

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[idx],
            [self.labels[i] for i in idx],
            [self.tags[i] for i in idx],
            [self.relpaths[i] for i in idx],
        )

    def batches(self, batch: int) -> Iterator[tuple[np.ndarray, list[str]]]:
        for start in range(0, len(self), batch):
            yield self.images[start : start + batch], self.labels[start : start + batch]
