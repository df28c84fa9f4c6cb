import numpy as np
import pytest
from PIL import Image

from dualstr.data.io import (
    Dataset,
    ManifestEntry,
    decode_ppm,
    encode_ppm,
    format_manifest,
    load_image,
    parse_manifest,
    resize_image,
    write_dataset,
)
from dualstr.data.render import CATEGORIES, generate_samples
from dualstr.errors import ContractError, DatasetIOError, PPMParseError

from conftest import random_images


def test_ppm_header_and_round_trip():
    image = random_images(1, h=3, w=5)[0]
    data = encode_ppm(image)
    assert data.startswith(b"P6\n5 3\n255\n")
    assert len(data) == len(b"P6\n5 3\n255\n") + 45
    np.testing.assert_array_equal(decode_ppm(data), image)


def test_ppm_header_comments_are_skipped():
    data = b"P6\n# made by hand\n2 1\n255\n" + bytes(range(6))
    assert decode_ppm(data).tolist() == [[[0, 1, 2], [3, 4, 5]]]


def test_truncated_ppm_reports_offset():
    data = encode_ppm(random_images(1, h=4, w=4)[0])[:-10]
    with pytest.raises(PPMParseError) as info:
        decode_ppm(data)
    assert info.value.offset == len(data)


@pytest.mark.parametrize(
    "data",
    [b"P3\n1 1\n255\n\x00\x00\x00", b"P6\n1 x\n255\n\x00\x00\x00", b"P6\n1 1\n65535\n\x00"],
)
def test_malformed_ppm_headers(data):
    with pytest.raises(PPMParseError):
        decode_ppm(data)


def test_encode_rejects_non_rgb():
    with pytest.raises(ContractError):
        encode_ppm(np.zeros((2, 2), dtype=np.uint8))


def test_load_image_through_pillow(tmp_path):
    image = random_images(1, h=6, w=7)[0]
    Image.fromarray(image).save(tmp_path / "x.png")
    np.testing.assert_array_equal(load_image(tmp_path / "x.png"), image)
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DatasetIOError):
        load_image(tmp_path / "bad.png")
    with pytest.raises(DatasetIOError):
        load_image(tmp_path / "missing.ppm")


def test_resize_image():
    image = random_images(1, h=16, w=64)[0]
    assert resize_image(image, 32, 128).shape == (32, 128, 3)
    assert resize_image(image, 16, 64) is image


def test_manifest_with_crlf():
    text = "images/000000.ppm\tHello\tclean\r\nimages/000001.ppm\tw0rd\trotated,blurred\r\n"
    entries = parse_manifest(text)
    assert entries == [
        ManifestEntry(relpath="images/000000.ppm", label="Hello", tags=("clean",)),
        ManifestEntry(relpath="images/000001.ppm", label="w0rd", tags=("rotated", "blurred")),
    ]
    assert format_manifest(entries) == text.replace("\r\n", "\n")


def test_manifest_bad_line():
    with pytest.raises(DatasetIOError) as info:
        parse_manifest("a.ppm\tok\tclean\njust-one-field\n")
    assert "line 2" in info.value.message


def test_write_and_load_dataset(tmp_path):
    samples = generate_samples(["cat", "dog"], 10, 3, CATEGORIES, 32, 128)
    counts = write_dataset(tmp_path, samples)
    assert sum(counts.values()) == 10
    dataset = Dataset.load(tmp_path)
    assert len(dataset) == 10
    assert dataset.labels == [s.label for s in samples]
    np.testing.assert_array_equal(dataset.images[4], samples[4].image)
    assert dataset.tag_counts() == counts
    resized = Dataset.load(tmp_path, 8, 16)
    assert resized.images.shape == (10, 8, 16, 3)


def test_missing_image_names_the_relpath(tmp_path):
    write_dataset(tmp_path, generate_samples(["cat"], 3, 0))
    (tmp_path / "images" / "000001.ppm").unlink()
    with pytest.raises(DatasetIOError) as info:
        Dataset.load(tmp_path)
    assert info.value.relpath == "images/000001.ppm"


def test_missing_manifest_and_empty_dataset(tmp_path):
    with pytest.raises(DatasetIOError):
        Dataset.load(tmp_path)
    (tmp_path / "labels.tsv").write_text("", encoding="utf-8")
    with pytest.raises(DatasetIOError):
        Dataset.load(tmp_path)


def test_tag_subsets_cover_the_dataset():
    samples = generate_samples(["cat", "dog", "emu"], 40, 9, CATEGORIES, 8, 16)
    dataset = Dataset.from_samples(samples)
    indices = np.concatenate([dataset.tag_indices(tag) for tag in CATEGORIES])
    assert sorted(indices.tolist()) == list(range(40))
    sub = dataset.subset(dataset.tag_indices("clean"))
    assert all(t == ("clean",) for t in sub.tags)
    batches = list(dataset.batches(16))
    assert [len(labels) for _, labels in batches] == [16, 16, 8]
