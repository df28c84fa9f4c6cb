import pytest

from dualstr.data.metrics import format_accuracy, per_category_accuracy, word_accuracy
from dualstr.errors import ContractError


def test_seven_of_ten():
    gts = [f"w{i}" for i in range(10)]
    preds = gts[:7] + ["x", "y", "z"]
    assert word_accuracy(preds, gts) == pytest.approx(0.7)


def test_case_and_symbols_are_filtered():
    assert word_accuracy(["Hello!"], ["hello"]) == 1.0
    assert word_accuracy(["hel-lo"], ["HELLO"]) == 1.0
    assert word_accuracy(["hell0"], ["hello"]) == 0.0


def test_mismatched_or_empty_input():
    with pytest.raises(ContractError):
        word_accuracy(["a"], ["a", "b"])
    with pytest.raises(ContractError):
        word_accuracy([], [])


def test_per_category():
    preds = ["cat", "dog", "emu", "owl"]
    gts = ["cat", "dig", "emu", "owl"]
    tags = [("clean",), ("clean",), ("rotated",), ("occluded",)]
    report = per_category_accuracy(preds, gts, tags, ("clean", "rotated", "blurred", "occluded"))
    assert report == {"clean": 0.5, "rotated": 1.0, "blurred": None, "occluded": 1.0}
    assert format_accuracy(report["blurred"]) == "n/a"
    assert format_accuracy(report["clean"]) == "0.5000"
