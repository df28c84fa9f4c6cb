"""Word accuracy under the lowercase alphanumeric evaluation charset."""

from collections import defaultdict
from typing import Optional, Sequence

from dualstr.errors import ContractError
from dualstr.tokenizer import EVAL_CHARSET, eval_filter


def word_accuracy(
    preds: Sequence[str], gts: Sequence[str], charset: str = EVAL_CHARSET
) -> float:
    """Fraction of pairs equal after filtering both sides to the evaluation charset."""
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ContractError("word accuracy of an empty list is undefined")
    hits = sum(eval_filter(p, charset) == eval_filter(g, charset) for p, g in zip(preds, gts))
    return hits / len(preds)


def per_category_accuracy(
    preds: Sequence[str],
    gts: Sequence[str],
    tags: Sequence[Sequence[str]],
    categories: Sequence[str],
    charset: str = EVAL_CHARSET,
) -> dict[str, Optional[float]]:
    """Accuracy per tag; None for a category with no samples."""
    if not len(preds) == len(gts) == len(tags):
        raise ContractError("predictions, ground truths and tags must have equal lengths")
    grouped: defaultdict[str, list[int]] = defaultdict(list)
    for i, sample_tags in enumerate(tags):
        for tag in sample_tags:
            grouped[tag].append(i)
    report: dict[str, Optional[float]] = {}
    for category in categories:
        idx = grouped.get(category)
        if not idx:
            report[category] = None
            continue
        report[category] = word_accuracy(
            [preds[i] for i in idx], [gts[i] for i in idx], charset
        )
    return report


def format_accuracy(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"
