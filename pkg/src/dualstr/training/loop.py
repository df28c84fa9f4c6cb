"""
The training loop: mask sampling, gradient accumulation, AdamW updates on
two learning-rate groups, periodic evaluation and checkpoints.

Output directory layout:
    metrics.tsv   step<TAB>loss<TAB>lr_enc<TAB>lr_scratch[<TAB>eval_acc]
    last.ckpt     latest state, written every checkpoint_every steps
    best.ckpt     state with the highest evaluation accuracy so far
    final.ckpt    state after the last step
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dualstr.config import RunConfig
from dualstr.data.augment import RandAugment
from dualstr.data.io import Dataset
from dualstr.data.metrics import per_category_accuracy, word_accuracy
from dualstr.data.render import CATEGORIES
from dualstr.decoding import DecodePolicy, Prediction, predict_many
from dualstr.engine import Tape
from dualstr.errors import ConfigKeyError, ContractError
from dualstr.masks import sample_batch_masks
from dualstr.model import DualBranchRecognizer
from dualstr.training.checkpoint import (
    load_checkpoint,
    restore_training_state,
    save_training_state,
)
from dualstr.training.optim import AdamW
from dualstr.training.schedule import group_schedules

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.tsv"
LAST_CKPT = "last.ckpt"
BEST_CKPT = "best.ckpt"
FINAL_CKPT = "final.ckpt"
OUTPUTS = ("visual", "cross", "final")
# Training-set sample scored when no evaluation split is given
TRAIN_EVAL_LIMIT = 256


@dataclass(kw_only=True, frozen=True)
class StepRecord:
    step: int
    loss: float
    lr_encoder: float
    lr_scratch: float
    eval_accuracy: Optional[float] = None

    def tsv(self) -> str:
        fields = [str(self.step), repr(self.loss), repr(self.lr_encoder), repr(self.lr_scratch)]
        if self.eval_accuracy is not None:
            fields.append(repr(self.eval_accuracy))
        return "\t".join(fields)


@dataclass(kw_only=True, frozen=True)
class EvalReport:
    predictions: list[Prediction]
    overall: dict[str, float]
    per_category: dict[str, dict[str, Optional[float]]]

    @property
    def accuracy(self) -> float:
        return self.overall["final"]


@dataclass(kw_only=True)
class TrainResult:
    records: list[StepRecord] = field(default_factory=list)
    step: int = 0
    best_accuracy: Optional[float] = None
    final_report: Optional[EvalReport] = None


def evaluate(
    model: DualBranchRecognizer,
    dataset: Dataset,
    policy: Optional[DecodePolicy] = None,
    batch_size: int = 64,
    categories: Sequence[str] = CATEGORIES,
) -> EvalReport:
    """Word accuracy of the visual, cross-modal and final outputs, overall and per tag."""
    if policy is None:
        decode = model.config.decode
        policy = DecodePolicy(
            refine_iters=decode.refine_iters,
            fast_cross=decode.fast_cross,
            refine_visual_context=decode.refine_visual_context,
        )
    was_training = model.training
    predictions = predict_many(model, dataset.images, policy, batch_size)
    model.train(was_training)
    charset = model.char_tokenizer.eval_charset
    overall: dict[str, float] = {}
    per_category: dict[str, dict[str, Optional[float]]] = {}
    for output in OUTPUTS:
        preds = [getattr(p, output) for p in predictions]
        overall[output] = word_accuracy(preds, dataset.labels, charset)
        per_category[output] = per_category_accuracy(
            preds, dataset.labels, dataset.tags, categories, charset
        )
    for output in OUTPUTS:
        logger.info(
            f"Eval {output}: accuracy {overall[output]:.4f} "
            + " ".join(
                f"{c}={'n/a' if v is None else f'{v:.4f}'}"
                for c, v in per_category[output].items()
            )
        )
    return EvalReport(predictions=predictions, overall=overall, per_category=per_category)


class Trainer:
    """Owns the optimizer, schedules and sampler RNG of one run."""

    def __init__(
        self,
        model: DualBranchRecognizer,
        dataset: Dataset,
        config: RunConfig,
    ):
        optim = config.optim
        if optim.total_steps is None:
            raise ConfigKeyError("optim", "total_steps", "required key is missing")
        if optim.batch is None:
            raise ConfigKeyError("optim", "batch", "required key is missing")
        if len(dataset) == 0:
            raise ContractError("cannot train on an empty dataset")
        self.model = model
        self.dataset = dataset
        self.config = config
        self.total_steps = optim.total_steps
        self.batch = optim.batch
        self.micro_batch = optim.batch // optim.accum_steps
        self.optimizer = AdamW(
            model.parameter_groups(),
            betas=(optim.beta1, optim.beta2),
            eps=optim.eps,
            weight_decay=optim.weight_decay,
        )
        self.schedules = group_schedules(optim, self.total_steps)
        self.rng = np.random.default_rng(config.train.seed)
        self.augment = RandAugment()
        self.augment.training = config.train.augment
        self.step = 0

    def learning_rates(self, update: int) -> dict[str, float]:
        """Rates of 0-based update `update`, which uses schedule step update + 1."""
        return {g: s.lr_at(update + 1) for g, s in self.schedules.items()}

    def sample_batch(self) -> tuple[np.ndarray, list[str], np.ndarray]:
        idx = self.rng.integers(len(self.dataset), size=self.batch)
        images = self.augment.augment_batch(self.dataset.images[idx], self.rng)
        labels = [self.dataset.labels[i] for i in idx]
        m = self.config.masks
        masks = sample_batch_masks(
            m.k,
            self.model.seq_len,
            self.rng,
            m.mask_pairing,
            batch=self.batch if m.per_sample_masks else None,
        )
        return images, labels, masks

    def accumulate_gradients(
        self, images: np.ndarray, labels: Sequence[str], masks: np.ndarray
    ) -> float:
        """Forward and backward over micro-batches; returns the full-batch loss.

        Each micro-batch loss is weighted by its share of the batch's target
        tokens, so the summed gradient equals the full-batch gradient.
        """
        self.model.train()
        self.optimizer.zero_grad()
        tokens = np.array([len(label) + 1 for label in labels], dtype=np.float64)
        total_tokens = tokens.sum()
        per_sample = masks.ndim == 4
        loss = 0.0
        for start in range(0, len(labels), self.micro_batch):
            stop = start + self.micro_batch
            weight = float(tokens[start:stop].sum() / total_tokens)
            micro_masks = masks[start:stop] if per_sample else masks
            with Tape() as tape:
                out = self.model.forward_train(
                    images[start:stop], labels[start:stop], micro_masks, loss_weight=weight
                )
            tape.backward(out.loss)
            loss += out.loss.item()
            logger.debug(
                f"step {self.step} micro-batch {start}:{stop} loss {out.loss.item():.4f}",
                extra={"step_chatter": True},
            )
        return loss

    def train_step(self) -> StepRecord:
        self.model.dropout_stream.set_step(self.step)
        images, labels, masks = self.sample_batch()
        loss = self.accumulate_gradients(images, labels, masks)
        lrs = self.learning_rates(self.step)
        self.optimizer.step(lrs)
        self.step += 1
        return StepRecord(
            step=self.step,
            loss=loss,
            lr_encoder=lrs["encoder"],
            lr_scratch=lrs["scratch"],
        )

    def save(self, path: Path, best_accuracy: Optional[float]) -> None:
        metadata = {} if best_accuracy is None else {"best_accuracy": best_accuracy}
        save_training_state(path, self.model, self.optimizer, self.rng, self.step, metadata)

    def resume(self, path: Path) -> Optional[float]:
        ckpt = load_checkpoint(path)
        rng = restore_training_state(ckpt, self.model, self.optimizer)
        if rng is not None:
            self.rng = rng
        self.step = ckpt.step
        logger.info(f"Resumed from {path} at step {self.step}")
        best = ckpt.metadata.get("best_accuracy")
        return None if best is None else float(best)


def train_loop(
    model: DualBranchRecognizer,
    dataset: Dataset,
    config: RunConfig,
    out_dir: Path,
    resume: Optional[Path] = None,
    eval_dataset: Optional[Dataset] = None,
    stop_after: Optional[int] = None,
) -> TrainResult:
    """Train until total_steps (or `stop_after`), logging and checkpointing into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(model, dataset, config)
    result = TrainResult()
    if resume is not None:
        result.best_accuracy = trainer.resume(resume)
    if eval_dataset is None:
        eval_dataset = dataset.subset(range(min(len(dataset), TRAIN_EVAL_LIMIT)))

    train = config.train
    end = trainer.total_steps if stop_after is None else min(stop_after, trainer.total_steps)
    metrics_path = out_dir / METRICS_FILE
    mode = "a" if resume is not None and metrics_path.exists() else "w"
    logger.info(
        f"Training steps {trainer.step + 1}..{end} of {trainer.total_steps}, "
        f"batch {trainer.batch} in micro-batches of {trainer.micro_batch}"
    )
    with metrics_path.open(mode, encoding="utf-8") as metrics:
        while trainer.step < end:
            record = trainer.train_step()
            step = record.step
            periodic = train.eval_every and step % train.eval_every == 0
            if periodic or step == trainer.total_steps:
                report = evaluate(model, eval_dataset)
                record = StepRecord(
                    step=record.step,
                    loss=record.loss,
                    lr_encoder=record.lr_encoder,
                    lr_scratch=record.lr_scratch,
                    eval_accuracy=report.accuracy,
                )
                result.final_report = report
                if result.best_accuracy is None or report.accuracy > result.best_accuracy:
                    result.best_accuracy = report.accuracy
                    trainer.save(out_dir / BEST_CKPT, result.best_accuracy)
                    logger.info(f"New best accuracy {report.accuracy:.4f} at step {step}")
            metrics.write(record.tsv() + "\n")
            metrics.flush()
            result.records.append(record)
            if step % train.log_every == 0:
                logger.info(
                    f"Step {step}: loss {record.loss:.4f}, "
                    f"lr {record.lr_encoder:.3e}/{record.lr_scratch:.3e}"
                )
            if train.checkpoint_every and step % train.checkpoint_every == 0:
                trainer.save(out_dir / LAST_CKPT, result.best_accuracy)

    result.step = trainer.step
    trainer.save(out_dir / LAST_CKPT, result.best_accuracy)
    if trainer.step == trainer.total_steps:
        trainer.save(out_dir / FINAL_CKPT, result.best_accuracy)
        logger.info(f"Training finished at step {trainer.step}")
    return result
