"""Training harnesses: MLM pretraining, task fine-tuning, grids, seed sweeps.

All loops are step-deterministic on one platform: data order comes from a
seeded permutation stream, masking from per-(epoch, row) streams, dropout
from the torch seed set at loop entry. Optimization is decoupled-weight-decay
Adam under a linear warmup then linear decay to zero schedule, with gradients
clipped to unit global norm.

Fine-tuning feeds sentences as bos + word pieces + eos. For tagging, each
word's tag sits on its first piece; continuation pieces and specials are
ignored by the loss and predictions are read back off the first pieces. For
classification the label is predicted from the first position.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
import torch

from .corpus import (
    ClassificationRecord,
    EntityTypeSet,
    NerSentence,
    PackedSequence,
)
from .masking import IGNORE_INDEX, MaskedBatch, MaskingPolicy, MaskingRng, collate
from .metrics import score_classification, score_ner
from .model import (
    EncoderModel,
    HeadMismatchError,
    forward_mlm,
    forward_seq_cls,
    forward_token_cls,
    save_checkpoint,
    token_cls_loss,
)
from .tokenizer import SpecialTokens, TokenizerModel, encode, encode_words

# Salt separating the batch-order stream from the masking streams.
_ORDER_STREAM = 0x5EED

RUN_RECORD_FILE = "run.json"


@dataclass(frozen=True)
class PretrainConfig:
    steps: int
    batch_size: int = 8
    peak_lr: float = 3e-4
    warmup_steps: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps, batch_size and log_every must be positive")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ValueError("warmup_steps must lie in [0, steps]")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")


# Published pretraining regimes; the desk-scale defaults above stay out of them.
PRETRAIN_PRESETS: dict[str, dict[str, int]] = {
    "v1": {"steps": 100_000, "batch_size": 1024},
    "v2": {"steps": 100_000, "batch_size": 4096},
    "bert-style": {"steps": 1_000_000, "batch_size": 256},
}


def pretrain_preset(name: str, **overrides) -> PretrainConfig:
    if name not in PRETRAIN_PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRETRAIN_PRESETS)}")
    params = dict(PRETRAIN_PRESETS[name])
    params.update(overrides)
    return PretrainConfig(**params)


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; carries the step and a batch fingerprint."""

    def __init__(self, step: int, batch_fingerprint: str):
        super().__init__(f"non-finite loss at step {step} (batch {batch_fingerprint})")
        self.step = step
        self.batch_fingerprint = batch_fingerprint


def _batch_fingerprint(batch: MaskedBatch) -> str:
    return hashlib.sha256(np.ascontiguousarray(batch.input_ids).tobytes()).hexdigest()[:16]


def _lr_factor(step: int, total: int, warmup: int) -> float:
    if step < warmup:
        return (step + 1) / warmup
    return max(0.0, (total - step) / max(total - warmup, 1))


def _order_stream(n_rows: int, seed: int) -> Iterator[tuple[int, int]]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, _ORDER_STREAM))))
    epoch = 0
    while True:
        for i in rng.permutation(n_rows):
            yield epoch, int(i)
        epoch += 1


@dataclass
class PretrainResult:
    model: EncoderModel
    losses: list[tuple[int, float]]
    checkpoint_dir: Path | None


def pretrain(
    model: EncoderModel,
    sequences: Sequence[PackedSequence],
    policy: MaskingPolicy,
    config: PretrainConfig,
    specials: SpecialTokens,
    out_dir: str | Path | None = None,
    tokenizer_fingerprint: str | None = None,
    on_batch: Callable[[int, MaskedBatch], None] | None = None,
) -> PretrainResult:
    """Run exactly config.steps MLM updates over freshly masked batches.

    The loss is logged every log_every steps; a non-finite loss aborts with
    the step index and a fingerprint of the offending batch.
    """
    if not sequences:
        raise ValueError("no packed sequences to pretrain on")
    torch.manual_seed(config.seed)
    mask_rng = MaskingRng(config.seed)
    order = _order_stream(len(sequences), config.seed)
    opt = torch.optim.AdamW(
        model.parameters(), lr=config.peak_lr, weight_decay=config.weight_decay
    )
    losses: list[tuple[int, float]] = []
    model.train()
    for step in range(config.steps):
        keys = [next(order) for _ in range(config.batch_size)]
        rows = [sequences[idx] for _, idx in keys]
        batch = collate(
            rows, policy, mask_rng, specials, model.config.vocab_size, row_keys=keys
        )
        if on_batch is not None:
            on_batch(step, batch)
        lr = config.peak_lr * _lr_factor(step, config.steps, config.warmup_steps)
        for group in opt.param_groups:
            group["lr"] = lr
        out = forward_mlm(model, batch)
        if not torch.isfinite(out.loss):
            raise TrainingDiverged(step, _batch_fingerprint(batch))
        opt.zero_grad()
        out.loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        if (step + 1) % config.log_every == 0:
            losses.append((step + 1, float(out.loss.detach())))
    model.eval()
    checkpoint_dir: Path | None = None
    if out_dir is not None:
        extra = {"pretrain": asdict(config)}
        checkpoint_dir = save_checkpoint(
            model, out_dir, tokenizer_fingerprint=tokenizer_fingerprint, extra=extra
        )
    return PretrainResult(model=model, losses=losses, checkpoint_dir=checkpoint_dir)


def smoothed_final_loss(losses: Sequence[tuple[int, float]], window: int = 10) -> float:
    """Mean of the last `window` logged losses; the memorization yardstick."""
    if not losses:
        raise ValueError("empty loss curve")
    tail = [value for _, value in losses[-window:]]
    return sum(tail) / len(tail)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int = 0
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")


@dataclass(frozen=True)
class GridSpec:
    epochs: tuple[int, ...]
    learning_rates: tuple[float, ...]
    batch_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        for axis in (self.epochs, self.learning_rates, self.batch_sizes):
            if not axis:
                raise ValueError("grid axes must be non-empty")
            if len(set(axis)) != len(axis):
                raise ValueError("grid axes must not repeat values")
        if any(not 1 <= e <= 20 for e in self.epochs):
            raise ValueError("grid epochs must lie in [1, 20]")
        if any(lr <= 0 for lr in self.learning_rates):
            raise ValueError("grid learning rates must be positive")
        if any(b < 1 for b in self.batch_sizes):
            raise ValueError("grid batch sizes must be positive")

    def points(self) -> list[tuple[int, float, int]]:
        return [
            (e, lr, b)
            for e in self.epochs
            for lr in self.learning_rates
            for b in self.batch_sizes
        ]


# Published search spaces for the two tasks.
NER_GRID = GridSpec(
    epochs=tuple(range(1, 21)), learning_rates=(2e-5, 3e-5, 5e-5), batch_sizes=(8, 16)
)
CLS_GRID = GridSpec(
    epochs=tuple(range(1, 21)), learning_rates=(1e-5, 2e-5, 3e-5, 5e-5), batch_sizes=(8, 16)
)


@dataclass
class NerTask:
    train: list[NerSentence]
    val: list[NerSentence]
    test: list[NerSentence] = field(default_factory=list)
    types: EntityTypeSet = field(default_factory=EntityTypeSet)

    kind = "ner"

    def selection_metric(self) -> str:
        return "micro"


@dataclass
class ClsTask:
    train: list[ClassificationRecord]
    val: list[ClassificationRecord]
    test: list[ClassificationRecord] = field(default_factory=list)
    level: str = "volume"
    labels: tuple[str, ...] = ()

    kind = "cls"

    def __post_init__(self) -> None:
        if not self.labels:
            seen = sorted({r.label(self.level) for r in self.train + self.val + self.test})
            self.labels = tuple(seen)

    def selection_metric(self) -> str:
        return "f1"


@dataclass
class _Features:
    input_ids: list[int]
    target: list[int] | int  # per-position tag ids, or one label id
    word_starts: list[int] = field(default_factory=list)


def _encode_ner(
    sentences: Sequence[NerSentence],
    tok: TokenizerModel,
    types: EntityTypeSet,
    max_len: int,
) -> list[_Features]:
    tag_to_id = {t: i for i, t in enumerate(types.tags())}
    feats: list[_Features] = []
    for sent in sentences:
        ids = [tok.specials.bos_id]
        tags = [IGNORE_INDEX]
        starts: list[int] = []
        for pieces, tag in zip(encode_words(tok, sent.tokens), sent.tags):
            if len(ids) + len(pieces) > max_len - 1:
                break
            starts.append(len(ids))
            ids.extend(pieces)
            tags.extend([tag_to_id[tag]] + [IGNORE_INDEX] * (len(pieces) - 1))
        ids.append(tok.specials.eos_id)
        tags.append(IGNORE_INDEX)
        feats.append(_Features(input_ids=ids, target=tags, word_starts=starts))
    return feats


def _encode_cls(
    records: Sequence[ClassificationRecord],
    tok: TokenizerModel,
    labels: Sequence[str],
    level: str,
    max_len: int,
) -> list[_Features]:
    label_to_id = {lab: i for i, lab in enumerate(labels)}
    feats: list[_Features] = []
    for rec in records:
        body = list(encode(tok, rec.text).ids)[: max_len - 2]
        ids = [tok.specials.bos_id] + body + [tok.specials.eos_id]
        feats.append(_Features(input_ids=ids, target=label_to_id[rec.label(level)]))
    return feats


def _pad_batch(
    feats: Sequence[_Features], pad_id: int, tagging: bool
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    width = max(len(f.input_ids) for f in feats)
    ids = torch.full((len(feats), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(feats), width), dtype=torch.long)
    if tagging:
        target = torch.full((len(feats), width), IGNORE_INDEX, dtype=torch.long)
    else:
        target = torch.zeros(len(feats), dtype=torch.long)
    for r, f in enumerate(feats):
        ids[r, : len(f.input_ids)] = torch.tensor(f.input_ids, dtype=torch.long)
        mask[r, : len(f.input_ids)] = 1
        if tagging:
            target[r, : len(f.input_ids)] = torch.tensor(f.target, dtype=torch.long)
        else:
            target[r] = f.target
    return ids, mask, target


def predict_ner(
    model: EncoderModel,
    sentences: Sequence[NerSentence],
    tok: TokenizerModel,
    types: EntityTypeSet,
    batch_size: int = 16,
    max_len: int | None = None,
) -> list[list[str]]:
    """Tag sequences read off the first piece of each word; words dropped by
    truncation fall back to O."""
    max_len = max_len or model.config.max_positions
    tags = types.tags()
    feats = _encode_ner(sentences, tok, types, max_len)
    out: list[list[str]] = []
    model.eval()
    with torch.no_grad():
        for at in range(0, len(feats), batch_size):
            chunk = feats[at : at + batch_size]
            ids, mask, _ = _pad_batch(chunk, tok.specials.pad_id, tagging=True)
            logits = forward_token_cls(model, ids, mask)
            best = logits.argmax(dim=-1)
            for r, f in enumerate(chunk):
                sent = sentences[at + r]
                picked = [tags[int(best[r, pos])] for pos in f.word_starts]
                picked += ["O"] * (len(sent.tokens) - len(picked))
                out.append(picked)
    return out


def predict_cls(
    model: EncoderModel,
    records: Sequence[ClassificationRecord],
    tok: TokenizerModel,
    labels: Sequence[str],
    level: str,
    batch_size: int = 16,
    max_len: int | None = None,
) -> list[str]:
    max_len = max_len or model.config.max_positions
    feats = _encode_cls(records, tok, labels, level, max_len)
    out: list[str] = []
    model.eval()
    with torch.no_grad():
        for at in range(0, len(feats), batch_size):
            chunk = feats[at : at + batch_size]
            ids, mask, _ = _pad_batch(chunk, tok.specials.pad_id, tagging=False)
            logits = forward_seq_cls(model, ids, mask)
            out.extend(labels[int(i)] for i in logits.argmax(dim=-1))
    return out


def evaluate_task(
    model: EncoderModel,
    task: NerTask | ClsTask,
    tok: TokenizerModel,
    split: str = "val",
    batch_size: int = 16,
) -> dict[str, float]:
    """Score one split; returns the flat percent summary used everywhere."""
    data = getattr(task, split)
    if not data:
        raise ValueError(f"split {split!r} is empty")
    if task.kind == "ner":
        pred = predict_ner(model, data, tok, task.types, batch_size=batch_size)
        return score_ner([s.tags for s in data], pred, task.types).summary()
    pred = predict_cls(model, data, tok, task.labels, task.level, batch_size=batch_size)
    return score_classification([r.label(task.level) for r in data], pred).summary()


@dataclass
class FinetuneResult:
    model: EncoderModel
    history: list[dict[str, float]]  # validation summary after each epoch

    @property
    def final(self) -> dict[str, float]:
        return self.history[-1]


def finetune(
    model: EncoderModel,
    task: NerTask | ClsTask,
    config: FinetuneConfig,
    tok: TokenizerModel,
) -> FinetuneResult:
    """Supervised fine-tuning; validation metrics are recorded every epoch."""
    tagging = task.kind == "ner"
    max_len = model.config.max_positions
    if tagging:
        feats = _encode_ner(task.train, tok, task.types, max_len)
        head_size = model.token_head.out_features if model.token_head is not None else None
        if head_size != len(task.types.tags()):
            raise HeadMismatchError(
                f"task needs a {len(task.types.tags())}-way token head, model has {head_size}"
            )
    else:
        feats = _encode_cls(task.train, tok, task.labels, task.level, max_len)
        head_size = model.seq_head.out_features if model.seq_head is not None else None
        if head_size != len(task.labels):
            raise HeadMismatchError(
                f"task needs a {len(task.labels)}-way sentence head, model has {head_size}"
            )

    torch.manual_seed(config.seed)
    opt = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    steps_per_epoch = math.ceil(len(feats) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    warmup = int(config.warmup_frac * total_steps)
    history: list[dict[str, float]] = []
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((config.seed, epoch, _ORDER_STREAM)))
        )
        order = rng.permutation(len(feats))
        model.train()
        for at in range(0, len(order), config.batch_size):
            chunk = [feats[i] for i in order[at : at + config.batch_size]]
            ids, mask, target = _pad_batch(chunk, tok.specials.pad_id, tagging=tagging)
            lr = config.learning_rate * _lr_factor(step, total_steps, warmup)
            for group in opt.param_groups:
                group["lr"] = lr
            if tagging:
                loss = token_cls_loss(forward_token_cls(model, ids, mask), target)
            else:
                loss = torch.nn.functional.cross_entropy(
                    forward_seq_cls(model, ids, mask), target
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            step += 1
        history.append(evaluate_task(model, task, tok, split="val"))
    model.eval()
    return FinetuneResult(model=model, history=history)


@dataclass(frozen=True)
class GridRow:
    config: FinetuneConfig
    val_metric: float


@dataclass
class GridResult:
    best: FinetuneConfig
    rows: list[GridRow]

    def to_tsv(self, metric_name: str) -> str:
        lines = [f"epochs\tlearning_rate\tbatch_size\tval_{metric_name}"]
        for row in self.rows:
            c = row.config
            lines.append(
                f"{c.epochs}\t{c.learning_rate:g}\t{c.batch_size}\t{row.val_metric:.4f}"
            )
        return "\n".join(lines) + "\n"


def grid_search(
    make_model: Callable[[], EncoderModel],
    task: NerTask | ClsTask,
    grid: GridSpec,
    seed: int,
    tok: TokenizerModel,
) -> GridResult:
    """Train every grid point from a fresh model; argmax validation metric.

    Ties break toward fewer epochs, then lower learning rate, then smaller
    batch. The full table is returned, one row per point.
    """
    metric = task.selection_metric()
    rows: list[GridRow] = []
    for epochs, lr, batch in grid.points():
        config = FinetuneConfig(
            epochs=epochs, learning_rate=lr, batch_size=batch, seed=seed
        )
        result = finetune(make_model(), task, config, tok)
        rows.append(GridRow(config=config, val_metric=result.final[metric]))
    best = min(
        rows,
        key=lambda r: (-r.val_metric, r.config.epochs, r.config.learning_rate, r.config.batch_size),
    ).config
    return GridResult(best=best, rows=rows)


@dataclass(frozen=True)
class RunResult:
    """One fine-tuning run: a config, a seed, and its metric summaries."""

    config: FinetuneConfig
    seed: int
    validation: Mapping[str, float]
    test: Mapping[str, float]


@dataclass(frozen=True)
class SeedAggregate:
    config: FinetuneConfig
    seeds: tuple[int, ...]
    mean: Mapping[str, float]
    std: Mapping[str, float]


def aggregate_seeds(results: Sequence[RunResult], split: str = "test") -> SeedAggregate:
    """Per-metric mean and sample standard deviation over repeated seeds."""
    if len(results) < 2:
        raise ValueError("need at least two runs to aggregate")
    base = replace(results[0].config, seed=0)
    for r in results[1:]:
        if replace(r.config, seed=0) != base:
            raise ValueError("runs disagree on the fine-tuning config")
    seeds = tuple(r.seed for r in results)
    if len(set(seeds)) != len(seeds):
        raise ValueError("duplicate seeds in aggregation")
    tables = [getattr(r, split) for r in results]
    keys = list(tables[0])
    for t in tables[1:]:
        if list(t) != keys:
            raise ValueError("runs disagree on metric keys")
    mean = {k: float(np.mean([t[k] for t in tables])) for k in keys}
    std = {k: float(np.std([t[k] for t in tables], ddof=1)) for k in keys}
    return SeedAggregate(config=results[0].config, seeds=seeds, mean=mean, std=std)


def format_mean_std(mean: float, std: float, decimals: int = 0) -> str:
    """Table-cell rendering: mean with the std as a parenthesized percent."""
    return f"{mean:.{decimals}f} ({std:.{decimals}f}%)"


def write_run_record(
    path: str | Path,
    task_kind: str,
    config: FinetuneConfig,
    result: RunResult,
    tokenizer_fingerprint: str | None = None,
) -> None:
    record = {
        "task": task_kind,
        "config": asdict(config),
        "seed": result.seed,
        "validation": dict(result.validation),
        "test": dict(result.test),
        "tokenizer_fingerprint": tokenizer_fingerprint,
    }
    Path(path).write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_run_record(path: str | Path) -> RunResult:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunResult(
        config=FinetuneConfig(**raw["config"]),
        seed=raw["seed"],
        validation=raw["validation"],
        test=raw["test"],
    )
