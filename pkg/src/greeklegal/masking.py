"""Dynamic MLM masking: a fresh pattern for every (epoch, row) visit.

Instead of masking the corpus once at preprocessing time, masks are drawn on
the fly from a splittable RNG keyed by (seed, epoch, row index), so every
epoch sees a different corruption of the same sequence while any batch stays
bit-reproducible. Per row the stream is consumed in a fixed order: selection
uniforms, action uniforms, replacement token draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import PackedSequence
from .tokenizer import SpecialTokens

IGNORE_INDEX = -100


@dataclass(frozen=True)
class MaskingPolicy:
    """Selection rate and the mask/random/keep split over selected tokens."""

    select_prob: float = 0.15
    mask_frac: float = 0.80
    random_frac: float = 0.10
    keep_frac: float = 0.10

    def __post_init__(self) -> None:
        if not 0 < self.select_prob <= 1:
            raise ValueError("select_prob must lie in (0, 1]")
        for frac in (self.mask_frac, self.random_frac, self.keep_frac):
            if frac < 0:
                raise ValueError("action fractions must be non-negative")
        if not math.isclose(self.mask_frac + self.random_frac + self.keep_frac, 1.0, abs_tol=1e-9):
            raise ValueError("mask/random/keep fractions must sum to 1")


@dataclass(frozen=True)
class MaskedBatch:
    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray


class MaskingRng:
    """Splittable mask randomness; row streams never collide across epochs."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)

    def row(self, epoch: int, row_index: int) -> np.random.Generator:
        if epoch < 0 or row_index < 0:
            raise ValueError("epoch and row index must be non-negative")
        key = np.random.SeedSequence((self.seed, epoch, row_index))
        return np.random.Generator(np.random.PCG64(key))


_REPLACEMENT_POOLS: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}


def _replacement_pool(vocab_size: int, specials: SpecialTokens) -> np.ndarray:
    key = (vocab_size, specials.ids())
    pool = _REPLACEMENT_POOLS.get(key)
    if pool is None:
        pool = np.setdiff1d(np.arange(vocab_size, dtype=np.int64), np.array(specials.ids()))
        _REPLACEMENT_POOLS[key] = pool
    return pool


def apply_dynamic_mask(
    sequence: PackedSequence,
    policy: MaskingPolicy,
    rng: np.random.Generator,
    specials: SpecialTokens,
    vocab_size: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt one row; returns (input_ids, labels).

    Eligible positions are real (attention mask 1) non-special tokens. Each
    eligible position is selected independently with select_prob; selected
    positions keep their original id in labels (everything else IGNORE_INDEX)
    and are masked / replaced with a uniform non-special id / kept per the
    policy split.
    """
    length = sequence.ids.shape[0]
    ids = sequence.ids.copy()
    eligible = (sequence.attention_mask == 1) & ~np.isin(ids, np.array(specials.ids()))

    u_select = rng.random(length)
    u_action = rng.random(length)
    pool = _replacement_pool(vocab_size, specials)
    replacements = pool[rng.integers(0, len(pool), size=length)]

    selected = eligible & (u_select < policy.select_prob)
    labels = np.full(length, IGNORE_INDEX, dtype=np.int64)
    labels[selected] = sequence.ids[selected]

    to_mask = selected & (u_action < policy.mask_frac)
    to_random = selected & ~to_mask & (u_action < policy.mask_frac + policy.random_frac)
    ids[to_mask] = specials.mask_id
    ids[to_random] = replacements[to_random]
    return ids, labels


def collate(
    sequences: list[PackedSequence],
    policy: MaskingPolicy,
    rng: MaskingRng,
    specials: SpecialTokens,
    vocab_size: int,
    row_keys: list[tuple[int, int]] | None = None,
) -> MaskedBatch:
    """Mask and stack rows into one batch.

    row_keys gives the (epoch, row index) identity of each row for mask
    derivation; by default rows are (0, position-in-batch). All rows must
    share one length.
    """
    if row_keys is None:
        row_keys = [(0, i) for i in range(len(sequences))]
    if len(row_keys) != len(sequences):
        raise ValueError("row_keys and sequences disagree in length")
    if not sequences:
        empty = np.zeros((0, 0), dtype=np.int64)
        return MaskedBatch(empty, empty.copy(), np.zeros((0, 0), dtype=np.int8))
    lengths = {s.ids.shape[0] for s in sequences}
    if len(lengths) != 1:
        raise ValueError(f"ragged batch: row lengths {sorted(lengths)}")

    inputs: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for seq, (epoch, row_index) in zip(sequences, row_keys):
        row_ids, row_labels = apply_dynamic_mask(
            seq, policy, rng.row(epoch, row_index), specials, vocab_size
        )
        inputs.append(row_ids)
        labels.append(row_labels)
    return MaskedBatch(
        input_ids=np.stack(inputs),
        labels=np.stack(labels),
        attention_mask=np.stack([s.attention_mask for s in sequences]),
    )


def format_masked_batch(batch: MaskedBatch, id_to_token=None) -> str:
    """Render a batch as aligned position / input / label columns for eyeballing."""

    def name(idx: int) -> str:
        if idx == IGNORE_INDEX:
            return "."
        return id_to_token(int(idx)) if id_to_token else str(int(idx))

    lines: list[str] = []
    for r in range(batch.input_ids.shape[0]):
        lines.append(f"row {r}")
        for pos in range(batch.input_ids.shape[1]):
            if batch.attention_mask[r, pos] == 0:
                continue
            inp = name(batch.input_ids[r, pos])
            lab = name(batch.labels[r, pos])
            marker = "*" if batch.labels[r, pos] != IGNORE_INDEX else " "
            lines.append(f"  {pos:>4}  {inp:<16} {lab:<16} {marker}")
    return "\n".join(lines)
