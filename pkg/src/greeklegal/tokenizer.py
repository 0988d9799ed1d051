"""Byte-level BPE tokenizer trained from scratch on normalized text.

The base alphabet is all 256 byte values, each mapped to a printable stand-in
character, so any UTF-8 string tokenizes without an unknown-token escape
hatch. Pre-tokenization splits on whitespace while attaching one leading
space to the following word; merges are then learned per pre-token, so no
merge crosses a word boundary.

Training is deterministic: the most frequent adjacent pair wins each round,
ties broken by the lexicographically smallest (left id, right id) pair.
Encoding applies merges in learned order and is cached per word.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

# Vocabulary size validated for full-scale runs.
DEFAULT_VOCAB_SIZE = 50_264

_PRETOKEN_RE = re.compile(r" ?\S+|\s+(?!\S)|\s+")

FORMAT_VERSION = 1

VOCAB_FILE = "vocab.tsv"
MERGES_FILE = "merges.txt"


def byte_alphabet() -> tuple[str, ...]:
    """Map every byte to one printable character; index is the byte value.

    Printable non-space bytes stand for themselves; the rest are shifted into
    code points from 256 up, so token strings never contain whitespace and
    survive the tab/space-separated model files unescaped.
    """
    keep = set(range(ord("!"), ord("~") + 1))
    keep |= set(range(0xA1, 0xAD)) | set(range(0xAE, 0x100))
    chars: list[str] = []
    shift = 0
    for value in range(256):
        if value in keep:
            chars.append(chr(value))
        else:
            chars.append(chr(256 + shift))
            shift += 1
    return tuple(chars)


ALPHABET = byte_alphabet()
_CHAR_TO_BYTE = {ch: value for value, ch in enumerate(ALPHABET)}

# 4 leading specials + 256 byte symbols; merges start after, mask comes last.
FIRST_BYTE_ID = 4
FIRST_MERGE_ID = FIRST_BYTE_ID + 256
MIN_VOCAB_SIZE = FIRST_MERGE_ID + 1


@dataclass(frozen=True)
class SpecialTokens:
    """The five reserved tokens; mask always takes the highest id."""

    bos: str = "<s>"
    pad: str = "<pad>"
    eos: str = "</s>"
    unk: str = "<unk>"
    mask: str = "<mask>"
    bos_id: int = 0
    pad_id: int = 1
    eos_id: int = 2
    unk_id: int = 3
    mask_id: int | None = None

    def __post_init__(self) -> None:
        if len(set(self.strings())) != 5:
            raise ValueError("special token strings must be distinct")
        if (self.bos_id, self.pad_id, self.eos_id, self.unk_id) != (0, 1, 2, 3):
            raise ValueError("bos/pad/eos/unk must sit at ids 0..3")
        if self.mask_id is not None and self.mask_id < FIRST_MERGE_ID:
            raise ValueError("mask id must follow the byte alphabet")

    def strings(self) -> tuple[str, ...]:
        return (self.bos, self.pad, self.eos, self.unk, self.mask)

    def ids(self) -> tuple[int, ...]:
        if self.mask_id is None:
            raise ValueError("mask id not resolved yet")
        return (self.bos_id, self.pad_id, self.eos_id, self.unk_id, self.mask_id)

    def resolved(self, vocab_size: int) -> "SpecialTokens":
        return replace(self, mask_id=vocab_size - 1)


@dataclass(frozen=True)
class TokenSequence:
    """Encoded text; offsets are byte spans into the UTF-8 source, and they
    partition it exactly."""

    ids: tuple[int, ...]
    tokens: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class TokenizerModel:
    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    specials: SpecialTokens
    _id_to_token: list[str] = field(init=False, repr=False)
    _ranks: dict[tuple[str, str], int] = field(init=False, repr=False)
    _cache: dict[str, list[str]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.validate()
        self._id_to_token = [""] * len(self.vocab)
        for token, idx in self.vocab.items():
            self._id_to_token[idx] = token
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def validate(self) -> None:
        ids = sorted(self.vocab.values())
        if ids != list(range(len(self.vocab))):
            raise ValueError("token ids must be dense and unique")
        sp = self.specials
        if sp.mask_id != len(self.vocab) - 1:
            raise ValueError("mask token must hold the last id")
        for token, idx in zip(sp.strings(), sp.ids()):
            if self.vocab.get(token) != idx:
                raise ValueError(f"special token {token!r} missing from id {idx}")
        for value, ch in enumerate(ALPHABET):
            if self.vocab.get(ch) != FIRST_BYTE_ID + value:
                raise ValueError("byte alphabet must occupy ids 4..259")
        for rank, (left, right) in enumerate(self.merges):
            if self.vocab.get(left + right) != FIRST_MERGE_ID + rank:
                raise ValueError(f"merge {rank} does not match its vocab id")

    def token_for_id(self, idx: int) -> str:
        if not 0 <= idx < len(self._id_to_token):
            raise ValueError(f"token id {idx} out of range")
        return self._id_to_token[idx]

    def _encode_word(self, word: str) -> list[str]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        parts = [ALPHABET[b] for b in word.encode("utf-8")]
        while len(parts) > 1:
            best: tuple[int, tuple[str, str]] | None = None
            for pair in zip(parts, parts[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, pair)
            if best is None:
                break
            parts = _merge_pair(parts, best[1])
        self._cache[word] = parts
        return parts


def _merge_pair(parts: Sequence[str], pair: tuple[str, str]) -> list[str]:
    # Merge every occurrence left to right; overlaps resolve to the left.
    merged: list[str] = []
    i = 0
    while i < len(parts):
        if i + 1 < len(parts) and (parts[i], parts[i + 1]) == pair:
            merged.append(parts[i] + parts[i + 1])
            i += 2
        else:
            merged.append(parts[i])
            i += 1
    return merged


def _word_pairs(seq: Sequence[str]) -> Iterator[tuple[str, str]]:
    return zip(seq, seq[1:])


def _initial_pair_counts(
    seqs: dict[str, list[str]], freqs: Counter, jobs: int
) -> Counter:
    """Count adjacent pairs over all words.

    With jobs > 1 the words are counted in fixed-size chunks and the partial
    counters are folded in chunk order, so the result is identical to the
    serial count.
    """
    items = list(seqs.items())
    if jobs <= 1 or len(items) < 2 * jobs:
        chunks = [items]
    else:
        step = (len(items) + jobs - 1) // jobs
        chunks = [items[i : i + step] for i in range(0, len(items), step)]

    def count_chunk(chunk: list[tuple[str, list[str]]]) -> Counter:
        part: Counter = Counter()
        for word, seq in chunk:
            freq = freqs[word]
            for pair in _word_pairs(seq):
                part[pair] += freq
        return part

    if len(chunks) == 1:
        partials = [count_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            partials = list(pool.map(count_chunk, chunks))
    total: Counter = Counter()
    for part in partials:
        total.update(part)
    return total


def train_bpe(
    texts: Iterable[str],
    target_vocab_size: int,
    specials: SpecialTokens = SpecialTokens(),
    jobs: int = 1,
) -> TokenizerModel:
    """Learn merges until the vocabulary reaches the target size.

    When the corpus runs out of mergeable pairs first, the smaller actual
    vocabulary is returned and the shortfall logged. Merges that would spell
    a reserved special-token string are skipped, so the specials can never be
    produced by encoding.
    """
    if target_vocab_size < MIN_VOCAB_SIZE:
        raise ValueError(
            f"target vocab size {target_vocab_size} below minimum {MIN_VOCAB_SIZE}"
        )
    freqs: Counter = Counter()
    for text in texts:
        freqs.update(_PRETOKEN_RE.findall(text))
    seqs = {word: [ALPHABET[b] for b in word.encode("utf-8")] for word in freqs}

    token_ids: dict[str, int] = {
        specials.bos: specials.bos_id,
        specials.pad: specials.pad_id,
        specials.eos: specials.eos_id,
        specials.unk: specials.unk_id,
    }
    for value, ch in enumerate(ALPHABET):
        token_ids[ch] = FIRST_BYTE_ID + value

    counts = _initial_pair_counts(seqs, freqs, jobs)
    index: dict[tuple[str, str], set[str]] = {}
    for word, seq in seqs.items():
        for pair in _word_pairs(seq):
            index.setdefault(pair, set()).add(word)

    forbidden = set(specials.strings())
    budget = target_vocab_size - MIN_VOCAB_SIZE
    merges: list[tuple[str, str]] = []
    while len(merges) < budget:
        best: tuple[str, str] | None = None
        best_key: tuple[int, int, int] | None = None
        for pair, count in counts.items():
            if count <= 0 or pair[0] + pair[1] in forbidden:
                continue
            key = (-count, token_ids[pair[0]], token_ids[pair[1]])
            if best_key is None or key < best_key:
                best, best_key = pair, key
        if best is None:
            log.warning(
                "pair supply exhausted at vocab size %d (target %d)",
                MIN_VOCAB_SIZE + len(merges), target_vocab_size,
            )
            break
        token_ids[best[0] + best[1]] = FIRST_MERGE_ID + len(merges)
        merges.append(best)
        for word in sorted(index.get(best, ())):
            seq = seqs[word]
            if best not in set(_word_pairs(seq)):
                continue  # stale index entry
            freq = freqs[word]
            for pair in _word_pairs(seq):
                counts[pair] -= freq
            seq = _merge_pair(seq, best)
            seqs[word] = seq
            for pair in _word_pairs(seq):
                counts[pair] += freq
                index.setdefault(pair, set()).add(word)

    vocab = dict(token_ids)
    resolved = specials.resolved(MIN_VOCAB_SIZE + len(merges))
    vocab[resolved.mask] = resolved.mask_id
    return TokenizerModel(vocab=vocab, merges=merges, specials=resolved)


def encode(model: TokenizerModel, text: str) -> TokenSequence:
    """Tokenize text; lossless, never emits special or unknown tokens."""
    ids: list[int] = []
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    pos = 0
    for word in _PRETOKEN_RE.findall(text):
        for part in model._encode_word(word):
            ids.append(model.vocab[part])
            tokens.append(part)
            offsets.append((pos, pos + len(part)))
            pos += len(part)
    return TokenSequence(ids=tuple(ids), tokens=tuple(tokens), offsets=tuple(offsets))


def encode_words(model: TokenizerModel, words: Sequence[str]) -> list[tuple[int, ...]]:
    """Encode a pre-split sentence word by word, one id tuple per word.

    Words after the first carry the leading-space marker, so the concatenation
    equals encode(" ".join(words)) for whitespace-free words.
    """
    out: list[tuple[int, ...]] = []
    for i, word in enumerate(words):
        piece = word if i == 0 else " " + word
        out.append(tuple(model.vocab[p] for p in model._encode_word(piece)))
    return out


def decode(model: TokenizerModel, ids: Iterable[int], skip_specials: bool = False) -> str:
    """Map ids back to text; exact inverse of encode for its output."""
    special_ids = set(model.specials.ids())
    data = bytearray()
    for idx in ids:
        token = model.token_for_id(idx)
        if idx in special_ids:
            if not skip_specials:
                data.extend(token.encode("utf-8"))
            continue
        data.extend(_CHAR_TO_BYTE[ch] for ch in token)
    return data.decode("utf-8", errors="replace")


def save_tokenizer(model: TokenizerModel, out_dir: str | Path) -> None:
    """Write vocab.tsv (token<TAB>id) and merges.txt with a version header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_lines = [
        f"{token}\t{idx}"
        for token, idx in sorted(model.vocab.items(), key=lambda kv: kv[1])
    ]
    (out / VOCAB_FILE).write_text("\n".join(vocab_lines) + "\n", encoding="utf-8")
    sp = model.specials
    header = (
        f"#version={FORMAT_VERSION} bos={sp.bos_id} pad={sp.pad_id} "
        f"eos={sp.eos_id} unk={sp.unk_id} mask={sp.mask_id}"
    )
    merge_lines = [header] + [f"{left} {right}" for left, right in model.merges]
    (out / MERGES_FILE).write_text("\n".join(merge_lines) + "\n", encoding="utf-8")


def load_tokenizer(model_dir: str | Path) -> TokenizerModel:
    src = Path(model_dir)
    vocab: dict[str, int] = {}
    for line in (src / VOCAB_FILE).read_text(encoding="utf-8").splitlines():
        token, _, idx = line.rpartition("\t")
        vocab[token] = int(idx)
    merge_text = (src / MERGES_FILE).read_text(encoding="utf-8").splitlines()
    header = merge_text[0]
    if not header.startswith("#version="):
        raise ValueError("merges file is missing its version header")
    fields = dict(part.split("=") for part in header[1:].split())
    if int(fields["version"]) != FORMAT_VERSION:
        raise ValueError(f"unsupported tokenizer format version {fields['version']}")
    id_to_token = {idx: token for token, idx in vocab.items()}
    specials = SpecialTokens(
        bos=id_to_token[int(fields["bos"])],
        pad=id_to_token[int(fields["pad"])],
        eos=id_to_token[int(fields["eos"])],
        unk=id_to_token[int(fields["unk"])],
        mask=id_to_token[int(fields["mask"])],
        mask_id=int(fields["mask"]),
    )
    merges = [tuple(line.split(" ")) for line in merge_text[1:]]
    return TokenizerModel(vocab=vocab, merges=merges, specials=specials)


def fingerprint(model: TokenizerModel) -> str:
    """Stable hex digest of the full vocabulary and merge list."""
    digest = hashlib.sha256()
    for token, idx in sorted(model.vocab.items(), key=lambda kv: kv[1]):
        digest.update(f"{token}\t{idx}\n".encode("utf-8"))
    for left, right in model.merges:
        digest.update(f"{left} {right}\n".encode("utf-8"))
    return digest.hexdigest()[:16]
