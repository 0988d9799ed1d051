"""Dataset handling: corpus manifests, IOB files, topic records, splits, packing.

File formats are deliberately plain. A corpus manifest is a TSV with one row
per source file: path, declared encoding ("unknown" to request detection),
context tag (legal / nonlegal), size in bytes. NER data is tab-separated
token/tag lines with blank lines between sentences. Topic classification
records are JSON lines carrying a text plus volume / chapter / subject labels
validated against a label hierarchy file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TypeVar

import numpy as np

from .textnorm import ENCODING_LABELS, RawDocument
from .tokenizer import SpecialTokens

CONTEXT_TAGS = ("legal", "nonlegal")

UNKNOWN_ENCODING = "unknown"

DEFAULT_ENTITY_TYPES = (
    "FACILITY",
    "GPE",
    "LEG-REF",
    "LOC-NAT",
    "LOC-UNK",
    "ORG",
    "PERSON",
    "PUBLIC-DOC",
)

# Column acronyms used in report tables, in fixed report order.
SHORT_LABELS = {
    "FACILITY": "F",
    "GPE": "GPE",
    "LEG-REF": "LR",
    "LOC-NAT": "LN",
    "LOC-UNK": "LU",
    "ORG": "ORG",
    "PERSON": "P",
    "PUBLIC-DOC": "PD",
}

CLS_LEVELS = ("volume", "chapter", "subject")

T = TypeVar("T")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    declared_encoding: str
    context: str
    size_bytes: int


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    root: Path

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def load_manifest(path: str | Path) -> CorpusManifest:
    src = Path(path)
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if len(cells) != 4:
            raise ValueError(f"{src}:{lineno}: expected 4 tab-separated columns")
        file_path, encoding, context, size = cells
        if file_path in seen:
            raise ValueError(f"{src}:{lineno}: duplicate path {file_path!r}")
        seen.add(file_path)
        if encoding != UNKNOWN_ENCODING and encoding not in ENCODING_LABELS:
            raise ValueError(f"{src}:{lineno}: unknown encoding label {encoding!r}")
        if context not in CONTEXT_TAGS:
            raise ValueError(f"{src}:{lineno}: unknown context label {context!r}")
        entries.append(ManifestEntry(file_path, encoding, context, int(size)))
    return CorpusManifest(entries=tuple(entries), root=src.parent)


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    lines = ["# path\tencoding\tcontext\tsize_bytes"]
    for e in manifest.entries:
        lines.append(f"{e.path}\t{e.declared_encoding}\t{e.context}\t{e.size_bytes}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def iter_documents(manifest: CorpusManifest) -> Iterator[RawDocument]:
    """Open each manifest entry as a raw document; sizes must match the files."""
    for entry in manifest.entries:
        path = manifest.resolve(entry)
        data = path.read_bytes()
        if len(data) != entry.size_bytes:
            raise ValueError(
                f"{path}: size {len(data)} does not match manifest ({entry.size_bytes})"
            )
        declared = None if entry.declared_encoding == UNKNOWN_ENCODING else entry.declared_encoding
        yield RawDocument(data=data, source_id=entry.path, declared_encoding=declared)


@dataclass(frozen=True)
class EntityTypeSet:
    """Ordered entity types; report columns and tag ids follow this order."""

    types: tuple[str, ...] = DEFAULT_ENTITY_TYPES

    def __post_init__(self) -> None:
        if not self.types:
            raise ValueError("entity type set is empty")
        if len(set(self.types)) != len(self.types):
            raise ValueError("duplicate entity types")
        for t in self.types:
            if not t or any(ch.isspace() for ch in t):
                raise ValueError(f"bad entity type {t!r}")

    def tags(self) -> tuple[str, ...]:
        out = ["O"]
        for t in self.types:
            out.extend((f"B-{t}", f"I-{t}"))
        return tuple(out)

    def short_label(self, entity_type: str) -> str:
        return SHORT_LABELS.get(entity_type, entity_type)


@dataclass(frozen=True)
class NerSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("empty sentence")
        if len(self.tokens) != len(self.tags):
            raise ValueError("token/tag length mismatch")
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"bad token {tok!r}")
        for tag in self.tags:
            if tag != "O" and not (tag.startswith("B-") or tag.startswith("I-")):
                raise ValueError(f"bad tag {tag!r}")


def repair_iob(tags: Sequence[str]) -> list[str]:
    """Fix orphan continuations: an I-X without an open same-type span becomes B-X."""
    fixed: list[str] = []
    open_type: str | None = None
    for tag in tags:
        if tag.startswith("I-"):
            t = tag[2:]
            if open_type != t:
                fixed.append(f"B-{t}")
            else:
                fixed.append(tag)
            open_type = t
        elif tag.startswith("B-"):
            fixed.append(tag)
            open_type = tag[2:]
        else:
            fixed.append("O")
            open_type = None
    return fixed


def load_iob(
    path: str | Path,
    types: EntityTypeSet = EntityTypeSet(),
    repair: bool = True,
) -> list[NerSentence]:
    """Parse a token<TAB>tag file into sentences.

    With repair=True orphan I-X tags are rewritten to B-X; with repair=False
    they are an error. Unknown tag types and ragged lines always are.
    """
    src = Path(path)
    valid_tags = set(types.tags())
    sentences: list[NerSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush(lineno: int) -> None:
        if not tokens:
            return
        final = repair_iob(tags)
        if not repair and final != tags:
            raise ValueError(f"{src}:{lineno}: orphan I- tag without span start")
        sentences.append(NerSentence(tuple(tokens), tuple(final)))
        tokens.clear()
        tags.clear()

    lineno = 0
    for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            flush(lineno)
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise ValueError(f"{src}:{lineno}: expected token<TAB>tag")
        token, tag = cells
        if tag not in valid_tags:
            raise ValueError(f"{src}:{lineno}: tag {tag!r} outside the tag set")
        tokens.append(token)
        tags.append(tag)
    flush(lineno + 1)
    return sentences


def serialize_iob(sentences: Iterable[NerSentence]) -> str:
    blocks = [
        "\n".join(f"{tok}\t{tag}" for tok, tag in zip(s.tokens, s.tags))
        for s in sentences
    ]
    return "\n\n".join(blocks) + "\n"


def save_iob(sentences: Iterable[NerSentence], path: str | Path) -> None:
    Path(path).write_text(serialize_iob(sentences), encoding="utf-8")


@dataclass(frozen=True)
class ClassificationRecord:
    text: str
    volume: str
    chapter: str
    subject: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("classification record with empty text")
        for label in (self.volume, self.chapter, self.subject):
            if not label:
                raise ValueError("classification record with empty label")

    def label(self, level: str) -> str:
        if level not in CLS_LEVELS:
            raise ValueError(f"unknown level {level!r}")
        return getattr(self, level)


@dataclass
class LabelHierarchy:
    """volume > chapter > subject tree; every child has exactly one parent."""

    chapter_volume: dict[str, str] = field(default_factory=dict)
    subject_chapter: dict[str, str] = field(default_factory=dict)

    def labels(self, level: str) -> tuple[str, ...]:
        if level == "volume":
            return tuple(sorted(set(self.chapter_volume.values())))
        if level == "chapter":
            return tuple(sorted(self.chapter_volume))
        if level == "subject":
            return tuple(sorted(self.subject_chapter))
        raise ValueError(f"unknown level {level!r}")

    def check(self, record: ClassificationRecord) -> None:
        if self.subject_chapter.get(record.subject) != record.chapter:
            raise ValueError(
                f"subject {record.subject!r} does not belong to chapter {record.chapter!r}"
            )
        if self.chapter_volume.get(record.chapter) != record.volume:
            raise ValueError(
                f"chapter {record.chapter!r} does not belong to volume {record.volume!r}"
            )


def load_hierarchy(path: str | Path) -> LabelHierarchy:
    src = Path(path)
    tree = LabelHierarchy()
    for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if len(cells) != 3:
            raise ValueError(f"{src}:{lineno}: expected volume<TAB>chapter<TAB>subject")
        volume, chapter, subject = cells
        if tree.chapter_volume.setdefault(chapter, volume) != volume:
            raise ValueError(f"{src}:{lineno}: chapter {chapter!r} under two volumes")
        if tree.subject_chapter.setdefault(subject, chapter) != chapter:
            raise ValueError(f"{src}:{lineno}: subject {subject!r} under two chapters")
    return tree


def load_classification(
    path: str | Path, hierarchy: LabelHierarchy
) -> list[ClassificationRecord]:
    """Parse JSON-lines records; labels outside the hierarchy are an error."""
    src = Path(path)
    records: list[ClassificationRecord] = []
    for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        raw = json.loads(line)
        extra = set(raw) - {"text", "volume", "chapter", "subject"}
        if extra:
            raise ValueError(f"{src}:{lineno}: unknown field {sorted(extra)[0]!r}")
        record = ClassificationRecord(**raw)
        try:
            hierarchy.check(record)
        except ValueError as err:
            raise ValueError(f"{src}:{lineno}: {err}") from None
        records.append(record)
    return records


@dataclass(frozen=True)
class SplitSpec:
    """Seeded shuffle-and-cut; sizes are floor(fraction*n), remainder to train."""

    train: float = 0.675
    val: float = 0.175
    test: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        for frac in (self.train, self.val, self.test):
            if not 0 < frac < 1:
                raise ValueError("split fractions must lie in (0, 1)")
        if not math.isclose(self.train + self.val + self.test, 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must sum to 1")


def split(records: Sequence[T], spec: SplitSpec = SplitSpec()) -> tuple[list[T], list[T], list[T]]:
    """Partition records into (train, val, test).

    Cut sizes use exact fraction arithmetic so binary float error in the
    configured fractions can never shift a boundary.
    """
    n = len(records)
    n_val = int(Fraction(str(spec.val)) * n)
    n_test = int(Fraction(str(spec.test)) * n)
    n_train = n - n_val - n_test
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    order = rng.permutation(n)
    picked = [records[i] for i in order]
    return (
        picked[:n_train],
        picked[n_train : n_train + n_val],
        picked[n_train + n_val :],
    )


@dataclass(frozen=True)
class PackedSequence:
    """One model-ready row: ids padded to max_len, mask 1 on real positions."""

    ids: np.ndarray
    attention_mask: np.ndarray


def pack_sequences(
    documents: Iterable[Sequence[int]],
    specials: SpecialTokens,
    max_len: int = 512,
) -> list[PackedSequence]:
    """Greedily pack encoded documents into fixed-length rows.

    Documents are wrapped as bos ... eos and appended whole when they fit the
    open row, else the row is flushed; documents longer than a row are cut
    into max_len-2 chunks, each wrapped in its own bos/eos. Content token
    count is conserved and padding never separates two documents in a row.
    """
    if max_len < 3:
        raise ValueError("max_len must fit at least bos, one token, eos")
    special_ids = np.array(specials.ids())
    rows: list[PackedSequence] = []
    current: list[int] = []

    def flush() -> None:
        if not current:
            return
        ids = np.full(max_len, specials.pad_id, dtype=np.int64)
        ids[: len(current)] = current
        mask = np.zeros(max_len, dtype=np.int8)
        mask[: len(current)] = 1
        rows.append(PackedSequence(ids=ids, attention_mask=mask))
        current.clear()

    body = max_len - 2
    for doc in documents:
        ids = np.asarray(doc, dtype=np.int64)
        if ids.size == 0:
            continue
        if np.isin(ids, special_ids).any():
            raise ValueError("document ids must not contain special tokens")
        for start in range(0, ids.size, body):
            chunk = ids[start : start + body]
            if len(current) + len(chunk) + 2 > max_len:
                flush()
            current.append(specials.bos_id)
            current.extend(int(i) for i in chunk)
            current.append(specials.eos_id)
    flush()
    return rows
