from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greeklegal import corpus
from greeklegal.tokenizer import SpecialTokens

# Split sizes below were derived with exact integer arithmetic:
#   floor(n * 175/1000), floor(n * 15/100), remainder to train.
# 35411 * 175 = 6_196_925 -> 6196; 35411 * 15 = 531_165 -> 5311; train 23904.
SPLIT_1000 = (675, 175, 150)
SPLIT_35411 = (23904, 6196, 5311)


class TestManifest:
    def test_load_fixture(self, fixtures_dir):
        m = corpus.load_manifest(fixtures_dir / "raw" / "manifest.tsv")
        assert len(m.entries) == 5
        assert m.entries[0].context == "legal"
        assert m.entries[3].declared_encoding == "unknown"

    def test_iter_documents(self, fixtures_dir):
        m = corpus.load_manifest(fixtures_dir / "raw" / "manifest.tsv")
        docs = list(corpus.iter_documents(m))
        assert len(docs) == 5
        unknown = next(d for d in docs if d.source_id == "gazette_unknown.txt")
        assert unknown.declared_encoding is None
        declared = next(d for d in docs if d.source_id == "gazette_iso.txt")
        assert declared.declared_encoding == "iso-8859-7"

    def test_size_mismatch_rejected(self, fixtures_dir, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_bytes(b"hello")
        (tmp_path / "manifest.tsv").write_text(
            "doc.txt\tutf-8\tlegal\t99\n", encoding="utf-8"
        )
        m = corpus.load_manifest(tmp_path / "manifest.tsv")
        with pytest.raises(ValueError, match="size"):
            list(corpus.iter_documents(m))

    @pytest.mark.parametrize(
        "line, fragment",
        [
            ("a.txt\tutf-8\tlegal", "4 tab-separated columns"),
            ("a.txt\tlatin-1\tlegal\t10", "encoding"),
            ("a.txt\tutf-8\tblog\t10", "context"),
        ],
    )
    def test_malformed_rows(self, tmp_path, line, fragment):
        p = tmp_path / "manifest.tsv"
        p.write_text(line + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match=fragment):
            corpus.load_manifest(p)

    def test_duplicate_path_rejected(self, tmp_path):
        p = tmp_path / "manifest.tsv"
        p.write_text(
            "a.txt\tutf-8\tlegal\t10\na.txt\tutf-8\tlegal\t10\n", encoding="utf-8"
        )
        with pytest.raises(ValueError, match="duplicate"):
            corpus.load_manifest(p)

    def test_error_names_file_and_line(self, tmp_path):
        p = tmp_path / "manifest.tsv"
        p.write_text("# header\nok.txt\tutf-8\tlegal\t1\nbad line\n", encoding="utf-8")
        with pytest.raises(ValueError, match=r"manifest\.tsv:3"):
            corpus.load_manifest(p)

    def test_save_load_roundtrip(self, fixtures_dir, tmp_path):
        m = corpus.load_manifest(fixtures_dir / "raw" / "manifest.tsv")
        corpus.save_manifest(m, tmp_path / "copy.tsv")
        again = corpus.load_manifest(tmp_path / "copy.tsv")
        assert again.entries == m.entries


class TestEntityTypes:
    def test_default_order(self):
        assert corpus.DEFAULT_ENTITY_TYPES == (
            "FACILITY", "GPE", "LEG-REF", "LOC-NAT",
            "LOC-UNK", "ORG", "PERSON", "PUBLIC-DOC",
        )

    def test_tag_inventory(self):
        tags = corpus.EntityTypeSet().tags()
        assert len(tags) == 17
        assert tags[0] == "O"
        assert tags[1:3] == ("B-FACILITY", "I-FACILITY")

    def test_short_labels(self):
        ts = corpus.EntityTypeSet()
        assert [ts.short_label(t) for t in ts.types] == [
            "F", "GPE", "LR", "LN", "LU", "ORG", "P", "PD",
        ]

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            corpus.EntityTypeSet(types=("GPE", "GPE"))


class TestIob:
    def test_load_fixture_counts(self, fixtures_dir):
        train = corpus.load_iob(fixtures_dir / "ner_train.iob")
        assert len(train) == 50
        seen = {t[2:] for s in train for t in s.tags if t != "O"}
        assert seen == set(corpus.DEFAULT_ENTITY_TYPES)

    def test_roundtrip_through_file(self, fixtures_dir, tmp_path):
        sents = corpus.load_iob(fixtures_dir / "ner_val.iob")
        corpus.save_iob(sents, tmp_path / "copy.iob")
        assert corpus.load_iob(tmp_path / "copy.iob") == sents
        original = (fixtures_dir / "ner_val.iob").read_text(encoding="utf-8")
        assert corpus.serialize_iob(sents) == original

    def test_repair_orphan_continuations(self):
        tags = ["I-GPE", "I-GPE", "O", "I-ORG", "B-GPE", "I-ORG"]
        assert corpus.repair_iob(tags) == [
            "B-GPE", "I-GPE", "O", "B-ORG", "B-GPE", "B-ORG",
        ]

    def test_repair_keeps_valid_sequences(self):
        tags = ["B-GPE", "I-GPE", "B-GPE", "O", "B-ORG", "I-ORG", "I-ORG"]
        assert corpus.repair_iob(tags) == tags

    def test_strict_mode_rejects_orphans(self, tmp_path):
        p = tmp_path / "bad.iob"
        p.write_text("Αθήνα\tI-GPE\n", encoding="utf-8")
        assert corpus.load_iob(p)[0].tags == ("B-GPE",)
        with pytest.raises(ValueError, match="orphan"):
            corpus.load_iob(p, repair=False)

    def test_unknown_tag_type_rejected(self, tmp_path):
        p = tmp_path / "bad.iob"
        p.write_text("Αθήνα\tB-CITY\n", encoding="utf-8")
        with pytest.raises(ValueError, match="B-CITY"):
            corpus.load_iob(p)

    def test_ragged_line_rejected(self, tmp_path):
        p = tmp_path / "bad.iob"
        p.write_text("Αθήνα B-GPE\n", encoding="utf-8")
        with pytest.raises(ValueError, match="token<TAB>tag"):
            corpus.load_iob(p)

    def test_blank_line_separates_sentences(self, tmp_path):
        p = tmp_path / "two.iob"
        p.write_text("α\tO\n\nβ\tO\nγ\tO\n", encoding="utf-8")
        sents = corpus.load_iob(p)
        assert [len(s.tokens) for s in sents] == [1, 2]

    def test_sentence_validation(self):
        with pytest.raises(ValueError):
            corpus.NerSentence(tokens=("a",), tags=("O", "O"))
        with pytest.raises(ValueError):
            corpus.NerSentence(tokens=(), tags=())
        with pytest.raises(ValueError):
            corpus.NerSentence(tokens=("a b",), tags=("O",))


class TestClassification:
    def test_load_fixture(self, fixtures_dir):
        tree = corpus.load_hierarchy(fixtures_dir / "cls_hierarchy.tsv")
        records = corpus.load_classification(fixtures_dir / "cls_records.jsonl", tree)
        assert len(records) == 72
        assert len(tree.labels("volume")) == 3
        assert len(tree.labels("chapter")) == 6
        assert len(tree.labels("subject")) == 12

    def test_label_accessor(self):
        r = corpus.ClassificationRecord(text="x", volume="v", chapter="c", subject="s")
        assert (r.label("volume"), r.label("chapter"), r.label("subject")) == ("v", "c", "s")
        with pytest.raises(ValueError):
            r.label("tome")

    def test_chapter_under_two_volumes_rejected(self, tmp_path):
        p = tmp_path / "h.tsv"
        p.write_text("v1\tc1\ts1\nv2\tc1\ts2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="two volumes"):
            corpus.load_hierarchy(p)

    def test_subject_under_two_chapters_rejected(self, tmp_path):
        p = tmp_path / "h.tsv"
        p.write_text("v1\tc1\ts1\nv1\tc2\ts1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="two chapters"):
            corpus.load_hierarchy(p)

    def test_record_outside_hierarchy_rejected(self, tmp_path):
        (tmp_path / "h.tsv").write_text("v1\tc1\ts1\n", encoding="utf-8")
        tree = corpus.load_hierarchy(tmp_path / "h.tsv")
        rec = {"text": "x", "volume": "v1", "chapter": "c9", "subject": "s1"}
        p = tmp_path / "r.jsonl"
        p.write_text(json.dumps(rec) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match=r"r\.jsonl:1"):
            corpus.load_classification(p, tree)

    def test_unknown_field_rejected(self, tmp_path):
        (tmp_path / "h.tsv").write_text("v1\tc1\ts1\n", encoding="utf-8")
        tree = corpus.load_hierarchy(tmp_path / "h.tsv")
        rec = {"text": "x", "volume": "v1", "chapter": "c1", "subject": "s1", "id": 7}
        p = tmp_path / "r.jsonl"
        p.write_text(json.dumps(rec) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match="'id'"):
            corpus.load_classification(p, tree)


class TestSplit:
    def test_published_corpus_size(self):
        train, val, test = corpus.split(range(35411))
        assert (len(train), len(val), len(test)) == SPLIT_35411

    def test_round_thousand(self):
        train, val, test = corpus.split(range(1000))
        assert (len(train), len(val), len(test)) == SPLIT_1000

    def test_sizes_use_exact_fractions(self):
        # floor semantics confirmed against Fraction arithmetic for many n.
        for n in (1, 7, 40, 999, 1001, 4096, 35411):
            train, val, test = corpus.split(range(n))
            assert len(val) == (n * Fraction("0.175")).__floor__()
            assert len(test) == (n * Fraction("0.15")).__floor__()
            assert len(train) == n - len(val) - len(test)

    def test_deterministic(self):
        a = corpus.split(list(range(500)), corpus.SplitSpec(seed=11))
        b = corpus.split(list(range(500)), corpus.SplitSpec(seed=11))
        assert a == b
        c = corpus.split(list(range(500)), corpus.SplitSpec(seed=12))
        assert a != c

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            corpus.SplitSpec(train=0.5, val=0.2, test=0.2)
        with pytest.raises(ValueError):
            corpus.SplitSpec(train=1.0, val=0.0, test=0.0)

    @given(st.lists(st.integers(), max_size=200), st.integers(0, 2**31 - 1))
    @settings(max_examples=150, deadline=None)
    def test_partition_property(self, items: list[int], seed: int):
        train, val, test = corpus.split(items, corpus.SplitSpec(seed=seed))
        assert len(train) + len(val) + len(test) == len(items)
        assert sorted(train + val + test) == sorted(items)


class TestPacking:
    SPECIALS = SpecialTokens().resolved(301)

    def test_basic_layout(self):
        docs = [[260, 261, 262], [263, 264]]
        rows = corpus.pack_sequences(docs, self.SPECIALS, max_len=16)
        assert len(rows) == 1
        ids = rows[0].ids
        assert list(ids[:9]) == [0, 260, 261, 262, 2, 0, 263, 264, 2]
        assert list(ids[9:]) == [1] * 7
        assert list(rows[0].attention_mask) == [1] * 9 + [0] * 7

    def test_long_document_chunking(self):
        doc = list(range(260, 290))
        rows = corpus.pack_sequences([doc], self.SPECIALS, max_len=12)
        body = 10
        starts = []
        for row in rows:
            real = row.ids[row.attention_mask == 1]
            assert real[0] == 0
            assert real[-1] == 2
        content = _content_ids(rows)
        assert content == doc
        n_chunks = -(-len(doc) // body)
        all_ids = np.concatenate([r.ids for r in rows])
        assert (all_ids == 0).sum() == n_chunks
        assert (all_ids == 2).sum() == n_chunks

    def test_flush_keeps_documents_whole(self):
        # Second doc does not fit the 10 remaining slots, so it opens row 2.
        rows = corpus.pack_sequences(
            [[260] * 4, [261] * 10], self.SPECIALS, max_len=16
        )
        assert len(rows) == 2
        assert list(rows[0].ids[:6]) == [0] + [260] * 4 + [2]
        assert rows[0].attention_mask.sum() == 6

    def test_special_ids_in_content_rejected(self):
        with pytest.raises(ValueError, match="special"):
            corpus.pack_sequences([[260, 0, 261]], self.SPECIALS, max_len=8)

    def test_max_len_floor(self):
        with pytest.raises(ValueError):
            corpus.pack_sequences([[260]], self.SPECIALS, max_len=2)

    def test_empty_documents_skipped(self):
        rows = corpus.pack_sequences([[], [260], []], self.SPECIALS, max_len=8)
        assert len(rows) == 1
        assert _content_ids(rows) == [260]

    @given(
        st.lists(
            st.lists(st.integers(260, 299), min_size=1, max_size=40),
            min_size=1,
            max_size=12,
        ),
        st.integers(4, 24),
    )
    @settings(max_examples=150, deadline=None)
    def test_conservation_property(self, docs: list[list[int]], max_len: int):
        rows = corpus.pack_sequences(docs, self.SPECIALS, max_len=max_len)
        assert _content_ids(rows) == [i for doc in docs for i in doc]
        for row in rows:
            mask = row.attention_mask
            # mask is a contiguous prefix
            flips = np.diff(mask.astype(int))
            assert (flips == 1).sum() == 0
            assert (row.ids[mask == 0] == 1).all()
            assert row.ids[0] == 0


def _content_ids(rows: list[corpus.PackedSequence]) -> list[int]:
    out: list[int] = []
    for row in rows:
        real = row.ids[row.attention_mask == 1]
        out.extend(int(i) for i in real if i not in (0, 1, 2))
    return out
