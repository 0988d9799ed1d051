from __future__ import annotations

from pathlib import Path

import pytest

from greeklegal import corpus, tokenizer

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def pretrain_texts() -> list[str]:
    return (FIXTURES / "pretrain_sentences.txt").read_text(encoding="utf-8").splitlines()


@pytest.fixture(scope="session")
def corpus_texts() -> list[str]:
    return (FIXTURES / "tokenizer_corpus.txt").read_text(encoding="utf-8").splitlines()


@pytest.fixture(scope="session")
def toy_tokenizer(pretrain_texts) -> tokenizer.TokenizerModel:
    return tokenizer.train_bpe(pretrain_texts, 500)


@pytest.fixture(scope="session")
def packed_rows(toy_tokenizer, pretrain_texts) -> list[corpus.PackedSequence]:
    docs = [tokenizer.encode(toy_tokenizer, line).ids for line in pretrain_texts]
    return corpus.pack_sequences(docs, toy_tokenizer.specials, max_len=128)


@pytest.fixture(scope="session")
def ner_sentences() -> list[corpus.NerSentence]:
    return corpus.load_iob(FIXTURES / "ner_train.iob")
