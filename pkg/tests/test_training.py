from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from greeklegal import corpus, metrics, model as M, tokenizer, training
from greeklegal.masking import IGNORE_INDEX, MaskingPolicy


def _tiny_model(vocab: int, num_tags=None, num_labels=None, seed: int = 0,
                max_positions: int = 128) -> M.EncoderModel:
    cfg = M.ModelConfig(
        vocab_size=vocab, num_layers=1, hidden_dim=16, num_heads=2, ffn_dim=32,
        max_positions=max_positions, dropout=0.1, num_tags=num_tags,
        num_labels=num_labels,
    )
    return M.init_model(cfg, seed=seed)


class TestLrSchedule:
    def test_warmup_then_linear_decay(self):
        f = lambda s: training._lr_factor(s, total=100, warmup=10)
        assert f(0) == pytest.approx(0.1)
        assert f(4) == pytest.approx(0.5)
        assert f(9) == pytest.approx(1.0)
        assert f(10) == pytest.approx(1.0)
        assert f(55) == pytest.approx(0.5)
        assert f(99) == pytest.approx(1 / 90)
        assert f(100) == 0.0

    def test_no_warmup(self):
        assert training._lr_factor(0, total=50, warmup=0) == 1.0
        assert training._lr_factor(49, total=50, warmup=0) == pytest.approx(1 / 50)


class TestPresets:
    def test_published_regimes(self):
        assert training.PRETRAIN_PRESETS == {
            "v1": {"steps": 100_000, "batch_size": 1024},
            "v2": {"steps": 100_000, "batch_size": 4096},
            "bert-style": {"steps": 1_000_000, "batch_size": 256},
        }

    def test_preset_expansion_and_overrides(self):
        cfg = training.pretrain_preset("v1")
        assert (cfg.steps, cfg.batch_size) == (100_000, 1024)
        small = training.pretrain_preset("v2", steps=20)
        assert (small.steps, small.batch_size) == (20, 4096)

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown preset"):
            training.pretrain_preset("v3")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"steps": 0},
            {"steps": 10, "warmup_steps": 11},
            {"steps": 10, "peak_lr": 0.0},
            {"steps": 10, "log_every": 0},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            training.PretrainConfig(**kwargs)


class TestPretrain:
    def _run(self, packed, specials, steps=12, seed=0, out_dir=None):
        model = _tiny_model(500, seed=seed)
        cfg = training.PretrainConfig(
            steps=steps, batch_size=4, peak_lr=1e-3, warmup_steps=2,
            seed=seed, log_every=3,
        )
        return training.pretrain(
            model, packed, MaskingPolicy(), cfg, specials, out_dir=out_dir,
            tokenizer_fingerprint="feedbeeffeedbeef",
        )

    def test_loss_curve_cadence(self, packed_rows, toy_tokenizer):
        result = self._run(packed_rows, toy_tokenizer.specials)
        assert [step for step, _ in result.losses] == [3, 6, 9, 12]
        assert all(math.isfinite(v) and v > 0 for _, v in result.losses)

    def test_bit_reproducible(self, packed_rows, toy_tokenizer):
        a = self._run(packed_rows, toy_tokenizer.specials, seed=3)
        b = self._run(packed_rows, toy_tokenizer.specials, seed=3)
        assert a.losses == b.losses
        for name, t in a.model.state_dict().items():
            assert torch.equal(t, b.model.state_dict()[name]), name

    def test_seed_changes_the_run(self, packed_rows, toy_tokenizer):
        a = self._run(packed_rows, toy_tokenizer.specials, seed=3)
        b = self._run(packed_rows, toy_tokenizer.specials, seed=4)
        assert a.losses != b.losses

    def test_checkpoint_written(self, packed_rows, toy_tokenizer, tmp_path):
        result = self._run(packed_rows, toy_tokenizer.specials, out_dir=tmp_path)
        assert result.checkpoint_dir == tmp_path
        loaded, descriptor = M.load_checkpoint(tmp_path)
        assert descriptor["tokenizer_fingerprint"] == "feedbeeffeedbeef"
        assert descriptor["extra"]["pretrain"]["steps"] == 12
        for name, t in result.model.state_dict().items():
            assert torch.equal(t, loaded.state_dict()[name])

    def test_divergence_aborts_with_context(self, packed_rows, toy_tokenizer):
        model = _tiny_model(500)
        with torch.no_grad():
            model.embeddings.tokens.weight.fill_(float("nan"))
        cfg = training.PretrainConfig(steps=5, batch_size=2, seed=0)
        with pytest.raises(training.TrainingDiverged) as err:
            training.pretrain(
                model, packed_rows, MaskingPolicy(), cfg, toy_tokenizer.specials
            )
        assert err.value.step == 0
        assert len(err.value.batch_fingerprint) == 16

    def test_empty_corpus_rejected(self, toy_tokenizer):
        with pytest.raises(ValueError):
            training.pretrain(
                _tiny_model(500), [], MaskingPolicy(),
                training.PretrainConfig(steps=1), toy_tokenizer.specials,
            )

    def test_smoothed_final_loss(self):
        losses = [(i * 10, float(v)) for i, v in enumerate([9, 7, 5, 4, 2], 1)]
        assert training.smoothed_final_loss(losses, window=2) == pytest.approx(3.0)
        assert training.smoothed_final_loss(losses, window=100) == pytest.approx(5.4)
        with pytest.raises(ValueError):
            training.smoothed_final_loss([])


class TestEncoding:
    def test_ner_features_first_piece_carries_the_tag(self, toy_tokenizer, ner_sentences):
        types = corpus.EntityTypeSet()
        tag_to_id = {t: i for i, t in enumerate(types.tags())}
        sent = ner_sentences[0]
        feats = training._encode_ner([sent], toy_tokenizer, types, max_len=128)[0]
        assert feats.input_ids[0] == toy_tokenizer.specials.bos_id
        assert feats.input_ids[-1] == toy_tokenizer.specials.eos_id
        assert len(feats.word_starts) == len(sent.tokens)
        assert feats.target[0] == IGNORE_INDEX and feats.target[-1] == IGNORE_INDEX
        for word_i, pos in enumerate(feats.word_starts):
            assert feats.target[pos] == tag_to_id[sent.tags[word_i]]
        tagged = [p for p, t in enumerate(feats.target) if t != IGNORE_INDEX]
        assert tagged == feats.word_starts

    def test_ner_truncation_keeps_whole_words(self, toy_tokenizer, ner_sentences):
        types = corpus.EntityTypeSet()
        sent = ner_sentences[0]
        feats = training._encode_ner([sent], toy_tokenizer, types, max_len=8)[0]
        assert len(feats.input_ids) <= 8
        assert 0 < len(feats.word_starts) < len(sent.tokens)
        pieces = tokenizer.encode_words(toy_tokenizer, sent.tokens)
        expect = 1
        for word_i in range(len(feats.word_starts)):
            assert feats.word_starts[word_i] == expect
            expect += len(pieces[word_i])

    def test_truncated_predictions_fall_back_to_o(self, toy_tokenizer, ner_sentences):
        types = corpus.EntityTypeSet()
        model = _tiny_model(500, num_tags=len(types.tags()), max_positions=8)
        preds = training.predict_ner(
            model, ner_sentences[:4], toy_tokenizer, types, max_len=8
        )
        for sent, tags in zip(ner_sentences[:4], preds):
            assert len(tags) == len(sent.tokens)
            assert set(tags[-2:]) <= {"O"} | set()

    def test_cls_features(self, toy_tokenizer):
        rec = corpus.ClassificationRecord(
            text="νομος και δικαιο", volume="v1", chapter="c1", subject="s1"
        )
        feats = training._encode_cls(
            [rec], toy_tokenizer, labels=("v0", "v1"), level="volume", max_len=16
        )[0]
        sp = toy_tokenizer.specials
        assert feats.input_ids[0] == sp.bos_id and feats.input_ids[-1] == sp.eos_id
        assert feats.target == 1
        body = training._encode_cls(
            [rec], toy_tokenizer, labels=("v1",), level="volume", max_len=4
        )[0]
        assert len(body.input_ids) <= 4

    def test_cls_task_autodiscovers_sorted_labels(self):
        recs = [
            corpus.ClassificationRecord(text="x", volume=v, chapter="c", subject="s")
            for v in ("vb", "va", "vb")
        ]
        task = training.ClsTask(train=recs[:2], val=recs[2:], level="volume")
        assert task.labels == ("va", "vb")


@pytest.fixture()
def ner_task(ner_sentences):
    return training.NerTask(
        train=ner_sentences[:8], val=ner_sentences[8:12], test=ner_sentences[12:16]
    )


class TestFinetune:

    def test_history_length_and_keys(self, ner_task, toy_tokenizer):
        model = _tiny_model(500, num_tags=17)
        cfg = training.FinetuneConfig(epochs=2, learning_rate=1e-3, batch_size=8)
        result = training.finetune(model, ner_task, cfg, toy_tokenizer)
        assert len(result.history) == 2
        assert tuple(result.final) == metrics.ner_columns()

    def test_deterministic(self, ner_task, toy_tokenizer):
        runs = []
        for _ in range(2):
            model = _tiny_model(500, num_tags=17, seed=5)
            cfg = training.FinetuneConfig(epochs=1, learning_rate=1e-3, batch_size=8, seed=7)
            runs.append(training.finetune(model, ner_task, cfg, toy_tokenizer))
        assert runs[0].history == runs[1].history
        for name, t in runs[0].model.state_dict().items():
            assert torch.equal(t, runs[1].model.state_dict()[name])

    def test_head_size_checked(self, ner_task, toy_tokenizer):
        model = _tiny_model(500, num_tags=5)
        cfg = training.FinetuneConfig(epochs=1, learning_rate=1e-3, batch_size=8)
        with pytest.raises(M.HeadMismatchError, match="17-way"):
            training.finetune(model, ner_task, cfg, toy_tokenizer)

    def test_missing_head_checked(self, ner_task, toy_tokenizer):
        model = _tiny_model(500)
        cfg = training.FinetuneConfig(epochs=1, learning_rate=1e-3, batch_size=8)
        with pytest.raises(M.HeadMismatchError):
            training.finetune(model, ner_task, cfg, toy_tokenizer)

    def test_evaluate_task_empty_split(self, toy_tokenizer, ner_sentences):
        task = training.NerTask(train=ner_sentences[:2], val=ner_sentences[2:4])
        model = _tiny_model(500, num_tags=17)
        with pytest.raises(ValueError, match="'test' is empty"):
            training.evaluate_task(model, task, toy_tokenizer, split="test")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            training.FinetuneConfig(epochs=0, learning_rate=1e-5, batch_size=8)
        with pytest.raises(ValueError):
            training.FinetuneConfig(epochs=1, learning_rate=-1e-5, batch_size=8)


class TestGrid:
    def test_published_grids(self):
        assert training.NER_GRID.epochs == tuple(range(1, 21))
        assert training.NER_GRID.learning_rates == (2e-5, 3e-5, 5e-5)
        assert training.NER_GRID.batch_sizes == (8, 16)
        assert training.CLS_GRID.learning_rates == (1e-5, 2e-5, 3e-5, 5e-5)
        assert training.CLS_GRID.batch_sizes == (8, 16)
        assert len(training.NER_GRID.points()) == 120
        assert len(training.CLS_GRID.points()) == 160

    def test_points_order(self):
        grid = training.GridSpec(epochs=(1, 2), learning_rates=(1e-5, 2e-5),
                                 batch_sizes=(8,))
        assert grid.points() == [
            (1, 1e-5, 8), (1, 2e-5, 8), (2, 1e-5, 8), (2, 2e-5, 8),
        ]

    def test_axis_validation(self):
        with pytest.raises(ValueError):
            training.GridSpec(epochs=(), learning_rates=(1e-5,), batch_sizes=(8,))
        with pytest.raises(ValueError):
            training.GridSpec(epochs=(21,), learning_rates=(1e-5,), batch_sizes=(8,))
        with pytest.raises(ValueError):
            training.GridSpec(epochs=(1, 1), learning_rates=(1e-5,), batch_sizes=(8,))

    def test_selection_is_argmax(self, monkeypatch, toy_tokenizer):
        # Selection logic isolated from training noise with canned metrics.
        scores = {(1, 1e-5, 8): 60.0, (1, 2e-5, 8): 72.0, (2, 1e-5, 8): 71.0,
                  (2, 2e-5, 8): 64.0}

        def fake_finetune(model, task, config, tok):
            value = scores[(config.epochs, config.learning_rate, config.batch_size)]
            return training.FinetuneResult(model=model, history=[{"micro": value}])

        monkeypatch.setattr(training, "finetune", fake_finetune)
        task = training.NerTask(train=[], val=[])
        grid = training.GridSpec(epochs=(1, 2), learning_rates=(1e-5, 2e-5),
                                 batch_sizes=(8,))
        result = training.grid_search(lambda: None, task, grid, seed=0, tok=toy_tokenizer)
        assert len(result.rows) == 4
        assert [r.val_metric for r in result.rows] == [60.0, 72.0, 71.0, 64.0]
        assert (result.best.epochs, result.best.learning_rate) == (1, 2e-5)

    def test_ties_prefer_cheaper_configs(self, monkeypatch, toy_tokenizer):
        def fake_finetune(model, task, config, tok):
            return training.FinetuneResult(model=model, history=[{"micro": 50.0}])

        monkeypatch.setattr(training, "finetune", fake_finetune)
        task = training.NerTask(train=[], val=[])
        grid = training.GridSpec(epochs=(3, 1), learning_rates=(5e-5, 2e-5),
                                 batch_sizes=(16, 8))
        result = training.grid_search(lambda: None, task, grid, seed=0, tok=toy_tokenizer)
        assert (result.best.epochs, result.best.learning_rate, result.best.batch_size) \
            == (1, 2e-5, 8)

    def test_real_micro_grid_runs_every_point(self, toy_tokenizer, ner_sentences):
        task = training.NerTask(train=ner_sentences[:6], val=ner_sentences[6:9])
        grid = training.GridSpec(epochs=(1,), learning_rates=(1e-3, 5e-4),
                                 batch_sizes=(8,))
        result = training.grid_search(
            lambda: _tiny_model(500, num_tags=17), task, grid, seed=0,
            tok=toy_tokenizer,
        )
        assert len(result.rows) == 2
        assert result.best in [r.config for r in result.rows]
        table = result.to_tsv("micro")
        assert table.splitlines()[0] == "epochs\tlearning_rate\tbatch_size\tval_micro"
        assert len(table.splitlines()) == 3


class TestAggregation:
    def _run(self, seed: int, micro: float) -> training.RunResult:
        cfg = training.FinetuneConfig(
            epochs=2, learning_rate=3e-5, batch_size=8, seed=seed
        )
        return training.RunResult(
            config=cfg, seed=seed,
            validation={"micro": micro - 1.0}, test={"micro": micro},
        )

    def test_mean_and_sample_std(self):
        # hand check: mean(70, 80) = 75, sample std = sqrt((25 + 25) / 1)
        agg = training.aggregate_seeds([self._run(0, 70.0), self._run(1, 80.0)])
        assert agg.mean["micro"] == pytest.approx(75.0)
        assert agg.std["micro"] == pytest.approx(math.sqrt(50.0))
        assert agg.seeds == (0, 1)

    def test_five_seed_oracle(self):
        values = [77.0, 78.5, 76.0, 79.0, 77.5]
        agg = training.aggregate_seeds(
            [self._run(i, v) for i, v in enumerate(values)]
        )
        assert agg.mean["micro"] == pytest.approx(float(np.mean(values)))
        assert agg.std["micro"] == pytest.approx(float(np.std(values, ddof=1)))

    def test_validation_split_selectable(self):
        agg = training.aggregate_seeds(
            [self._run(0, 70.0), self._run(1, 80.0)], split="validation"
        )
        assert agg.mean["micro"] == pytest.approx(74.0)

    def test_needs_two_runs(self):
        with pytest.raises(ValueError, match="two runs"):
            training.aggregate_seeds([self._run(0, 70.0)])

    def test_rejects_config_disagreement(self):
        other = training.RunResult(
            config=training.FinetuneConfig(epochs=3, learning_rate=3e-5, batch_size=8, seed=1),
            seed=1, validation={"micro": 1.0}, test={"micro": 1.0},
        )
        with pytest.raises(ValueError, match="disagree"):
            training.aggregate_seeds([self._run(0, 70.0), other])

    def test_rejects_duplicate_seeds(self):
        with pytest.raises(ValueError, match="duplicate"):
            training.aggregate_seeds([self._run(3, 70.0), self._run(3, 71.0)])

    def test_format_mean_std(self):
        assert training.format_mean_std(75.0, math.sqrt(50.0), 1) == "75.0 (7.1%)"
        assert training.format_mean_std(91.14, 0.5, 2) == "91.14 (0.50%)"

    def test_run_record_roundtrip(self, tmp_path):
        run = self._run(4, 81.25)
        training.write_run_record(
            tmp_path / "run.json", "ner", run.config, run,
            tokenizer_fingerprint="0123456789abcdef",
        )
        loaded = training.load_run_record(tmp_path / "run.json")
        assert loaded == run
