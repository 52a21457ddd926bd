import json

import numpy as np
import pytest

from conftest import looped_song, song_dataset
from midilstm.corpus import CorpusFile, Vocabulary
from midilstm.errors import BadCheckpoint, EmptyDataset, VocabMismatch
from midilstm.lstm import ModelConfig, ModelParams
from midilstm.numerics import Rng, derive_seed
from midilstm.trainer import (
    CHECKPOINT_MAGIC,
    MetricsRow,
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_variants,
    save_checkpoint,
    split_holdout,
    train,
    write_metrics,
)
from midilstm.corpus import make_windows


def tiny_setup(n_tokens=80, window_len=10, hidden=(16,), seed=5, **overrides):
    notes, durs = looped_song(seed, n_tokens=n_tokens, period=13, n_pitches=6)
    note_vocab, dur_vocab, dataset = song_dataset([(notes, durs)], window_len)
    defaults = dict(epochs=2, batch_size=16, lr=1e-3, optimizer="adam", seed=9,
                    checkpoint_every=0)
    defaults.update(overrides)
    config = TrainConfig(
        model=ModelConfig(len(note_vocab), len(dur_vocab), hidden_sizes=hidden,
                          dropout=0.0, window_len=window_len),
        **defaults)
    return dataset, config, note_vocab, dur_vocab


class TestTrain:
    def test_zero_lr_keeps_params(self):
        dataset, config, nv, dv = tiny_setup(epochs=1, lr=0.0)
        before = ModelParams.init(config.model, Rng(derive_seed(config.seed, "init")))
        result = train(dataset, config, nv, dv)
        for (_, a), (_, b) in zip(before.named_params(), result.params.named_params()):
            assert np.array_equal(a, b)

    def test_deterministic_checkpoints(self, tmp_path):
        for sub in ("a", "b"):
            (tmp_path / sub).mkdir()
            dataset, config, nv, dv = tiny_setup(epochs=2)
            train(dataset, config, nv, dv, out_dir=tmp_path / sub)
        a = (tmp_path / "a" / "checkpoint.bin").read_bytes()
        b = (tmp_path / "b" / "checkpoint.bin").read_bytes()
        assert a == b

    def test_loss_decreases_on_overfit_corpus(self):
        dataset, config, nv, dv = tiny_setup(epochs=6)
        result = train(dataset, config, nv, dv)
        losses = [m.loss for m in result.metrics]
        non_increasing = sum(1 for x, y in zip(losses, losses[1:]) if y <= x)
        assert non_increasing >= 4

    def test_memorizes_tiny_song(self):
        dataset, config, nv, dv = tiny_setup(epochs=60, hidden=(32,))
        result = train(dataset, config, nv, dv)
        row = evaluate(result.params, config.model, dataset, nv, dv)
        assert row.note_acc >= 0.9
        assert row.dur_acc >= 0.9

    def test_sgd_also_trains(self):
        dataset, config, nv, dv = tiny_setup(epochs=3, optimizer="sgd", lr=0.5)
        result = train(dataset, config, nv, dv)
        assert result.metrics[-1].loss < result.metrics[0].loss

    def test_batch_size_clamped_to_window_count(self):
        dataset, config, nv, dv = tiny_setup(epochs=1, batch_size=100_000)
        train(dataset, config, nv, dv)  # must not raise

    def test_empty_dataset(self):
        dataset, config, nv, dv = tiny_setup(n_tokens=10, window_len=10)
        with pytest.raises(EmptyDataset):
            train(dataset, config, nv, dv)

    def test_vocab_mismatch(self):
        dataset, config, nv, dv = tiny_setup()
        wrong = Vocabulary(list(nv.tokens) + ["999"])
        with pytest.raises(VocabMismatch):
            train(dataset, config, wrong, dv)

    def test_checkpoint_cadence(self, tmp_path):
        dataset, config, nv, dv = tiny_setup(epochs=4, checkpoint_every=2)
        result = train(dataset, config, nv, dv, out_dir=tmp_path)
        names = sorted(p.split("/")[-1] for p in result.checkpoint_paths)
        assert names == ["checkpoint.bin", "checkpoint_ep0002.bin", "checkpoint_ep0004.bin"]

    def test_epoch_callback(self):
        dataset, config, nv, dv = tiny_setup(epochs=3)
        seen = []
        train(dataset, config, nv, dv, on_epoch=lambda row: seen.append(row.epoch))
        assert seen == [1, 2, 3]


class TestHoldout:
    def test_split_reserves_trailing_windows(self):
        dataset, config, nv, dv = tiny_setup()
        windows, _ = make_windows(dataset)
        train_w, held_w = split_holdout(dataset, windows, 0.25)
        assert len(train_w) + len(held_w) == len(windows)
        assert held_w
        assert max(off for _, off in train_w) < min(off for _, off in held_w)

    def test_train_reports_holdout_metrics(self):
        dataset, config, nv, dv = tiny_setup(epochs=1, holdout=0.2)
        result = train(dataset, config, nv, dv)
        assert result.holdout_metrics is not None
        assert 0.0 <= result.holdout_metrics.note_acc <= 1.0


class TestEvaluate:
    def test_fresh_model_note_perplexity_near_vocab_size(self):
        dataset, config, nv, dv = tiny_setup(hidden=(32,))
        params = ModelParams.init(config.model, Rng(1))
        row = evaluate(params, config.model, dataset, nv, dv)
        n = len(nv)
        assert abs(row.note_ppl - n) / n < 0.2

    def test_deterministic(self):
        dataset, config, nv, dv = tiny_setup()
        params = ModelParams.init(config.model, Rng(2))
        assert evaluate(params, config.model, dataset, nv, dv) == \
            evaluate(params, config.model, dataset, nv, dv)

    def test_single_window_accuracy_is_zero_or_one(self):
        notes, durs = looped_song(3, n_tokens=11, period=5, n_pitches=4)
        nv, dv, dataset = song_dataset([(notes, durs)], 10)
        config = ModelConfig(len(nv), len(dv), hidden_sizes=(8,), dropout=0.0, window_len=10)
        row = evaluate(ModelParams.init(config, Rng(3)), config, dataset, nv, dv)
        assert row.note_acc in (0.0, 1.0)
        assert row.dur_acc in (0.0, 1.0)


class TestMetricsCsv:
    def test_format(self, tmp_path):
        rows = [MetricsRow(1, 2.5, 0.25, 0.5, 12.125)]
        path = tmp_path / "metrics.csv"
        write_metrics(path, rows)
        assert path.read_text() == (
            "epoch,loss,note_acc,dur_acc,note_ppl\n"
            "1,2.500000,0.250000,0.500000,12.125000\n"
        )


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        dataset, config, nv, dv = tiny_setup(epochs=1)
        result = train(dataset, config, nv, dv)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, result.params, config, nv, dv, epoch=1, final_loss=1.25)
        loaded = load_checkpoint(path)
        for (name_a, a), (name_b, b) in zip(result.params.named_params(),
                                            loaded.params.named_params()):
            assert name_a == name_b
            assert a.tobytes() == b.tobytes()
        assert loaded.note_vocab == nv
        assert loaded.dur_vocab == dv
        assert loaded.epoch == 1
        assert loaded.final_loss == 1.25
        assert loaded.config.to_dict() == config.to_dict()

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "ckpt.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(BadCheckpoint):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        dataset, config, nv, dv = tiny_setup(epochs=0)
        params = ModelParams.init(config.model, Rng(0))
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, params, config, nv, dv, 0, 0.0)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(BadCheckpoint):
            load_checkpoint(path)

    def test_magic_constant(self):
        assert CHECKPOINT_MAGIC == b"LSTMCMP1"


class TestVariants:
    def corpus(self):
        songs = [looped_song(s, n_tokens=30, period=7, n_pitches=5) for s in (1, 2)]
        return CorpusFile(12, 10, 48, songs)

    def base_config(self, corpus, **overrides):
        nv, dv = corpus.build_vocabs()
        defaults = dict(epochs=1, batch_size=8, lr=1e-3, optimizer="adam", seed=3,
                        checkpoint_every=0)
        defaults.update(overrides)
        return TrainConfig(
            model=ModelConfig(len(nv), len(dv), hidden_sizes=(8,), dropout=0.0,
                              window_len=10),
            **defaults)

    def test_two_variants_make_two_sets_of_songs(self, tmp_path):
        from dataclasses import replace
        from midilstm.generator import GenConfig
        corpus = self.corpus()
        base = self.base_config(corpus)
        variants = [("small", base), ("slow", replace(base, lr=1e-4))]
        manifest = run_variants(base, variants, corpus, tmp_path, n_songs=3,
                                gen_config=GenConfig(length=20))
        files = [f for v in manifest["variants"].values() for f in v["files"]]
        assert len(files) == 6
        for f in files:
            assert (tmp_path / f).exists()
        seeds = {json.dumps(v["seed_window"]) for v in manifest["variants"].values()}
        assert len(seeds) == 1  # every variant starts from the same input
        on_disk = json.loads((tmp_path / "variants_manifest.json").read_text())
        assert on_disk["variants"].keys() == {"small", "slow"}

    def test_identical_variants_produce_identical_files(self, tmp_path):
        from midilstm.generator import GenConfig
        corpus = self.corpus()
        base = self.base_config(corpus)
        run_variants(base, [("x", base), ("y", base)], corpus, tmp_path, n_songs=2,
                     gen_config=GenConfig(length=15))
        for i in range(2):
            a = (tmp_path / "x" / f"song_{i:03d}.mid").read_bytes()
            b = (tmp_path / "y" / f"song_{i:03d}.mid").read_bytes()
            assert a == b

    def test_songs_within_variant_differ(self, tmp_path):
        from midilstm.generator import GenConfig
        corpus = self.corpus()
        base = self.base_config(corpus)
        run_variants(base, [("v", base)], corpus, tmp_path, n_songs=3,
                     gen_config=GenConfig(length=40, mode="sample"))
        blobs = {(tmp_path / "v" / f"song_{i:03d}.mid").read_bytes() for i in range(3)}
        assert len(blobs) == 3

    def test_empty_variant_list_rejected(self, tmp_path):
        corpus = self.corpus()
        with pytest.raises(ValueError):
            run_variants(self.base_config(corpus), [], corpus, tmp_path)
