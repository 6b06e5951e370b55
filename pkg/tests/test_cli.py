import numpy as np
import pytest

from protoagg.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from protoagg.dataset import load_dataset
from protoagg.errors import ConfigError
from protoagg.network import load_network
from protoagg.prototypes import load_store
from protoagg.runconfig import (
    RunConfig,
    apply_env_overrides,
    config_hash,
    parse_config_text,
    validate,
)
from protoagg.evaluation import embed_dataset_words

SMALL_GEN = """
synth.num_landmarks = 12
synth.num_keyframes = 16
synth.observations_min = 3
synth.observations_max = 5
synth.bit_flip_prob = 0.02
synth.width = 128
"""

SMALL_TRAIN = SMALL_GEN + """
arch.num_layers = 2
arch.output_dim = 8
train.max_epochs = 2
train.batch_size = 16
eval.num_query_samples = 200
"""


def _write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRunConfig:
    def test_defaults_valid(self):
        validate(RunConfig())

    def test_parse_and_override(self):
        cfg = parse_config_text("seed = 7\nsynth.num_landmarks = 99\n")
        assert cfg.seed == 7
        assert cfg.synth_num_landmarks == 99

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="synth.num_lndmarks"):
            parse_config_text("synth.num_lndmarks = 5\n")

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config_text("seed = banana\n")

    def test_comments_and_blanks_skipped(self):
        cfg = parse_config_text("# a comment\n\nseed = 3  # trailing\n")
        assert cfg.seed == 3

    def test_env_override(self):
        cfg = apply_env_overrides(RunConfig(), environ={"PROTOAGG_SYNTH_WIDTH": "256"})
        assert cfg.synth_width == 256

    def test_hash_stable_and_sensitive(self):
        a = RunConfig()
        b = parse_config_text("seed = 1\n")
        assert config_hash(a) == config_hash(RunConfig())
        assert config_hash(a) != config_hash(b)

    def test_validation_names_offending_key(self):
        with pytest.raises(ConfigError, match="bit_flip_prob"):
            validate(parse_config_text("synth.bit_flip_prob = 0.7\n"))


class TestGenCommand:
    def test_writes_loadable_dataset_with_summary(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, SMALL_GEN)
        out = tmp_path / "run"
        assert main(["gen", "--config", cfg, "--out", str(out)]) == EXIT_OK
        ds = load_dataset(out / "dataset.pdsc")
        captured = capsys.readouterr().out
        assert f"landmarks={len(ds.landmarks())}" in captured
        assert f"records={len(ds)}" in captured

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = _write_config(tmp_path, SMALL_GEN)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["gen", "--config", cfg, "--out", str(out1)])
        main(["gen", "--config", cfg, "--out", str(out2)])
        assert (out1 / "dataset.pdsc").read_bytes() == (out2 / "dataset.pdsc").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        cfg = _write_config(tmp_path, SMALL_GEN)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["gen", "--config", cfg, "--out", str(out1), "--seed", "1"])
        main(["gen", "--config", cfg, "--out", str(out2), "--seed", "2"])
        assert (out1 / "dataset.pdsc").read_bytes() != (out2 / "dataset.pdsc").read_bytes()

    def test_invalid_flip_prob_exits_with_config_error(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, SMALL_GEN + "synth.bit_flip_prob = 0.7\n")
        code = main(["gen", "--config", cfg, "--out", str(tmp_path / "x")])
        assert code == EXIT_CONFIG
        assert "bit_flip_prob" in capsys.readouterr().err

    def test_unknown_key_exits_with_config_error(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, "no.such.key = 1\n")
        code = main(["gen", "--config", cfg, "--out", str(tmp_path / "x")])
        assert code == EXIT_CONFIG
        assert "no.such.key" in capsys.readouterr().err

    def test_env_override_changes_output(self, tmp_path, monkeypatch, capsys):
        cfg = _write_config(tmp_path, SMALL_GEN)
        monkeypatch.setenv("PROTOAGG_SYNTH_NUM_LANDMARKS", "5")
        main(["gen", "--config", cfg, "--out", str(tmp_path / "x")])
        assert "landmarks=5" in capsys.readouterr().out


@pytest.fixture(scope="module")
def gen_artifacts(tmp_path_factory):
    """One generated dataset pair plus a trained tiny model, shared by
    the slower command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(SMALL_TRAIN)
    for name, seed in (("train", 1), ("val", 2), ("eval", 3)):
        assert main(["gen", "--config", str(cfg), "--out", str(root / name),
                     "--seed", str(seed)]) == EXIT_OK
    assert main(["train", str(root / "train" / "dataset.pdsc"),
                 str(root / "val" / "dataset.pdsc"),
                 "--config", str(cfg), "--out", str(root / "model8")]) == EXIT_OK
    return root, str(cfg)


class TestTrainCommand:
    def test_model_and_log_written(self, gen_artifacts):
        root, cfg = gen_artifacts
        net = load_network(root / "model8" / "model.pagg")
        assert net.output_dim == 8
        log_text = (root / "model8" / "train_log.txt").read_text()
        assert log_text.startswith("epoch=1 ")
        assert len(log_text.strip().split("\n")) == 2

    def test_rerun_byte_identical(self, gen_artifacts):
        root, cfg = gen_artifacts
        out2 = root / "model8-again"
        main(["train", str(root / "train" / "dataset.pdsc"),
              str(root / "val" / "dataset.pdsc"), "--config", cfg, "--out", str(out2)])
        assert (out2 / "model.pagg").read_bytes() == \
               (root / "model8" / "model.pagg").read_bytes()
        assert (out2 / "train_log.txt").read_text() == \
               (root / "model8" / "train_log.txt").read_text()

    def test_zero_epochs_saves_initialized_model(self, tmp_path, gen_artifacts):
        root, _ = gen_artifacts
        cfg = _write_config(tmp_path, SMALL_TRAIN + "train.max_epochs = 0\n")
        out = tmp_path / "init-model"
        assert main(["train", str(root / "train" / "dataset.pdsc"),
                     str(root / "val" / "dataset.pdsc"),
                     "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert (out / "model.pagg").exists()
        assert (out / "train_log.txt").read_text() == ""


class TestEvalCommand:
    def test_six_row_report_and_rerun_identical(self, gen_artifacts, tmp_path):
        root, cfg = gen_artifacts
        model16 = tmp_path / "m16"
        model32 = tmp_path / "m32"
        extra16 = _write_config(tmp_path, SMALL_TRAIN + "arch.output_dim = 16\n", "c16.cfg")
        extra32 = _write_config(tmp_path, SMALL_TRAIN + "arch.output_dim = 32\n", "c32.cfg")
        main(["train", str(root / "train" / "dataset.pdsc"),
              str(root / "val" / "dataset.pdsc"), "--config", extra16, "--out", str(model16)])
        main(["train", str(root / "train" / "dataset.pdsc"),
              str(root / "val" / "dataset.pdsc"), "--config", extra32, "--out", str(model32)])
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            code = main(["eval", str(root / "eval" / "dataset.pdsc"),
                         "--model16", str(model16 / "model.pagg"),
                         "--model32", str(model32 / "model.pagg"),
                         "--config", cfg, "--out", str(out)])
            assert code == EXIT_OK
        records = (out1 / "report.tsv").read_text()
        assert len(records.strip().split("\n")) == 6
        assert (out1 / "report.tsv").read_bytes() == (out2 / "report.tsv").read_bytes()
        assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()

    def test_missing_model_exits_io_with_path(self, gen_artifacts, tmp_path, capsys):
        root, cfg = gen_artifacts
        missing = tmp_path / "nope.pagg"
        code = main(["eval", str(root / "eval" / "dataset.pdsc"),
                     "--model16", str(missing), "--model32", str(missing),
                     "--config", cfg, "--out", str(tmp_path / "r")])
        assert code == EXIT_IO
        assert "nope.pagg" in capsys.readouterr().err


class TestCompressCommand:
    def test_store_covers_every_landmark(self, gen_artifacts, tmp_path, capsys):
        root, cfg = gen_artifacts
        out = tmp_path / "c"
        code = main(["compress", str(root / "model8" / "model.pagg"),
                     str(root / "eval" / "dataset.pdsc"),
                     "--config", cfg, "--out", str(out)])
        assert code == EXIT_OK
        store = load_store(out / "store.psto")
        ds = load_dataset(root / "eval" / "dataset.pdsc")
        assert len(store) == len(ds.landmarks())
        assert "compression_ratio" in capsys.readouterr().out

    def test_noiseless_observation_embeddings_equal_prototype(self, tmp_path):
        cfg = _write_config(tmp_path, SMALL_TRAIN + "synth.bit_flip_prob = 0.0\n")
        for step in ("gen",):
            main([step, "--config", cfg, "--out", str(tmp_path / "d"), "--seed", "9"])
        main(["train", str(tmp_path / "d" / "dataset.pdsc"),
              str(tmp_path / "d" / "dataset.pdsc"), "--config", cfg,
              "--out", str(tmp_path / "m")])
        main(["compress", str(tmp_path / "m" / "model.pagg"),
              str(tmp_path / "d" / "dataset.pdsc"), "--config", cfg,
              "--out", str(tmp_path / "s")])
        store = load_store(tmp_path / "s" / "store.psto")
        ds = load_dataset(tmp_path / "d" / "dataset.pdsc")
        net = load_network(tmp_path / "m" / "model.pagg")
        E = embed_dataset_words(net, ds.words, ds.width)
        for i in range(len(ds)):
            proto = store.get(int(ds.landmark_ids[i]))
            np.testing.assert_allclose(
                proto.vector.astype(np.float32), E[i].astype(np.float32),
                rtol=0, atol=1e-6)

    def test_ratio_matches_hand_arithmetic(self, tmp_path, capsys):
        # 8-dim float32 prototypes, 128-bit raw descriptors, 4 obs per
        # landmark: (4 * 16) / (8 * 4 + 1) = 64 / 33
        cfg = _write_config(tmp_path, SMALL_TRAIN
                            + "synth.observations_min = 4\nsynth.observations_max = 4\n")
        main(["gen", "--config", cfg, "--out", str(tmp_path / "d")])
        main(["train", str(tmp_path / "d" / "dataset.pdsc"),
              str(tmp_path / "d" / "dataset.pdsc"), "--config", cfg,
              "--out", str(tmp_path / "m")])
        main(["compress", str(tmp_path / "m" / "model.pagg"),
              str(tmp_path / "d" / "dataset.pdsc"), "--config", cfg,
              "--out", str(tmp_path / "s")])
        out = capsys.readouterr().out
        ratio = float(out.rsplit("compression_ratio=", 1)[1].split("x")[0])
        assert abs(ratio - 64.0 / 33.0) < 1e-2


class TestSweepCommands:
    def test_sweep_dim_writes_pairs(self, gen_artifacts, tmp_path):
        root, cfg = gen_artifacts
        out = tmp_path / "sd"
        code = main(["sweep-dim", str(root / "train" / "dataset.pdsc"),
                     str(root / "val" / "dataset.pdsc"),
                     str(root / "eval" / "dataset.pdsc"),
                     "--config", cfg, "--out", str(out), "--dims", "4,8"])
        assert code == EXIT_OK
        lines = (out / "sweep_dim.tsv").read_text().strip().split("\n")
        assert lines[0].startswith("dim=4\t")
        assert lines[1].startswith("dim=8\t")

    def test_sweep_arch_grid(self, gen_artifacts, tmp_path):
        root, cfg = gen_artifacts
        extra = _write_config(tmp_path, SMALL_TRAIN + (
            "sweep.families = funnel\nsweep.depths = 2\n"
            "sweep.losses = triplet,prototypical\n"
            "train.classes_per_episode = 4\n"
            "train.support_per_class = 2\ntrain.query_per_class = 1\n"
        ), "arch.cfg")
        out = tmp_path / "sa"
        code = main(["sweep-arch", str(root / "train" / "dataset.pdsc"),
                     str(root / "val" / "dataset.pdsc"),
                     str(root / "eval" / "dataset.pdsc"),
                     "--config", extra, "--out", str(out)])
        assert code == EXIT_OK
        lines = (out / "sweep_arch.tsv").read_text().strip().split("\n")
        assert len(lines) == 2
        assert "loss=triplet" in lines[0] and "loss=prototypical" in lines[1]
