import argparse
import math

import numpy as np
import pytest

from tiedlm import cli
from tiedlm.corpus import Vocabulary, load_splits
from tiedlm.data import tiny_corpus_dir
from tiedlm.experiment import read_runs_csv, read_summary_csv
from tiedlm.net import ModelConfig, init_params, load_checkpoint, save_checkpoint
from tiedlm.trainer import TrainLog

SMALL = ["--embed-dim", "8", "--hidden-dim", "8", "--epochs", "2", "--batch-size", "4",
         "--bptt-steps", "10", "--eval-batch-size", "2"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(30)]
    for split, n in (("train", 60), ("valid", 15), ("test", 15)):
        lines = [" ".join(rng.choice(words, 8)) for _ in range(n)]
        (d / f"{split}.txt").write_text("\n".join(lines) + "\n")
    return d


@pytest.fixture(scope="module")
def trained_small(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data-dir", str(small_corpus), "--out", str(out), "--quiet",
                     "--seed", "3", *SMALL]) == 0
    return out


@pytest.fixture(scope="module")
def bigram_model(tmp_path_factory):
    out = tmp_path_factory.mktemp("real")
    assert cli.main(["train", "--variant", "real", "--epochs", "4", "--dropout-p", "0",
                     "--out", str(out), "--quiet"]) == 0
    return out


def _args(argv):
    return cli.build_parser().parse_args(["train", "--out", "x", *argv])


@pytest.mark.parametrize("variant,mode,tied", [("baseline", "baseline", False),
                                               ("al", "alpha_form", False),
                                               ("re", "baseline", True),
                                               ("real", "alpha_form", True)])
def test_variant_mapping(variant, mode, tied):
    cfg = cli.resolve_config(_args(["--variant", variant]), 50, environ={})
    assert cfg.loss.mode == mode and cfg.model.tie_weights is tied


def test_config_precedence(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nepochs = 7\nclip_norm=4.5\nbatch_size=8\ntie_weights=no\n")
    args = _args(["--config", str(path), "--batch-size", "3"])
    env = {"TIEDLM_CLIP_NORM": "2.5", "TIEDLM_BATCH_SIZE": "9", "UNRELATED": "1"}
    cfg = cli.resolve_config(args, 50, environ=env)
    assert cfg.epochs == 7  # file over profile
    assert cfg.clip_norm == 2.5  # environment over file
    assert cfg.batch_size == 3  # flag over environment
    assert cfg.decay_rate == cli.default_flat("tiny", "baseline", 50)["decay_rate"]


def test_config_file_round_trips(trained_small):
    saved = cli.read_config_file(trained_small / "config.txt")
    assert set(saved) == set(cli.CONFIG_KEYS)
    cfg = cli.build_config(saved)
    assert cli.format_config(cfg) == (trained_small / "config.txt").read_text()
    assert cfg.seed == 3 and cfg.model.hidden_dim == 8


def test_bad_config_is_rejected(tmp_path, capsys):
    path = tmp_path / "c.txt"
    path.write_text("epochs=2\nlearning_rate=0.5\n")
    code, _, err = run(capsys, "train", "--config", path, "--out", tmp_path / "o")
    assert code == 2 and "learning_rate" in err
    path.write_text("tie_weights=maybe\n")
    code, _, err = run(capsys, "train", "--config", path, "--out", tmp_path / "o")
    assert code == 2 and "tie_weights" in err
    code, _, err = run(capsys, "train", "--vocab-size", "12", "--out", tmp_path / "o")
    assert code == 2 and "vocab_size" in err
    code, _, err = run(capsys, "train", "--tie-weights", "true", "--embed-dim", "4",
                       "--hidden-dim", "6", "--out", tmp_path / "o")
    assert code == 2


def test_missing_corpus_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    code, _, err = run(capsys, "train", "--train", tmp_path / "nope.txt", "--out", out)
    assert code == 2 and "not found" in err
    assert not out.exists()


def test_train_outputs(trained_small):
    names = {p.name for p in trained_small.iterdir()}
    assert {"config.txt", "vocab.txt", "final.ckpt", "best.ckpt", "train_log.csv"} <= names
    log = TrainLog.from_csv((trained_small / "train_log.csv").read_text())
    assert [r.epoch for r in log.records] == [1, 2]


def test_eval_reproduces_logged_perplexity(trained_small, small_corpus, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", trained_small / "final.ckpt",
                       "--data-dir", small_corpus, "--split", "valid")
    assert code == 0
    split, value = out.strip().split(",")
    log = TrainLog.from_csv((trained_small / "train_log.csv").read_text())
    assert split == "valid" and float(value) == log.records[-1].valid_ppl
    again = run(capsys, "eval", "--checkpoint", trained_small / "final.ckpt",
                "--data-dir", small_corpus)[1]
    assert again.splitlines()[0] == out.strip() and again.splitlines()[1].startswith("test,")


def test_eval_uniform_model(tmp_path, capsys):
    streams, vocab = load_splits(tiny_corpus_dir())
    p = init_params(ModelConfig(len(vocab), 4, 4)).zeros_like()
    save_checkpoint(tmp_path / "u.ckpt", p)
    vocab.save(tmp_path / "vocab.txt")
    code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "u.ckpt", "--split", "valid")
    assert code == 0
    assert float(out.split(",")[1]) == pytest.approx(len(vocab), rel=1e-3)


def test_eval_errors(trained_small, small_corpus, tmp_path, capsys):
    raw = (trained_small / "final.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"NOTMAGIC" + raw[8:])
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "bad.ckpt",
                       "--vocab", trained_small / "vocab.txt", "--data-dir", small_corpus)
    assert code == 2 and "error" in err
    Vocabulary(["<unk>", "<eos>", "x"]).save(tmp_path / "v.txt")
    code, _, err = run(capsys, "eval", "--checkpoint", trained_small / "final.ckpt",
                       "--vocab", tmp_path / "v.txt", "--data-dir", small_corpus)
    assert code == 2 and "vocab_size" in err


def _predictions(out):
    rows = [line.split("\t") for line in out.strip().splitlines()]
    return [(tok, float(p)) for tok, p in rows]


def test_predict_full_distribution(trained_small, capsys):
    vocab = Vocabulary.load(trained_small / "vocab.txt")
    code, out, _ = run(capsys, "predict", "--checkpoint", trained_small / "final.ckpt",
                       "--prompt", "w1 w2 w3", "-k", len(vocab))
    assert code == 0
    preds = _predictions(out)
    assert len(preds) == len(vocab)
    probs = [p for _, p in preds]
    assert abs(sum(probs) - 1) <= 1e-9
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert all(0 < p < 1 for p in probs)
    assert run(capsys, "predict", "--checkpoint", trained_small / "final.ckpt",
               "--prompt", "w1 w2 w3", "-k", len(vocab))[1] == out


def test_predict_clamps_k(trained_small, caplog):
    params = load_checkpoint(trained_small / "final.ckpt")
    vocab = Vocabulary.load(trained_small / "vocab.txt")
    with caplog.at_level("WARNING", logger="tiedlm"):
        report = cli.predict(params, vocab, "w1 never-seen", k=len(vocab) + 5)
    assert len(report.predictions) == len(vocab)
    assert "exceeds" in caplog.text
    assert report.context == ["w1", "never-seen"]


def test_predict_memorized_bigram(bigram_model, capsys):
    code, out, _ = run(capsys, "predict", "--checkpoint", bigram_model / "final.ckpt",
                       "--prompt", "a", "-k", "3")
    assert code == 0
    preds = _predictions(out)
    assert preds[0][0] == "b" and len(preds) == 3


def test_subspace_command(bigram_model, tmp_path, capsys):
    code, out, _ = run(capsys, "subspace", "--checkpoint", bigram_model / "final.ckpt")
    lines = out.splitlines()
    assert code == 0 and float(lines[0]) == 0 and lines[1] == "tied"
    save_checkpoint(tmp_path / "r.ckpt", init_params(ModelConfig(1000, 30, 30, seed=5)))
    code, out, _ = run(capsys, "subspace", "--checkpoint", tmp_path / "r.ckpt")
    first, second = out.splitlines()
    assert code == 0 and float(first) >= 0.95
    cosines = [float(c) for c in second.split()[1:]]
    assert len(cosines) == 30 and all(0 <= c <= 1 for c in cosines)


def test_sweep_writes_csv_and_resumes(small_corpus, tmp_path, capsys):
    argv = ["sweep", "--data-dir", small_corpus, "--sweep", "beta", "--values", "0,0.5,1",
            "--tau", "10", "--runs", "2", "--slice-length", "300", "--hidden-dim", "4",
            "--epochs", "1", "--batch-size", "2", "--bptt-steps", "10", "--out", tmp_path]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    assert sum(line.startswith("# beta=") for line in out.splitlines()) == 6
    summary = read_summary_csv(tmp_path / "sweep_summary.csv")
    assert [s["value"] for s in summary] == [0.0, 0.5, 1.0]
    assert all(s["n"] == 2 for s in summary)
    before = read_runs_csv(tmp_path / "sweep_runs.csv")
    code, out, _ = run(capsys, *argv)
    assert code == 0 and not any(line.startswith("# beta=") for line in out.splitlines())
    after = read_runs_csv(tmp_path / "sweep_runs.csv")
    assert [p.distances for p in after.points] == [p.distances for p in before.points]


def test_tau_sweep_spec():
    args = cli.build_parser().parse_args(["sweep", "--sweep", "tau", "--values", "2,5,10,20",
                                          "--beta", "1", "--out", "x"])
    spec = cli.sweep_spec_from_args(args)
    assert spec.values == (2.0, 5.0, 10.0, 20.0) and spec.fixed_beta == 1.0
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["sweep", "--sweep", "tau", "--values", "2,x", "--out", "x"])


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    raise AssertionError("no subcommands")


def test_help_documents_every_flag():
    parser = cli.build_parser()
    subs = _subparsers(parser)
    assert set(subs) == {"train", "eval", "predict", "subspace", "sweep", "grid"}
    for name, sub in subs.items():
        text = sub.format_help()
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
            assert action.help, (name, action.option_strings)
    train_flags = {f for a in subs["train"]._actions for f in a.option_strings}
    for key in cli.CONFIG_KEYS:
        assert "--" + key.replace("_", "-") in train_flags


def _strip_comments(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def test_train_is_byte_reproducible(small_corpus, tmp_path):
    outs = []
    for run_name in ("a", "b"):
        out = tmp_path / run_name
        assert cli.main(["train", "--data-dir", str(small_corpus), "--out", str(out),
                         "--quiet", "--seed", "11", "--variant", "real", *SMALL]) == 0
        outs.append(out)
    for name in ("final.ckpt", "best.ckpt", "config.txt", "vocab.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    assert _strip_comments(outs[0] / "train_log.csv") == _strip_comments(outs[1] / "train_log.csv")


def test_grid_command(small_corpus, tmp_path, capsys):
    code, out, _ = run(capsys, "grid", "--data-dir", small_corpus, "--epochs", "1",
                       "--out", tmp_path / "grid.csv")
    assert code == 0
    rows = [line.split(",") for line in out.strip().splitlines()]
    assert [r[0] for r in rows] == ["baseline", "al", "re", "real"]
    assert all(math.isfinite(float(r[3])) for r in rows)
    assert (tmp_path / "grid.csv").exists()
