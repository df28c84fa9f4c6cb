import numpy as np
import pytest

from dualstr.cli import run
from dualstr.data.io import write_dataset, write_ppm
from dualstr.data.render import CATEGORIES, generate_samples
from dualstr.errors import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE
from dualstr.training.checkpoint import save_training_state

from conftest import TOY_MODEL, TOY_WORDS, random_images

TOY_INI = "[model]\n" + "".join(f"{k} = {v}\n" for k, v in TOY_MODEL.items()) + (
    "[freezing]\ntext_freeze_layers = 0\n"
    "[masks]\nk = 2\n"
    "[optim]\ntotal_steps = 2\nbatch = 2\n"
    "[train]\naugment = false\n"
)


@pytest.fixture
def toy_dataset(tmp_path):
    root = tmp_path / "data"
    write_dataset(root, generate_samples(TOY_WORDS, 8, 2, CATEGORIES, 8, 16))
    return root


@pytest.fixture
def toy_checkpoint(tmp_path, toy_model):
    path = tmp_path / "toy.ckpt"
    save_training_state(path, toy_model)
    return path


def test_inspect_masks_prints_grids(capsys):
    assert run(["inspect-masks", "--n", "4", "--k", "2", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert out == (
        "mask 0 L2R\n.###\n..##\n...#\n....\n"
        "\n"
        "mask 1 R2L\n.#..\n.##.\n.###\n....\n"
    )


def test_gen_vocab_and_gen_data_are_deterministic(tmp_path, capsys):
    assert run(["gen-vocab", "--out", str(tmp_path / "vocab"), "--train-count", "20",
                "--heldout-count", "5"]) == 0
    assert capsys.readouterr().out == "train\t20\nheldout\t5\n"
    outputs = []
    for name in ("a", "b"):
        argv = ["gen-data", "--out", str(tmp_path / name), "--count", "12", "--seed", "3",
                "--vocab", str(tmp_path / "vocab" / "train.txt")]
        assert run(argv) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    assert outputs[0].splitlines()[-1] == "total\t12"
    counts = [int(line.split("\t")[1]) for line in outputs[0].splitlines()[:-1]]
    assert sum(counts) == 12
    manifest = (tmp_path / "a" / "labels.tsv").read_text()
    assert manifest == (tmp_path / "b" / "labels.tsv").read_text()
    for i in range(12):
        rel = f"images/{i:06d}.ppm"
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_gen_data_clean_only(tmp_path, capsys):
    vocab = tmp_path / "words.txt"
    vocab.write_text("cat\ndog\n", encoding="utf-8")
    argv = ["gen-data", "--out", str(tmp_path / "d"), "--count", "4", "--vocab", str(vocab),
            "--corruptions", "clean"]
    assert run(argv) == 0
    assert capsys.readouterr().out == "clean\t4\ntotal\t4\n"


def test_usage_errors(capsys):
    assert run([]) == EXIT_USAGE
    assert run(["train", "--bogus"]) == EXIT_USAGE
    assert run(["gen-data", "--out", "x", "--count", "1", "--vocab", "v",
                "--corruptions", "smeared"]) != 0
    assert "Error:" in capsys.readouterr().err


def test_config_errors(tmp_path, toy_dataset, capsys):
    missing = tmp_path / "absent.ini"
    argv = ["train", "--config", str(missing), "--data", str(toy_dataset), "--out", "o"]
    assert run(argv) == EXIT_CONFIG
    no_steps = tmp_path / "no_steps.ini"
    no_steps.write_text("[optim]\nbatch = 2\n", encoding="utf-8")
    argv = ["train", "--config", str(no_steps), "--data", str(toy_dataset), "--out", "o"]
    assert run(argv) == EXIT_CONFIG
    assert "total_steps" in capsys.readouterr().err


def test_data_and_checkpoint_errors(tmp_path, toy_checkpoint):
    argv = ["eval", "--checkpoint", str(toy_checkpoint), "--data", str(tmp_path / "none")]
    assert run(argv) == EXIT_DATA
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert run(["eval", "--checkpoint", str(bad), "--data", str(tmp_path)]) == EXIT_CHECKPOINT


def test_train_then_eval(tmp_path, toy_dataset, capsys):
    config = tmp_path / "toy.ini"
    config.write_text(TOY_INI, encoding="utf-8")
    out_dir = tmp_path / "run"
    argv = ["train", "--config", str(config), "--data", str(toy_dataset), "--out", str(out_dir),
            "--seed", "5"]
    assert run(argv) == 0
    assert capsys.readouterr().out.splitlines()[0] == "step\t2"
    assert (out_dir / "final.ckpt").exists()

    dump = tmp_path / "preds.tsv"
    argv = ["eval", "--checkpoint", str(out_dir / "final.ckpt"), "--data", str(toy_dataset),
            "--dump", str(dump)]
    assert run(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t") == ["output", "overall", *CATEGORIES]
    assert [line.split("\t")[0] for line in lines[1:]] == ["visual", "cross", "final"]
    rows = dump.read_text().splitlines()
    assert len(rows) == 8
    assert all(len(row.split("\t")) == 6 for row in rows)


def test_predict_reports_failures_per_file(tmp_path, toy_checkpoint, capsys):
    good = tmp_path / "good.ppm"
    write_ppm(good, random_images(1, h=16, w=32)[0])
    missing = tmp_path / "missing.ppm"
    argv = ["predict", "--checkpoint", str(toy_checkpoint), "--image", str(good), str(missing),
            "--refine-iters", "0"]
    assert run(argv) == EXIT_DATA
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith(f"{good}\t")
    assert len(lines[0].split("\t")) == 4
    assert lines[1].startswith(f"{missing}\tERROR\t")


def test_predict_fast_cross(tmp_path, toy_checkpoint, capsys):
    image = tmp_path / "x.ppm"
    write_ppm(image, np.zeros((8, 16, 3), dtype=np.uint8))
    assert run(["predict", "--checkpoint", str(toy_checkpoint), "--image", str(image),
                "--fast-cross"]) == 0
    assert capsys.readouterr().out.startswith(str(image))


def test_predict_rejects_negative_refine_iters(tmp_path, toy_checkpoint, capsys):
    image = tmp_path / "x.ppm"
    write_ppm(image, np.zeros((8, 16, 3), dtype=np.uint8))
    argv = ["predict", "--checkpoint", str(toy_checkpoint), "--image", str(image),
            "--refine-iters", "-1"]
    assert run(argv) == EXIT_CONFIG
    assert "refine_iters" in capsys.readouterr().err
