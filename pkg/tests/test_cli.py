import json

import numpy as np
import pytest

from geomnet import shapegen as sg
from geomnet.cli import main
from geomnet.model import ModelConfig, build_model, load_checkpoint, save_checkpoint


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen", "--out", str(d), "--seed", "5", "--n-test", "30", "--aug-factor", "2"]) == 0
    return d


def train_small(data, out, *extra):
    model, metrics = out / "m.geo", out / "metrics.csv"
    code = main(["train", "--data", str(data), "--model", str(model), "--metrics", str(metrics),
                 "--epochs", "2", "--batch-size", "8", *extra])
    assert code == 0
    return model, metrics


def header_count(path):
    return int.from_bytes(path.read_bytes()[4:8], "big")


def test_gen_default_sizes(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--seed", "7"]) == 0
    assert header_count(sg.images_path(tmp_path, "train")) == 2100
    assert header_count(sg.images_path(tmp_path, "test")) == 300
    out = capsys.readouterr().out
    assert "train: N=2100 triangle=700 circle=700 square=700" in out
    assert "test: N=300 triangle=100 circle=100 square=100" in out


def test_gen_no_expansion(tmp_path):
    assert main(["gen", "--out", str(tmp_path), "--seed", "7", "--aug-factor", "1"]) == 0
    assert header_count(sg.images_path(tmp_path, "train")) == 300


def test_gen_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["gen", "--out", str(tmp_path / d), "--seed", "3", "--n-test", "30"]) == 0
    for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "test-images-idx3-ubyte",
                 "test-labels-idx1-ubyte"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_outputs_and_determinism(small_data, tmp_path):
    (tmp_path / "1").mkdir()
    (tmp_path / "2").mkdir()
    m1, c1 = train_small(small_data, tmp_path / "1")
    m2, c2 = train_small(small_data, tmp_path / "2")
    assert m1.read_bytes() == m2.read_bytes()
    assert c1.read_bytes() == c2.read_bytes()
    text = c1.read_bytes().decode()
    assert "\r" not in text and text.endswith("\n")
    lines = text.splitlines()
    assert lines[0] == "epoch,split,mean_loss,accuracy"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 4
    for split in ("train", "test"):
        epochs = [int(r[0]) for r in rows if r[1] == split]
        assert epochs == [1, 2]
    for r in rows:
        assert len(r[2].split(".")[1]) == 6 and 0 <= float(r[3]) <= 1


def test_train_lr_zero_keeps_init(small_data, tmp_path):
    model, _ = train_small(small_data, tmp_path, "--lr", "0", "--seed", "4")
    init = build_model(ModelConfig(seed=4))
    for p, q in zip(load_checkpoint(model).parameters(), init.parameters()):
        assert p.tobytes() == q.tobytes()


def test_eval_json(small_data, tmp_path, capsys):
    model, _ = train_small(small_data, tmp_path)
    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--data", str(small_data), "--split", "test"]) == 0
    result = json.loads(capsys.readouterr().out)
    confusion = np.array(result["confusion"])
    assert confusion.shape == (3, 3) and confusion.sum() == 30
    assert confusion.sum(axis=1).tolist() == [10, 10, 10]
    assert result["accuracy"] == np.trace(confusion) / 30


def test_eval_class_mismatch(small_data, tmp_path):
    path = tmp_path / "two.geo"
    save_checkpoint(build_model(ModelConfig(num_classes=2)), path)
    assert main(["eval", "--model", str(path), "--data", str(small_data)]) == 2


def test_predict(small_data, tmp_path, capsys):
    path = tmp_path / "m.geo"
    save_checkpoint(build_model(), path)
    images = sg.images_path(small_data, "test")
    for target in (str(images), str(small_data)):
        capsys.readouterr()
        assert main(["predict", "--model", str(path), "--data", target, "--index", "4"]) == 0
        name, probs = capsys.readouterr().out.strip().split("\n")
        values = {k: float(v) for k, v in (kv.split("=") for kv in probs.split())}
        assert list(values) == ["triangle", "circle", "square"]
        assert abs(sum(values.values()) - 1.0) <= 1e-6
        assert name == max(values, key=values.get)
    assert main(["predict", "--model", str(path), "--data", str(images), "--index", "30"]) != 0


def test_usage_and_io_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    assert main(["eval", "--model", str(tmp_path / "nope.geo"), "--data", str(tmp_path)]) == 2
    bad = tmp_path / "bad.geo"
    bad.write_bytes(b"GEO1garbage")
    assert main(["eval", "--model", str(bad), "--data", str(tmp_path)]) == 2
    assert main(["gen", "--out", str(tmp_path), "--n-test", "10"]) == 1


def test_train_rejects_bad_config(small_data, tmp_path):
    assert main(["train", "--data", str(small_data), "--model", str(tmp_path / "m"), "--metrics",
                 str(tmp_path / "c"), "--momentum", "1.0"]) == 1
    assert main(["train", "--data", str(small_data), "--model", str(tmp_path / "m"), "--metrics",
                 str(tmp_path / "c"), "--batch-size", "0"]) == 1
