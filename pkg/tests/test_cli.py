import json

import numpy as np
import pytest

from subspacenet.cli import RunConfig, main
from subspacenet.dataio import Instance, ValidationError, read_dataset, read_manifest, write_instance

SCENE = {"structures": [["line", 8], ["ellipse", 8], ["ellipse", 8], ["circle", 8]],
         "noise_sigma": 0.05}
TINY = ["--depth", "2", "--width", "8", "--embed-dim", "4"]


@pytest.fixture
def data(tmp_path):
    spec = tmp_path / "scene.json"
    spec.write_text(json.dumps(SCENE))
    out = tmp_path / "gen"
    assert main(["gen", "--spec", str(spec), "--count", "3", "--val", "1", "--test", "2",
                 "--seed", "5", "--out", str(out)]) == 0
    return out / "data"


@pytest.fixture
def model(tmp_path, data):
    out = tmp_path / "train"
    assert main(["train", "--data", str(data), "--epochs", "2", "--seed", "1",
                 "--out", str(out)] + TINY) == 0
    return out / "model.ckpt"


def test_gen_writes_manifest_and_is_reproducible(tmp_path, data):
    manifest = read_manifest(data)
    assert [len(manifest[s]) for s in ("train", "val", "test")] == [3, 1, 2]
    spec = tmp_path / "scene.json"
    again = tmp_path / "gen2"
    main(["gen", "--spec", str(spec), "--count", "3", "--val", "1", "--test", "2",
          "--seed", "5", "--out", str(again)])
    for f in sorted(data.iterdir()):
        assert f.read_bytes() == (again / "data" / f.name).read_bytes()


def test_gen_seed_changes_data(tmp_path, data):
    spec = tmp_path / "scene.json"
    main(["gen", "--spec", str(spec), "--count", "3", "--seed", "6", "--out", str(tmp_path / "g")])
    a = read_dataset(data, "train")[0].points
    b = read_dataset(tmp_path / "g" / "data", "train")[0].points
    assert not np.array_equal(a, b)


def test_train_writes_outputs_and_echoes_config(tmp_path, model):
    run = model.parent
    assert (run / "trainlog.csv").read_text().startswith("epoch,train_loss,val_loss,val_error")
    echoed = json.loads((run / "config.json").read_text())
    assert echoed["command"] == "train"
    assert echoed["config"]["network"]["num_blocks"] == 2
    assert echoed["config"]["train"]["seed"] == 1


def test_train_is_reproducible_from_echoed_config(tmp_path, data, model):
    echoed = json.loads((model.parent / "config.json").read_text())["config"]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(echoed))
    out = tmp_path / "again"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    assert (out / "model.ckpt").read_bytes() == model.read_bytes()


def test_resume_matches_unbroken_run(tmp_path, data):
    full = tmp_path / "full"
    main(["train", "--data", str(data), "--epochs", "4", "--checkpoint-every", "2",
          "--out", str(full)] + TINY)
    resumed = tmp_path / "resumed"
    main(["train", "--data", str(data), "--epochs", "4", "--checkpoint-every", "2",
          "--out", str(resumed), "--resume", str(full / "checkpoints" / "epoch_0002.ckpt")] + TINY)
    assert (full / "model.ckpt").read_bytes() == (resumed / "model.ckpt").read_bytes()


def test_cluster_fixed_k(tmp_path, data, model):
    out = tmp_path / "cl"
    assert main(["cluster", "--checkpoint", str(model), "--data", str(data), "--k", "4",
                 "--restarts", "3", "--out", str(out)]) == 0
    pred = json.loads((out / "pred" / "test_00000.json").read_text())
    assert pred["k"] == 4 and len(set(pred["assignments"])) == 4
    emb = np.loadtxt(out / "embeddings" / "test_00000.csv", delimiter=",")
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-9)


def test_cluster_auto_uses_range_one_to_ten(tmp_path, data, model):
    out = tmp_path / "cl"
    assert main(["cluster", "--checkpoint", str(model), "--data", str(data), "--k", "auto",
                 "--method", "sod", "--restarts", "2", "--out", str(out)]) == 0
    pred = json.loads((out / "pred" / "test_00001.json").read_text())
    assert len(pred["curve"]) == 10
    assert 1 <= pred["k"] <= 10


def test_cluster_is_reproducible(tmp_path, data, model):
    args = ["cluster", "--checkpoint", str(model), "--data", str(data), "--k", "auto",
            "--method", "silh", "--restarts", "2"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    for name in ("test_00000.json", "test_00001.json"):
        assert (tmp_path / "a" / "pred" / name).read_bytes() == \
            (tmp_path / "b" / "pred" / name).read_bytes()


def test_eval_of_ground_truth_is_perfect(tmp_path, data):
    pred = tmp_path / "pred"
    pred.mkdir()
    for inst in read_dataset(data, "test"):
        (pred / f"{inst.name}.json").write_text(
            json.dumps({"name": inst.name, "assignments": inst.labels.tolist()}))
    out = tmp_path / "ev"
    assert main(["eval", "--pred", str(pred), "--data", str(data), "--out", str(out)]) == 0
    mean = (out / "metrics.csv").read_text().splitlines()[-2].split(",")
    assert float(mean[1]) == 0.0 and float(mean[2]) == pytest.approx(1.0)


def test_baseline_recovers_two_noiseless_lines(tmp_path):
    x = np.linspace(-1, 1, 10)
    pts = np.hstack([np.vstack([x, 0.5 * x]), np.vstack([x, -0.8 * x + 0.3])])
    inst = Instance(pts, np.repeat([0, 1], 10), name="lines")
    path = tmp_path / "lines.json"
    write_instance(inst, path)
    out = tmp_path / "bl"
    assert main(["baseline", "--instance", str(path), "--schedule", "line:2",
                 "--threshold", "1e-6", "--iters", "100", "--out", str(out)]) == 0
    pred = json.loads((out / "pred" / "lines.json").read_text())
    ev = tmp_path / "ev"
    data = tmp_path / "d"
    data.mkdir()
    write_instance(inst, data / "lines.json")
    assert main(["eval", "--pred", str(out), "--data", str(data), "--out", str(ev)]) == 0
    assert float((ev / "metrics.csv").read_text().splitlines()[1].split(",")[1]) == 0.0
    assert sorted(set(pred["assignments"])) == [0, 1]


def test_loocv_runs_one_fold_per_instance(tmp_path, data):
    out = tmp_path / "lo"
    assert main(["loocv", "--data", str(data), "--epochs", "1", "--restarts", "2",
                 "--out", str(out)] + TINY) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 + 2


def test_curve_export(tmp_path, data, model):
    out = tmp_path / "cu"
    inst = data / "test_00000.json"
    assert main(["curve", "--checkpoint", str(model), "--instance", str(inst), "--k-max", "6",
                 "--restarts", "2", "--out", str(out)]) == 0
    rows = (out / "test_00000_curve.csv").read_text().splitlines()
    assert rows[0] == "K,r,r_raw,sod,silhouette" and len(rows) == 7
    r = [float(row.split(",")[1]) for row in rows[1:]]
    assert all(a >= b for a, b in zip(r, r[1:]))


def test_no_l2norm_pipeline(tmp_path, data):
    out = tmp_path / "tr"
    assert main(["train", "--data", str(data), "--epochs", "1", "--no-l2norm",
                 "--out", str(out)] + TINY) == 0
    cl = tmp_path / "cl"
    assert main(["cluster", "--checkpoint", str(out / "model.ckpt"), "--data", str(data),
                 "--k", "4", "--restarts", "2", "--out", str(cl)]) == 0
    emb = np.loadtxt(cl / "embeddings" / "test_00000.csv", delimiter=",")
    assert np.abs(np.linalg.norm(emb, axis=1) - 1.0).max() > 1e-3


@pytest.mark.parametrize("argv", [
    ["train", "--loss", "bogus"],
    ["train", "--epochs", "0"],
    ["cluster", "--k", "zero"],
    ["cluster", "--k", "0"],
    ["frobnicate"],
])
def test_invalid_arguments_exit_1(tmp_path, data, model, argv):
    extra = {"train": ["--data", str(data)],
             "cluster": ["--checkpoint", str(model), "--data", str(data)]}
    full = argv + extra.get(argv[0], []) + ["--out", str(tmp_path / "x")]
    assert main(full) == 1


def test_unknown_config_keys_exit_1(tmp_path, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"network": {"depth": 3}}))
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(tmp_path / "x")]) == 1
    cfg.write_text(json.dumps({"extras": {}}))
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(tmp_path / "y")]) == 1


def test_missing_checkpoint_exit_1(tmp_path, data):
    assert main(["cluster", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(data),
                 "--out", str(tmp_path / "x")]) == 1


def test_dimension_mismatch_exit_1(tmp_path, model):
    inst = Instance(np.random.default_rng(0).normal(size=(3, 12)), np.repeat([0, 1], 6),
                    name="d3")
    path = tmp_path / "d3.json"
    write_instance(inst, path)
    assert main(["cluster", "--checkpoint", str(model), "--instance", str(path), "--k", "2",
                 "--out", str(tmp_path / "x")]) == 1


def test_nonempty_output_dir_rejected(tmp_path, data):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["train", "--data", str(data), "--out", str(out)]) == 1
    assert (out / "keep.txt").read_text() == "x"


def test_baseline_failure_exit_2(tmp_path):
    x = np.linspace(-1, 1, 6)
    inst = Instance(np.vstack([x, x ** 2]), np.repeat([0, 1], 3), name="few")
    path = tmp_path / "few.json"
    write_instance(inst, path)
    assert main(["baseline", "--instance", str(path), "--schedule", "ellipse:2",
                 "--out", str(tmp_path / "x")]) == 2


def test_run_config_round_trip():
    cfg = RunConfig.from_dict({"seed": 3, "inference": {"k": 4, "method": "silh"}})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ValidationError):
        RunConfig.from_dict({"seed": "three"})
