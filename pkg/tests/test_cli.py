import json
import math

import numpy as np
import pytest

from brainage.cli import main
from brainage.engine import lr_at
from brainage.models import ModelSpec, build_model
from brainage.nifti import Volume, write_nifti
from brainage.pipeline import SubjectRecord, TrainConfig, make_checkpoint, write_manifest

TINY_2D = ModelSpec("slicenet2d", (2, 4, 8, 16), head_units=8, input_downsample=2, input_scale=1 / 255)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    """A small synthetic cohort pushed through synth, hist-ref and preprocess."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "6", "--seed", "4", "--out", str(root / "raw")]) == 0
    assert main(["hist-ref", "--manifest", str(root / "raw" / "manifest.csv"), "--q", "100", "--out", str(root / "ref.csv")]) == 0
    assert main(["preprocess", "--manifest", str(root / "raw" / "manifest.csv"), "--ref", str(root / "ref.csv"), "--out", str(root / "pre")]) == 0
    return root


class TestSynth:
    def test_byte_identical_trees(self, tmp_path, capsys):
        for name, workers in (("a", 1), ("b", 3)):
            code, out, _ = run(capsys, "synth", "--n", 10, "--seed", 1, "--out", tmp_path / name, "--workers", workers)
            assert code == 0
        a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
        assert a == b and "config.json" in a and "manifest.csv" in a and len(a) == 12

    def test_stdout_is_json_and_prose_on_stderr(self, tmp_path, capsys):
        code, out, err = run(capsys, "synth", "--n", 2, "--seed", 0, "--out", tmp_path)
        assert code == 0 and json.loads(out)["n"] == 2 and "wrote" in err

    def test_bad_range_is_usage_error(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "--n", 2, "--seed", 0, "--out", tmp_path, "--age-min", 5)
        assert code == 1 and out == ""


class TestExitCodes:
    @pytest.mark.parametrize(
        "argv",
        [["bogus"], [], ["synth", "--n", "3", "--out", "x"], ["synth", "--n", "0", "--seed", "1", "--out", "x"], ["train", "--flag"]],
    )
    def test_usage(self, argv, capsys):
        assert main(argv) == 1
        assert "usage error" in capsys.readouterr().err

    def test_data(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("not,a,manifest\n")
        code, _, err = run(capsys, "hist-ref", "--manifest", tmp_path / "m.csv", "--out", tmp_path / "r.csv")
        assert code == 2 and "data error" in err

    def test_bad_checkpoint(self, tmp_path, capsys):
        (tmp_path / "c.ckpt").write_bytes(b"junk")
        (tmp_path / "v.nii").write_bytes(b"")
        assert run(capsys, "predict", "--checkpoint", tmp_path / "c.ckpt", "--volume", tmp_path / "v.nii")[0] == 2

    def test_numeric(self, prepared, tmp_path, capsys):
        cfg = TrainConfig.default("slicenet2d", model=TINY_2D.replace(input_scale=1e30), epochs=1, initial_lr=1e30)
        (tmp_path / "cfg.json").write_text(json.dumps(cfg.to_dict()))
        code, _, err = run(capsys, "train", "--config", tmp_path / "cfg.json", "--manifest", prepared / "pre" / "manifest.csv", "--out", tmp_path / "t")
        assert code == 3 and "numeric" in err

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--help"])
        assert exc.value.code == 0
        assert "--config" in capsys.readouterr().out


class TestTrainPredictEval:
    def test_2d_defaults_log(self, prepared, tmp_path, capsys):
        cfg = TrainConfig.default("slicenet2d", model=TINY_2D)
        assert cfg.epochs == 50 and cfg.schedule.initial_lr == 1e-4
        (tmp_path / "cfg.json").write_text(json.dumps(cfg.to_dict()))
        code, out, _ = run(
            capsys, "train", "--config", tmp_path / "cfg.json", "--manifest", prepared / "pre" / "manifest.csv",
            "--out", tmp_path / "t", "--batch-size", 200, "--workers", 2,
        )
        assert code == 0 and json.loads(out)["epochs"] == 50
        lines = (tmp_path / "t" / "train_log.csv").read_text().splitlines()
        assert len(lines) == 51
        lrs = [float(line.split(",")[1]) for line in lines[1:]]
        assert lrs[0] == 1e-4 and math.isclose(lrs[-1], 2e-6, rel_tol=1e-12)
        assert lrs == [lr_at(cfg.schedule, e) for e in range(50)]
        echoed = json.loads((tmp_path / "t" / "config.json").read_text())
        assert echoed["batch_size"] == 200 and echoed["epochs"] == 50

    def test_flags_override_and_determinism(self, prepared, tmp_path, capsys):
        small = TrainConfig.default("brainnet3d", model=ModelSpec("brainnet3d", (2, 4, 8, 16), head_units=8, input_downsample=4))
        (tmp_path / "c.json").write_text(json.dumps(small.to_dict()))
        argv = ["train", "--config", tmp_path / "c.json", "--manifest", prepared / "pre" / "manifest.csv", "--epochs", 2, "--seed", 9]
        assert run(capsys, *argv, "--out", tmp_path / "a")[0] == 0
        assert run(capsys, *argv, "--out", tmp_path / "b")[0] == 0
        assert tree(tmp_path / "a") == tree(tmp_path / "b")
        assert json.loads((tmp_path / "a" / "config.json").read_text())["seed"] == 9

    def test_predict_and_eval_perfect_stub(self, tmp_path, capsys):
        # every subject is 70; a zero-weight model with output bias 70 is a perfect oracle
        spec = ModelSpec("brainnet3d", (2, 4, 8, 16), head_units=4, input_shape=(16, 16, 16))
        model = build_model(spec)
        for p in model.parameters():
            p.data[...] = 0
        model.params["head.out.bias"].data[...] = 70.0
        make_checkpoint(model).save(tmp_path / "stub.ckpt")
        rng = np.random.default_rng(0)
        recs = []
        for i in range(4):
            write_nifti(Volume(rng.uniform(0, 255, (16, 16, 16)).astype(np.float32)), tmp_path / f"s{i}.nii")
            recs.append(SubjectRecord(f"s{i}", 70.0, f"s{i}.nii", "test"))
        write_manifest(recs, tmp_path / "m.csv")

        code, out, _ = run(capsys, "predict", "--checkpoint", tmp_path / "stub.ckpt", "--volume", tmp_path / "s0.nii")
        assert code == 0 and json.loads(out) == {"subject_id": "s0", "predicted_age": 70.0, "model_kind": "brainnet3d"}

        code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "stub.ckpt", "--manifest", tmp_path / "m.csv", "--split", "test", "--out", tmp_path / "ev")
        assert code == 0
        metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
        assert metrics["mae_years"] == 0.0 and metrics["n"] == 4
        assert (tmp_path / "ev" / "age_histogram.csv").read_text().splitlines()[1:] == ["70,71,4"]

        code, out, err = run(capsys, "report", "--eval-dir", tmp_path / "ev")
        assert code == 0 and json.loads(out) == metrics and "MAE 0.000" in err

    def test_predict_sliced(self, prepared, tmp_path, capsys):
        make_checkpoint(build_model(TINY_2D, seed=1)).save(tmp_path / "m.ckpt")
        code, out, _ = run(capsys, "predict", "--checkpoint", tmp_path / "m.ckpt", "--volume", prepared / "pre" / "sub-0001.nii")
        result = json.loads(out)
        assert code == 0 and len(result["slice_predictions"]) == 40 and result["subject_id"] == "sub-0001"
