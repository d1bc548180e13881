import csv
import json
import math

import numpy as np
import pytest

from stavis import tensor as T
from stavis.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from stavis.data import io
from stavis.data.clips import MEDIAN, VideoSource
from stavis.data.gt import default_sigma, densify_fixations, fixation_map
from stavis.data.manifest import load_manifest
from stavis.data.splits import SplitSpec
from stavis.evaluate import evaluate_sources

SMALL = {
    "backbone": {"channels": [2, 3, 3, 2], "height": 16, "width": 16, "dsam_hidden": 2,
                 "conv1_stride": [1, 1, 1], "block_strides": [[1, 1, 1], [1, 2, 2], [1, 1, 1]]},
    "audio": {"channels": [2, 2, 2, 2, 2, 2, 3]},
    "localization": {"hidden_dim": 3},
    "train": {"batch_size": 2, "epochs": 1, "max_steps": 2},
}


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(root), "--seed", "1", "--videos", "6", "--frames", "40", "--size", "16"]) == EXIT_OK
    return root


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


# -- exit codes ----------------------------------------------------------------


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", "desk"])
    assert exc.value.code == EXIT_USAGE


def test_unknown_config_key_exits_2(tmp_path, dataset, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"optimizer": {"lr": 0.01, "learning_rate": 0.1}}))
    code = main(["train", "--config", str(bad), "--stage", "visual", "--manifest", str(dataset / "manifest.json"),
                 "--out", str(tmp_path / "run")])
    assert code == EXIT_VALIDATION
    assert "learning_rate" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_out_of_range_value_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"optimizer": {"momentum": 1.5}}))
    assert main(["gradcheck", "--config", str(bad)]) == EXIT_VALIDATION


def test_av_stage_without_init_exits_2(tmp_path, config, dataset, capsys):
    code = main(["train", "--config", str(config), "--stage", "av", "--manifest", str(dataset / "manifest.json"),
                 "--out", str(tmp_path / "run")])
    assert code == EXIT_VALIDATION
    assert "--init" in capsys.readouterr().err


def test_gradcheck_subset_passes_with_one_row_per_check(capsys):
    assert main(["gradcheck", "--only", "tensor.squashers", "loss."]) == EXIT_OK
    out = capsys.readouterr().out
    rows = [line.split() for line in out.splitlines()[1:] if line.strip()]
    assert [r[0] for r in rows] == ["tensor.squashers", "loss.ce", "loss.cc", "loss.nss"]
    assert all(r[-1] == "PASS" and float(r[1]) < 1e-4 for r in rows)


def test_gradcheck_catches_a_corrupted_backward_rule(monkeypatch, capsys):
    def bad_sigmoid(a):
        a = T.as_tensor(a)
        s = 1.0 / (1.0 + np.exp(-a.data))
        return T._make(s, (a,), lambda g: (g * s,), "sigmoid")  # missing (1 - s)

    monkeypatch.setattr(T, "sigmoid", bad_sigmoid)
    assert main(["gradcheck", "--only", "tensor.squashers"]) == EXIT_NUMERIC
    assert "FAILED: tensor.squashers" in capsys.readouterr().err


# -- train and eval ------------------------------------------------------------


def test_two_stage_training_and_eval(tmp_path, config, dataset, capsys):
    manifest = str(dataset / "manifest.json")
    vis, av, ev = tmp_path / "vis", tmp_path / "av", tmp_path / "eval"
    assert main(["train", "--config", str(config), "--stage", "visual", "--manifest", manifest, "--out", str(vis)]) == EXIT_OK
    assert (vis / "visual_final.ckpt").exists() and (vis / "train_log_visual.csv").exists()
    assert main(["train", "--config", str(config), "--stage", "av", "--init", str(vis / "visual_final.ckpt"),
                 "--manifest", manifest, "--out", str(av)]) == EXIT_OK
    assert main(["eval", "--config", str(config), "--ckpt", str(av / "av_final.ckpt"), "--manifest", manifest,
                 "--out", str(ev), "--save-maps"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "visual: cc=" in out and "av: cc=" in out
    rows = list(csv.DictReader((ev / "metrics_av.csv").open()))
    assert len(rows) == 6 * 41
    series = list(csv.DictReader((ev / "nss_series.csv").open()))
    assert len(series) == 6 * 40
    assert len(list((ev / "maps" / "av").rglob("*.pgm"))) == 6 * 40


def test_eval_with_incompatible_checkpoint_exits_2(tmp_path, config, dataset, capsys):
    manifest = str(dataset / "manifest.json")
    assert main(["train", "--config", str(config), "--stage", "visual", "--manifest", manifest,
                 "--out", str(tmp_path / "vis")]) == EXIT_OK
    wider = tmp_path / "wider.json"
    wider.write_text(json.dumps({**SMALL, "localization": {"hidden_dim": 5}}))
    code = main(["eval", "--config", str(wider), "--ckpt", str(tmp_path / "vis" / "visual_final.ckpt"),
                 "--manifest", manifest, "--out", str(tmp_path / "eval")])
    assert code == EXIT_VALIDATION
    assert "loc." in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_training_exits_3(tmp_path, dataset, capsys):
    cfg = tmp_path / "hot.json"
    cfg.write_text(json.dumps({**SMALL, "optimizer": {"lr": 1e300, "clip_norm": None}, "train": {**SMALL["train"], "max_steps": 3}}))
    code = main(["train", "--config", str(cfg), "--stage", "visual", "--manifest", str(dataset / "manifest.json"),
                 "--out", str(tmp_path / "run")])
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


class _Oracle:
    """Predicts each frame's own dense ground truth (the window's median frame identifies it)."""

    def __init__(self, source):
        self.source = source
        self.by_bytes = {source.frames[i].tobytes(): i for i in range(source.n_frames)}

    def predict(self, clips, audio):
        return np.stack([self.source.gt(self.by_bytes[c[MEDIAN].tobytes()]).y_den for c in clips])


class _Constant:
    def predict(self, clips, audio):
        return np.full((len(clips),) + clips.shape[2:4], 0.5)


def test_ground_truth_as_prediction_is_perfect(dataset):
    src = VideoSource(load_manifest(dataset / "manifest.json")[0])
    (rep,) = evaluate_sources(_Oracle(src), [src])
    for m in ("cc", "sim", "auc_j"):
        assert all(v == pytest.approx(1.0, abs=1e-12) for v in rep.per_frame[m]), m


def test_constant_prediction_is_degenerate_on_every_frame(dataset, tmp_path):
    src = VideoSource(load_manifest(dataset / "manifest.json")[0])
    (rep,) = evaluate_sources(_Constant(), [src], out_dir=tmp_path)
    assert rep.degenerate["cc"] == rep.degenerate["nss"] == src.n_frames
    rows = list(csv.DictReader((tmp_path / "metrics_av.csv").open()))
    assert all(math.isnan(float(r["cc"])) for r in rows)


# -- data commands -------------------------------------------------------------


def test_synth_twice_gives_identical_trees(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--seed", "1", "--videos", "2", "--frames", "20",
                     "--size", "16"]) == EXIT_OK
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b and len(a) == 2 * (20 + 2) + 1


def test_make_splits_on_six_videos(tmp_path, dataset):
    out = tmp_path / "splits.json"
    assert main(["make-splits", "--manifest", str(dataset / "manifest.json"), "--out", str(out)]) == EXIT_OK
    spec = SplitSpec.load(out)
    keys = [v.key for v in load_manifest(dataset / "manifest.json")]
    spec.validate(keys)
    assert len(spec.folds) == 3
    assert sorted(k for f in spec.folds for k in f.test) == sorted(keys)


@pytest.mark.parametrize("fmt", ["pgm", "raw"])
def test_densify_round_trip(tmp_path, dataset, fmt):
    out = tmp_path / "dense"
    assert main(["densify", "--manifest", str(dataset / "manifest.json"), "--out", str(out), "--format", fmt]) == EXIT_OK
    video = load_manifest(dataset / "manifest.json")[2]
    fix = video.fixations_by_frame()
    sigma = default_sigma(video.height, video.width)
    for f in (0, 17, 39):
        expected = densify_fixations(fixation_map(fix[f], video.height, video.width), sigma)
        if fmt == "pgm":
            got = io.read_pgm(out / video.video_id / f"{f:05d}.pgm")
            assert np.abs(got - expected).max() <= 1 / 255
        else:
            got = io.read_raw(out / video.video_id / f"{f:05d}.tensor")
            assert np.array_equal(got, expected)
