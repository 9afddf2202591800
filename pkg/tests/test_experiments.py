import os
import shutil

import numpy as np
import pytest

from xmodal import dataio
from xmodal.errors import ConfigError, DatasetError
from xmodal.experiments import (REFERENCE_TAG, ExperimentSpec, degrade_dataset, load_frames, pred_path,
                                run_suite, split_scenes)

FAST = dict(refine={"scales": 2, "branch_channels": 4, "trunk_channels": 4},
            training={"epochs": 1, "crop": 0, "batch_size": 4})


@pytest.fixture(scope="module")
def dataset(tiny_dataset, tmp_path_factory):
    root = str(tmp_path_factory.mktemp("exp") / "ds")
    shutil.copytree(tiny_dataset, root)
    degrade_dataset(root, seed=0)
    return root


def spec(dataset, out, suite="oracle", target="flow", **kw):
    return ExperimentSpec(suite, target, dataset, str(out), test_count=1, **{**FAST, **kw})


def test_split_is_scene_level_and_disjoint():
    train, test = split_scenes(range(10))
    assert train == list(range(8)) and test == [8, 9]
    assert not set(train) & set(test)
    train, test = split_scenes(range(5), train_scenes=(0, 2))
    assert (train, test) == ([0, 2], [1, 3, 4])
    with pytest.raises(ConfigError):
        split_scenes(range(2), test_count=2)
    with pytest.raises(ConfigError):
        split_scenes(range(3), train_scenes=(7,))
    with pytest.raises(ConfigError):
        split_scenes(range(3), train_scenes=(0, 1, 2))


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec("ablation")
    with pytest.raises(ConfigError):
        ExperimentSpec("oracle", target="depth")
    assert ExperimentSpec("coupling", target="normals").target == "flow"


def test_load_frames_sources(dataset):
    d = load_frames(dataset, [0], {"flow": "pred", "segmentation": "gt"})
    assert len(d) == 3 and d.size == (32, 32)
    seg = d.inputs["segmentation"]
    assert np.array_equal(seg.argmax(-1), d.labels) and np.all(seg.sum(-1) == 1)
    with pytest.raises(ConfigError):
        load_frames(dataset, [0], {"flow": "guess"})
    with pytest.raises(DatasetError):
        load_frames(dataset, [9], {"flow": "gt"})


def test_oracle_flow_rows_and_header(dataset, tmp_path):
    table, runner = run_suite(spec(dataset, tmp_path))
    assert [r.label for r in table.rows] == ["baseline", "+GT seg", "+GT norm", "+GT seg+norm"]
    assert [(c.name, c.better) for c in table.columns] == [("epe", "lower")]
    assert table.header[0].startswith("xmodal ") and "config " in table.header[2]
    assert table.footer and table.footer[0].startswith(REFERENCE_TAG)
    assert runner.train_ids == [0, 1] and runner.test_ids == [2]
    files = set(os.listdir(runner.out))
    assert {"report.txt", "report.csv", "oracle_seg.ckpt", "oracle_seg_log.csv"} <= files
    back = dataio.read_report(os.path.join(runner.out, "report.csv"))
    assert [r.label for r in back.rows] == [r.label for r in table.rows]


def test_predicted_seg_and_normals_columns(dataset, tmp_path):
    table, _ = run_suite(spec(dataset, tmp_path, "predicted", "segmentation"))
    assert [r.label for r in table.rows] == ["baseline", "with PR flow", "with PR norm",
                                             "with PR flow+norm"]
    assert [(c.name, c.better) for c in table.columns] == [("miou", "higher")]
    table, _ = run_suite(spec(dataset, tmp_path, "predicted", "normals", helpers=("flow",)))
    assert [r.label for r in table.rows] == ["baseline", "with PR flow"]
    assert [c.name for c in table.columns] == dataio.NORMAL_COLUMNS
    assert [c.better for c in table.columns] == ["lower"] * 3 + ["higher"] * 3


def test_coupling_rows_and_params(dataset, tmp_path):
    table, runner = run_suite(spec(dataset, tmp_path, "coupling"))
    assert [r.label for r in table.rows] == ["baseline", "GT-zero", "PR-zero", "PR-loose", "PR-tight"]
    cols = {c.name: c.better for c in table.columns}
    assert cols == {"flow_epe": "lower", "seg_miou": "higher", "params": "info"}
    assert table.row("PR-tight")["params"] < table.row("PR-loose")["params"]


def test_reports_bit_identical_across_runs(dataset, tmp_path, snapshot):
    for name in ("a", "b"):
        run_suite(spec(dataset, tmp_path / name, helpers=("normals",), seed=7))
    a, b = snapshot(str(tmp_path / "a")), snapshot(str(tmp_path / "b"))
    assert a == b and len(a) >= 4


def test_missing_helper_names_modality(dataset, tmp_path):
    root = str(tmp_path / "ds")
    shutil.copytree(dataset, root)
    os.remove(pred_path(root, 2, "clear", "normals", 0))
    with pytest.raises(DatasetError, match="normals"):
        run_suite(spec(root, tmp_path / "rep", "predicted", "flow"))


def test_missing_gt_file(dataset, tmp_path):
    root = str(tmp_path / "ds")
    shutil.copytree(dataset, root)
    shutil.rmtree(os.path.join(root, "scene_001", "clear", "depth"))
    with pytest.raises(DatasetError, match="depth"):
        load_frames(root, [1], {"flow": "gt"})


def test_identity_profiles_keep_gt(tiny_dataset, tmp_path):
    from xmodal.degrade import identity_profile
    root = str(tmp_path / "ds")
    shutil.copytree(tiny_dataset, root)
    degrade_dataset(root, {t: identity_profile(t) for t in ("flow", "segmentation", "normals")})
    table, _ = run_suite(spec(root, tmp_path / "rep", helpers=("segmentation",)))
    assert table.row("baseline")["epe"] == 0.0
    assert table.row("+GT seg")["epe"] < 0.05
