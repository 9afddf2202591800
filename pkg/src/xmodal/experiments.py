"""Experiment suites: oracle refinement, predicted-input refinement and the
coupling comparison. Each suite trains refinement models on a scene-level
train split and reports test metrics against the degraded baseline."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, dataio
from .degrade import DEFAULT_PROFILES, degrade
from .errors import ConfigError, DatasetError
from .metrics import NORMAL_THRESHOLDS, aggregate, eval_flow, eval_normals, eval_seg
from .refinenet import (RefineConfig, RefineData, RefineModel, TrainConfig, predict, save_model,
                        train, trace_to_csv)
from .rng import derive_seed
from .scenegen.dataset import frame_path
from .scenegen.render import SKY_DEPTH

TASKS = ("flow", "segmentation", "normals")
SHORT = {"flow": "flow", "segmentation": "seg", "normals": "norm"}
PRED_PREFIX = "pred_"
SCORE_EXT = ".npy"

# Published reference values, carried as report context only.
REFERENCE = {
    ("oracle", "flow"): "VKITTI EPE: baseline 3.00, +GT seg 2.68, +GT norm 2.37, +GT seg+norm 2.36",
    ("oracle", "segmentation"): "VKITTI mIoU: baseline 44.11, +GT flow 46.90, +GT flow+norm 50.0",
}
REFERENCE_TAG = "[published reference, not a target]"


@dataclass
class ExperimentSpec:
    suite: str
    target: str = "flow"
    dataset: str = "."
    out_dir: str = "reports"
    train_scenes: tuple = ()  # empty -> all but the last ``test_count`` scenes
    test_count: int = 2
    refine: dict = field(default_factory=dict)  # RefineConfig overrides
    training: dict = field(default_factory=dict)  # TrainConfig overrides
    seed: int = 0
    helpers: tuple = ()  # restrict helper rows; empty -> all

    def __post_init__(self):
        if self.suite not in ("oracle", "predicted", "coupling"):
            raise ConfigError(f"unknown suite {self.suite!r}")
        if self.target not in TASKS:
            raise ConfigError(f"unknown target task {self.target!r}")
        if self.suite == "coupling":
            self.target = "flow"

    def to_dict(self):
        d = asdict(self)
        d["train_scenes"], d["helpers"] = list(self.train_scenes), list(self.helpers)
        return d


# ---------------------------------------------------------------------------
# dataset access


def score_path(root, scene_id, lighting, index):
    p = frame_path(root, scene_id, lighting, "label", index, PRED_PREFIX)
    return os.path.splitext(p)[0] + SCORE_EXT


def pred_path(root, scene_id, lighting, task, index):
    if task == "segmentation":
        return score_path(root, scene_id, lighting, index)
    mod = {"flow": "flow", "normals": "normal"}[task]
    return frame_path(root, scene_id, lighting, mod, index, PRED_PREFIX)


def _read(fn, path, what):
    if not os.path.exists(path):
        raise DatasetError(f"missing {what} file: {path}")
    return fn(path)


def load_manifest(root):
    return _read(dataio.read_manifest, os.path.join(root, "manifest.json"), "manifest")


def scene_records(manifest):
    """First lighting record per scene id; refinement never looks at RGB."""
    seen = {}
    for rec in manifest.scenes:
        seen.setdefault(rec.scene_id, rec)
    return [seen[k] for k in sorted(seen)]


def split_scenes(scene_ids, test_count=2, train_scenes=()):
    ids = sorted(scene_ids)
    if train_scenes:
        train_ids = sorted(set(train_scenes))
        unknown = set(train_ids) - set(ids)
        if unknown:
            raise ConfigError(f"unknown train scenes {sorted(unknown)}")
        test_ids = [i for i in ids if i not in train_ids]
    else:
        if not 0 < test_count < len(ids):
            raise ConfigError(f"cannot hold out {test_count} of {len(ids)} scenes")
        train_ids, test_ids = ids[:-test_count], ids[-test_count:]
    if not test_ids:
        raise ConfigError("empty test split")
    return train_ids, test_ids


def degrade_dataset(root, profiles=None, seed=0, tasks=TASKS, class_count=None):
    """Write ``pred_`` files next to the GT for every frame with flow."""
    manifest = load_manifest(root)
    profiles = {**DEFAULT_PROFILES, **(profiles or {})}
    class_count = class_count or len(manifest.class_palette)
    written = 0
    for rec in scene_records(manifest):
        sid, lit = rec.scene_id, rec.lighting
        for k in range(rec.frame_count - 1):
            for ti, task in enumerate(TASKS):
                if task not in tasks:
                    continue
                prof = profiles[task].with_seed(derive_seed(seed, ti, sid, k))
                if task == "flow":
                    gt = _read(dataio.read_flo, frame_path(root, sid, lit, "flow", k), "flow")
                    out = degrade("flow", gt, prof)
                    dataio.write_flo(out, pred_path(root, sid, lit, task, k))
                elif task == "segmentation":
                    gt = _read(dataio.read_pnm, frame_path(root, sid, lit, "label", k), "label")
                    out = degrade("segmentation", gt, prof, class_count=class_count)
                    dataio.write_scores(out, score_path(root, sid, lit, k))
                else:
                    gt = _read(dataio.read_pfm, frame_path(root, sid, lit, "normal", k), "normal")
                    out = degrade("normals", gt, prof)
                    dataio.write_pfm(out, pred_path(root, sid, lit, task, k))
                written += 1
    return written


def one_hot(labels, class_count):
    return np.eye(class_count, dtype=np.float32)[labels]


def load_frames(root, scene_ids, sources, class_count=None):
    """RefineData for all flow-carrying frames of ``scene_ids``.

    ``sources`` maps modality -> "gt" | "pred". GT segmentation enters as
    one-hot scores. Flow targets exclude sky and unknown flow; normal
    targets exclude sky."""
    manifest = load_manifest(root)
    class_count = class_count or len(manifest.class_palette)
    recs = {r.scene_id: r for r in scene_records(manifest)}
    missing = set(scene_ids) - set(recs)
    if missing:
        raise DatasetError(f"scenes {sorted(missing)} not in manifest")
    cols = {m: [] for m in sources}
    flow, fvalid, labels, normals, nvalid = [], [], [], [], []
    for sid in sorted(scene_ids):
        rec = recs[sid]
        lit = rec.lighting
        for k in range(rec.frame_count - 1):
            depth = _read(dataio.read_pfm, frame_path(root, sid, lit, "depth", k), "depth")
            f = _read(dataio.read_flo, frame_path(root, sid, lit, "flow", k), "flow")
            lab = _read(dataio.read_pnm, frame_path(root, sid, lit, "label", k), "label").astype(np.int64)
            nrm = _read(dataio.read_pfm, frame_path(root, sid, lit, "normal", k), "normal")
            surface = depth < SKY_DEPTH * 0.1
            flow.append(f)
            fvalid.append(surface & dataio.flow_valid_mask(f))
            labels.append(lab)
            normals.append(nrm)
            nvalid.append(surface & (np.linalg.norm(nrm, axis=-1) > 0.5))
            for m, src in sources.items():
                if src == "gt":
                    v = {"flow": f, "segmentation": one_hot(lab, class_count), "normals": nrm}[m]
                elif src == "pred":
                    p = pred_path(root, sid, lit, m, k)
                    if not os.path.exists(p):
                        raise DatasetError(f"missing degraded {m} prediction: {p}")
                    v = {"flow": dataio.read_flo, "segmentation": dataio.read_scores,
                         "normals": dataio.read_pfm}[m](p)
                else:
                    raise ConfigError(f"unknown source {src!r} for {m}")
                cols[m].append(np.asarray(v, dtype=np.float32))
    if not flow:
        raise DatasetError(f"no frame pairs in scenes {sorted(scene_ids)}")
    return RefineData({m: np.stack(v) for m, v in cols.items()}, np.stack(flow), np.stack(fvalid),
                      np.stack(labels), np.stack(normals), np.stack(nvalid))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(task, pred, data, class_count):
    """Dataset-level metric of ``pred`` (N,H,W,C) against ``data`` targets."""
    if task == "flow":
        return aggregate(eval_flow(pred[i], data.flow[i], data.flow_valid[i])
                         for i in range(len(pred)) if data.flow_valid[i].any())
    if task == "segmentation":
        return aggregate(eval_seg(pred[i], data.labels[i], class_count) for i in range(len(pred)))
    return aggregate(eval_normals(pred[i], data.normals[i], data.normals_valid[i])
                     for i in range(len(pred)) if data.normals_valid[i].any())


def metric_columns(task):
    if task == "flow":
        return [dataio.Column("epe", "lower")]
    if task == "segmentation":
        return [dataio.Column("miou", "higher")]
    return [dataio.Column(dataio.NORMAL_COLUMNS[0], "lower"), dataio.Column("median", "lower"),
            dataio.Column("rmse", "lower")] + [dataio.Column(f"{t:g}", "higher") for t in NORMAL_THRESHOLDS]


def metric_values(task, m):
    if task == "flow":
        return [m.epe]
    if task == "segmentation":
        return [m.miou]
    return m.as_row()


def headline(task, m):
    """Single scalar used for direction checks."""
    return {"flow": lambda: m.epe, "segmentation": lambda: m.miou, "normals": lambda: m.mean}[task]()


# ---------------------------------------------------------------------------
# suites


class SuiteRunner:
    def __init__(self, spec):
        self.spec = spec
        self.manifest = load_manifest(spec.dataset)
        self.class_count = len(self.manifest.class_palette)
        ids = [r.scene_id for r in scene_records(self.manifest)]
        self.train_ids, self.test_ids = split_scenes(ids, spec.test_count, spec.train_scenes)
        self.out = os.path.join(spec.out_dir, f"{spec.suite}_{spec.target}")
        dataio.ensure_dir(self.out)
        self._cache = {}
        self.results = {}  # row label -> {task: metric}
        self.param_counts = {}

    def data(self, sources, split):
        key = (tuple(sorted(sources.items())), split)
        if key not in self._cache:
            ids = self.train_ids if split == "train" else self.test_ids
            self._cache[key] = load_frames(self.spec.dataset, ids, sources, self.class_count)
        return self._cache[key]

    def refine_config(self, inputs, outputs, coupling):
        doc = {"class_count": self.class_count, **self.spec.refine,
               "inputs": tuple(inputs), "outputs": tuple(outputs), "coupling": coupling}
        return RefineConfig.from_dict(doc)

    def fit(self, row_id, sources, outputs, coupling="zero"):
        cfg = self.refine_config(sources, outputs, coupling)
        row_seed = derive_seed(self.spec.seed, sum(ord(c) for c in row_id), len(row_id))
        model = RefineModel(cfg, seed=row_seed)
        tcfg = TrainConfig(**{**self.spec.training, "seed": row_seed})
        trace = train(model, self.data(sources, "train"), tcfg)
        save_model(model, os.path.join(self.out, f"{row_id}.ckpt"))
        with open(os.path.join(self.out, f"{row_id}_log.csv"), "w") as f:
            f.write(trace_to_csv(trace))
        preds = predict(model, self.data(sources, "test"))
        test = self.data(sources, "test")
        self.param_counts[row_id] = model.parameter_count()
        return {t: evaluate(t, preds[t], test, self.class_count) for t in outputs}

    def baseline(self, tasks):
        test = self.data({t: "pred" for t in tasks}, "test")
        return {t: evaluate(t, test.inputs[t], test, self.class_count) for t in tasks}

    def helper_rows(self, target):
        helpers = [t for t in TASKS if t != target]
        if self.spec.helpers:
            unknown = set(self.spec.helpers) - set(helpers)
            if unknown:
                raise ConfigError(f"helpers {sorted(unknown)} invalid for target {target}")
            helpers = [h for h in helpers if h in self.spec.helpers]
        rows = [(h,) for h in helpers]
        if len(helpers) > 1:
            rows.append(tuple(helpers))
        return rows

    def header(self):
        cfg = self.refine_config(TASKS, (self.spec.target,), "zero")
        return [f"xmodal {__version__}", f"suite {self.spec.suite} target {self.spec.target}",
                f"config {cfg.digest()} seed {self.spec.seed}",
                f"train scenes {self.train_ids} test scenes {self.test_ids}",
                "flow and normal metrics exclude sky pixels"]

    def footer(self, key):
        ref = REFERENCE.get(key)
        return [f"{REFERENCE_TAG} {ref}"] if ref else []

    def table(self, title, tasks, rows, extra_cols=()):
        cols = []
        for t in tasks:
            for c in metric_columns(t):
                name = c.name if len(tasks) == 1 else f"{SHORT[t]}_{c.name}"
                cols.append(dataio.Column(name, c.better))
        cols += list(extra_cols)
        table = dataio.ReportTable(title, cols, header=self.header())
        for label, extra in rows:
            vals = []
            for t in tasks:
                vals += metric_values(t, self.results[label][t])
            table.add_row(label, vals + list(extra))
        return table

    def run_oracle(self):
        target = self.spec.target
        self.results["baseline"] = self.baseline([target])
        rows = [("baseline", [])]
        for helpers in self.helper_rows(target):
            label = "+GT " + "+".join(SHORT[h] for h in helpers)
            sources = {target: "pred", **{h: "gt" for h in helpers}}
            self.results[label] = self.fit(f"oracle_{'_'.join(SHORT[h] for h in helpers)}",
                                           sources, (target,))
            rows.append((label, []))
        t = self.table(f"Refine {target} with ground-truth helpers", [target], rows)
        t.footer = self.footer(("oracle", target))
        return t

    def run_predicted(self):
        target = self.spec.target
        self.results["baseline"] = self.baseline([target])
        rows = [("baseline", [])]
        for helpers in self.helper_rows(target):
            label = "with PR " + "+".join(SHORT[h] for h in helpers)
            sources = {target: "pred", **{h: "pred" for h in helpers}}
            self.results[label] = self.fit(f"pred_{'_'.join(SHORT[h] for h in helpers)}",
                                           sources, (target,))
            rows.append((label, []))
        return self.table(f"Refine {target} using predicted modalities", [target], rows)

    def run_coupling(self):
        tasks = ("flow", "segmentation")
        pred = {t: "pred" for t in tasks}
        self.results["baseline"] = self.baseline(list(tasks))
        # zero coupling trains one single-task model per task; GT-zero feeds
        # the other task's ground truth, PR-zero its degraded prediction
        for label, helper_src in (("GT-zero", "gt"), ("PR-zero", "pred")):
            res, count = {}, 0
            for t in tasks:
                other = tasks[1 - tasks.index(t)]
                rid = f"{label.lower()}_{SHORT[t]}"
                res.update(self.fit(rid, {t: "pred", other: helper_src}, (t,)))
                count += self.param_counts[rid]
            self.results[label] = res
            self.param_counts[label] = count
        for label, coupling in (("PR-loose", "loose"), ("PR-tight", "tight")):
            rid = label.lower()
            self.results[label] = self.fit(rid, pred, tasks, coupling)
            self.param_counts[label] = self.param_counts[rid]
        rows = [("baseline", [0])] + [(r, [self.param_counts[r]])
                                      for r in ("GT-zero", "PR-zero", "PR-loose", "PR-tight")]
        return self.table("Coupling levels, refining flow and segmentation", list(tasks), rows,
                          [dataio.Column("params", "info")])

    def run(self):
        table = {"oracle": self.run_oracle, "predicted": self.run_predicted,
                 "coupling": self.run_coupling}[self.spec.suite]()
        table.validate()
        for fmt, ext in (("plain", ".txt"), ("delimited", ".csv")):
            dataio.write_report(table, os.path.join(self.out, "report" + ext), fmt)
        return table


def run_suite(spec):
    runner = SuiteRunner(spec)
    return runner.run(), runner
