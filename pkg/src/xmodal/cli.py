"""Command-line entry point: ``xmodal <subcommand> ...``.

Failures print one line ``error: <category>: <message>`` to stderr and exit
1; usage errors exit 2 (argparse). ``XMODAL_OUT`` and ``XMODAL_JOBS``
override the default output directory and job count.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import fields

import numpy as np

from . import __version__, dataio
from .errors import ConfigError, XModalError

DEFAULT_OUT = "xmodal_out"


def _env_out():
    return os.environ.get("XMODAL_OUT", DEFAULT_OUT)


def _env_jobs():
    raw = os.environ.get("XMODAL_JOBS", "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"XMODAL_JOBS must be an integer, got {raw!r}") from None
    return max(jobs, 1)


def _range(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return tuple(parts)


def _tasks(text):
    from .experiments import TASKS
    names = {"flow": "flow", "seg": "segmentation", "segmentation": "segmentation",
             "norm": "normals", "normals": "normals"}
    out = []
    for part in filter(None, text.split(",")):
        if part not in names:
            raise argparse.ArgumentTypeError(f"unknown task {part!r} (choose from {', '.join(TASKS)})")
        out.append(names[part])
    return tuple(out)


def _task(text):
    t = _tasks(text)
    if len(t) != 1:
        raise argparse.ArgumentTypeError("expected exactly one task")
    return t[0]


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    from .scenegen import SceneParams
    from .scenegen.dataset import GenConfig, generate_dataset
    cfg = GenConfig.from_dict(_load_json(args.config)) if args.config else GenConfig()
    for name in ("scenes", "frames", "width", "height", "fov_deg"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    if args.presets is not None:
        cfg.presets = args.presets.split(",")
    for f in fields(SceneParams):
        v = getattr(args, f"scene_{f.name}")
        if v is not None:
            setattr(cfg.scene, f.name, v)
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or os.path.join(_env_out(), "dataset")
    m = generate_dataset(cfg, out_dir=out, jobs=args.jobs or _env_jobs())
    frames = sum(r.frame_count for r in m.scenes)
    print(f"wrote {frames} frames ({len(m.scenes)} scene records) to {out}")


def cmd_convert_normals(args):
    from .annotate import normals_from_depth, NormalEstimationConfig
    depth = dataio.read_pfm(args.depth)
    if depth.ndim != 2:
        raise ConfigError(f"{args.depth}: expected a single-channel depth map")
    h, w = depth.shape
    f = args.focal if args.focal is not None else (w / 2) / math.tan(math.radians(args.fov_deg) / 2)
    intr = dataio.Intrinsics(f, w / 2, h / 2)
    cfg = NormalEstimationConfig(args.window, args.ratio)
    normals, ok = normals_from_depth(depth, intr, cfg)
    dataio.write_pfm(normals.astype(np.float32), args.out)
    print(f"wrote {args.out}: {int(ok.sum())} of {ok.size} pixels with a normal")


def _profiles_from_args(args):
    from .degrade import DEFAULT_PROFILES, DegradeProfile, load_profiles
    profiles = dict(DEFAULT_PROFILES)
    if args.profiles:
        try:
            profiles.update(load_profiles(args.profiles))
        except OSError as exc:
            raise ConfigError(f"{args.profiles}: {exc.strerror}") from exc
    knobs = {"blur_sigma": args.blur, "noise_sigma": args.noise, "label_flip_prob": args.flip,
             "boundary_erode": args.erode, "downup_factor": args.downup}
    given = {k: v for k, v in knobs.items() if v is not None}
    if given:
        if len(args.tasks) != 1:
            raise ConfigError("profile flags need exactly one --task")
        t = args.tasks[0]
        profiles[t] = DegradeProfile.from_dict({**profiles[t].to_dict(), **given})
    return profiles


def cmd_degrade(args):
    from .experiments import degrade_dataset
    profiles = _profiles_from_args(args)
    n = degrade_dataset(args.dataset, profiles, seed=args.seed or 0, tasks=args.tasks)
    print(f"wrote {n} degraded maps under {args.dataset}")


def _refine_overrides(args):
    doc = {}
    for name in ("scales", "branch_channels", "trunk_channels"):
        v = getattr(args, name, None)
        if v is not None:
            doc[name] = v
    return doc


def _train_overrides(args, conf=None):
    from .refinenet import TrainConfig
    doc = dict((conf or {}).get("training", {}))
    unknown = set(doc) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    for name in ("epochs", "lr", "batch_size", "crop"):
        v = getattr(args, name, None)
        if v is not None:
            doc[name] = v
    return doc


def cmd_train(args):
    from .experiments import load_frames, load_manifest, scene_records, split_scenes
    from .refinenet import RefineConfig, RefineModel, TrainConfig, save_model, train, trace_to_csv
    outputs = args.targets
    sources = {t: "pred" for t in outputs}
    for h in args.helpers:
        if h in sources:
            raise ConfigError(f"{h} is both a target and a helper")
        sources[h] = args.helper_source
    manifest = load_manifest(args.dataset)
    ids = [r.scene_id for r in scene_records(manifest)]
    train_ids, _ = split_scenes(ids, args.test_count)
    conf = _load_json(args.config)
    refine = {"class_count": len(manifest.class_palette), **conf.get("refine", {}),
              **_refine_overrides(args), "inputs": tuple(sources), "outputs": outputs,
              "coupling": args.coupling or ("zero" if len(outputs) == 1 else "tight")}
    cfg = RefineConfig.from_dict(refine)
    seed = args.seed or 0
    model = RefineModel(cfg, seed=seed)
    tcfg = TrainConfig(**{**_train_overrides(args, conf), "seed": seed})
    data = load_frames(args.dataset, train_ids, sources, cfg.class_count)
    log = (lambda row: print(f"epoch {row['epoch']} loss {row['loss']:.6f}")) if args.verbose else None
    trace = train(model, data, tcfg, log=log)
    out = args.out or os.path.join(_env_out(), "model.ckpt")
    dataio.ensure_dir(os.path.dirname(os.path.abspath(out)))
    save_model(model, out)
    with open(os.path.splitext(out)[0] + "_log.csv", "w") as f:
        f.write(trace_to_csv(trace))
    print(f"trained {model.parameter_count()} parameters on {len(data)} frames; saved {out}")


def _read_seg(path, class_count):
    if path.endswith(".npy"):
        scores = dataio.read_scores(path)
        return np.argmax(scores, axis=-1)
    return dataio.read_pnm(path).astype(np.int64)


def cmd_eval(args):
    from .metrics import eval_flow, eval_normals, eval_seg
    if args.task == "flow":
        gt = dataio.read_flo(args.gt)
        m = eval_flow(dataio.read_flo(args.pred), gt, dataio.flow_valid_mask(gt))
        print(f"epe {m.epe:.3f}")
    elif args.task == "segmentation":
        gt = _read_seg(args.gt, args.classes)
        m = eval_seg(_read_seg(args.pred, args.classes), gt, args.classes)
        print(f"miou {m.miou:.3f}")
    else:
        gt = dataio.read_pfm(args.gt)
        m = eval_normals(dataio.read_pfm(args.pred), gt, np.linalg.norm(gt, axis=-1) > 0.5)
        names = dataio.NORMAL_COLUMNS
        print(" ".join(f"{n} {v:.3f}" for n, v in zip(names, m.as_row())))


def cmd_viz(args):
    from .annotate import flow_magnitude, flow_to_color, label_to_rgb, normal_to_rgb
    from .scenegen.dataset import palette_entries
    if args.kind == "flow":
        flow = dataio.read_flo(args.input)
        img = flow_to_color(flow, "auto" if args.max_magnitude is None else args.max_magnitude)
    elif args.kind == "magnitude":
        img = flow_magnitude(dataio.read_flo(args.input))
    elif args.kind == "normals":
        img = normal_to_rgb(dataio.read_pfm(args.input))
    else:
        img = label_to_rgb(_read_seg(args.input, None), palette_entries())
    dataio.write_pnm(img, args.out)
    print(f"wrote {args.out}")


def cmd_experiment(args):
    from .dataio import render_report
    from .experiments import ExperimentSpec, run_suite
    conf = _load_json(args.config)
    spec = ExperimentSpec(
        suite=args.suite, target=args.target, dataset=args.dataset,
        out_dir=args.out or os.path.join(_env_out(), "reports"),
        test_count=args.test_count,
        refine={**conf.get("refine", {}), **_refine_overrides(args)},
        training=_train_overrides(args, conf),
        seed=args.seed or 0, helpers=args.helpers or ())
    table, runner = run_suite(spec)
    print(render_report(table, "plain"), end="")
    print(f"report written to {runner.out}")


def cmd_gradcheck(args):
    from .autodiff.gradcheck import check_model, check_ops
    worst = 0.0
    ok = True
    for r in check_ops(args.seed or 0):
        print(f"{r.name:<22} {r.rel_error:.3e}")
        worst = max(worst, r.rel_error)
        ok &= r.passed(args.op_tol)
    if not args.ops_only:
        r = check_model(args.seed or 0)
        print(f"{r.name:<22} {r.rel_error:.3e}")
        ok &= r.passed(args.model_tol)
    print(f"max op error {worst:.3e}: {'pass' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_selftest(args):
    """Tiny end-to-end run: generate, degrade, train, evaluate."""
    from .autodiff.gradcheck import check_ops
    from .experiments import ExperimentSpec, degrade_dataset, run_suite
    from .scenegen.dataset import GenConfig, generate_dataset
    bad = [r.name for r in check_ops(0) if not r.passed(1e-5)]
    if bad:
        print(f"gradcheck failed: {', '.join(bad)}")
        return 1
    print("gradcheck ok")
    with tempfile.TemporaryDirectory() as tmp:
        ds = os.path.join(tmp, "ds")
        generate_dataset(GenConfig(scenes=3, frames=3, presets=["clear"], width=32, height=32),
                         seed=args.seed or 0, out_dir=ds)
        print("gen ok")
        degrade_dataset(ds, seed=args.seed or 0)
        print("degrade ok")
        spec = ExperimentSpec("oracle", "flow", ds, os.path.join(tmp, "rep"), test_count=1,
                              refine={"scales": 2, "branch_channels": 4, "trunk_channels": 4},
                              training={"epochs": 1, "crop": 0}, helpers=("segmentation",))
        table, _ = run_suite(spec)
        print(f"train/eval ok ({len(table.rows)} report rows)")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p):
    g = p.add_argument_group("model / training overrides")
    g.add_argument("--config", help="JSON file with 'refine' and 'training' sections")
    g.add_argument("--scales", type=int)
    g.add_argument("--branch-channels", type=int)
    g.add_argument("--trunk-channels", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--crop", type=int, help="training crop size, 0 for full frames")


def build_parser():
    from .scenegen import SceneParams
    parser = argparse.ArgumentParser(prog="xmodal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"xmodal {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single source of randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="render a synthetic dataset")
    p.add_argument("--config", help="JSON generation config")
    p.add_argument("--out", help="output directory (default $XMODAL_OUT/dataset)")
    p.add_argument("--jobs", type=int, help="worker processes (default $XMODAL_JOBS or 1)")
    p.add_argument("--scenes", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--fov-deg", type=float)
    p.add_argument("--presets", help="comma-separated lighting presets")
    for f in fields(SceneParams):
        kind = _range if isinstance(f.default, tuple) else type(f.default)
        p.add_argument(f"--scene-{f.name.replace('_', '-')}", dest=f"scene_{f.name}", type=kind,
                       help=f"scene parameter {f.name} (default {f.default})")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert-normals", help="surface normals from a depth PFM")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fov-deg", type=float, default=70.0, help="horizontal field of view")
    p.add_argument("--focal", type=float, help="focal length in pixels (overrides --fov-deg)")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--ratio", type=float, default=0.05, help="relative depth jump gate")
    p.set_defaults(func=cmd_convert_normals)

    p = sub.add_parser("degrade", parents=[common], help="write pred_ maps beside the GT")
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", dest="tasks", type=_tasks, default=("flow", "segmentation", "normals"),
                   help="comma-separated tasks to degrade (default all)")
    p.add_argument("--profiles", help="JSON file {task: {knob: value}}")
    p.add_argument("--blur", type=float, help="blur sigma in px")
    p.add_argument("--noise", type=float, help="noise sigma (px for flow, degrees for normals)")
    p.add_argument("--flip", type=float, help="region label flip probability")
    p.add_argument("--erode", type=int, help="boundary band width in px")
    p.add_argument("--downup", type=int, help="down/up-sampling factor")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", parents=[common], help="train one refinement model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", dest="targets", type=_tasks, required=True,
                   help="comma-separated tasks to refine")
    p.add_argument("--helpers", type=_tasks, default=(), help="comma-separated helper modalities")
    p.add_argument("--helper-source", choices=("gt", "pred"), default="gt")
    p.add_argument("--coupling", choices=("zero", "loose", "tight", "tight+"))
    p.add_argument("--test-count", type=int, default=2, help="scenes held out")
    p.add_argument("--out", help="checkpoint path (default $XMODAL_OUT/model.ckpt)")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare a prediction file with ground truth")
    p.add_argument("--task", type=_task, required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="colour-encode a flow, normal or label map")
    p.add_argument("--kind", choices=("flow", "magnitude", "normals", "labels"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output .ppm / .pgm")
    p.add_argument("--max-magnitude", type=float)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("experiment", help="run an experiment suite")
    p.add_argument("suite", choices=("oracle", "predicted", "coupling"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--target", type=_task, default="flow")
    p.add_argument("--dataset", required=True)
    p.add_argument("--helpers", type=_tasks)
    p.add_argument("--test-count", type=int, default=2)
    p.add_argument("--out", help="report directory (default $XMODAL_OUT/reports)")
    p.add_argument("--jobs", type=int, help="accepted for symmetry; rows run sequentially")
    _add_model_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--op-tol", type=float, default=1e-5)
    p.add_argument("--model-tol", type=float, default=1e-4)
    p.add_argument("--ops-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", parents=[common], help="quick end-to-end smoke run")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
    except XModalError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {exc.category}: {msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
