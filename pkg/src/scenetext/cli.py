"""Command line: ``scenetext {synth,train,detect,eval}``.

Settings come from a flat ``key = value`` file (``--config`` or the
``SCENETEXT_CONFIG`` environment variable); command-line flags win.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import evalharness as ev
from . import synthgen as sg
from .cemser import CeMserConfig, dump_components
from .imagecore import draw_overlay, load_image, save_png
from .pipeline import GroupingConfig, detect_full, detection_record
from .textcnn import StageSchedule, TextCnnModel, train_staged
from .tinynn import TrainConfig

log = logging.getLogger("scenetext")

DEFAULT_SEED = 20160101
CONFIG_ENV = "SCENETEXT_CONFIG"


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class RunConfig:
    mser: CeMserConfig
    train: TrainConfig
    schedule: StageSchedule
    grouping: GroupingConfig
    seed: int = DEFAULT_SEED


_SECTIONS = {"mser": CeMserConfig, "train": TrainConfig, "schedule": StageSchedule, "grouping": GroupingConfig}


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string("[run]\n" + path.read_text())
    return dict(parser["run"])


def build_run_config(values: dict, seed: int | None) -> RunConfig:
    """Distribute flat keys over the config dataclasses; unknown keys are errors."""
    values = dict(values)
    seed = seed if seed is not None else int(values.pop("seed", DEFAULT_SEED))
    values.pop("seed", None)
    known = set()
    built = {}
    for name, cls in _SECTIONS.items():
        defaults = cls()
        kw = {}
        for f in dataclasses.fields(cls):
            known.add(f.name)
            if f.name in values:
                kw[f.name] = _coerce(values[f.name], getattr(defaults, f.name))
        if "seed" in {f.name for f in dataclasses.fields(cls)}:
            kw["seed"] = seed
        if name == "grouping" and "max_orientation_deg" in values:
            kw["max_orientation_diff"] = math.radians(float(values["max_orientation_deg"]))
        try:
            built[name] = cls(**kw)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    unknown = set(values) - known - {"max_orientation_deg"}
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return RunConfig(seed=seed, **built)


def load_run_config(args) -> RunConfig:
    if getattr(args, "stage1_iters", None) is not None and args.stage1_iters < 1:
        raise CliError("stage 1 is required: --stage1-iters must be >= 1")
    values = {}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        values.update(read_config_file(path))
    for key in ("stage1_iters", "stage2_iters", "batch_size", "lambda_mask_stage1", "score_threshold"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return build_run_config(values, args.seed)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, run: RunConfig) -> None:
    out = _out_dir(args.out)
    cfg = sg.SynthConfig(count=args.count, seed=run.seed, context_prob=args.context_prob)
    try:
        manifest = sg.generate_dataset(cfg, out)
    except OSError as exc:
        raise CliError(str(exc)) from exc
    print(f"wrote {cfg.count} samples, manifest {manifest}")
    if args.binary:
        sg.write_samples(sg.binary_set(args.binary, run.seed), out / "binary", prefix="b")
        print(f"wrote {args.binary} binary samples to {out / 'binary'}")
    if args.scenes:
        scenes = sg.scene_suite(args.scenes, run.seed, styles=args.styles.split(","))
        img_dir, gt_dir = _out_dir(out / "scenes" / "images"), out / "scenes" / "gt"
        truth = {}
        for i, s in enumerate(scenes):
            save_png(img_dir / f"scene{i:04d}.png", s.image)
            truth[f"scene{i:04d}"] = s.words
        ev.write_truth_dir(gt_dir, truth)
        print(f"wrote {len(scenes)} scenes to {out / 'scenes'}")


def cmd_train(args, run: RunConfig) -> None:
    out = _out_dir(args.out)
    if args.data:
        manifest = Path(args.data)
        manifest = manifest / "manifest.tsv" if manifest.is_dir() else manifest
        if not manifest.is_file():
            raise CliError(f"training manifest not found: {manifest}")
        synthetic = sg.load_manifest(manifest)
    else:
        synthetic = sg.synth_char_set(sg.SynthConfig(count=args.count, seed=run.seed, context_prob=0.3))
    if args.binary:
        manifest = Path(args.binary)
        manifest = manifest / "manifest.tsv" if manifest.is_dir() else manifest
        if not manifest.is_file():
            raise CliError(f"binary manifest not found: {manifest}")
        binary = sg.load_manifest(manifest)
    else:
        binary = sg.binary_set(args.binary_count, run.seed)
    model = TextCnnModel.initialize(run.seed)
    result = train_staged(model, synthetic, binary, run.schedule, run.train)
    model_path = out / "model.tcnn"
    model.save(model_path)
    (out / "curve.tsv").write_text("".join(r.to_line() + "\n" for r in result.curve))
    print(f"wrote {model_path}")


def _detect_one(job):
    path, model_path, run, dump = job
    model = TextCnnModel.load(model_path)
    img = load_image(path)
    res = detect_full(img, model, run.mser, run.grouping)
    return Path(path).stem, img, res, dump


def _image_list(items) -> list:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg")))
        elif p.is_file():
            paths.append(p)
        else:
            raise CliError(f"image not found: {p}")
    return paths


def run_detection(paths, model_path, run: RunConfig, out: Path, jobs: int = 1,
                  dump: bool = False, overlays: bool = True, name: str = "detections.jsonl") -> Path:
    jobs_in = [(str(p), str(model_path), run, dump) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_detect_one, jobs_in))
    else:
        results = [_detect_one(j) for j in jobs_in]
    lines = []
    for stem, img, res, dump in results:
        lines.append(detection_record(stem, res.words))
        if overlays:
            ov = draw_overlay(img, [w.bbox for w in res.words], [w.score for w in res.words])
            save_png(_out_dir(out / "overlays") / f"{stem}.png", ov)
        if dump:
            with open(_out_dir(out / "components") / f"{stem}.jsonl", "w") as fh:
                dump_components(res.components, fh)
    path = out / name
    path.write_text("".join(l + "\n" for l in lines))
    return path


def cmd_detect(args, run: RunConfig) -> None:
    model_path = Path(args.model)
    if not model_path.is_file():
        raise CliError(f"model file not found: {model_path}")
    out = _out_dir(args.out)
    path = run_detection(_image_list(args.images), model_path, run, out, args.jobs, args.dump_components,
                         overlays=not args.no_overlays)
    print(f"wrote {path}")


def cmd_eval(args, run: RunConfig) -> None:
    out = _out_dir(args.out)
    truth_dir = Path(args.truth)
    if not truth_dir.is_dir():
        raise CliError(f"ground-truth directory not found: {truth_dir}")
    truth = ev.read_truth_dir(truth_dir)
    runs = {}
    if args.ablate:
        if not (args.model and args.images):
            raise CliError("--ablate needs --model and --images")
        paths = _image_list([args.images])
        for label, sources in (("MSERs", ("original",)), ("CE-MSERs", None)):
            dets = _ablation_detections(paths, args.model, run, sources, args.jobs)
            runs[label] = _score(dets, truth)
    else:
        if not args.detections:
            raise CliError("eval needs --detections (or --ablate)")
        det_path = Path(args.detections)
        if not det_path.is_file():
            raise CliError(f"detections file not found: {det_path}")
        runs[args.name] = _score(ev.read_detections(det_path), truth)
    table = ev.report(runs)
    (out / "report.txt").write_text(table + "\n")
    print(table)


def _score(dets, truth):
    try:
        return ev.match_dataset(dets, truth)
    except KeyError as exc:
        raise CliError(exc.args[0]) from exc


def _ablate_one(job):
    path, model_path, run, sources = job
    from .pipeline import detect

    model = TextCnnModel.load(model_path)
    words = detect(load_image(path), model, run.mser, run.grouping, sources=sources)
    return Path(path).stem, [w.bbox for w in words]


def _ablation_detections(paths, model_path, run, sources, jobs):
    model_path = Path(model_path)
    if not model_path.is_file():
        raise CliError(f"model file not found: {model_path}")
    work = [(str(p), str(model_path), run, sources) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return dict(pool.map(_ablate_one, work))
    return dict(map(_ablate_one, work))


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--config", default=None, help=f"key=value config file (default ${CONFIG_ENV})")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-image work")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="scenetext", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic character dataset")
    p.add_argument("--count", type=int, default=6200)
    p.add_argument("--context-prob", type=float, default=0.3)
    p.add_argument("--binary", type=int, default=0, help="also write a text/non-text set of this size")
    p.add_argument("--scenes", type=int, default=0, help="also write this many word scenes with ground truth")
    p.add_argument("--styles", default="easy", help="comma-separated scene styles")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="staged multi-task CNN training")
    p.add_argument("--data", help="synthetic manifest (or its directory); rendered in memory when absent")
    p.add_argument("--binary", help="binary manifest (or its directory); built in memory when absent")
    p.add_argument("--count", type=int, default=6200)
    p.add_argument("--binary-count", type=int, default=2000)
    p.add_argument("--stage1-iters", type=int)
    p.add_argument("--stage2-iters", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lambda-mask-stage1", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="detect words in images")
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--model", required=True)
    p.add_argument("--dump-components", action="store_true", help="write every CE-MSER component per image")
    p.add_argument("--no-overlays", action="store_true")
    p.add_argument("--score-threshold", type=float)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score detections against ground truth")
    p.add_argument("--detections")
    p.add_argument("--truth", required=True, help="directory of gt_<id>.txt files")
    p.add_argument("--name", default="detections", help="row label in the report")
    p.add_argument("--ablate", action="store_true", help="compare MSER-only and CE-MSER candidates")
    p.add_argument("--model")
    p.add_argument("--images")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run = load_run_config(args)
        args.func(args, run)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
