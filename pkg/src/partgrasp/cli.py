"""Command-line entry point: ``partgrasp {gen,train,plan,eval,export}``.

Exit codes: 0 ok, 2 configuration error, 3 missing or unreadable input,
4 planning failure (a JSON object with a machine-readable ``reason`` is
printed on stdout).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import multiprocessing as mp
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .dataset import ObjectData, default_root, generate_object, list_objects, read_object, write_dataset_manifest, \
    write_object
from .errors import (ConfigError, EmptyRegion, MissingModel, NoCandidates, PartGraspError, PartTooSmall,
                     UnknownCategory, Unresolvable)
from .experiment import run_experiment
from .geometry import LabeledCloud
from .grasp import closing_box
from .grounding import RuleGrounder, TrainedGrounder
from .language import load_templates
from .pipeline import lift_mask, plan_grasp, prepare_scene, register_views
from .plyio import read_ply, write_ply
from .scoring import LearnedScorer
from .splits import Split, SampleKey, make_splits
from .training import fit_grounder, fit_scorer, grounding_cases

log = logging.getLogger("partgrasp")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_PLAN = 0, 2, 3, 4


class MissingInput(PartGraspError):
    pass


# ------------------------------------------------------------ helpers

def _config(args, overrides: dict | None = None) -> Config:
    extra = dict(overrides or {})
    if getattr(args, "seed", None) is not None:
        extra["seed"] = args.seed
    return load_config(args.config, extra)


def _data_root(args, cfg: Config) -> Path:
    root = getattr(args, "data", None) or cfg.data_root or default_root()
    if root is None:
        raise MissingInput("no dataset root: pass --data or set PARTGRASP_DATA")
    return Path(root)


def _dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_objects(root: Path) -> list[ObjectData]:
    if not root.is_dir():
        raise MissingInput(f"dataset root {root} does not exist")
    dirs = list_objects(root)
    if not dirs:
        raise MissingInput(f"no objects under {root}")
    return [read_object(d) for d in dirs]


def _sample_keys(objects: list[ObjectData]) -> list[SampleKey]:
    return [SampleKey(o.object_id, o.category, p) for o in objects for p in o.part_names]


def _load_split(path) -> Split:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise MissingInput(f"no split file at {path}") from None
    return Split(*([SampleKey(*s) for s in data[k]] for k in ("train", "val", "test")))


def _split_json(split: Split) -> dict:
    return {"digest": split.digest(), **{k: [list(s) for s in v] for k, v in split.parts().items()}}


# ------------------------------------------------------------ gen

def _gen_one(task):
    category, index, gen, hand, templates_path, out = task
    data = generate_object(category, index, gen, hand, templates=load_templates(templates_path))
    write_object(out, data)
    return data.object_id


def cmd_gen(args) -> int:
    overrides: dict = {"gen": {}}
    if args.categories:
        overrides["gen"]["categories"] = [c.strip() for c in args.categories.split(",") if c.strip()]
    if args.objects_per_category is not None:
        overrides["gen"]["objects_per_category"] = args.objects_per_category
    if args.placements is not None:
        overrides["gen"]["placements"] = args.placements
    if args.grasps_per_part is not None:
        overrides["gen"]["grasps_per_part"] = args.grasps_per_part
    if args.seed is not None:
        overrides["gen"]["seed"] = args.seed
    cfg = _config(args, overrides)
    out = Path(args.out or cfg.out or cfg.data_root or default_root() or "dataset")
    out.mkdir(parents=True, exist_ok=True)
    gen = cfg.gen
    tasks = [(c, i, gen, cfg.hand, cfg.templates, out) for c in gen.categories
             for i in range(gen.objects_per_category)]
    if args.jobs > 1:
        with mp.get_context("spawn").Pool(args.jobs) as pool:
            ids = pool.map(_gen_one, tasks, chunksize=1)
    else:
        ids = [_gen_one(t) for t in tasks]
    write_dataset_manifest(out, gen, ids)
    log.info("wrote %d objects to %s", len(ids), out)
    return EXIT_OK


# ------------------------------------------------------------ train

def cmd_train(args) -> int:
    cfg = _config(args)
    objects = _load_objects(_data_root(args, cfg))
    split = _load_split(args.split) if args.split else make_splits(_sample_keys(objects), cfg.split)
    out = Path(args.out or cfg.out or "models")
    out.mkdir(parents=True, exist_ok=True)
    train_parts = {(s.object_id, s.part) for s in split.train}
    train_objects = [o for o in objects if any((o.object_id, p) in train_parts for p in o.part_names)]
    ts = cfg.train
    cases = grounding_cases(train_objects, (ts.language_mode,), ts.placement, train_parts)
    if not cases:
        raise MissingInput("training split holds no grounding samples")
    grounder, g_curve = fit_grounder(cases, ts.grounder, cfg.seed)
    grounder.manifest["split"] = split.digest()
    grounder.save(out / "grounder.json")
    scorer, s_curve = fit_scorer(train_objects, cfg.hand, ts.scorer, cfg.seed, ts.placement)
    scorer.manifest["split"] = split.digest()
    scorer.save(out / "scorer.json")
    for name, curve in (("grounder_loss.csv", g_curve), ("scorer_loss.csv", s_curve)):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            w.writerows([i + 1, repr(v)] for i, v in enumerate(curve))
    _dump(out / "split.json", _split_json(split))
    log.info("trained on %d grounding samples; models in %s", len(cases), out)
    return EXIT_OK


# ------------------------------------------------------------ plan

def _box_edges(candidate, hand, per_edge: int = 20) -> np.ndarray:
    _, half = closing_box(hand)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half
    pts = []
    t = np.linspace(0.0, 1.0, per_edge)[:, None]
    for i in range(8):
        for j in range(i + 1, 8):
            if np.count_nonzero(corners[i] != corners[j]) == 1:
                pts.append(corners[i] + t * (corners[j] - corners[i]))
    local = np.vstack(pts)
    return local @ candidate.pose.rotation.T + candidate.pose.position


def write_annotated(path, scene, mask: np.ndarray, candidate, hand) -> None:
    box = _box_edges(candidate, hand)
    points = np.vstack([scene.cloud.points, box])
    labels = np.concatenate([mask.astype(np.int64), np.full(len(box), 2)])
    colors = np.full((len(points), 3), 160, dtype=np.uint8)
    colors[:len(mask)][mask] = (220, 40, 40)
    colors[len(mask):] = (40, 200, 40)
    write_ply(path, LabeledCloud(points, labels, up=scene.cloud.up), colors=colors)


def cmd_plan(args) -> int:
    cfg = _config(args)
    if not 1 <= len(args.clouds) <= 4:
        raise ConfigError("plan takes one to four PLY views")
    views = []
    for p in args.clouds:
        if not Path(p).is_file():
            raise MissingInput(f"cannot read {p}")
        views.append(read_ply(p)[0])
    if len(views) > 1:
        views = register_views(views)
    scene = prepare_scene(views, seed=cfg.seed)
    grounder = TrainedGrounder.load(args.model) if args.model else RuleGrounder()
    scorer = LearnedScorer.load(args.scorer) if args.scorer else None
    region = grounder.ground(scene.ground_cloud, args.instruction)
    mask = lift_mask(scene, region)
    res = plan_grasp(scene, mask, cfg.hand, cfg.sampler, scorer, args.policy, cfg.seed)
    out = {
        "pose": {"position": res.candidate.pose.position.tolist(),
                 "rotation": res.candidate.pose.rotation.tolist()},
        "contacts": [res.candidate.contact_left.tolist(), res.candidate.contact_right.tolist()],
        "score": res.score,
        "part": region.part_id,
        "object": region.object_id,
        "trials_used": res.trials_used,
        "candidates": len(res.candidates),
    }
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.ply:
        write_annotated(args.ply, scene, mask, res.candidate, cfg.hand)
    return EXIT_OK


# ------------------------------------------------------------ eval / export

def cmd_eval(args) -> int:
    cfg = _config(args)
    exp = cfg.experiment()
    objects = _load_objects(_data_root(args, cfg))
    models = Path(args.models) if args.models else None
    split_path = args.split or (models / "split.json" if models and (models / "split.json").exists() else None)
    split = _load_split(split_path) if split_path else make_splits(_sample_keys(objects), cfg.split)
    test_parts = {(s.object_id, s.part) for s in split.test}
    test_objects = [o for o in objects if any((o.object_id, p) in test_parts for p in o.part_names)]
    if not test_objects:
        raise MissingInput("test split is empty")
    grounder = scorer = None
    if exp.grounder == "trained" or exp.scorer == "learned":
        if models is None:
            raise MissingInput("--models is required for the trained grounder or learned scorer")
        if exp.grounder == "trained":
            grounder = TrainedGrounder.load(models / "grounder.json")
        if exp.scorer == "learned":
            scorer = LearnedScorer.load(models / "scorer.json")
    report = run_experiment(test_objects, exp, grounder, scorer, args.jobs, split.digest(),
                            cfg.eval.grounding_modes, test_parts)
    report.seeds["split"] = cfg.split.seed
    out = Path(args.out or cfg.out or "report")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.dumps())
    (out / "report.txt").write_text(report.to_text())
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_export(args) -> int:
    path = Path(args.report)
    if path.is_dir():
        path = path / "report.json"
    if not path.is_file():
        raise MissingInput(f"no report at {path}")
    report = json.loads(path.read_text())
    out = Path(args.out or path.parent)
    out.mkdir(parents=True, exist_ok=True)
    rows = report["grasping"]
    with open(out / "grasping.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        cols = sorted({k for r in rows.values() for k in r})
        w.writerow(["configuration", *cols])
        for key in rows:
            w.writerow([key, *(rows[key].get(c) for c in cols)])
    with open(out / "grounding.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "key", "accuracy", "part_avg_iou", "object_avg_iou", "instance_avg_iou", "n"])
        for table, entries in sorted(report["grounding"].items()):
            for key, g in entries.items():
                w.writerow([table, key, g["accuracy"], g["part_avg_iou"], g["object_avg_iou"],
                            g["instance_avg_iou"], g["n"]])
    return EXIT_OK


# ------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; unknown keys are rejected")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--out", help="output directory (or file for plan)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="partgrasp", description="Part-aware grasp planning from language.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--categories", help="comma-separated category list")
    g.add_argument("--objects-per-category", type=int)
    g.add_argument("--placements", type=int, help="random placements per object (4 views each)")
    g.add_argument("--grasps-per-part", type=int, help="labelled grasp candidates per part")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train the grounder and the learned scorer")
    t.add_argument("--data", help="dataset root (default: $PARTGRASP_DATA)")
    t.add_argument("--split", help="split JSON to use instead of computing one")
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", parents=[common], help="plan a grasp from 1-4 PLY views and an instruction")
    pl.add_argument("clouds", nargs="+", help="PLY views")
    pl.add_argument("-i", "--instruction", required=True, help="natural-language instruction")
    pl.add_argument("--model", help="trained grounder JSON (default: exemplar grounder)")
    pl.add_argument("--scorer", help="learned scorer JSON (default: analytic closure margin)")
    pl.add_argument("--policy", default="highest-score", choices=("highest-score", "random"))
    pl.add_argument("--ply", help="write an annotated PLY (region red, closing box green)")
    pl.set_defaults(func=cmd_plan)

    e = sub.add_parser("eval", parents=[common], help="run the grasp and grounding evaluation")
    e.add_argument("--data", help="dataset root (default: $PARTGRASP_DATA)")
    e.add_argument("--models", help="directory written by train")
    e.add_argument("--split", help="split JSON (default: models/split.json or computed)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", parents=[common], help="export a report as CSV")
    x.add_argument("report", help="report.json or the directory holding it")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args)
    except (ConfigError, UnknownCategory) as e:
        print(f"error: {e.reason}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, MissingModel, FileNotFoundError) as e:
        reason = e.reason if isinstance(e, PartGraspError) else type(e).__name__
        print(f"error: {reason}: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (EmptyRegion, NoCandidates, Unresolvable, PartTooSmall) as e:
        print(json.dumps({"error": e.reason, "message": str(e)}))
        return EXIT_PLAN
    except PartGraspError as e:
        print(f"error: {e.reason}: {e}", file=sys.stderr)
        return EXIT_INPUT if args.command in ("gen", "train", "eval") else EXIT_PLAN


if __name__ == "__main__":
    sys.exit(main())
