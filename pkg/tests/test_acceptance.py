"""Acceptance criteria, one test each, checked at their stated tolerances and time budgets."""
import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (brute_min_distance, dense_wrenches, mentions, nested_metrics, point_triangle_distance,
                     positively_spans, set_iou)
from partgrasp.cli import EXIT_OK, main
from partgrasp.dataset import GenConfig, generate_object
from partgrasp.errors import NoCandidates, PartTooSmall
from partgrasp.experiment import ExperimentConfig, mode_study, run_experiment
from partgrasp.grasp import SUCCESS, GraspCandidate, GraspPose, HandConfig, SamplerRules, force_closure_label, \
    sample_antipodal
from partgrasp.grounding import GrounderTrainConfig, make_sample, train_grounder
from partgrasp.language import MODES, default_lexicon, generate_sentence, leaked_slots
from partgrasp.metrics import grounding_metrics, iou
from partgrasp.mlp import MLP
from partgrasp.plyio import write_ply
from partgrasp.shapes import CATALOG, category_parts, make_shape, sample_omni_with_normals
from partgrasp.training import object_scene
from partgrasp.wrench import MARGIN_EPS, force_closure

CORE = GenConfig().categories
HIDDEN = {"known_all": (), "one_best_part": (), "part_object_fragment": ("affordance",),
          "part_known_object_unknown": ("object",), "part_unknown_object_known": ("part",),
          "part_unknown_object_unknown": ("object", "part")}


class Clock:
    def __init__(self):
        self.start = time.perf_counter()

    @property
    def seconds(self):
        return time.perf_counter() - self.start


@pytest.fixture(scope="module")
def desk_run():
    """160 objects over the 8 core categories and the full grasp grid on them."""
    clock = Clock()
    config = GenConfig(objects_per_category=20, placements=1, grasps_per_part=0)
    objects = [generate_object(c, i, config) for c in config.categories for i in range(20)]
    report = run_experiment(objects, ExperimentConfig())
    return objects, report.to_json()["grasping"], clock.seconds


def test_criterion_1_metric_oracles(verdict):
    clock = Clock()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 4097))
        p, t = rng.random(n) < rng.random(), rng.random(n) < rng.random()
        worst = max(worst, abs(iou(p, t) - set_iou(p, t)))
    for _ in range(1000):
        results = []
        for _ in range(int(rng.integers(1, 6))):
            n = int(rng.integers(1, 200))
            results.append((rng.random(n) < 0.5, rng.random(n) < 0.5, f"p{rng.integers(3)}", f"o{rng.integers(3)}"))
        m = grounding_metrics(results)
        got = (m.accuracy, m.part_avg_iou, m.object_avg_iou, m.instance_avg_iou)
        worst = max(worst, *np.abs(np.subtract(got, nested_metrics(results))))
    example = []
    for hits, size, part in ((1, 5, "A"), (2, 5, "A"), (9, 10, "B")):
        pred = np.arange(size) < hits
        example.append((pred, np.ones(size, bool), part, "obj"))
    m = grounding_metrics(example)
    ok = (worst <= 1e-12 and abs(m.part_avg_iou - 0.6) <= 1e-12 and abs(m.instance_avg_iou - 0.5) <= 1e-12
          and clock.seconds < 10)
    verdict(1, ok, f"max deviation {worst:.1e}, part {m.part_avg_iou:.3f}, instance {m.instance_avg_iou:.3f}, "
                   f"{clock.seconds:.1f}s")


def _tilted(normal, degrees, rng):
    axis = np.cross(normal, rng.normal(size=3))
    axis /= np.linalg.norm(axis)
    a = np.radians(degrees)
    return normal * np.cos(a) + np.cross(axis, normal) * np.sin(a)


def test_criterion_2_force_closure_oracle(verdict):
    clock = Clock()
    rng = np.random.default_rng(2)
    mu = 0.5
    disagreements = positives = 0
    for _ in range(200):
        c1 = rng.uniform(-0.05, 0.05, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        c2 = c1 + d * rng.uniform(0.005, 0.08)
        n1 = _tilted(-d, rng.uniform(0, 50), rng)
        n2 = _tilted(d, rng.uniform(0, 50), rng)
        ok, delta = force_closure(c1, n1, c2, n2, mu)
        want = positively_spans(dense_wrenches(c1, n1, c2, n2, mu))
        positives += want
        disagreements += ok != want and abs(delta) >= MARGIN_EPS
    cube, _ = force_closure(np.array([-0.02, 0, 0]), np.array([-1.0, 0, 0]),
                            np.array([0.02, 0, 0]), np.array([1.0, 0, 0]), mu)
    face, _ = force_closure(np.array([0.0, 0, 0.02]), np.array([0, 0, 1.0]),
                            np.array([0.01, 0, 0.02]), np.array([0, 0, 1.0]), mu)
    ok = disagreements == 0 and cube and not face and clock.seconds < 30
    verdict(2, ok, f"{disagreements} disagreements over 200 pairs ({positives} in closure), cube {cube}, "
                   f"same face {face}, {clock.seconds:.1f}s")


def test_criterion_3_region_sampling_contract(verdict):
    clock = Clock()
    hand, rules = HandConfig(), SamplerRules()
    worst = 0.0
    max_trials = max_count = returned = 0
    for i in range(100):
        category = CORE[i % len(CORE)]
        mesh = make_shape(category, seed=i)
        cloud, normals = sample_omni_with_normals(mesh, 10_000, seed=i)
        label = (i // len(CORE)) % len(mesh.part_names)
        region = cloud.labels == label
        try:
            res = sample_antipodal(cloud, normals, region, hand, rules, seed=i)
        except NoCandidates as e:
            max_trials = max(max_trials, e.trials_used)
            continue
        except PartTooSmall:
            continue
        pos = np.array([c.pose.position for c in res.candidates])
        worst = max(worst, brute_min_distance(pos, cloud.points[region]).max())
        max_trials = max(max_trials, res.trials_used)
        max_count = max(max_count, len(res.candidates))
        returned += 1
    ok = worst <= 0.005 and max_trials <= 150 and max_count <= 20 and returned > 50 and clock.seconds < 120
    verdict(3, ok, f"{returned}/100 objects with candidates, max center distance {worst * 1000:.2f} mm, "
                   f"max trials {max_trials}, max candidates {max_count}, {clock.seconds:.0f}s")


def test_criterion_4_part_specific_improvement(desk_run, verdict):
    objects, rows, seconds = desk_run
    part = rows["part/highest-score/best-part"]["part_specific_sr"]
    glob = rows["global/highest-score/best-part"]["part_specific_sr"]
    ok = len(objects) >= 160 and part >= 1.5 * glob and seconds < 600
    verdict(4, ok, f"part {part:.3f} vs global {glob:.3f} (ratio {part / max(glob, 1e-12):.2f}), "
                   f"{len(objects)} objects, {seconds:.0f}s")


def test_criterion_5_trial_cost_reduction(desk_run, verdict):
    _, rows, _ = desk_run
    part = rows["part/highest-score/best-part"]["trial_cost"]
    glob = rows["global/highest-score/best-part"]["trial_cost"]
    saving = 1 - part / glob
    verdict(5, saving >= 0.10, f"trial cost {part:.1f} vs {glob:.1f} ({saving:.1%} lower)")


def test_criterion_6_dominance(desk_run, verdict):
    _, rows, _ = desk_run
    bad = [k for k, r in rows.items() if r["part_specific_sr"] > r["part_agnostic_sr"]]
    verdict(6, not bad and len(rows) == 8, f"{len(rows)} rows, violations {bad}")


def test_criterion_7_trainable_grounder(desk_run, mug, verdict):
    clock = Clock()
    rng = np.random.default_rng(7)
    net = MLP((10, 16, 8, 1), seed=7)
    x, y = rng.normal(size=(32, 10)), rng.integers(0, 2, 32)
    _, grads = net.loss_and_grads(x, y)
    analytic = np.concatenate([g.ravel() for g in grads])
    flat = net.get_flat()
    worst = 0.0
    for i in rng.choice(len(flat), 100, replace=False):
        shifted = []
        for step in (1e-6, -1e-6):
            w = flat.copy()
            w[i] += step
            net.set_flat(w)
            shifted.append(net.loss_and_grads(x, y)[0])
        numeric = (shifted[0] - shifted[1]) / 2e-6
        worst = max(worst, abs(numeric - analytic[i]) / max(1.0, abs(numeric), abs(analytic[i])))
    net.set_flat(flat)

    cloud = object_scene(mug).ground_cloud
    one = make_sample(cloud, "grasp the handle", cloud.labels == mug.part_names.index("handle"), n=0)
    _, curve = train_grounder([one], GrounderTrainConfig(epochs=400, lr=3e-3, points_per_sample=None))

    objects = desk_run[0]
    study = mode_study(objects, ("known_all", "part_unknown_object_unknown"), range(3))
    known = float(np.mean([m.accuracy for m in study["known_all"]]))
    hidden = float(np.mean([m.accuracy for m in study["part_unknown_object_unknown"]]))
    known_iou = float(np.mean([m.instance_avg_iou for m in study["known_all"]]))
    ok = (worst <= 1e-4 and curve[-1] < 0.05 and known > 0.85 and known_iou > 0.5 and known >= hidden - 0.02
          and clock.seconds < 900)
    verdict(7, ok, f"gradient error {worst:.1e}, one-sample loss {curve[-1]:.3f}, known_all accuracy {known:.3f} "
                   f"(instance IoU {known_iou:.3f}) vs affordance-only {hidden:.3f}, {clock.seconds:.0f}s")


def test_criterion_8_dataset_structure(verdict):
    clock = Clock()
    config = GenConfig(objects_per_category=2)
    objects = [generate_object(c, i, config) for c in config.categories for i in range(2)]
    shapes_ok = all(len(o.obs.omni) == 10_000 and len(o.obs.views) == 12
                    and all(len(v) == 4096 for v in o.obs.views) for o in objects)
    counts_ok = all(k in o.grasp_sets and len(o.grasp_sets[k].candidates) == 60
                    for o in objects for k in range(len(o.part_names)))
    labels = np.concatenate([[c.label == SUCCESS for gs in o.grasp_sets.values() for c in gs.candidates]
                             for o in objects])
    positive = float(labels.mean())

    lex = default_lexicon()
    table = {"object": lex.objects, "part": lex.parts, "affordance": lex.affordances}
    rng = np.random.default_rng(8)
    cats = sorted(CATALOG)
    leaks = 0
    for mode in MODES:
        for _ in range(10_000):
            c = cats[rng.integers(len(cats))]
            parts = category_parts(c)
            p = parts[rng.integers(len(parts))]
            affs = lex.affordances_for(c, p)
            ins = generate_sentence(c, p, affs[rng.integers(len(affs))], mode, int(rng.integers(2**62)))
            truth = {"object": ins.object_id, "part": ins.part_id, "affordance": ins.affordance_id}
            leaked = any(mentions(ins.text, table[s][truth[s]]) for s in HIDDEN[ins.text_mode])
            leaks += leaked or bool(leaked_slots(ins))
    stored = sum(any(mentions(s.text, table[k][{"object": s.object_id, "part": s.part_id,
                                                "affordance": s.affordance_id}[k]]) for k in HIDDEN[s.text_mode])
                 for o in objects for s in o.sentences)
    ok = shapes_ok and counts_ok and 0.3 <= positive <= 0.7 and leaks == 0 and stored == 0 and clock.seconds < 600
    verdict(8, ok, f"13 observations {shapes_ok}, 60 per part {counts_ok}, positive fraction {positive:.3f}, "
                   f"leaks {leaks} in {10_000 * len(MODES)} + {stored} stored, {clock.seconds:.0f}s")


def _same_tree(a: Path, b: Path) -> bool:
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    return files_a == files_b and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files_a)


def test_criterion_9_determinism(tmp_path, verdict):
    gen = ["gen", "--categories", "mug,knife", "--objects-per-category", "2", "--placements", "1",
           "--grasps-per-part", "4", "--seed", "3"]
    codes = [main([*gen, "--out", str(tmp_path / name), "--jobs", jobs])
             for name, jobs in (("g1", "1"), ("g2", "1"), ("g8", "8"))]
    gen_ok = _same_tree(tmp_path / "g1", tmp_path / "g2") and _same_tree(tmp_path / "g1", tmp_path / "g8")
    cfg = tmp_path / "eval.json"
    cfg.write_text(json.dumps({"split": {"ratios": [0.5, 0.0, 0.5]},
                               "eval": {"grounding_modes": ["known_all", "part_object_fragment"]}}))
    evals = ["eval", "--data", str(tmp_path / "g1"), "--config", str(cfg), "--seed", "3"]
    codes += [main([*evals, "--out", str(tmp_path / name), "--jobs", jobs])
              for name, jobs in (("e1", "1"), ("e2", "1"), ("e8", "8"))]
    eval_ok = _same_tree(tmp_path / "e1", tmp_path / "e2") and _same_tree(tmp_path / "e1", tmp_path / "e8")
    ok = gen_ok and eval_ok and all(c == EXIT_OK for c in codes)
    verdict(9, ok, f"gen identical {gen_ok}, eval identical {eval_ok}, exit codes {codes}")


def test_criterion_10_end_to_end_plan(mug, tmp_path, capsys, verdict):
    paths = []
    for k, view in enumerate(mug.views(0)):
        paths.append(str(tmp_path / f"view{k}.ply"))
        write_ply(paths[-1], view)
    clock = Clock()
    code = main(["plan", *paths, "-i", "grasp the handle so I can drink", "--out", str(tmp_path / "plan.json")])
    seconds = clock.seconds
    capsys.readouterr()
    assert code == EXIT_OK
    plan = json.loads((tmp_path / "plan.json").read_text())
    pose = GraspPose(plan["pose"]["position"], plan["pose"]["rotation"])
    handle = mug.part_names.index("handle")
    tris = mug.mesh.triangles
    dist = point_triangle_distance(pose.position[None], tris)[0]
    on_handle = dist[mug.mesh.labels == handle].min() <= 0.005 and mug.mesh.labels[np.argmin(dist)] == handle
    candidate = GraspCandidate(pose, np.array(plan["contacts"][0]), np.array(plan["contacts"][1]), handle)
    up = mug.views(0)[0].up
    label = force_closure_label(candidate, mug.obs.omni, mug.obs.omni_normals, HandConfig(), up=up)
    ok = plan["part"] == "handle" and on_handle and label == SUCCESS and seconds < 10
    verdict(10, ok, f"part {plan['part']}, handle distance {dist[mug.mesh.labels == handle].min() * 1000:.2f} mm, "
                    f"closure {label}, {seconds:.1f}s")
