"""Grasp experiment runner: sampling area x selection policy x best-part instructions.

Each object contributes one trial per configuration. Sampler runs are shared
across selection policies so the two policies choose from the same
candidates. Sampler errors (empty region, no candidates) count as failed
trials with the trial budget they consumed.
"""
from __future__ import annotations

import itertools
import json
import logging
import multiprocessing as mp
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import ObjectData
from .errors import ConfigError, EmptyRegion, MissingModel, NoCandidates, PartGraspError
from .geometry import SpatialIndex, fps_downsample
from .grasp import SUCCESS, HandConfig, SamplerRules, force_closure_label, sample_antipodal, select_grasp
from .grounding import Exemplar, GrounderTrainConfig, RegionMask, RuleGrounder, TrainedGrounder, threshold
from .language import MODES, generate_sentence
from .metrics import (GraspMetrics, GroundingMetrics, GroundingResult, TrialOutcome, grasp_metrics, grounding_metrics,
                      relative_increase)
from .pipeline import Scene, lift_mask
from .scoring import AnalyticScorer, LearnedScorer, score_candidates
from .splits import SampleKey, SplitSpec, make_splits
from .training import fit_grounder, grounding_cases, object_scene

log = logging.getLogger(__name__)

AREAS = ("part", "global")
SELECTIONS = ("highest-score", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    areas: tuple[str, ...] = AREAS
    selections: tuple[str, ...] = SELECTIONS
    best_part: tuple[bool, ...] = (False, True)
    language_mode: str = "part_object_fragment"
    scorer: str = "analytic"
    grounder: str = "rule"
    placement: int = 0
    seed: int = 0
    hand: HandConfig = HandConfig()
    rules: SamplerRules = SamplerRules()

    def __post_init__(self):
        if not self.areas or not self.selections or not self.best_part:
            raise ConfigError("experiment grid is empty")
        for a in self.areas:
            if a not in AREAS:
                raise ConfigError(f"unknown sampling area {a!r}")
        for s in self.selections:
            if s not in SELECTIONS:
                raise ConfigError(f"unknown selection policy {s!r}")
        if self.scorer not in ("analytic", "learned"):
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.language_mode not in MODES:
            raise ConfigError(f"unknown language mode {self.language_mode!r}")
        if self.grounder not in ("rule", "trained"):
            raise ConfigError(f"unknown grounder {self.grounder!r}")

    def grid(self) -> list[tuple[str, str, bool]]:
        return list(itertools.product(self.areas, self.selections, self.best_part))

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def row_key(area: str, selection: str, best_part: bool) -> str:
    return f"{area}/{selection}/{'best-part' if best_part else 'instruction'}"


def _object_rng(seed: int, object_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**63 - 1), zlib.crc32(object_id.encode())])


def pick_instruction(obj: ObjectData, best_part: bool, mode: str, rng: np.random.Generator):
    want = "one_best_part" if best_part else mode
    pool = [s for s in obj.sentences if s.mode == want]
    if pool:
        return pool[int(rng.integers(len(pool)))]
    from .language import default_lexicon
    lex = default_lexicon()
    part = lex.best_part[obj.category] if best_part else obj.part_names[int(rng.integers(len(obj.part_names)))]
    aff = lex.affordances_for(obj.category, part)[0]
    return generate_sentence(obj.category, part, aff, want, int(rng.integers(2**62)))


def grasp_trial(scene: Scene, region_mask: np.ndarray, truth_label: int, omni, omni_normals,
                omni_index: SpatialIndex, hand: HandConfig, rules: SamplerRules, scorer, policies,
                seed: int) -> dict[str, TrialOutcome]:
    """Outcome per selection policy for one sampler run."""
    rng = np.random.default_rng(seed)
    sample_seed = int(rng.integers(2**62))
    select_seeds = {p: int(rng.integers(2**62)) for p in policies}
    try:
        if not np.any(region_mask):
            raise EmptyRegion("grounded region is empty")
        res = sample_antipodal(scene.cloud, scene.normals, region_mask, hand, rules, sample_seed, scene.index)
    except EmptyRegion as e:
        return {p: TrialOutcome(False, False, 0, e.reason) for p in policies}
    except NoCandidates as e:
        return {p: TrialOutcome(False, False, e.trials_used, e.reason) for p in policies}
    scores = score_candidates(res.candidates, scene.cloud, scene.normals, hand, scorer, scene.index)
    out = {}
    for p in policies:
        c = res.candidates[select_grasp(res.candidates, scores, p, select_seeds[p])]
        ok = force_closure_label(c, omni, omni_normals, hand, omni_index, up=scene.cloud.up) == SUCCESS
        part_ok = int(omni.labels[omni_index.nearest(c.pose.position)[1]]) == truth_label
        out[p] = TrialOutcome(bool(part_ok), bool(ok), res.trials_used)
    return out


def _grounder_for(obj: ObjectData, config: ExperimentConfig, model):
    if config.grounder == "trained":
        return model
    exemplar = fps_downsample(obj.obs.omni, 2048, 0)
    return RuleGrounder({obj.category: Exemplar(obj.category, exemplar, obj.part_names)}, search=False)


def run_object(obj: ObjectData, config: ExperimentConfig, grounder_model=None, scorer_model=None) -> dict:
    rng = _object_rng(config.seed, obj.object_id)
    scene = object_scene(obj, config.placement)
    omni_index = SpatialIndex(obj.obs.omni.points)
    scorer = scorer_model if config.scorer == "learned" else AnalyticScorer()
    grounder = _grounder_for(obj, config, grounder_model)
    trials, grounding = {}, {}
    global_run = None
    for bp in config.best_part:
        ins = pick_instruction(obj, bp, config.language_mode, rng)
        truth = obj.part_names.index(ins.part_id)
        try:
            region: RegionMask = grounder.ground(scene.ground_cloud, ins.text)
        except PartGraspError as e:
            log.info("%s: grounding failed (%s)", obj.object_id, e.reason)
            region = RegionMask(np.zeros(len(scene.ground_cloud), bool), flagged=True)
        grounding[bp] = GroundingResult(region.mask, scene.ground_cloud.labels == truth, ins.part_id, obj.category)
        seeds = {a: int(rng.integers(2**62)) for a in AREAS}
        for area in config.areas:
            if area == "part":
                mask = lift_mask(scene, region)
                run = grasp_trial(scene, mask, truth, obj.obs.omni, obj.obs.omni_normals, omni_index,
                                  config.hand, config.rules, scorer, config.selections, seeds[area])
            else:
                # the global sampler ignores the instruction; rescore only part correctness
                if global_run is None:
                    global_run = _global_candidates(scene, config, scorer, seeds[area])
                run = _judge_global(global_run, truth, obj, omni_index, scene, config)
            for sel, outcome in run.items():
                trials[row_key(area, sel, bp)] = outcome
    return {"object_id": obj.object_id, "category": obj.category, "trials": trials, "grounding": grounding}


def _global_candidates(scene: Scene, config: ExperimentConfig, scorer, seed: int):
    rng = np.random.default_rng(seed)
    sample_seed = int(rng.integers(2**62))
    select_seeds = {p: int(rng.integers(2**62)) for p in config.selections}
    try:
        res = sample_antipodal(scene.cloud, scene.normals, np.ones(len(scene.cloud), bool), config.hand,
                               config.rules, sample_seed, scene.index)
    except NoCandidates as e:
        return e
    scores = score_candidates(res.candidates, scene.cloud, scene.normals, config.hand, scorer, scene.index)
    chosen = {p: res.candidates[select_grasp(res.candidates, scores, p, select_seeds[p])] for p in config.selections}
    return chosen, res.trials_used


def _judge_global(run, truth: int, obj: ObjectData, omni_index, scene, config) -> dict[str, TrialOutcome]:
    if isinstance(run, PartGraspError):
        return {p: TrialOutcome(False, False, getattr(run, "trials_used", 0), run.reason)
                for p in config.selections}
    chosen, trials_used = run
    out = {}
    for p, c in chosen.items():
        ok = force_closure_label(c, obj.obs.omni, obj.obs.omni_normals, config.hand, omni_index,
                                 up=scene.cloud.up) == SUCCESS
        part_ok = int(obj.obs.omni.labels[omni_index.nearest(c.pose.position)[1]]) == truth
        out[p] = TrialOutcome(bool(part_ok), bool(ok), trials_used)
    return out


# ------------------------------------------------------------ aggregation

@dataclass
class Report:
    config: dict
    split_hash: str | None
    object_ids: list[str]
    rows: dict[str, dict]
    grounding: dict[str, dict]
    per_category: dict[str, dict] = field(default_factory=dict)
    grounding_by_mode: dict[str, dict] = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"config": self.config, "split_hash": self.split_hash,
                "seeds": {"experiment": self.config["seed"], **self.seeds},
                "objects": self.object_ids, "grasping": self.rows,
                "grounding": {"grasp_instructions": self.grounding, "by_mode": self.grounding_by_mode},
                "per_category": self.per_category}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def to_text(self) -> str:
        head = (f"{'sampling area':<14} {'selection':<14} {'best part':<10} {'agnostic SR':>12} "
                f"{'rel. inc.':>10} {'specific SR':>12} {'rel. inc.':>10} {'trial cost':>11}")
        lines = [head, "-" * len(head)]
        for key, r in self.rows.items():
            area, sel, bp = key.split("/")
            ri_a = "" if r.get("relative_increase_agnostic") is None else f"{r['relative_increase_agnostic']:.3f}"
            ri_s = "" if r.get("relative_increase_specific") is None else f"{r['relative_increase_specific']:.3f}"
            lines.append(f"{area:<14} {sel:<14} {('yes' if bp == 'best-part' else 'no'):<10} "
                         f"{r['part_agnostic_sr']:>12.3f} {ri_a:>10} {r['part_specific_sr']:>12.3f} "
                         f"{ri_s:>10} {r['trial_cost']:>11.3f}")
        for title, table in (("instructions", self.grounding), ("language mode", self.grounding_by_mode)):
            if not table:
                continue
            lines.append("")
            g_head = (f"{title:<28} {'accuracy':>9} {'part IoU':>9} {'object IoU':>11} "
                      f"{'instance IoU':>13} {'n':>5}")
            lines += [g_head, "-" * len(g_head)]
            for key, g in table.items():
                lines.append(f"{key:<28} {g['accuracy']:>9.3f} {g['part_avg_iou']:>9.3f} "
                             f"{g['object_avg_iou']:>11.3f} {g['instance_avg_iou']:>13.3f} {g['n']:>5d}")
        return "\n".join(lines) + "\n"


def _row(metrics: GraspMetrics) -> dict:
    d = metrics.as_dict()
    d.pop("relative_increase", None)
    return d


def aggregate(results: list[dict], config: ExperimentConfig, split_hash: str | None = None) -> Report:
    results = sorted(results, key=lambda r: r["object_id"])
    rows = {}
    for area, sel, bp in config.grid():
        key = row_key(area, sel, bp)
        rows[key] = _row(grasp_metrics([r["trials"][key] for r in results]))
    for area, bp in itertools.product(config.areas, config.best_part):
        hi, lo = rows.get(row_key(area, "highest-score", bp)), rows.get(row_key(area, "random", bp))
        for r in (hi, lo):
            if r is not None:
                r["relative_increase_agnostic"] = None
                r["relative_increase_specific"] = None
        if hi is not None and lo is not None:
            for r in (hi, lo):
                r["relative_increase_agnostic"] = relative_increase(hi["part_agnostic_sr"], lo["part_agnostic_sr"])
                r["relative_increase_specific"] = relative_increase(hi["part_specific_sr"], lo["part_specific_sr"])
    grounding = {}
    for bp in config.best_part:
        g = grounding_metrics([r["grounding"][bp] for r in results])
        grounding["best-part" if bp else "instruction"] = g.as_dict()
    per_cat = {}
    for cat in sorted({r["category"] for r in results}):
        sub = [r for r in results if r["category"] == cat]
        per_cat[cat] = {row_key(a, s, b): _row(grasp_metrics([r["trials"][row_key(a, s, b)] for r in sub]))
                        for a, s, b in config.grid()}
    return Report(config.to_json(), split_hash, [r["object_id"] for r in results], rows, grounding, per_cat)


def _work(args):
    obj, config, g_model, s_model = args
    return run_object(obj, config, g_model, s_model)


def run_experiment(objects: list[ObjectData], config: ExperimentConfig = ExperimentConfig(),
                   grounder_model: TrainedGrounder | None = None, scorer_model: LearnedScorer | None = None,
                   jobs: int = 1, split_hash: str | None = None, grounding_modes=(),
                   grounding_parts: set[tuple[str, str]] | None = None) -> Report:
    """Run every grid configuration on every object and aggregate.

    Objects are processed independently (in ``jobs`` worker processes) and
    reduced in sorted object order, so the report does not depend on ``jobs``.
    ``grounding_parts`` limits the per-mode grounding table to those
    (object_id, part) pairs, e.g. the test split.
    """
    if config.grounder == "trained" and grounder_model is None:
        raise MissingModel("trained grounder requested but no model given")
    if config.scorer == "learned" and scorer_model is None:
        raise MissingModel("learned scorer requested but no model given")
    tasks = [(o, config, grounder_model, scorer_model) for o in objects]
    if jobs > 1 and len(tasks) > 1:
        with mp.get_context("spawn").Pool(jobs) as pool:
            results = pool.map(_work, tasks, chunksize=1)
    else:
        results = [_work(t) for t in tasks]
    report = aggregate(results, config, split_hash)
    if grounding_modes:
        model = grounder_model if config.grounder == "trained" else None
        report.grounding_by_mode = grounding_table(objects, grounding_modes, model, config.placement,
                                                   grounding_parts)
    return report


# ------------------------------------------------------------ grounding evaluation

def evaluate_grounding(cases, model: TrainedGrounder) -> GroundingMetrics:
    """Metrics of a trained grounder on precomputed grounding cases."""
    return grounding_metrics([GroundingResult(threshold(model.predict_sample(c.sample)), c.sample.mask,
                                              c.part_id, c.category) for c in cases])


def grounding_table(objects: list[ObjectData], modes, model: TrainedGrounder | None = None,
                    placement: int = 0, parts=None) -> dict[str, dict]:
    """Grounding metrics per language mode (rule grounder on the object's own exemplar when no model)."""
    out = {}
    for mode in modes:
        if model is not None:
            cases = grounding_cases(objects, (mode,), placement, parts)
            if cases:
                out[mode] = evaluate_grounding(cases, model).as_dict()
            continue
        results = []
        for obj in objects:
            cloud = object_scene(obj, placement).ground_cloud
            grounder = _grounder_for(obj, ExperimentConfig(), None)
            for s in obj.sentences:
                if s.mode != mode or (parts is not None and (obj.object_id, s.part_id) not in parts):
                    continue
                try:
                    mask = grounder.ground(cloud, s.text).mask
                except PartGraspError:
                    mask = np.zeros(len(cloud), bool)
                results.append(GroundingResult(mask, cloud.labels == obj.part_names.index(s.part_id),
                                               s.part_id, obj.category))
        if results:
            out[mode] = grounding_metrics(results).as_dict()
    return out


def mode_study(objects: list[ObjectData], modes, seeds, spec: SplitSpec = SplitSpec(),
               train_config: GrounderTrainConfig = GrounderTrainConfig(),
               placement: int = 0) -> dict[str, list[GroundingMetrics]]:
    """Train and test one grounder per (split seed, language mode); held-out metrics per mode.

    Training and test sentences share the mode. Scenes are prepared once and
    reused across seeds and modes.
    """
    cases = grounding_cases(objects, tuple(modes), placement)
    keys = sorted({SampleKey(o.object_id, o.category, p) for o in objects for p in o.part_names})
    out: dict[str, list[GroundingMetrics]] = {m: [] for m in modes}
    for seed in seeds:
        split = make_splits(keys, replace(spec, seed=seed))
        train = {(s.object_id, s.part) for s in split.train}
        test = {(s.object_id, s.part) for s in split.test}
        for mode in modes:
            fit = [c for c in cases if c.mode == mode and (c.object_id, c.part_id) in train]
            held = [c for c in cases if c.mode == mode and (c.object_id, c.part_id) in test]
            model, _ = fit_grounder(fit, train_config, seed)
            out[mode].append(evaluate_grounding(held, model))
            log.info("seed %d %s: %s", seed, mode, out[mode][-1])
    return out
