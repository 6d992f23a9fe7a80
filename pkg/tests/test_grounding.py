import numpy as np
import pytest

from partgrasp.errors import EmptyRegion, MissingModel, ShapeMismatch, TooFewPoints, Unresolvable
from partgrasp.geometry import LabeledCloud
from partgrasp.grasp import HandConfig, SamplerRules
from partgrasp.grounding import (GrounderTrainConfig, RuleGrounder, TrainedGrounder, featurize_language,
                                 featurize_points, language_slots, make_sample, threshold, train_grounder,
                                 truth_segmentation)
from partgrasp.metrics import iou
from partgrasp.mlp import MLP
from partgrasp.pipeline import plan_grasp
from partgrasp.shapes import category_parts
from partgrasp.training import object_scene


@pytest.fixture(scope="module")
def mug_scene(mug):
    return object_scene(mug)


@pytest.fixture(scope="module")
def rule():
    return RuleGrounder()


# ------------------------------------------------------------ rule grounder

def test_rule_grounder_finds_handle(mug, mug_scene, rule):
    cloud = mug_scene.ground_cloud
    region = rule.ground(cloud, "grasp the handle")
    truth = cloud.labels == mug.part_names.index("handle")
    assert region.part_id == "handle" and region.object_id == "mug"
    assert len(region) == len(cloud)
    assert iou(region.mask, truth) >= 0.9


def test_rule_grounder_affordance_only(mug, mug_scene, rule):
    region = rule.ground(mug_scene.ground_cloud, "hold it so I can drink")
    assert region.part_id == "handle"


def test_absent_part_gives_flagged_empty_mask(mug_scene, rule):
    region = rule.ground(mug_scene.ground_cloud, "grasp the blade of the mug")
    assert region.flagged and region.count == 0
    assert len(region) == len(mug_scene.ground_cloud)


def test_unparseable_instruction(mug_scene, rule):
    with pytest.raises(Unresolvable):
        rule.ground(mug_scene.ground_cloud, "hello there")


def test_truth_segmentation_is_exact(mug, mug_scene, rule):
    cloud = mug_scene.ground_cloud
    for part in category_parts("mug"):
        region = rule.ground(cloud, f"grasp the {part}", truth_segmentation(cloud, "mug"))
        assert np.array_equal(region.mask, cloud.labels == mug.part_names.index(part))


# ------------------------------------------------------------ features

def test_point_features_translation_invariant(mug_scene):
    cloud = mug_scene.ground_cloud
    shifted = LabeledCloud(cloud.points + [0.3, -0.2, 0.1], cloud.labels, cloud.view_pose, cloud.up,
                           None if cloud.origins is None else cloud.origins + [0.3, -0.2, 0.1])
    a = featurize_points(cloud)
    b = featurize_points(shifted)
    assert a.shape == (len(cloud), 9)
    assert np.allclose(a, b, atol=1e-8)


def test_plane_is_flat(rng):
    pts = np.column_stack([rng.uniform(-0.1, 0.1, (500, 2)), np.zeros(500)])
    f = featurize_points(LabeledCloud(pts, np.zeros(500, int)))
    assert np.all(f[:, 5] < 0.05)


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        featurize_points(LabeledCloud(np.zeros((5, 3)), np.zeros(5, int)))


def test_language_features():
    assert np.array_equal(featurize_language("grasp the mug's grip"), featurize_language("grasp the cup's handle"))
    assert not np.array_equal(featurize_language("grasp the handle"), featurize_language("grasp the body"))
    assert np.count_nonzero(language_slots("")) == 0
    assert np.array_equal(featurize_language("cut the bread"), featurize_language("cut the bread"))


def test_threshold_half_is_positive():
    assert threshold([0.49, 0.5, 0.51]).tolist() == [False, True, True]


def test_empty_region_cannot_be_planned(mug_scene):
    with pytest.raises(EmptyRegion):
        plan_grasp(mug_scene, np.zeros(len(mug_scene.cloud), bool), HandConfig(), SamplerRules())


# ------------------------------------------------------------ perceptron

def test_mlp_gradients_match_finite_differences(rng):
    net = MLP((6, 8, 5, 1), seed=3)
    x = rng.normal(size=(20, 6))
    y = rng.integers(0, 2, 20)
    _, grads = net.loss_and_grads(x, y)
    flat = net.get_flat()
    analytic = np.concatenate([g.ravel() for g in grads])
    h = 1e-6
    for i in rng.choice(len(flat), min(100, len(flat)), replace=False):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        net.set_flat(up)
        lu, _ = net.loss_and_grads(x, y)
        net.set_flat(dn)
        ld, _ = net.loss_and_grads(x, y)
        net.set_flat(flat)
        numeric = (lu - ld) / (2 * h)
        assert abs(numeric - analytic[i]) <= 1e-4 * max(1.0, abs(numeric), abs(analytic[i]))


@pytest.fixture(scope="module")
def mug_sample(mug, mug_scene):
    cloud = mug_scene.ground_cloud
    return make_sample(cloud, "grasp the handle", cloud.labels == mug.part_names.index("handle"), n=0)


def test_memorizes_one_sample(mug_sample):
    cfg = GrounderTrainConfig(epochs=400, lr=3e-3, points_per_sample=None)
    model, curve = train_grounder([mug_sample], cfg, seed=0)
    assert curve[-1] < 0.05
    assert curve[-1] < curve[0]


def test_training_is_deterministic(mug_sample):
    cfg = GrounderTrainConfig(epochs=20)
    a, ca = train_grounder([mug_sample], cfg, seed=4)
    b, cb = train_grounder([mug_sample], cfg, seed=4)
    assert ca == cb
    assert np.array_equal(a.net.get_flat(), b.net.get_flat())


def test_shape_mismatch(mug_sample, mug_scene):
    with pytest.raises(ShapeMismatch):
        make_sample(mug_scene.ground_cloud, "x", np.zeros(3, bool))
    bad = mug_sample._replace(points=mug_sample.points[:, :4])
    with pytest.raises(ShapeMismatch):
        train_grounder([mug_sample, bad], GrounderTrainConfig(epochs=1))
    with pytest.raises(ShapeMismatch):
        train_grounder([])


def test_model_roundtrip(mug_sample, mug_scene, tmp_path):
    model, _ = train_grounder([mug_sample], GrounderTrainConfig(epochs=5), seed=1)
    path = tmp_path / "g.json"
    model.save(path)
    back = TrainedGrounder.load(path)
    cloud = mug_scene.ground_cloud
    assert np.array_equal(back.predict_proba(cloud, "grasp the handle"), model.predict_proba(cloud, "grasp the handle"))
    assert back.manifest["data_digest"] == model.manifest["data_digest"]
    with pytest.raises(MissingModel):
        TrainedGrounder.load(tmp_path / "absent.json")
