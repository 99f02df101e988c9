import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from propgen.data import load_annotations, load_tree, validate_tree
from propgen.errors import DataError
from propgen.fusion import fuse_detections_to_proposals
from propgen.metrics import average_recall_at_k
from propgen.sim import (
    DetectorModel,
    SimConfig,
    adjusted_rand_index,
    generate_world,
    group_heads,
    kernel,
    simulate_detections,
)


@pytest.fixture(scope="module")
def world():
    return generate_world(SimConfig(n_images=120), seed=4)


def test_generation_is_deterministic(tmp_path):
    a = generate_world(SimConfig(n_images=30), seed=9).write(tmp_path / "a")
    b = generate_world(SimConfig(n_images=30), seed=9).write(tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()
    c = generate_world(SimConfig(n_images=30), seed=10).files()
    assert c["annotations.json"] != a["annotations.json"].read_text()


def test_small_world_round_trips_through_loader(tmp_path):
    cfg = SimConfig(n_blocks=1, subgroups_per_block=1, classes_per_subgroup=2, n_images=10)
    paths = generate_world(cfg, seed=0).write(tmp_path)
    ds = load_annotations(paths["annotations.json"])
    tree = load_tree(paths["hierarchy.json"])
    assert len(ds.images) == 10 and len(ds.classes) == 2
    assert validate_tree(tree).ok
    assert {a.class_id for a in ds.annotations} <= set(tree.leaves)
    assert json.loads(paths["sim_config.json"].read_text())["sim"]["n_images"] == 10


def test_degenerate_configs_rejected():
    with pytest.raises(DataError):
        SimConfig(n_images=0)
    with pytest.raises(DataError):
        SimConfig(n_blocks=1, subgroups_per_block=1, classes_per_subgroup=1)


def test_embeddings_unit_norm_and_siblings_closer(world):
    assert np.allclose(np.linalg.norm(world.embeddings, axis=1), 1.0)
    tree = world.tree
    sib, cross = [], []
    for i, a in enumerate(world.classes):
        for j, b in enumerate(world.classes):
            if i < j:
                (sib if tree.parent[a] == tree.parent[b] else cross).append(world.cosine[i, j])
    assert min(sib) > max(cross)


def test_noiseless_in_set_detector_gives_perfect_recall(world):
    model = DetectorModel(world.classes, max_detect=1.0, sigma_min=0.0, fp_rate=0.0, seed=1)
    assert kernel(world, world.classes[0], world.classes) == pytest.approx(1.0)
    assert model.miss_probability(np.array(1.0)) == 0.0 and model.sigma(np.array(1.0)) == 0.0
    props = fuse_detections_to_proposals(simulate_detections(world, model))
    ar = average_recall_at_k(world.dataset.ground_truth(), props, ks=[1000])
    assert ar.ar(1000) == 1.0


def test_zero_kernel_class_is_never_detected(world):
    train = [world.classes[0]]
    far = [c for c in world.classes if kernel(world, c, train) <= 0.3]
    assert far
    model = DetectorModel(train, fp_rate=0.0, seed=2)
    assert np.all(model.miss_probability(np.array([kernel(world, c, train) for c in far])) == 1.0)
    # keep only the far-class objects so no other object can fire a detection
    images = sorted({a.image_id for a in world.dataset.annotations if a.class_id in far})
    stripped = dataclasses.replace(world, dataset=world.dataset.subset(images, far))
    props = fuse_detections_to_proposals(simulate_detections(stripped, model))
    assert len(props) == 0
    ar = average_recall_at_k(stripped.dataset.ground_truth(), props, ks=[1000])
    assert ar.ar(1000) == 0.0 and all(ar.class_ar(c, 1000) == 0.0 for c in ar.per_class_n_gt)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.data())
def test_kernel_monotone_in_training_set(seed, data):
    world = generate_world(SimConfig(n_images=1), seed=seed % 50)
    names = list(world.classes)
    small = data.draw(st.lists(st.sampled_from(names), min_size=1, max_size=6, unique=True))
    extra = data.draw(st.lists(st.sampled_from(names), max_size=6, unique=True))
    big = sorted(set(small) | set(extra))
    for c in names:
        assert kernel(world, c, small) <= kernel(world, c, big)
        if c in small:
            assert kernel(world, c, small) == pytest.approx(1.0)


def test_recall_non_decreasing_as_training_set_grows(world):
    target = world.classes[2]
    images = sorted({a.image_id for a in world.dataset.annotations if a.class_id == target})
    gt = world.dataset.subset(images, [target]).ground_truth()
    order = [c for c in world.classes if c != target]
    rng = np.random.default_rng(0)
    rng.shuffle(order)
    prev = -1.0
    for n in (1, 2, 4, 8, 16, len(order)):
        model = DetectorModel(order[:n], fp_rate=0.0, seed=3)
        props = fuse_detections_to_proposals(simulate_detections(world, model, images))
        ar = average_recall_at_k(gt, props, ks=[1000]).ar(1000)
        assert ar >= prev
        prev = ar


def test_detections_deterministic_per_image(world):
    model = DetectorModel(world.classes[:5], seed=7)
    all_ = simulate_detections(world, model)
    some = simulate_detections(world, model, [3, 5])
    mask = np.isin(all_.image_ids, [3, 5])
    assert np.array_equal(all_.boxes[mask], some.boxes) and np.array_equal(all_.scores[mask], some.scores)
    with pytest.raises(DataError):
        simulate_detections(world, DetectorModel(["nope"]))


def test_data_volume_scales_head_strength(world):
    c = world.classes[0]
    lo = DetectorModel([c], train_counts={c: 1}, data_half=10.0)
    hi = DetectorModel([c], train_counts={c: 1000}, data_half=10.0)
    assert lo.head_quality()[c] < hi.head_quality()[c] < 1.0
    assert DetectorModel([c]).head_quality()[c] == 1.0


def test_group_heads_cover_training_set(world):
    for level in range(world.tree.max_level + 1):
        heads = group_heads(world, world.classes, level)
        assert sorted(c for m in heads.values() for c in m) == sorted(world.classes)
    assert len(group_heads(world, world.classes, 0)) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=40))
def test_ari_matches_sklearn(pairs):
    a, b = zip(*pairs)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
