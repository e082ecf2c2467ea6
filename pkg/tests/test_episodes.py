import numpy as np
import pytest

from oneshot_seg.categories import COCO_CATEGORIES
from oneshot_seg.episodes import (
    Episode,
    episode_rng,
    make_split,
    sample_episodes,
    sample_training_reference,
)
from oneshot_seg.errors import DataFormatError


def test_split_structure():
    ids = [c[0] for c in COCO_CATEGORIES]
    tests = [set(make_split(i).test_ids) for i in (1, 2, 3, 4)]
    assert all(len(t) == 20 for t in tests)
    assert set().union(*tests) == set(ids)
    assert sum(len(t) for t in tests) == 80
    for i in (1, 2, 3, 4):
        s = make_split(i)
        assert len(s.train_ids) == 60 and not set(s.train_ids) & set(s.test_ids)
        assert s.ids("train") == s.train_ids
    assert make_split(3).test_ids[:3] == (3, 7, 11)
    with pytest.raises(ValueError):
        make_split(5)
    with pytest.raises(ValueError):
        make_split(1).ids("val")


def test_split_on_custom_ids():
    s = make_split(2, [10, 3, 5, 7, 9, 1])
    assert s.test_ids == (3, 10)


def test_episode_id_and_roundtrip():
    e = Episode(42, 3, (7,), run=2, split=1)
    assert e.episode_id == "s1-r2-i42-c3"
    assert Episode.from_dict(e.to_dict()) == e
    with pytest.raises(DataFormatError):
        Episode.from_dict({"image_id": 1})


def test_sampling_rules(synth_coco):
    ds = synth_coco
    split = make_split(1, ds.category_ids)
    eps = sample_episodes(ds, split, "test", k=1, runs=2, seed=5)
    test = set(split.test_ids)
    keys = set()
    for e in eps:
        assert e.category_id in test
        assert e.category_id in ds.present_categories(e.image_id)
        ref = ds.annotations[e.reference_ann_ids[0]]
        assert ref.category_id == e.category_id and not ref.iscrowd
        keys.add((e.run, e.image_id, e.category_id))
    assert len(keys) == len(eps)
    expected = sum(len(set(ds.present_categories(i)) & test) for i in ds.images) * 2
    assert len(eps) == expected
    # images without test categories are skipped
    assert {e.image_id for e in eps} == {i for i in ds.images if set(ds.present_categories(i)) & test}


def test_sampling_deterministic_and_order_independent(synth_coco):
    split = make_split(2, synth_coco.category_ids)
    a = sample_episodes(synth_coco, split, k=3, runs=2, seed=11)
    b = sample_episodes(synth_coco, split, k=3, runs=2, seed=11)
    c = sample_episodes(synth_coco, split, k=3, runs=2, seed=12)
    assert a == b and a != c
    assert all(len(e.reference_ann_ids) == 3 for e in a)
    r1 = episode_rng(1, 2, 3, 4).random()
    assert r1 == episode_rng(1, 2, 3, 4).random() != episode_rng(1, 2, 3, 5).random()


def test_k_shot_without_replacement_when_possible(synth_coco):
    split = make_split(1, synth_coco.category_ids)
    for e in sample_episodes(synth_coco, split, k=2, runs=1, seed=0):
        pool = synth_coco.presence_index[e.category_id]
        if len(pool) >= 2:
            assert len(set(e.reference_ann_ids)) == 2


def test_exclude_same_image():
    from oneshot_seg.coco_data import parse_dataset
    from oneshot_seg.synthetic import synthetic_coco

    ds = parse_dataset(synthetic_coco(40, categories=range(1, 9), seed=4))
    split = make_split(3, ds.category_ids)
    eps = sample_episodes(ds, split, k=1, runs=1, seed=0, exclude_same_image=True)
    assert eps
    for e in eps:
        assert all(ds.annotations[a].image_id != e.image_id for a in e.reference_ann_ids)


def test_training_reference(synth_coco):
    ds = synth_coco
    split = make_split(1, ds.category_ids)
    train = set(split.train_ids)
    image = next(i for i in sorted(ds.images) if set(ds.present_categories(i)) & train)
    s = sample_training_reference(ds, image, split, seed=0)
    assert s.category_id in train
    assert ds.annotations[s.reference_ann_id].image_id != image
    assert all(ds.annotations[a].category_id == s.category_id for a in s.target_ann_ids)
    assert all(ds.annotations[a].category_id != s.category_id for a in s.background_ann_ids)
    assert s == sample_training_reference(ds, image, split, seed=0)
    empty = next((i for i in ds.images if not set(ds.present_categories(i)) & train), None)
    if empty is not None:
        with pytest.raises(ValueError):
            sample_training_reference(ds, empty, split, seed=0)


def test_reference_frequency_is_uniform_over_instances():
    # category with 3 instances in image A and 1 in image B: instance-uniform draw
    doc = {"images": [{"id": 1, "width": 10, "height": 10}, {"id": 2, "width": 10, "height": 10}],
           "categories": [{"id": c, "name": str(c)} for c in (1, 2, 3, 4)],
           "annotations": [{"id": i, "image_id": 1 if i < 4 else 2, "category_id": 1, "bbox": [0, 0, 2, 2],
                            "iscrowd": 0} for i in range(1, 5)]}
    from oneshot_seg.coco_data import parse_dataset

    ds = parse_dataset(doc)
    eps = sample_episodes(ds, make_split(1, ds.category_ids), runs=4000, seed=0)
    refs = np.array([e.reference_ann_ids[0] for e in eps])
    freq = np.bincount(refs, minlength=5)[1:] / len(refs)
    assert np.allclose(freq, 0.25, atol=0.03)
