import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oneshot_seg.coco_data import (
    RleMask,
    decode_counts_string,
    encode_counts_string,
    load_dataset,
    local_to_rle,
    mask_of,
    parse_dataset,
    polygon_rasterize,
    polygon_to_rle,
    rle_decode,
    rle_encode,
    rle_translate,
)
from oneshot_seg.errors import DataFormatError

from oracles import polygon_mask_brute, rle_counts_brute

masks = hnp.arrays(np.bool_, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=16))


def _doc(**over):
    doc = {
        "images": [{"id": 1, "width": 10, "height": 8}],
        "categories": [{"id": 1, "name": "person"}, {"id": 3, "name": "car"}],
        "annotations": [
            {"id": 5, "image_id": 1, "category_id": 1, "bbox": [1, 1, 4, 4],
             "segmentation": [[1, 1, 5, 1, 5, 5, 1, 5]], "area": 16, "iscrowd": 0},
            {"id": 6, "image_id": 1, "category_id": 3, "bbox": [0, 0, 10, 8],
             "segmentation": {"size": [8, 10], "counts": [0, 80]}, "area": 80, "iscrowd": 1},
        ],
    }
    doc.update(over)
    return doc


def test_rle_known_example():
    m = np.array([[0, 1], [1, 1]], dtype=bool)  # column-major: 0 1 1 1
    assert rle_encode(m).counts.tolist() == [1, 3]
    assert rle_encode(np.ones((2, 2), bool)).counts.tolist() == [0, 4]
    assert rle_encode(np.zeros((2, 3), bool)).counts.tolist() == [6]


@settings(max_examples=200, deadline=None)
@given(m=masks)
def test_rle_roundtrip(m):
    r = rle_encode(m)
    assert r.counts.tolist() == rle_counts_brute(m)
    assert r.area == int(m.sum())
    assert np.array_equal(rle_decode(r), m)


def test_rle_decode_rejects_bad_sum():
    with pytest.raises(ValueError):
        rle_decode(RleMask(2, 2, np.array([1, 2])))


def test_from_coco_canonicalises_and_validates():
    r = RleMask.from_coco({"size": [2, 2], "counts": [1, 0, 0, 3]})
    assert r.counts.tolist() == [1, 3]
    assert r == RleMask(2, 2, [1, 3])
    r = RleMask.from_coco({"size": [2, 2], "counts": [0, 1, 0, 3]})
    assert r.counts.tolist() == [0, 4]
    with pytest.raises(DataFormatError):
        RleMask.from_coco({"size": [2, 2], "counts": [1, 2]})
    with pytest.raises(DataFormatError):
        RleMask.from_coco({"size": [2, 2], "counts": [5, -1]})


@settings(max_examples=200, deadline=None)
@given(m=masks)
def test_counts_string_roundtrip(m):
    c = rle_encode(m).counts.tolist()
    assert decode_counts_string(encode_counts_string(c)) == c


def test_counts_string_known_value():
    # 3x3 mask with a centre hole; the 4th count is stored as the difference
    # to the 2nd (4 - 4 = 0), giving characters 0, 4, 1, 0
    m = np.ones((3, 3), bool)
    m[1, 1] = False
    c = rle_encode(m).counts.tolist()
    assert c == [0, 4, 1, 4]
    assert encode_counts_string(c) == "0410"
    assert decode_counts_string("0410") == c


@settings(max_examples=100, deadline=None)
@given(m=masks, dy=st.integers(-20, 20), dx=st.integers(-20, 20))
def test_translate_matches_roll_with_crop(m, dy, dx):
    h, w = m.shape
    exp = np.zeros_like(m)
    ys, xs = np.nonzero(m)
    ys, xs = ys + dy, xs + dx
    ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    exp[ys[ok], xs[ok]] = True
    assert np.array_equal(rle_decode(rle_translate(rle_encode(m), dy, dx)), exp)


@settings(max_examples=100, deadline=None)
@given(local=masks, r0=st.integers(-5, 10), c0=st.integers(-5, 10))
def test_local_to_rle(local, r0, c0):
    H, W = 12, 9
    canvas = np.zeros((H + 40, W + 40), bool)
    canvas[r0 + 20:r0 + 20 + local.shape[0], c0 + 20:c0 + 20 + local.shape[1]] = local
    exp = canvas[20:20 + H, 20:20 + W]
    assert np.array_equal(rle_decode(local_to_rle(local, r0, c0, H, W)), exp)


@settings(max_examples=80, deadline=None)
@given(pts=st.lists(st.tuples(st.floats(-2, 14), st.floats(-2, 14)), min_size=3, max_size=6))
def test_polygon_rle_equals_dense_raster(pts):
    flat = [v for p in pts for v in p]
    dense = polygon_rasterize([flat], 11, 12)
    assert np.array_equal(dense, polygon_mask_brute([flat], 11, 12))
    assert np.array_equal(rle_decode(polygon_to_rle([flat], 11, 12)), dense)


def test_polygon_accepts_point_pairs_and_rejects_degenerate():
    a = polygon_rasterize([[(0, 0), (4, 0), (4, 4), (0, 4)]], 5, 5)
    b = polygon_rasterize([[0, 0, 4, 0, 4, 4, 0, 4]], 5, 5)
    assert np.array_equal(a, b) and a.sum() == 16
    with pytest.raises(ValueError):
        polygon_rasterize([[0, 0, 1, 1]], 4, 4)


def test_parse_dataset_basic():
    ds = parse_dataset(json.dumps(_doc()))
    assert ds.category_ids == [1, 3]
    assert ds.presence_index == {1: [(1, 5)], 3: []}
    assert ds.present_categories(1) == [1]
    assert [a.id for a in ds.annotations_in(1, include_crowd=False)] == [5]
    assert ds.annotations[6].iscrowd
    m = mask_of(ds.annotations[5], ds.images[1])
    assert m.sum() == 16 and m[1:5, 1:5].all()
    assert ds.rle(6).area == 80


def test_bbox_is_clipped_to_image():
    doc = _doc()
    doc["annotations"][0]["bbox"] = [-2, 5, 20, 10]
    ds = parse_dataset(doc)
    assert ds.annotations[5].bbox == (0.0, 5.0, 10.0, 3.0)


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d["annotations"][0].update(image_id=99), "annotation 5 refers to unknown image_id 99"),
        (lambda d: d["annotations"][0].update(category_id=42), "annotation 5 refers to unknown category_id 42"),
        (lambda d: d["annotations"][0].pop("bbox"), "annotation 5: missing required field 'bbox'"),
        (lambda d: d["annotations"].append(dict(d["annotations"][0])), "duplicate annotation id 5"),
        (lambda d: d.pop("images"), "'images'"),
    ],
)
def test_parse_errors_name_the_culprit(mutate, needle):
    doc = _doc()
    mutate(doc)
    with pytest.raises(DataFormatError, match=needle):
        parse_dataset(doc)


def test_parse_rejects_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(DataFormatError):
        load_dataset(p)


def test_missing_segmentation_is_an_error_only_when_used():
    doc = _doc()
    doc["annotations"][0].pop("segmentation")
    ds = parse_dataset(doc)
    with pytest.raises(DataFormatError):
        ds.rle(5)


def test_rle_size_mismatch():
    doc = _doc()
    doc["annotations"][1]["segmentation"] = {"size": [2, 2], "counts": [4]}
    ds = parse_dataset(doc)
    with pytest.raises(DataFormatError):
        ds.rle(6)


def test_short_polygon_fragments_are_dropped():
    doc = _doc()
    doc["annotations"][0]["segmentation"] = [[1, 1, 5, 1, 5, 5, 1, 5], [2, 2]]
    ds = parse_dataset(doc)
    assert ds.rle(5).area == 16
