"""Category splits and seeded episode sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .categories import COCO_IDS
from .errors import DataFormatError

EVAL_STREAM = 0
BASELINE_STREAM = 1
TRAIN_STREAM = 2


@dataclass(frozen=True)
class SplitSpec:
    index: int
    test_ids: tuple
    train_ids: tuple

    def ids(self, partition: str) -> tuple:
        if partition == "test":
            return self.test_ids
        if partition == "train":
            return self.train_ids
        raise ValueError(f"partition must be 'test' or 'train', got {partition!r}")


def make_split(i: int, category_ids=None) -> SplitSpec:
    """Every fourth category (1-based positions i, i+4, ...) goes to the test set.

    Positions refer to the categories sorted by id; the builtin COCO table is
    used when ``category_ids`` is not given.
    """
    if i not in (1, 2, 3, 4):
        raise ValueError(f"split index must be 1..4, got {i}")
    order = sorted(category_ids) if category_ids is not None else list(COCO_IDS)
    test = tuple(order[i - 1::4])
    train = tuple(c for c in order if c not in set(test))
    return SplitSpec(i, test, train)


@dataclass(frozen=True)
class Episode:
    image_id: int
    category_id: int
    reference_ann_ids: tuple
    run: int
    split: int = 0
    episode_id: str = field(default="")

    def __post_init__(self):
        if not self.episode_id:
            object.__setattr__(self, "episode_id", episode_key(self.split, self.run, self.image_id, self.category_id))

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "split": self.split,
            "run": self.run,
            "image_id": self.image_id,
            "category_id": self.category_id,
            "reference_ann_ids": list(self.reference_ann_ids),
        }

    @classmethod
    def from_dict(cls, d) -> "Episode":
        try:
            return cls(
                image_id=int(d["image_id"]),
                category_id=int(d["category_id"]),
                reference_ann_ids=tuple(int(a) for a in d["reference_ann_ids"]),
                run=int(d["run"]),
                split=int(d.get("split", 0)),
                episode_id=str(d["episode_id"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"bad episode record {d!r}: {exc}") from exc


def episode_key(split: int, run: int, image_id: int, category_id: int) -> str:
    return f"s{split}-r{run}-i{image_id}-c{category_id}"


def episode_rng(seed: int, run: int, image_id: int, category_id: int, stream: int = EVAL_STREAM):
    """Generator seeded from the episode identity, independent of iteration order."""
    return np.random.default_rng(np.random.SeedSequence([seed, run, image_id, category_id, stream]))


def _draw(rng, pool, k):
    n = len(pool)
    if n >= k:
        idx = rng.choice(n, size=k, replace=False)
    else:
        idx = rng.integers(0, n, size=k)
    return tuple(int(pool[i][1]) for i in idx)


def sample_episodes(dataset, split: SplitSpec, partition="test", k=1, runs=1, seed=0,
                    exclude_same_image=False) -> list:
    """One episode per (run, image, split category present in the image).

    References are ``k`` non-crowd instances of the category drawn from the
    whole dataset (without replacement when enough exist).  Images without
    any category of the partition produce no episode.
    """
    if k < 1 or runs < 1:
        raise ValueError("k and runs must be >= 1")
    wanted = set(split.ids(partition))
    out = []
    for run in range(1, runs + 1):
        for image_id in sorted(dataset.images):
            for cat in dataset.present_categories(image_id):
                if cat not in wanted:
                    continue
                pool = dataset.presence_index.get(cat, [])
                if exclude_same_image:
                    pool = [p for p in pool if p[0] != image_id]
                if not pool:
                    raise DataFormatError(f"category {cat} has no usable reference instances")
                rng = episode_rng(seed, run, image_id, cat)
                out.append(Episode(image_id, cat, _draw(rng, pool, k), run, split.index))
    return out


@dataclass(frozen=True)
class TrainingSample:
    category_id: int
    reference_ann_id: int
    target_ann_ids: tuple
    background_ann_ids: tuple


def sample_training_reference(dataset, image_id: int, split: SplitSpec, seed: int) -> TrainingSample:
    """Pick a training category present in the image and a reference from another image.

    Only categories that also occur in some other image are eligible.  The
    returned background ids are annotations of every other category in the
    image, which are to be treated as background.
    """
    present = [c for c in dataset.present_categories(image_id) if c in set(split.train_ids)]
    if not present:
        raise ValueError(f"image {image_id} contains no training-split category")
    pools = {c: [p for p in dataset.presence_index[c] if p[0] != image_id] for c in present}
    eligible = [c for c in present if pools[c]]
    if not eligible:
        raise ValueError(f"image {image_id}: categories {present} have instances only in this image")
    rng = np.random.default_rng(np.random.SeedSequence([seed, image_id, TRAIN_STREAM]))
    cat = eligible[int(rng.integers(len(eligible)))]
    pool = pools[cat]
    ref = int(pool[int(rng.integers(len(pool)))][1])
    anns = dataset.annotations_in(image_id)
    targets = tuple(a.id for a in anns if a.category_id == cat and not a.iscrowd)
    background = tuple(a.id for a in anns if a.category_id != cat)
    return TrainingSample(cat, ref, targets, background)
