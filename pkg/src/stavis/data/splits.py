"""Three-fold (by default) cross-validation splits built per dataset."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

VAL_FRACTION = 0.1


@dataclass
class Fold:
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)


@dataclass
class SplitSpec:
    folds: list[Fold]
    fixed: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    def validate(self, videos: Iterable[str] | None = None) -> None:
        """Check disjointness within folds and that fold test sets partition
        the non-fixed videos."""
        fixed_keys = {k for parts in self.fixed.values() for ks in parts.values() for k in ks}
        tests = []
        for i, fold in enumerate(self.folds):
            tr, va, te = set(fold.train), set(fold.val), set(fold.test)
            if len(tr) != len(fold.train) or len(va) != len(fold.val) or len(te) != len(fold.test):
                raise ValueError(f"fold {i} lists a video twice")
            if tr & va or tr & te or va & te:
                raise ValueError(f"fold {i}: train/val/test overlap")
            tests.append(te - fixed_keys)
        for i in range(len(tests)):
            for j in range(i + 1, len(tests)):
                if tests[i] & tests[j]:
                    raise ValueError(f"folds {i} and {j} share test videos")
        if videos is not None:
            expected = set(videos) - fixed_keys
            covered = set().union(*tests) if tests else set()
            if covered != expected:
                raise ValueError(f"test sets cover {len(covered)} of {len(expected)} videos")

    def to_json(self) -> dict:
        return {
            "folds": [{"train": f.train, "val": f.val, "test": f.test} for f in self.folds],
            "fixed": self.fixed,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> SplitSpec:
        return cls([Fold(**f) for f in doc["folds"]], {k: dict(v) for k, v in doc.get("fixed", {}).items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> SplitSpec:
        return cls.from_json(json.loads(Path(path).read_text()))


def make_splits(
    videos: Iterable[str],
    n_folds: int = 3,
    seed: int = 0,
    fixed: Mapping[str, Mapping[str, list[str]]] | None = None,
    val_fraction: float = VAL_FRACTION,
) -> SplitSpec:
    """Split ``dataset/video_id`` keys into ``n_folds`` folds.

    Within each dataset the shuffled videos are dealt round-robin to the fold
    test sets; the rest of each fold is split train/val (about 90/10).
    Datasets in ``fixed`` keep their given train/val/test lists in every fold.
    """
    fixed = {k: {part: list(v.get(part, [])) for part in ("train", "val", "test")} for k, v in (fixed or {}).items()}
    by_dataset: dict[str, list[str]] = defaultdict(list)
    for key in videos:
        dataset = key.split("/", 1)[0]
        if dataset not in fixed:
            by_dataset[dataset].append(key)
    rng = np.random.default_rng(seed)
    folds = [Fold() for _ in range(n_folds)]
    for dataset in sorted(by_dataset):
        keys = sorted(by_dataset[dataset])
        if len(keys) < n_folds:
            raise ValueError(f"dataset {dataset!r} has {len(keys)} videos, need at least {n_folds}")
        order = [keys[i] for i in rng.permutation(len(keys))]
        for i, key in enumerate(order):
            folds[i % n_folds].test.append(key)
        for fold in folds:
            test = set(fold.test)
            rest = [k for k in order if k not in test]
            n_val = max(1, int(round(val_fraction * len(rest)))) if len(rest) >= 2 else 0
            fold.val.extend(rest[len(rest) - n_val:])
            fold.train.extend(rest[: len(rest) - n_val])
    for dataset in sorted(fixed):
        for fold in folds:
            fold.train.extend(fixed[dataset]["train"])
            fold.val.extend(fixed[dataset]["val"])
            fold.test.extend(fixed[dataset]["test"])
    spec = SplitSpec(folds, fixed)
    spec.validate(videos=[k for ks in by_dataset.values() for k in ks])
    return spec
