"""Labeled datasets: joining, YAML (de)serialization and hygiene operations."""

from __future__ import annotations

import math
import os
import re
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import yaml

from .admx import Hive, SettingCatalog
from .xccdf import Guide, RuleTargetMap

REQUIRED_KEYS = ("setting", "description", "is_security_relevant")


class DatasetError(ValueError):
    pass


@dataclass
class LabeledSetting:
    setting: str
    description: str
    is_security_relevant: bool
    hive: Hive | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, Hive | None]:
        return (self.setting, self.hive)


@dataclass
class LabeledDataset:
    os_label: str = ""
    guide_publisher: str = ""
    guide_version: str = ""
    items: list[LabeledSetting] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def sr_count(self) -> int:
        return sum(1 for it in self.items if it.is_security_relevant)

    @property
    def prevalence(self) -> float:
        return self.sr_count / len(self.items) if self.items else 0.0

    @property
    def name(self) -> str:
        return " / ".join(x for x in (self.os_label, self.guide_publisher) if x) or "dataset"

    def with_items(self, items: Iterable[LabeledSetting]) -> "LabeledDataset":
        return replace(self, items=list(items))

    def sr_descriptions(self) -> list[str]:
        return [it.description for it in self.items if it.is_security_relevant]

    def nsr_descriptions(self) -> list[str]:
        return [it.description for it in self.items if not it.is_security_relevant]


def normalize_description(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


# -- labeling --------------------------------------------------------------------


def label_catalog(catalog: SettingCatalog, targets: RuleTargetMap, guide: Guide | None = None) -> LabeledDataset:
    """Mark every catalog setting targeted by some rule as security relevant."""
    index = catalog.index()
    rules_for: dict[tuple[str, Hive], list[str]] = {}
    for p in targets.pairs:
        key = (p.setting_path, p.hive)
        if key not in index:
            raise DatasetError(f"target map references unknown setting {p.setting_path!r} ({p.hive.value}); stale map?")
        rules_for.setdefault(key, []).append(p.rule_id)
    items = []
    for s in catalog.settings:
        meta: dict[str, Any] = {"registry_key": s.registry_key, "source_policy_id": s.source_policy_id}
        if s.value_name:
            meta["value_name"] = s.value_name
        if s.key in rules_for:
            meta["rule_ids"] = rules_for[s.key]
        items.append(LabeledSetting(s.setting_path, s.description, s.key in rules_for, s.hive, meta))
    return LabeledDataset(
        os_label=catalog.os_label,
        guide_publisher=guide.publisher if guide else "",
        guide_version=guide.version if guide else "",
        items=items,
    )


# -- YAML ------------------------------------------------------------------------


class _QuotedStr(str):
    pass


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(_QuotedStr, lambda d, v: d.represent_scalar("tag:yaml.org,2002:str", str(v), style='"'))


def dumps_dataset(ds: LabeledDataset, extended: bool = False) -> str:
    """Render ``ds`` as a YAML sequence of mappings.

    The default layout carries exactly ``setting``, ``description`` and
    ``is_security_relevant``; ``extended`` adds ``hive`` and metadata keys.
    """
    rows = []
    for it in ds.items:
        row: dict[str, Any] = {
            "setting": it.setting,
            "description": _QuotedStr(it.description),
            "is_security_relevant": bool(it.is_security_relevant),
        }
        if extended:
            if it.hive is not None:
                row["hive"] = it.hive.value
            for k, v in it.metadata.items():
                if k not in row:
                    row[k] = v
        rows.append(row)
    return yaml.dump(rows, Dumper=_Dumper, sort_keys=False, allow_unicode=True, width=1 << 30, default_flow_style=False)


def write_dataset(ds: LabeledDataset, path: str | os.PathLike, extended: bool = False) -> None:
    Path(path).write_text(dumps_dataset(ds, extended=extended), encoding="utf-8")


def loads_dataset(text: str, os_label: str = "", guide_publisher: str = "", guide_version: str = "") -> LabeledDataset:
    data = yaml.safe_load(text)
    if data is None:
        data = []
    if not isinstance(data, list):
        raise DatasetError("dataset file must contain a YAML sequence")
    items = []
    for i, row in enumerate(data):
        if not isinstance(row, dict):
            raise DatasetError(f"item {i}: expected a mapping, got {type(row).__name__}")
        for k in REQUIRED_KEYS:
            if k not in row:
                raise DatasetError(f"item {i}: missing key {k!r}")
        label = row["is_security_relevant"]
        if not isinstance(label, bool):
            raise DatasetError(f"item {i}: is_security_relevant must be a boolean, got {label!r}")
        for k in ("setting", "description"):
            if not isinstance(row[k], str) or not row[k].strip():
                raise DatasetError(f"item {i}: {k!r} must be a non-empty string")
        hive = row.get("hive")
        try:
            hive = Hive(hive) if hive is not None else None
        except ValueError:
            raise DatasetError(f"item {i}: invalid hive {hive!r}") from None
        meta = {k: v for k, v in row.items() if k not in REQUIRED_KEYS and k != "hive"}
        items.append(LabeledSetting(row["setting"], row["description"], label, hive, meta))
    return LabeledDataset(os_label, guide_publisher, guide_version, items)


def read_dataset(path: str | os.PathLike, os_label: str | None = None, guide_publisher: str = "", guide_version: str = "") -> LabeledDataset:
    path = Path(path)
    return loads_dataset(path.read_text(encoding="utf-8"), os_label if os_label is not None else path.stem, guide_publisher, guide_version)


# -- hygiene ---------------------------------------------------------------------


def dedup_hives(ds: LabeledDataset) -> tuple[LabeledDataset, list[LabeledSetting]]:
    """Collapse Machine/User copies of the same setting into one item.

    Items sharing setting path and normalized description form a group; the
    Machine item is kept (first item if none is Machine) and is marked SR if
    any member was.  Returns the new dataset and the removed items.
    """
    groups: "OrderedDict[tuple[str, str], list[int]]" = OrderedDict()
    for i, it in enumerate(ds.items):
        groups.setdefault((it.setting, normalize_description(it.description)), []).append(i)
    keep: dict[int, LabeledSetting] = {}
    removed: list[LabeledSetting] = []
    for members in groups.values():
        if len(members) == 1:
            keep[members[0]] = ds.items[members[0]]
            continue
        head = next((i for i in members if ds.items[i].hive is Hive.MACHINE), members[0])
        any_sr = any(ds.items[i].is_security_relevant for i in members)
        keep[head] = replace(ds.items[head], is_security_relevant=any_sr, metadata=dict(ds.items[head].metadata))
        removed.extend(ds.items[i] for i in members if i != head)
    return ds.with_items(keep[i] for i in sorted(keep)), removed


def split_disjoint(ds: LabeledDataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/test split that never separates identical descriptions.

    Items are grouped by normalized description; a group is SR if any member
    is. Within each stratum groups are shuffled under ``seed`` and assigned to
    the test side while that brings its size closer to the target.
    """
    if not 0 < test_fraction < 1:
        raise DatasetError("test_fraction must lie strictly between 0 and 1")
    groups: "OrderedDict[str, list[int]]" = OrderedDict()
    for i, it in enumerate(ds.items):
        groups.setdefault(normalize_description(it.description), []).append(i)
    strata: dict[bool, list[list[int]]] = {True: [], False: []}
    for members in groups.values():
        strata[any(ds.items[i].is_security_relevant for i in members)].append(members)

    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for label in (True, False):
        glist = strata[label]
        if len(glist) < 2:
            raise DatasetError(f"cannot stratify: {'SR' if label else 'NSR'} class has {len(glist)} description group(s)")
        total = sum(len(g) for g in glist)
        target = test_fraction * total
        taken = 0
        for gi in rng.permutation(len(glist)):
            g = glist[gi]
            if abs(taken + len(g) - target) < abs(taken - target):
                test_idx.update(g)
                taken += len(g)
        if taken == 0 or taken == total:
            # keep both sides of every stratum non-empty
            order = sorted(glist, key=len)
            g = order[0]
            if taken == 0:
                test_idx.update(g)
            else:
                test_idx.difference_update(g)
    train = [it for i, it in enumerate(ds.items) if i not in test_idx]
    test = [it for i, it in enumerate(ds.items) if i in test_idx]
    return ds.with_items(train), ds.with_items(test)


def resample(
    ds: LabeledDataset,
    minority_to: int | None = None,
    majority_to: int | None = None,
    seed: int = 0,
) -> LabeledDataset:
    """Over-sample the minority class and under-sample the majority class.

    ``minority_to`` and ``majority_to`` are the requested class sizes.  By
    default the majority is left as is and the minority is grown to half the
    majority size (a 1:2 balance).  Minority growth keeps every original item and adds
    draws with replacement; the majority is subsampled without replacement.
    """
    sr = [i for i, it in enumerate(ds.items) if it.is_security_relevant]
    nsr = [i for i, it in enumerate(ds.items) if not it.is_security_relevant]
    if not sr or not nsr:
        raise DatasetError("resampling needs both classes")
    minority, majority = (sr, nsr) if len(sr) <= len(nsr) else (nsr, sr)
    if majority_to is None:
        majority_to = len(majority)
    if minority_to is None:
        minority_to = max(len(minority), math.ceil(majority_to / 2))
    if minority_to <= 0 or majority_to <= 0:
        raise DatasetError("resampling targets must be positive")
    if majority_to > len(majority):
        raise DatasetError(f"cannot undersample majority class of {len(majority)} items to {majority_to}")

    rng = np.random.default_rng(seed)
    if minority_to >= len(minority):
        extra = rng.choice(len(minority), size=minority_to - len(minority), replace=True)
        chosen_min = list(minority) + sorted(minority[j] for j in extra)
    else:
        chosen_min = sorted(minority[j] for j in rng.choice(len(minority), size=minority_to, replace=False))
    chosen_maj = sorted(majority[j] for j in rng.choice(len(majority), size=majority_to, replace=False))
    order = sorted(chosen_min + chosen_maj)
    return ds.with_items(ds.items[i] for i in order)


def dataset_from_descriptions(texts: Iterable[tuple[str, str, bool]], os_label: str = "") -> LabeledDataset:
    """Convenience constructor from (setting, description, label) triples."""
    return LabeledDataset(os_label, items=[LabeledSetting(s, d, bool(y)) for s, d, y in texts])


__all__ = [
    "DatasetError",
    "LabeledDataset",
    "LabeledSetting",
    "dataset_from_descriptions",
    "dedup_hives",
    "dumps_dataset",
    "label_catalog",
    "loads_dataset",
    "normalize_description",
    "read_dataset",
    "resample",
    "split_disjoint",
    "write_dataset",
]
