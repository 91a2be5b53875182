import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN_DIR, SMALL
from srsettings.admx import Hive
from srsettings.dataset import (
    DatasetError,
    LabeledDataset,
    LabeledSetting,
    dataset_from_descriptions,
    dedup_hives,
    dumps_dataset,
    label_catalog,
    loads_dataset,
    normalize_description,
    read_dataset,
    resample,
    split_disjoint,
    write_dataset,
)
from srsettings.xccdf import RuleTargetMap, TargetPair, match_rules, parse_xccdf

GOLDEN = (GOLDEN_DIR / "golden.yaml").read_text(encoding="utf-8")


def golden_dataset(catalog):
    guide = parse_xccdf(GOLDEN_DIR / "cis_w10_1909.xml")
    return label_catalog(catalog, match_rules(guide, catalog), guide)


class TestLabelCatalog:
    def test_golden_labels(self, golden_catalog):
        ds = golden_dataset(golden_catalog)
        labels = {it.setting.rsplit(" \\ ", 1)[1]: it.is_security_relevant for it in ds}
        assert labels == {"Prevent enabling lock screen camera": True, "Force a specific background and accent color": False}
        assert ds.guide_publisher == "CIS" and ds.os_label == "W10 1909"

    def test_empty_target_map(self, golden_catalog):
        ds = label_catalog(golden_catalog, RuleTargetMap())
        assert ds.sr_count == 0 and len(ds) == 2

    def test_five_setting_brute_force(self, labeling_catalog):
        guide = parse_xccdf(SMALL / "labeling_guide.xml")
        tmap = match_rules(guide, labeling_catalog)
        ds = label_catalog(labeling_catalog, tmap, guide)
        oracle = [any(p.setting_path == s.setting_path and p.hive == s.hive for p in tmap.pairs) for s in labeling_catalog]
        assert [it.is_security_relevant for it in ds] == oracle
        assert sum(oracle) == 2 and len(oracle) == 5

    def test_stale_map(self, golden_catalog):
        tmap = RuleTargetMap(pairs=[TargetPair("r", "Nowhere \\ Gone", Hive.MACHINE, "title")])
        with pytest.raises(DatasetError, match="stale"):
            label_catalog(golden_catalog, tmap)

    def test_metadata_records_rules(self, golden_catalog):
        ds = golden_dataset(golden_catalog)
        cam = next(it for it in ds if it.is_security_relevant)
        assert cam.metadata["value_name"] == "NoLockScreenCamera"
        assert len(cam.metadata["rule_ids"]) == 1


class TestYaml:
    def test_golden_byte_identical(self, golden_catalog):
        assert dumps_dataset(golden_dataset(golden_catalog)) == GOLDEN

    def test_round_trip(self, tmp_path, golden_catalog):
        ds = golden_dataset(golden_catalog)
        write_dataset(ds, tmp_path / "d.yaml")
        back = read_dataset(tmp_path / "d.yaml")
        assert [(i.setting, i.description, i.is_security_relevant) for i in back] == [(i.setting, i.description, i.is_security_relevant) for i in ds]
        assert (tmp_path / "d.yaml").read_text(encoding="utf-8") == GOLDEN

    def test_extended_round_trip(self, golden_catalog):
        ds = golden_dataset(golden_catalog)
        back = loads_dataset(dumps_dataset(ds, extended=True))
        assert [(i.setting, i.hive, i.metadata) for i in back] == [(i.setting, i.hive, i.metadata) for i in ds]

    def test_empty(self):
        text = dumps_dataset(LabeledDataset())
        assert yaml.safe_load(text) == []
        assert len(loads_dataset(text)) == 0

    def test_non_boolean_label(self):
        with pytest.raises(DatasetError, match="item 0: is_security_relevant"):
            loads_dataset('- setting: A \\ B\n  description: "d"\n  is_security_relevant: "yes"\n')

    def test_missing_key_names_index(self):
        text = '- setting: A \\ B\n  description: "d"\n  is_security_relevant: true\n- setting: A \\ C\n  is_security_relevant: true\n'
        with pytest.raises(DatasetError, match="item 1: missing key 'description'"):
            loads_dataset(text)

    def test_unknown_keys_preserved(self):
        ds = loads_dataset('- setting: A \\ B\n  description: "d"\n  is_security_relevant: false\n  source: x\n')
        assert ds.items[0].metadata == {"source": "x"}

    def test_read_uses_stem_as_label(self, tmp_path):
        (tmp_path / "w10.yaml").write_text(GOLDEN, encoding="utf-8")
        assert read_dataset(tmp_path / "w10.yaml").os_label == "w10"

    def test_catalog_round_trip(self, small_catalog):
        ds = label_catalog(small_catalog, RuleTargetMap())
        back = loads_dataset(dumps_dataset(ds, extended=True))
        assert {(i.setting, i.hive, i.description) for i in back} == {(s.setting_path, s.hive, s.description) for s in small_catalog}


description_text = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=60).filter(lambda s: s.strip())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(description_text, description_text, st.booleans()), max_size=8))
def test_yaml_round_trip_property(rows):
    ds = LabeledDataset(items=[LabeledSetting(s, d, y) for s, d, y in rows])
    back = loads_dataset(dumps_dataset(ds))
    assert [(i.setting, i.description, i.is_security_relevant) for i in back] == rows


def item(path, hive, sr, desc="Same text."):
    return LabeledSetting(path, desc, sr, hive)


class TestDedupHives:
    def test_machine_sr_user_nsr(self):
        ds, removed = dedup_hives(LabeledDataset(items=[item("A \\ B", Hive.MACHINE, True), item("A \\ B", Hive.USER, False)]))
        assert [(i.hive, i.is_security_relevant) for i in ds] == [(Hive.MACHINE, True)]
        assert [r.hive for r in removed] == [Hive.USER]

    def test_machine_nsr_user_sr(self):
        ds, _ = dedup_hives(LabeledDataset(items=[item("A \\ B", Hive.USER, True), item("A \\ B", Hive.MACHINE, False)]))
        assert [(i.hive, i.is_security_relevant) for i in ds] == [(Hive.MACHINE, True)]

    def test_no_duplicates_identity(self):
        src = LabeledDataset(items=[item("A \\ B", Hive.MACHINE, True), item("A \\ C", Hive.USER, False)])
        ds, removed = dedup_hives(src)
        assert ds.items == src.items and removed == []

    def test_description_normalized(self):
        ds, _ = dedup_hives(LabeledDataset(items=[item("A \\ B", Hive.MACHINE, False, "Same  Text."), item("A \\ B", Hive.USER, False, "same text.")]))
        assert len(ds) == 1

    def test_different_descriptions_kept(self):
        ds, _ = dedup_hives(LabeledDataset(items=[item("A \\ B", Hive.MACHINE, False, "one"), item("A \\ B", Hive.USER, False, "two")]))
        assert len(ds) == 2


def synthetic(n_sr: int, n_nsr: int, dup_every: int = 0) -> LabeledDataset:
    rows = []
    for i in range(n_sr + n_nsr):
        sr = i < n_sr
        text = f"description {i // 2 if dup_every and i % dup_every == 0 else i}"
        rows.append((f"C \\ S{i}", text, sr))
    return dataset_from_descriptions(rows)


class TestSplit:
    def test_stratification_arithmetic(self):
        train, test = split_disjoint(synthetic(10, 90), 0.2, seed=7)
        assert abs(test.sr_count - 2) <= 1
        assert abs(len(test) - 20) <= 1
        assert len(train) + len(test) == 100

    def test_two_items(self):
        train, test = split_disjoint(dataset_from_descriptions([("A", "sr text", True), ("B", "other text", False), ("C", "sr two", True), ("D", "other two", False)]), 0.5, 0)
        assert train.sr_count == 1 and test.sr_count == 1

    def test_identical_descriptions_same_side(self):
        ds = dataset_from_descriptions([(f"S{i}", "Shared text" if i in (3, 40) else f"text {i}", i < 10) for i in range(60)])
        for seed in range(100):
            train, test = split_disjoint(ds, 0.2, seed)
            sides = {it.setting for it in test}
            assert ("S3" in sides) == ("S40" in sides)

    def test_cannot_stratify(self):
        with pytest.raises(DatasetError, match="cannot stratify"):
            split_disjoint(dataset_from_descriptions([("A", "x", True), ("B", "y", False), ("C", "z", False)]), 0.5, 0)

    def test_bad_fraction(self):
        with pytest.raises(DatasetError):
            split_disjoint(synthetic(5, 5), 1.0, 0)

    def test_deterministic(self):
        a = split_disjoint(synthetic(10, 90), 0.2, 3)
        b = split_disjoint(synthetic(10, 90), 0.2, 3)
        assert [i.setting for i in a[1]] == [i.setting for i in b[1]]


class TestResample:
    def test_counts(self):
        out = resample(synthetic(10, 90), minority_to=30, majority_to=60, seed=1)
        assert out.sr_count == 30 and len(out) - out.sr_count == 60

    def test_identity(self):
        src = synthetic(10, 90)
        out = resample(src, 10, 90, seed=1)
        assert sorted(i.setting for i in out) == sorted(i.setting for i in src)

    def test_default_one_to_two(self):
        out = resample(synthetic(10, 90), seed=0)
        assert out.sr_count == 45 and len(out) == 135

    def test_deterministic_bytes(self):
        a = dumps_dataset(resample(synthetic(10, 90), 30, 60, seed=5))
        b = dumps_dataset(resample(synthetic(10, 90), 30, 60, seed=5))
        assert a == b

    def test_undersample_too_far(self):
        with pytest.raises(DatasetError):
            resample(synthetic(10, 90), 30, 91, seed=0)

    def test_needs_both_classes(self):
        with pytest.raises(DatasetError):
            resample(synthetic(0, 5), seed=0)


def test_normalize_description():
    assert normalize_description("  A\n b  ") == "a b"
