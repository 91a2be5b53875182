import codecs

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN_DIR, SMALL
from srsettings._xml import XmlParseError
from srsettings.admx import (
    PATH_SEPARATOR,
    AdmxError,
    CategoryNode,
    Hive,
    LocaleStringTable,
    PolicyClass,
    PolicyDefinition,
    SettingCatalog,
    load_templates,
    parse_adml,
    parse_admx,
    resolve_catalog,
    string_ref_id,
)

NS = 'xmlns="http://schemas.microsoft.com/GroupPolicy/2006/07/PolicyDefinitions"'


def admx(body: str, target: str = "t", extra_ns: str = "") -> str:
    return (
        f'<policyDefinitions {NS}><policyNamespaces><target prefix="{target}" namespace="T.{target}"/>{extra_ns}'
        f"</policyNamespaces>{body}</policyDefinitions>"
    )


def adml(strings: dict[str, str]) -> str:
    rows = "".join(f'<string id="{k}">{v}</string>' for k, v in strings.items())
    return f"<policyDefinitionResources {NS}><resources><stringTable>{rows}</stringTable></resources></policyDefinitionResources>"


def policy(name: str, cls: str = "Machine", cat: str = "C", explain: bool = True, key: str = "Software\\X") -> str:
    ex = f' explainText="$(string.{name}_Help)"' if explain else ""
    return (
        f'<policy name="{name}" class="{cls}" displayName="$(string.{name})"{ex} key="{key}" valueName="{name}V">'
        f'<parentCategory ref="{cat}"/></policy>'
    )


class TestParseAdmx:
    def test_three_policies_two_categories(self):
        doc = parse_admx(SMALL / "three_policies.admx")
        assert len(doc.policies) == 3
        assert len(doc.categories) == 2
        assert doc.namespace == "Sample.Policies.Fixture"
        assert doc.diagnostics == []

    def test_empty_policies_element(self):
        doc = parse_admx(admx('<categories><category name="C" displayName="$(string.C)"/></categories><policies/>'))
        assert doc.policies == []
        assert [c.category_id for c in doc.categories] == ["C"]

    def test_both_class_kept_as_single_definition(self):
        doc = parse_admx(SMALL / "three_policies.admx")
        both = [p for p in doc.policies if p.policy_class is PolicyClass.BOTH]
        assert [p.policy_id for p in both] == ["ShowWelcome"]

    def test_fields(self):
        doc = parse_admx(GOLDEN_DIR / "admx" / "ControlPanelDisplay.admx")
        cam = next(p for p in doc.policies if p.value_name == "NoLockScreenCamera")
        assert cam.display_name_ref == "$(string.CPL_Personalization_NoLockScreenCamera)"
        assert cam.registry_key == "Software\\Policies\\Microsoft\\Windows\\Personalization"
        assert cam.category_ref == "Microsoft.Policies.ControlPanelDisplay:Personalization"
        cat = doc.categories[0]
        assert cat.parent_ref == "Microsoft.Policies.Windows:ControlPanel"

    def test_unknown_elements_warn(self):
        doc = parse_admx(admx('<weird/><categories><category name="C" displayName="$(string.C)"/><odd/></categories>'
                              f"<policies>{policy('A')}<notapolicy/></policies>"))
        codes = [d.code for d in doc.diagnostics]
        assert codes.count("unknown-element") == 3
        assert all(d.severity == "warning" for d in doc.diagnostics)
        assert len(doc.policies) == 1

    def test_policy_missing_key_or_display_name_skipped(self):
        body = (
            "<policies>"
            '<policy name="NoKey" class="Machine" displayName="$(string.NoKey)" explainText="$(string.x)"/>'
            '<policy name="NoName" class="Machine" explainText="$(string.x)" key="K"/>'
            '<policy name="BadClass" class="Everyone" displayName="$(string.B)" key="K"/>'
            f"{policy('Good')}"
            "</policies>"
        )
        doc = parse_admx(admx(body))
        assert [p.policy_id for p in doc.policies] == ["Good"]
        bad = [d for d in doc.diagnostics if d.code == "bad-policy"]
        assert {d.subject for d in bad} == {"NoKey", "NoName", "BadClass"}

    def test_malformed_xml_reports_line(self):
        with pytest.raises(XmlParseError) as err:
            parse_admx(b"<policyDefinitions>\n<policies>\n<policy name='x'>\n</policyDefinitions>")
        assert err.value.line == 4

    def test_wrong_root(self):
        with pytest.raises(AdmxError):
            parse_admx(b"<foo/>")

    def test_duplicate_policy_skipped(self):
        doc = parse_admx(admx(f"<policies>{policy('A')}{policy('A')}</policies>"))
        assert len(doc.policies) == 1
        assert [d.code for d in doc.diagnostics] == ["duplicate-policy"]

    def test_utf16_with_bom(self):
        text = (GOLDEN_DIR / "admx" / "windows.admx").read_text(encoding="utf-8").replace('encoding="utf-8"', 'encoding="utf-16"')
        data = codecs.BOM_UTF16_LE + text.encode("utf-16-le")
        doc = parse_admx(data)
        assert [c.category_id for c in doc.categories] == ["ControlPanel"]

    def test_utf8_bom(self):
        data = codecs.BOM_UTF8 + (GOLDEN_DIR / "admx" / "windows.admx").read_bytes()
        assert len(parse_admx(data).categories) == 1


class TestParseAdml:
    def test_two_entries(self):
        table = parse_adml(adml({"S1": "Disables the lock screen camera...", "S2": "Forces Windows..."}))
        assert len(table) == 2
        assert table.get("S1") == "Disables the lock screen camera..."

    def test_empty_string_table(self):
        assert len(parse_adml(adml({}))) == 0

    def test_entity_decoding(self):
        assert parse_adml(adml({"S": "a &amp; b"})).get("S") == "a & b"

    def test_whitespace_collapsed(self):
        table = parse_adml(SMALL / "three_policies.adml")
        assert table.get("HideUserName_Help") == "Prevents the name of the last signed-in user from being shown."

    def test_duplicate_id_names_it(self):
        doc = f"<policyDefinitionResources {NS}><resources><stringTable><string id='Dup'>a</string><string id='Dup'>b</string></stringTable></resources></policyDefinitionResources>"
        with pytest.raises(AdmxError, match="Dup"):
            parse_adml(doc)

    def test_missing_string_table(self):
        with pytest.raises(AdmxError, match="stringTable"):
            parse_adml(f"<policyDefinitionResources {NS}><resources/></policyDefinitionResources>")


class TestResolveCatalog:
    def test_golden_path_and_description(self, golden_catalog):
        idx = golden_catalog.index()
        cam = idx[("Control Panel \\ Personalization \\ Prevent enabling lock screen camera", Hive.MACHINE)]
        assert cam.description.startswith("Disables the lock screen camera toggle switch")
        assert golden_catalog.os_label == "W10 1909"
        assert len(golden_catalog) == 2

    def test_zero_definitions(self):
        with pytest.raises(AdmxError, match="empty catalog"):
            resolve_catalog([], [], LocaleStringTable("en-US", {}), "X")

    def test_both_expands(self, small_catalog):
        welcome = [s for s in small_catalog if s.name == "Show the welcome screen"]
        assert {s.hive for s in welcome} == {Hive.MACHINE, Hive.USER}
        assert len({s.description for s in welcome}) == 1
        assert len({s.setting_path for s in welcome}) == 1

    def test_every_path_has_separator(self, small_catalog):
        assert all(PATH_SEPARATOR in s.setting_path for s in small_catalog)

    def test_unresolved_string_excluded(self):
        doc = parse_admx(admx(f'<categories><category name="C" displayName="$(string.C)"/></categories><policies>{policy("A")}{policy("B")}</policies>'))
        strings = LocaleStringTable("en-US", {"C": "Cat", "A": "Alpha", "A_Help": "Alpha help", "B": "Beta"})
        cat = resolve_catalog(doc.policies, doc.categories, strings, "X")
        assert [s.name for s in cat] == ["Alpha"]
        assert cat.report.excluded == 1
        assert cat.report.diagnostics[0].code == "unresolved-string"
        assert cat.report.diagnostics[0].subject.endswith(":B")

    def test_missing_explain_text_excluded(self):
        doc = parse_admx(admx(f'<categories><category name="C" displayName="$(string.C)"/></categories><policies>{policy("A")}{policy("B", explain=False)}</policies>'))
        strings = LocaleStringTable("en-US", {"C": "Cat", "A": "Alpha", "A_Help": "h", "B": "Beta"})
        cat = resolve_catalog(doc.policies, doc.categories, strings, "X")
        assert [d.code for d in cat.report.diagnostics] == ["no-explain-text"]

    def test_category_cycle(self):
        cats = [CategoryNode("A", "n", "$(string.A)", "n:B"), CategoryNode("B", "n", "$(string.B)", "n:A")]
        pol = PolicyDefinition("P", "n", PolicyClass.MACHINE, "n:A", "$(string.P)", "$(string.P)", "K", None)
        with pytest.raises(AdmxError, match="cycle"):
            resolve_catalog([pol], cats, LocaleStringTable("en-US", {"A": "a", "B": "b", "P": "p"}), "X")

    def test_cross_file_categories_merge(self, golden_catalog):
        # Personalization lives in one file, its parent Control Panel in another
        assert all(s.setting_path.startswith("Control Panel \\ Personalization \\ ") for s in golden_catalog)

    def test_parse_order_independent(self):
        pairs = [
            (GOLDEN_DIR / "admx" / "windows.admx", GOLDEN_DIR / "adml" / "en-US" / "windows.adml"),
            (GOLDEN_DIR / "admx" / "ControlPanelDisplay.admx", GOLDEN_DIR / "adml" / "en-US" / "ControlPanelDisplay.adml"),
        ]
        a = load_templates(pairs, "W")
        b = load_templates(list(reversed(pairs)), "W")
        assert a.to_dict() == b.to_dict()

    def test_json_round_trip(self, small_catalog, tmp_path):
        small_catalog.save(tmp_path / "c.json")
        assert SettingCatalog.load(tmp_path / "c.json").to_dict() == small_catalog.to_dict()


def test_string_ref_grammar():
    assert string_ref_id("$(string.Abc_1)") == "Abc_1"
    assert string_ref_id("Abc") is None
    assert string_ref_id(None) is None


@st.composite
def policy_sets(draw):
    n = draw(st.integers(1, 8))
    classes = draw(st.lists(st.sampled_from(["Machine", "User", "Both"]), min_size=n, max_size=n))
    resolvable = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return classes, resolvable


@settings(max_examples=60, deadline=None)
@given(policy_sets())
def test_resolution_totality(data):
    classes, resolvable = data
    body = "".join(policy(f"P{i}", c) for i, c in enumerate(classes))
    doc = parse_admx(admx(f'<categories><category name="C" displayName="$(string.C)"/></categories><policies>{body}</policies>'))
    strings = {"C": "Cat"}
    for i, ok in enumerate(resolvable):
        strings[f"P{i}"] = f"Policy {i}"
        if ok:
            strings[f"P{i}_Help"] = f"Help text {i}"
    kept_instances = sum(2 if c == "Both" else 1 for c in classes)
    try:
        cat = resolve_catalog(doc.policies, doc.categories, LocaleStringTable("en-US", strings), "X")
    except AdmxError:
        assert not any(resolvable)
        return
    assert kept_instances == len(cat.settings) + cat.report.excluded
    assert len({s.key for s in cat}) == len(cat.settings)
