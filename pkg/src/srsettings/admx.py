"""Administrative Template ingestion.

ADMX files carry policy and category definitions, ADML files the per-locale
strings those definitions reference through ``$(string.Id)``.  Resolving both
yields a :class:`SettingCatalog`: one :class:`PolicySetting` per (policy, hive)
with a full category path and the English explain text as description.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._xml import XmlParseError, XmlSource, child, children, collapse, local, parse_root, source_name
from .diagnostics import Diagnostic

logger = logging.getLogger(__name__)

PATH_SEPARATOR = " \\ "
DEFAULT_LOCALE = "en-US"

_STRING_REF = re.compile(r"^\$\(string\.([^)\s]+)\)$")


class AdmxError(ValueError):
    pass


class Hive(str, Enum):
    MACHINE = "Machine"
    USER = "User"


class PolicyClass(str, Enum):
    MACHINE = "Machine"
    USER = "User"
    BOTH = "Both"

    def hives(self) -> tuple[Hive, ...]:
        if self is PolicyClass.BOTH:
            return (Hive.MACHINE, Hive.USER)
        return (Hive(self.value),)


def string_ref_id(ref: str | None) -> str | None:
    """``"$(string.Foo)"`` -> ``"Foo"``; ``None`` for anything else."""
    if not ref:
        return None
    m = _STRING_REF.match(ref.strip())
    return m.group(1) if m else None


@dataclass(frozen=True)
class CategoryNode:
    category_id: str
    namespace: str
    display_name_ref: str
    parent_ref: str | None = None  # qualified "namespace:name"

    @property
    def key(self) -> str:
        return f"{self.namespace}:{self.category_id}"


@dataclass(frozen=True)
class PolicyDefinition:
    policy_id: str
    namespace: str
    policy_class: PolicyClass
    category_ref: str | None  # qualified "namespace:name"
    display_name_ref: str
    explain_text_ref: str | None
    registry_key: str
    value_name: str | None = None


@dataclass
class AdmxDocument:
    namespace: str
    prefixes: dict[str, str]
    policies: list[PolicyDefinition]
    categories: list[CategoryNode]
    diagnostics: list[Diagnostic] = field(default_factory=list)


@dataclass
class LocaleStringTable:
    language: str
    entries: dict[str, str]
    namespace: str | None = None

    def get(self, string_id: str) -> str | None:
        return self.entries.get(string_id)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PolicySetting:
    setting_path: str
    hive: Hive
    description: str
    registry_key: str
    value_name: str | None
    source_policy_id: str

    @property
    def key(self) -> tuple[str, Hive]:
        return (self.setting_path, self.hive)

    @property
    def name(self) -> str:
        """Policy display name, the last path component."""
        return self.setting_path.rsplit(PATH_SEPARATOR, 1)[-1]

    def to_dict(self) -> dict:
        return {
            "setting": self.setting_path,
            "hive": self.hive.value,
            "description": self.description,
            "registry_key": self.registry_key,
            "value_name": self.value_name,
            "source_policy_id": self.source_policy_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PolicySetting":
        return cls(
            setting_path=d["setting"],
            hive=Hive(d["hive"]),
            description=d["description"],
            registry_key=d.get("registry_key", ""),
            value_name=d.get("value_name"),
            source_policy_id=d.get("source_policy_id", ""),
        )


@dataclass
class ResolutionReport:
    parsed: int = 0  # setting instances before exclusion, Both counted twice
    resolved: int = 0
    excluded: int = 0
    warnings: int = 0
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "parsed": self.parsed,
            "resolved": self.resolved,
            "excluded": self.excluded,
            "warnings": self.warnings,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


@dataclass
class SettingCatalog:
    os_label: str
    settings: list[PolicySetting]
    report: ResolutionReport = field(default_factory=ResolutionReport)

    def __len__(self) -> int:
        return len(self.settings)

    def __iter__(self):
        return iter(self.settings)

    def index(self) -> dict[tuple[str, Hive], PolicySetting]:
        return {s.key: s for s in self.settings}

    def to_dict(self) -> dict:
        return {
            "os_label": self.os_label,
            "settings": [s.to_dict() for s in self.settings],
            "report": self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SettingCatalog":
        report = d.get("report") or {}
        rep = ResolutionReport(
            parsed=report.get("parsed", 0),
            resolved=report.get("resolved", 0),
            excluded=report.get("excluded", 0),
            warnings=report.get("warnings", 0),
            diagnostics=[Diagnostic(**x) for x in report.get("diagnostics", [])],
        )
        return cls(d["os_label"], [PolicySetting.from_dict(s) for s in d["settings"]], rep)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SettingCatalog":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- parsing ---------------------------------------------------------------

_ADMX_TOP_LEVEL = {
    "policyNamespaces",
    "supersededAdm",
    "superseded-adm",
    "resources",
    "supportedOn",
    "categories",
    "policies",
    "annotation",
}


def parse_admx(source: XmlSource) -> AdmxDocument:
    """Parse one ADMX document into policy and category definitions.

    Policies lacking a name, a display name or a registry key are skipped
    with a diagnostic; unknown top-level elements produce warnings.
    """
    root = parse_root(source)
    src = source_name(source)
    if local(root.tag) != "policyDefinitions":
        raise AdmxError(f"expected <policyDefinitions> root, found <{local(root.tag)}>")

    diags: list[Diagnostic] = []
    target_ns = ""
    prefixes: dict[str, str] = {}
    ns_elem = child(root, "policyNamespaces")
    if ns_elem is not None:
        for t in children(ns_elem, "target"):
            target_ns = t.get("namespace", "")
            if t.get("prefix"):
                prefixes[t.get("prefix")] = target_ns
        for u in children(ns_elem, "using"):
            if u.get("prefix"):
                prefixes[u.get("prefix")] = u.get("namespace", "")

    def qualify(ref: str) -> str:
        ref = ref.strip()
        if ":" in ref:
            prefix, name = ref.split(":", 1)
            ns = prefixes.get(prefix)
            if ns is None:
                diags.append(Diagnostic("warning", "unknown-prefix", f"namespace prefix {prefix!r} is not declared", ref, src))
                ns = prefix
            return f"{ns}:{name}"
        return f"{target_ns}:{ref}"

    for elem in root:
        if isinstance(elem.tag, str) and local(elem.tag) not in _ADMX_TOP_LEVEL:
            diags.append(Diagnostic("warning", "unknown-element", f"skipped <{local(elem.tag)}>", local(elem.tag), src))

    categories: list[CategoryNode] = []
    for cats in children(root, "categories"):
        for elem in cats:
            if not isinstance(elem.tag, str):
                continue
            if local(elem.tag) != "category":
                diags.append(Diagnostic("warning", "unknown-element", f"skipped <{local(elem.tag)}> in <categories>", local(elem.tag), src))
                continue
            name = elem.get("name")
            display = elem.get("displayName")
            if not name or string_ref_id(display) is None:
                diags.append(Diagnostic("error", "bad-category", "category without name or valid displayName skipped", name or "", src))
                continue
            parent = child(elem, "parentCategory")
            parent_ref = qualify(parent.get("ref")) if parent is not None and parent.get("ref") else None
            categories.append(CategoryNode(name, target_ns, display.strip(), parent_ref))

    policies: list[PolicyDefinition] = []
    seen: set[tuple[str, str, PolicyClass]] = set()
    for pols in children(root, "policies"):
        for elem in pols:
            if not isinstance(elem.tag, str):
                continue
            if local(elem.tag) != "policy":
                diags.append(Diagnostic("warning", "unknown-element", f"skipped <{local(elem.tag)}> in <policies>", local(elem.tag), src))
                continue
            pol = _policy_from_element(elem, target_ns, qualify, diags, src)
            if pol is None:
                continue
            ident = (pol.namespace, pol.policy_id, pol.policy_class)
            if ident in seen:
                diags.append(Diagnostic("error", "duplicate-policy", "duplicate policy definition skipped", pol.policy_id, src))
                continue
            seen.add(ident)
            policies.append(pol)

    return AdmxDocument(target_ns, prefixes, policies, categories, diags)


def _policy_from_element(elem, target_ns, qualify, diags, src) -> PolicyDefinition | None:
    name = elem.get("name")
    if not name:
        diags.append(Diagnostic("error", "bad-policy", "policy without name skipped", "", src))
        return None
    display = elem.get("displayName")
    key = elem.get("key")
    if string_ref_id(display) is None:
        diags.append(Diagnostic("error", "bad-policy", "missing or malformed displayName", name, src))
        return None
    if not key:
        diags.append(Diagnostic("error", "bad-policy", "missing registry key", name, src))
        return None
    try:
        pclass = PolicyClass(elem.get("class", ""))
    except ValueError:
        diags.append(Diagnostic("error", "bad-policy", f"invalid class {elem.get('class')!r}", name, src))
        return None
    explain = elem.get("explainText")
    if explain is not None and string_ref_id(explain) is None:
        diags.append(Diagnostic("warning", "bad-explain-ref", f"malformed explainText {explain!r}", name, src))
        explain = None
    parent = child(elem, "parentCategory")
    cat_ref = qualify(parent.get("ref")) if parent is not None and parent.get("ref") else None
    return PolicyDefinition(
        policy_id=name,
        namespace=target_ns,
        policy_class=pclass,
        category_ref=cat_ref,
        display_name_ref=display.strip(),
        explain_text_ref=explain.strip() if explain else None,
        registry_key=key,
        value_name=elem.get("valueName"),
    )


def parse_adml(source: XmlSource, language: str = DEFAULT_LOCALE, namespace: str | None = None) -> LocaleStringTable:
    root = parse_root(source)
    table = None
    for elem in root.iter():
        if isinstance(elem.tag, str) and local(elem.tag) == "stringTable":
            table = elem
            break
    if table is None:
        raise AdmxError("ADML document has no <stringTable>")
    entries: dict[str, str] = {}
    for s in children(table, "string"):
        sid = s.get("id")
        if not sid:
            continue
        if sid in entries:
            raise AdmxError(f"duplicate string id {sid!r}")
        entries[sid] = collapse(s.text)
    # Empty strings are dropped; references to them fail at resolution.
    return LocaleStringTable(language, {k: v for k, v in entries.items() if v}, namespace)


# -- resolution ------------------------------------------------------------


def _category_paths(cats: Sequence[CategoryNode]) -> dict[str, CategoryNode]:
    by_key: dict[str, CategoryNode] = {}
    for c in cats:
        by_key.setdefault(c.key, c)
    # cycle check over the merged forest
    state: dict[str, int] = {}
    for start in by_key:
        chain = []
        node = start
        while node is not None and node in by_key and state.get(node) != 2:
            if state.get(node) == 1:
                raise AdmxError(f"category cycle through {node!r}")
            state[node] = 1
            chain.append(node)
            node = by_key[node].parent_ref
        for n in chain:
            state[n] = 2
    return by_key


def resolve_catalog(
    defs: Iterable[PolicyDefinition],
    cats: Iterable[CategoryNode],
    strings: LocaleStringTable | Mapping[str, LocaleStringTable],
    os_label: str,
) -> SettingCatalog:
    """Join definitions with locale strings into a catalog of settings.

    ``strings`` is either one table used for every namespace or a mapping
    from ADMX target namespace to that file's table.  Policies whose strings
    or categories cannot be resolved are excluded and counted in the report.
    """
    cats = list(cats)
    by_key = _category_paths(cats)
    report = ResolutionReport()

    def table_for(ns: str) -> LocaleStringTable | None:
        if isinstance(strings, LocaleStringTable):
            return strings
        return strings.get(ns)

    def lookup(ns: str, ref: str | None) -> str | None:
        sid = string_ref_id(ref)
        tbl = table_for(ns)
        if sid is None or tbl is None:
            return None
        return tbl.get(sid)

    path_cache: dict[str, str | None] = {}

    def category_path(key: str) -> str | None:
        if key in path_cache:
            return path_cache[key]
        names = []
        node: str | None = key
        while node is not None:
            cat = by_key.get(node)
            if cat is None:
                path_cache[key] = None
                return None
            text = lookup(cat.namespace, cat.display_name_ref)
            if text is None:
                path_cache[key] = None
                return None
            names.append(text)
            node = cat.parent_ref
        path_cache[key] = PATH_SEPARATOR.join(reversed(names))
        return path_cache[key]

    def exclude(pol: PolicyDefinition, n: int, code: str, message: str) -> None:
        report.excluded += n
        report.diagnostics.append(Diagnostic("error", code, message, f"{pol.namespace}:{pol.policy_id}"))

    ordered = sorted(defs, key=lambda p: (p.namespace, p.policy_id, p.policy_class.value))
    kept: dict[tuple[str, Hive], PolicySetting] = {}
    for pol in ordered:
        hives = pol.policy_class.hives()
        report.parsed += len(hives)
        name = lookup(pol.namespace, pol.display_name_ref)
        if name is None:
            exclude(pol, len(hives), "unresolved-string", f"display name {pol.display_name_ref} not found")
            continue
        if pol.explain_text_ref is None:
            exclude(pol, len(hives), "no-explain-text", "policy has no explain text")
            continue
        desc = lookup(pol.namespace, pol.explain_text_ref)
        if desc is None:
            exclude(pol, len(hives), "unresolved-string", f"explain text {pol.explain_text_ref} not found")
            continue
        if pol.category_ref is None:
            exclude(pol, len(hives), "uncategorized", "policy has no parent category")
            continue
        cpath = category_path(pol.category_ref)
        if cpath is None:
            exclude(pol, len(hives), "unresolved-category", f"category {pol.category_ref} or its display strings not found")
            continue
        path = cpath + PATH_SEPARATOR + name
        for hive in hives:
            if (path, hive) in kept:
                report.excluded += 1
                report.diagnostics.append(
                    Diagnostic("error", "duplicate-setting", f"duplicate of {kept[(path, hive)].source_policy_id}", f"{pol.namespace}:{pol.policy_id}")
                )
                continue
            kept[(path, hive)] = PolicySetting(path, hive, desc, pol.registry_key, pol.value_name, pol.policy_id)

    settings = sorted(kept.values(), key=lambda s: (s.setting_path, s.hive.value))
    report.resolved = len(settings)
    report.warnings = sum(1 for d in report.diagnostics if d.severity == "warning")
    if not settings:
        raise AdmxError("empty catalog")
    return SettingCatalog(os_label, settings, report)


def _find_adml(adml_dir: Path, stem: str, locale: str) -> Path | None:
    for cand in (adml_dir / locale / f"{stem}.adml", adml_dir / f"{stem}.adml"):
        if cand.is_file():
            return cand
    lowered = stem.lower() + ".adml"
    for base in (adml_dir / locale, adml_dir):
        if base.is_dir():
            for p in base.iterdir():
                if p.name.lower() == lowered:
                    return p
    return None


def load_templates(
    pairs: Iterable[tuple[XmlSource, XmlSource | None]],
    os_label: str,
    locale: str = DEFAULT_LOCALE,
) -> SettingCatalog:
    """Parse and merge several ADMX/ADML pairs into a single catalog."""
    defs: list[PolicyDefinition] = []
    cats: list[CategoryNode] = []
    tables: dict[str, LocaleStringTable] = {}
    diags: list[Diagnostic] = []
    for admx_src, adml_src in pairs:
        doc = parse_admx(admx_src)
        defs.extend(doc.policies)
        cats.extend(doc.categories)
        diags.extend(doc.diagnostics)
        if adml_src is None:
            diags.append(Diagnostic("warning", "missing-adml", "no ADML for this ADMX", doc.namespace))
            continue
        table = parse_adml(adml_src, locale, doc.namespace)
        if doc.namespace in tables:
            diags.append(Diagnostic("warning", "namespace-collision", "namespace defined by several files; strings merged", doc.namespace))
            tables[doc.namespace].entries.update(table.entries)
        else:
            tables[doc.namespace] = table
    catalog = resolve_catalog(defs, cats, tables, os_label)
    catalog.report.diagnostics[:0] = diags
    catalog.report.warnings = sum(1 for d in catalog.report.diagnostics if d.severity == "warning")
    return catalog


def load_template_dirs(
    admx_dir: str | os.PathLike,
    adml_dir: str | os.PathLike | None,
    os_label: str,
    locale: str = DEFAULT_LOCALE,
) -> SettingCatalog:
    """Load every ``*.admx`` in ``admx_dir`` with its ``<locale>`` ADML."""
    admx_dir = Path(admx_dir)
    adml_dir = Path(adml_dir) if adml_dir is not None else admx_dir
    files = sorted(p for p in admx_dir.iterdir() if p.suffix.lower() == ".admx")
    if not files:
        raise AdmxError(f"no .admx files in {admx_dir}")
    pairs = [(p, _find_adml(adml_dir, p.stem, locale)) for p in files]
    logger.info("loading %d template files from %s", len(pairs), admx_dir)
    return load_templates(pairs, os_label, locale)


__all__ = [
    "AdmxDocument",
    "AdmxError",
    "CategoryNode",
    "Hive",
    "LocaleStringTable",
    "PATH_SEPARATOR",
    "PolicyClass",
    "PolicyDefinition",
    "PolicySetting",
    "ResolutionReport",
    "SettingCatalog",
    "XmlParseError",
    "load_template_dirs",
    "load_templates",
    "parse_adml",
    "parse_admx",
    "resolve_catalog",
]
