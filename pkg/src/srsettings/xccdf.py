"""XCCDF guide ingestion and rule-to-setting matching."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable

from ._xml import XmlSource, child, children, local, parse_root, source_name, text_of
from .admx import Hive, PolicySetting, SettingCatalog
from .diagnostics import Diagnostic

KNOWN_PUBLISHERS = ("CIS", "Siemens")


@dataclass(frozen=True)
class RegistryHint:
    key: str  # without the hive prefix
    value_name: str | None
    hive: Hive | None = None


@dataclass
class GuideRule:
    rule_id: str
    title: str
    description: str = ""
    rationale: str = ""
    check_text: str = ""
    fix_text: str = ""
    registry_hint: RegistryHint | None = None
    selected: bool = True


@dataclass
class Guide:
    publisher: str
    platform_label: str
    version: str
    rules: list[GuideRule]
    title: str = ""
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def rule(self, rule_id: str) -> GuideRule:
        for r in self.rules:
            if r.rule_id == rule_id:
                return r
        raise KeyError(rule_id)

    def rationales(self) -> list[str]:
        return [r.rationale for r in self.rules if r.rationale]


class XccdfError(ValueError):
    pass


# -- registry hints ----------------------------------------------------------

_HIVES = {
    "hklm": Hive.MACHINE,
    "hkey_local_machine": Hive.MACHINE,
    "hkcu": Hive.USER,
    "hkey_current_user": Hive.USER,
    "hku": Hive.USER,
    "hkey_users": Hive.USER,
}

# HKLM\Software\Policies\...\ValueName  (value name is the last component)
_INLINE_PATH = re.compile(
    r"\b(HKLM|HKCU|HKU|HKEY_LOCAL_MACHINE|HKEY_CURRENT_USER|HKEY_USERS)"
    r"(?::)?\\((?:[^\\\s:;,'\"<>]+(?: [^\\\s:;,'\"<>]+)*\\)+)([^\\\s:;,'\"<>]+)",
    re.IGNORECASE,
)
# DISA-style "Registry Hive: ... Registry Path: ... Value Name: ..."
_BLOCK_HIVE = re.compile(r"Registry Hive:\s*(\S+)", re.IGNORECASE)
_BLOCK_PATH = re.compile(r"Registry Path:\s*(\\?[^\n]*?\\?)\s*(?:Value Name:|Value Type:|Value:|$)", re.IGNORECASE)
_BLOCK_VALUE = re.compile(r"Value Name:\s*(\S+)", re.IGNORECASE)


def normalize_registry_key(key: str) -> str:
    """Lowercase, strip the hive prefix and surrounding backslashes."""
    key = key.strip().strip("\\")
    head, _, rest = key.partition("\\")
    if head.rstrip(":").lower() in _HIVES:
        key = rest
    return re.sub(r"\\+", r"\\", key).strip("\\").lower()


def extract_registry_hint(text: str) -> RegistryHint | None:
    if not text:
        return None
    block_path = _BLOCK_PATH.search(text)
    block_value = _BLOCK_VALUE.search(text)
    if block_path and block_value:
        hive_m = _BLOCK_HIVE.search(text)
        hive = _HIVES.get(hive_m.group(1).lower()) if hive_m else None
        return RegistryHint(normalize_registry_key(block_path.group(1)), block_value.group(1), hive)
    m = _INLINE_PATH.search(text)
    if m:
        hive = _HIVES[m.group(1).lower()]
        return RegistryHint(normalize_registry_key(m.group(2)), m.group(3), hive)
    return None


# -- parsing -----------------------------------------------------------------


def _guess_publisher(root) -> str:
    blob = " ".join(
        filter(None, [root.get("id", ""), text_of(child(root, "title")), text_of(child(root, "front-matter"))]
               + [text_of(e) for e in children(root, "reference")]
               + [text_of(e) for e in children(root, "notice")]
               + [text_of(e) for e in root.iter() if isinstance(e.tag, str) and local(e.tag) == "publisher"])
    )
    if re.search(r"\bCIS\b|Center for Internet Security", blob):
        return "CIS"
    if re.search(r"siemens", blob, re.IGNORECASE):
        return "Siemens"
    return "Other"


def parse_xccdf(source: XmlSource, publisher: str | None = None) -> Guide:
    """Read every ``<Rule>`` of an XCCDF 1.1/1.2 benchmark, selected or not."""
    root = parse_root(source)
    src = source_name(source)
    if local(root.tag) != "Benchmark":
        raise XccdfError(f"expected <Benchmark> root, found <{local(root.tag)}>")
    platform = child(root, "platform")
    guide = Guide(
        publisher=publisher or _guess_publisher(root),
        platform_label=(platform.get("idref", "") if platform is not None else "") or text_of(child(root, "title")),
        version=text_of(child(root, "version")),
        rules=[],
        title=text_of(child(root, "title")),
    )
    seen: set[str] = set()
    for elem in root.iter():
        if not isinstance(elem.tag, str) or local(elem.tag) != "Rule":
            continue
        rule_id = elem.get("id", "")
        title = text_of(child(elem, "title"))
        if not title or not rule_id:
            guide.diagnostics.append(Diagnostic("error", "bad-rule", "rule without id or title skipped", rule_id, src))
            continue
        if rule_id in seen:
            guide.diagnostics.append(Diagnostic("error", "duplicate-rule", "duplicate rule id skipped", rule_id, src))
            continue
        seen.add(rule_id)
        checks = []
        for chk in children(elem, "check"):
            checks.extend(text_of(c) for c in children(chk, "check-content"))
            for exp in children(chk, "check-export"):
                checks.append(" ".join(filter(None, [exp.get("export-name"), exp.get("value-id")])))
        check_text = "\n".join(c for c in checks if c)
        fix_text = " ".join(text_of(f) for f in children(elem, "fixtext"))
        guide.rules.append(
            GuideRule(
                rule_id=rule_id,
                title=title,
                description=text_of(child(elem, "description")),
                rationale=text_of(child(elem, "rationale")),
                check_text=check_text,
                fix_text=fix_text,
                registry_hint=extract_registry_hint(check_text),
                selected=elem.get("selected", "true").lower() != "false",
            )
        )
    return guide


# -- matching ------------------------------------------------------------------

_QUOTES = "'\"‘’“”`"
_QUOTED = re.compile(r"['\"‘“]([^'\"’”]+)['\"’”]")
_USER_MARKERS = re.compile(r"user configuration|\bhkcu\b|hkey_current_user|\buser hive\b", re.IGNORECASE)


def normalize_title(text: str) -> str:
    """Quotes stripped, path separators unified, whitespace collapsed, lowercased."""
    text = text.translate({ord(q): None for q in _QUOTES})
    text = re.sub(r"\s*\\\s*", r"\\", text)
    return re.sub(r"\s+", " ", text).strip().lower()


def _normalize_path(path: str) -> str:
    return normalize_title(path)


def _contains(haystack: str, needle: str) -> bool:
    if not needle or needle not in haystack:
        return False
    return re.search(r"(?<![\w])" + re.escape(needle) + r"(?![\w])", haystack) is not None


@dataclass
class TargetPair:
    rule_id: str
    setting_path: str
    hive: Hive
    strategy: str  # "title" | "registry"


@dataclass
class AmbiguousRule:
    rule_id: str
    candidates: list[tuple[str, str]]  # (setting_path, hive)


@dataclass
class RuleTargetMap:
    pairs: list[TargetPair] = field(default_factory=list)
    unmatched_rules: list[str] = field(default_factory=list)
    ambiguous: list[AmbiguousRule] = field(default_factory=list)
    injectivity_violations: list[dict] = field(default_factory=list)

    def targeted(self) -> set[tuple[str, Hive]]:
        return {(p.setting_path, p.hive) for p in self.pairs}

    @property
    def match_rate(self) -> float:
        total = len(self.pairs) + len(self.unmatched_rules) + len(self.ambiguous)
        return len(self.pairs) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "pairs": [dict(asdict(p), hive=p.hive.value) for p in self.pairs],
            "unmatched": list(self.unmatched_rules),
            "ambiguous": [asdict(a) for a in self.ambiguous],
            "injectivity_violations": list(self.injectivity_violations),
            "match_rate": self.match_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


class _SettingIndex:
    def __init__(self, settings: Iterable[PolicySetting]):
        self.settings = sorted(settings, key=lambda s: (s.setting_path, s.hive.value))
        self.norm_path = {s.key: _normalize_path(s.setting_path) for s in self.settings}
        self.norm_name = {s.key: normalize_title(s.name) for s in self.settings}
        self.by_name: dict[str, list[PolicySetting]] = {}
        for s in self.settings:
            self.by_name.setdefault(self.norm_name[s.key], []).append(s)
        self.by_registry: dict[tuple[str, str], list[PolicySetting]] = {}
        for s in self.settings:
            if s.value_name:
                k = (normalize_registry_key(s.registry_key), s.value_name.lower())
                self.by_registry.setdefault(k, []).append(s)


def _title_candidates(rule: GuideRule, idx: _SettingIndex) -> list[PolicySetting]:
    title = normalize_title(rule.title)
    locator = normalize_title(" ".join([rule.title, rule.fix_text, rule.description]))
    # A full category path spelled out in the rule (fixtext usually names the
    # GPO UI path) is the strongest evidence.
    full = [s for s in idx.settings if _contains(locator, idx.norm_path[s.key])]
    if full:
        return _drop_shadowed(full, idx, by="path")
    quoted = {normalize_title(q) for q in _QUOTED.findall(rule.title)}
    exact = [s for q in sorted(quoted) for s in idx.by_name.get(q, [])]
    if exact:
        return _drop_shadowed(exact, idx, by="name")
    loose = [s for name, group in idx.by_name.items() if len(name.split()) >= 2 and _contains(title, name) for s in group]
    return _drop_shadowed(loose, idx, by="name")


def _drop_shadowed(cands: list[PolicySetting], idx: _SettingIndex, by: str) -> list[PolicySetting]:
    """Remove candidates whose matched text is a strict substring of another's."""
    text = idx.norm_path if by == "path" else idx.norm_name
    keys = {text[s.key] for s in cands}
    keep = [s for s in cands if not any(text[s.key] != o and text[s.key] in o for o in keys)]
    uniq = {s.key: s for s in keep}
    return [uniq[k] for k in sorted(uniq, key=lambda k: (k[0], k[1].value))]


def _pick_hive(rule: GuideRule, cands: list[PolicySetting]) -> list[PolicySetting]:
    paths = {s.setting_path for s in cands}
    if len(paths) != 1 or len(cands) == 1:
        return cands
    names_user = bool(_USER_MARKERS.search(" ".join([rule.title, rule.fix_text, rule.check_text])))
    if rule.registry_hint is not None and rule.registry_hint.hive is not None:
        names_user = rule.registry_hint.hive is Hive.USER
    want = Hive.USER if names_user else Hive.MACHINE
    chosen = [s for s in cands if s.hive is want]
    return chosen or cands


def _registry_candidates(rule: GuideRule, idx: _SettingIndex, within: list[PolicySetting] | None) -> list[PolicySetting]:
    hint = rule.registry_hint
    if hint is None or not hint.value_name:
        return []
    found = idx.by_registry.get((hint.key, hint.value_name.lower()), [])
    if within is not None:
        keys = {s.key for s in within}
        found = [s for s in found if s.key in keys]
    if hint.hive is not None and any(s.hive is hint.hive for s in found):
        found = [s for s in found if s.hive is hint.hive]
    return found


def match_rules(guide: Guide, catalog: SettingCatalog | Iterable[PolicySetting]) -> RuleTargetMap:
    """Compute the rule -> setting map for ``guide`` against ``catalog``.

    Rules are matched by policy name or path found in the rule text first and
    by registry key/value second; ties that neither strategy breaks are
    reported as ambiguous.
    """
    settings = catalog.settings if isinstance(catalog, SettingCatalog) else list(catalog)
    idx = _SettingIndex(settings)
    result = RuleTargetMap()
    for rule in guide.rules:
        cands = _pick_hive(rule, _title_candidates(rule, idx))
        strategy = "title"
        if len(cands) != 1:
            reg = _registry_candidates(rule, idx, cands if cands else None)
            if len(reg) > 1:
                reg = _pick_hive(rule, reg)
            if len(reg) == 1:
                cands, strategy = reg, "registry"
        if len(cands) == 1:
            s = cands[0]
            result.pairs.append(TargetPair(rule.rule_id, s.setting_path, s.hive, strategy))
        elif not cands:
            result.unmatched_rules.append(rule.rule_id)
        else:
            result.ambiguous.append(AmbiguousRule(rule.rule_id, [(s.setting_path, s.hive.value) for s in cands]))

    by_target: dict[tuple[str, Hive], list[str]] = {}
    for p in result.pairs:
        by_target.setdefault((p.setting_path, p.hive), []).append(p.rule_id)
    for (path, hive), rules in by_target.items():
        if len(rules) > 1:
            result.injectivity_violations.append({"setting": path, "hive": hive.value, "rules": rules})
    return result


__all__ = [
    "AmbiguousRule",
    "Guide",
    "GuideRule",
    "RegistryHint",
    "RuleTargetMap",
    "TargetPair",
    "XccdfError",
    "extract_registry_hint",
    "match_rules",
    "normalize_registry_key",
    "normalize_title",
    "parse_xccdf",
]
