"""Command-line entry point.

One YAML config drives every command; flags override config values.  Each
command writes its artifacts plus ``manifest-<command>.json`` (inputs with
hashes, seed, versions, outputs with hashes) into the output directory.

Exit codes: 0 ok, 1 configuration/validation error, 2 pipeline failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import yaml

from . import __version__
from .admx import SettingCatalog, load_template_dirs
from .dataset import (
    LabeledDataset,
    dedup_hives,
    label_catalog,
    read_dataset,
    write_dataset,
)
from .evaluation import (
    cross_eval,
    error_listing,
    evaluate_predictions,
    load_reports,
    render_prf_table,
    render_table,
    save_reports,
    sweep_dummy,
    table_rows,
    write_predictions,
)
from .lda import LdaClassifier, LdaConfig, top_terms
from .lexicon import (
    Lexicon,
    LexiconClassifier,
    build_lexicons,
    exclusive_sr_words,
    extract_ngrams,
)
from .textprep import Preprocessor, default_stoplist, default_stopwords, frequent_stems, load_wordlist
from .xccdf import match_rules, parse_xccdf

logger = logging.getLogger("srsettings")

EXIT_OK, EXIT_VALIDATION, EXIT_PIPELINE = 0, 1, 2
COMMANDS = ("build-catalog", "build-dataset", "lexicon", "train", "classify", "evaluate", "report")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class DatasetRef:
    path: str
    os_label: str | None = None
    guide: str = ""


@dataclass
class GuideRef:
    path: str
    publisher: str | None = None


@dataclass
class Paths:
    admx_dir: str | None = None
    adml_dir: str | None = None
    catalog: str | None = None
    guides: list[GuideRef] = field(default_factory=list)
    datasets: list[DatasetRef] = field(default_factory=list)
    stoplist: str | None = None
    stopwords: str | None = None
    model: str | None = None
    lexicon_dir: str | None = None
    predictions: list[str] = field(default_factory=list)
    reports: str | None = None


@dataclass
class LexiconParams:
    threshold: float = 0.5
    mode: str = "max"
    min_frequency: int = 5
    ngram: int = 2
    ngram_min_frequency: int = 2
    frequent: int = 300
    use_rationales: bool = True


@dataclass
class DummyParams:
    x_grid: list[float] = field(default_factory=lambda: [round(0.05 * i, 2) for i in range(21)])
    seeds: int = 0  # 0 disables the sweep


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    os_label: str = ""
    locale: str = "en-US"
    lda: LdaConfig = field(default_factory=LdaConfig)
    lexicon: LexiconParams = field(default_factory=LexiconParams)
    dummy: DummyParams = field(default_factory=DummyParams)
    classifier: str = "lda"
    dedup_hives: bool = False
    extended: bool = False
    seed: int = 0
    out: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)


# -- config loading ----------------------------------------------------------------


def _build(cls, data: Any, where: str, errors: list[str]):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        errors.append(f"{where}: expected a mapping")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in known:
            errors.append(f"{where}.{k}: unknown field")
            continue
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def _ref_list(items, cls, where: str, errors: list[str]) -> list:
    out = []
    for i, item in enumerate(items or []):
        if isinstance(item, str):
            out.append(cls(item))
        elif isinstance(item, dict):
            out.append(_build(cls, item, f"{where}[{i}]", errors))
        else:
            errors.append(f"{where}[{i}]: expected a path or a mapping")
    return out


def config_from_dict(data: dict) -> RunConfig:
    errors: list[str] = []
    data = dict(data or {})
    paths_raw = dict(data.pop("paths", None) or {})
    guides = _ref_list(paths_raw.pop("guides", None), GuideRef, "paths.guides", errors)
    datasets = _ref_list(paths_raw.pop("datasets", None), DatasetRef, "paths.datasets", errors)
    preds = paths_raw.pop("predictions", None) or []
    if isinstance(preds, str):
        preds = [preds]
    paths = _build(Paths, paths_raw, "paths", errors)
    paths.guides, paths.datasets, paths.predictions = guides, datasets, list(preds)
    cfg = RunConfig(
        paths=paths,
        lda=_build(LdaConfig, data.pop("lda", None), "lda", errors),
        lexicon=_build(LexiconParams, data.pop("lexicon", None), "lexicon", errors),
        dummy=_build(DummyParams, data.pop("dummy", None), "dummy", errors),
    )
    for k, v in data.items():
        if k in {f.name for f in fields(RunConfig)}:
            setattr(cfg, k, v)
        else:
            errors.append(f"{k}: unknown field")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"--config: {path} does not exist"])
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"--config: invalid YAML ({exc})"]) from None
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.threshold is not None:
        cfg.lda.threshold = args.threshold
    if args.topics is not None:
        cfg.lda.num_topics = args.topics
    if args.passes is not None:
        cfg.lda.passes = args.passes
    p = cfg.paths
    for attr in ("admx_dir", "adml_dir", "catalog", "stoplist", "stopwords", "model", "lexicon_dir", "reports"):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(p, attr, v)
    if args.guide:
        p.guides = [GuideRef(g, args.publisher) for g in args.guide]
    elif args.publisher:
        for g in p.guides:
            g.publisher = args.publisher
    if args.dataset:
        p.datasets = [DatasetRef(d) for d in args.dataset]
    if args.predictions:
        p.predictions = list(args.predictions)
    if args.os_label is not None:
        cfg.os_label = args.os_label
    if args.classifier is not None:
        cfg.classifier = args.classifier
    if args.extended:
        cfg.extended = True
    if args.dedup_hives:
        cfg.dedup_hives = True
    if args.dummy_seeds is not None:
        cfg.dummy.seeds = args.dummy_seeds
    # the run seed drives every seeded component
    cfg.lda.seed = cfg.seed
    return cfg


def validate(cfg: RunConfig, command: str) -> None:
    errors: list[str] = []
    p = cfg.paths

    def need_file(value: str | None, name: str) -> None:
        if not value:
            errors.append(f"paths.{name}: required for {command}")
        elif not Path(value).is_file():
            errors.append(f"paths.{name}: {value} does not exist")

    def need_dir(value: str | None, name: str) -> None:
        if not value:
            errors.append(f"paths.{name}: required for {command}")
        elif not Path(value).is_dir():
            errors.append(f"paths.{name}: {value} is not a directory")

    def opt_file(value: str | None, name: str) -> None:
        if value and not Path(value).is_file():
            errors.append(f"paths.{name}: {value} does not exist")

    def need_datasets() -> None:
        if not p.datasets:
            errors.append(f"paths.datasets: at least one dataset is required for {command}")
        for i, d in enumerate(p.datasets):
            if not Path(d.path).is_file():
                errors.append(f"paths.datasets[{i}]: {d.path} does not exist")

    opt_file(p.stoplist, "stoplist")
    opt_file(p.stopwords, "stopwords")
    try:
        cfg.lda.validate()
    except ValueError as exc:
        errors.append(f"lda: {exc}")
    if not 0 < cfg.lexicon.threshold <= 1:
        errors.append("lexicon.threshold: must lie in (0, 1]")
    if cfg.lexicon.mode not in ("max", "aggregate"):
        errors.append("lexicon.mode: must be 'max' or 'aggregate'")
    if cfg.classifier not in ("lda", "lexicon"):
        errors.append("classifier: must be 'lda' or 'lexicon'")

    if command == "build-catalog":
        need_dir(p.admx_dir, "admx_dir")
        if p.adml_dir:
            need_dir(p.adml_dir, "adml_dir")
        if not cfg.os_label:
            errors.append("os_label: required for build-catalog")
    elif command == "build-dataset":
        if p.catalog:
            need_file(p.catalog, "catalog")
        else:
            need_dir(p.admx_dir, "admx_dir")
            if not cfg.os_label:
                errors.append("os_label: required when building the catalog from templates")
        if not p.guides:
            errors.append("paths.guides: at least one guide is required for build-dataset")
        for i, g in enumerate(p.guides):
            if not Path(g.path).is_file():
                errors.append(f"paths.guides[{i}]: {g.path} does not exist")
    elif command == "lexicon":
        need_datasets()
        for i, g in enumerate(p.guides):
            if not Path(g.path).is_file():
                errors.append(f"paths.guides[{i}]: {g.path} does not exist")
    elif command == "train":
        need_datasets()
    elif command in ("classify", "evaluate"):
        need_datasets()
        if command == "evaluate" and p.predictions:
            for i, f in enumerate(p.predictions):
                if not Path(f).is_file():
                    errors.append(f"paths.predictions[{i}]: {f} does not exist")
            if len(p.predictions) != len(p.datasets):
                errors.append("paths.predictions: one predictions file per dataset is required")
        elif cfg.classifier == "lda":
            need_file(p.model, "model")
        else:
            need_dir(p.lexicon_dir, "lexicon_dir")
    elif command == "report":
        need_file(p.reports, "reports")
    if errors:
        raise ConfigError(errors)


# -- manifest ---------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict[str, str]:
    import nltk
    import numpy
    import scipy

    return {
        "srsettings": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
        "nltk": nltk.__version__,
    }


class Run:
    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def use(self, path: str | Path) -> str:
        path = str(path)
        if path not in self.inputs:
            self.inputs.append(path)
        return path

    def emit(self, name: str, content: str) -> Path:
        target = self.out / name
        target.write_text(content, encoding="utf-8")
        self.produced(target)
        return target

    def emit_json(self, name: str, obj: Any) -> Path:
        return self.emit(name, json.dumps(obj, indent=2, ensure_ascii=False, default=_json_default) + "\n")

    def produced(self, path: Path) -> None:
        if str(path) not in self.outputs:
            self.outputs.append(str(path))

    def _hash_entry(self, path: str) -> dict:
        p = Path(path)
        if p.is_dir():
            files = sorted(x for x in p.rglob("*") if x.is_file())
            h = hashlib.sha256()
            for f in files:
                h.update(str(f.relative_to(p)).encode())
                h.update(sha256_file(f).encode())
            return {"path": path, "sha256": h.hexdigest(), "files": len(files)}
        return {"path": path, "sha256": sha256_file(p)}

    def write_manifest(self) -> Path:
        manifest = {
            "command": self.command,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "inputs": [self._hash_entry(p) for p in self.inputs],
            "outputs": [self._hash_entry(p) for p in self.outputs],
            "versions": _versions(),
        }
        target = self.out / f"manifest-{self.command}.json"
        target.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return target


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower() or "dataset"


# -- commands ---------------------------------------------------------------------


def _preprocessor(cfg: RunConfig, run: Run) -> Preprocessor:
    p = cfg.paths
    stop = load_wordlist(run.use(p.stopwords)) if p.stopwords else default_stopwords()
    stoplist = load_wordlist(run.use(p.stoplist)) if p.stoplist else default_stoplist()
    return Preprocessor(stopwords=stop, stoplist=stoplist)


def _catalog(cfg: RunConfig, run: Run) -> SettingCatalog:
    p = cfg.paths
    if p.catalog:
        return SettingCatalog.load(run.use(p.catalog))
    run.use(p.admx_dir)
    if p.adml_dir:
        run.use(p.adml_dir)
    return load_template_dirs(p.admx_dir, p.adml_dir, cfg.os_label, cfg.locale)


def _datasets(cfg: RunConfig, run: Run) -> list[LabeledDataset]:
    out = []
    for ref in cfg.paths.datasets:
        ds = read_dataset(run.use(ref.path), os_label=ref.os_label, guide_publisher=ref.guide)
        if cfg.dedup_hives:
            ds, removed = dedup_hives(ds)
            logger.info("%s: removed %d hive duplicates", ref.path, len(removed))
        out.append(ds)
    return out


def cmd_build_catalog(cfg: RunConfig, run: Run) -> None:
    catalog = _catalog(cfg, run)
    run.emit_json("catalog.json", catalog.to_dict())
    rep = catalog.report
    run.emit_json(
        "resolution-report.json",
        {"os_label": catalog.os_label, "parsed": rep.parsed, "resolved": rep.resolved, "excluded": rep.excluded, "warnings": rep.warnings,
         "diagnostics": [d.to_dict() for d in rep.diagnostics]},
    )
    print(f"{catalog.os_label}: {rep.resolved} settings ({rep.parsed} parsed, {rep.excluded} excluded)")


def cmd_build_dataset(cfg: RunConfig, run: Run) -> None:
    catalog = _catalog(cfg, run)
    for ref in cfg.paths.guides:
        guide = parse_xccdf(run.use(ref.path), publisher=ref.publisher)
        targets = match_rules(guide, catalog)
        ds = label_catalog(catalog, targets, guide)
        stem = _slug(Path(ref.path).stem)
        out = run.out / f"{stem}.yaml"
        write_dataset(ds, out, extended=cfg.extended)
        run.produced(out)
        report = targets.to_dict()
        report["guide"] = {"publisher": guide.publisher, "version": guide.version, "rules": len(guide.rules)}
        report["diagnostics"] = [d.to_dict() for d in guide.diagnostics]
        run.emit_json(f"{stem}-match-report.json", report)
        print(f"{ref.path}: {len(targets.pairs)} of {len(guide.rules)} rules matched; {ds.sr_count} SR of {len(ds)} settings")


def cmd_lexicon(cfg: RunConfig, run: Run) -> None:
    prep = _preprocessor(cfg, run)
    ds = _datasets(cfg, run)[0]
    sr = [prep(t) for t in ds.sr_descriptions()]
    nsr = [prep(t) for t in ds.nsr_descriptions()]
    rationales = None
    if cfg.lexicon.use_rationales and cfg.paths.guides:
        rationales = []
        for ref in cfg.paths.guides:
            rationales.extend(prep(r) for r in parse_xccdf(run.use(ref.path), ref.publisher).rationales())
    lp = cfg.lexicon
    sr_lex, nsr_lex = build_lexicons(sr, nsr, rationales, lp.threshold, lp.mode)
    run.emit("lexicon-sr.json", sr_lex.to_json() + "\n")
    run.emit("lexicon-nsr.json", nsr_lex.to_json() + "\n")
    run.emit("wordcloud-sr.csv", sr_lex.wordcloud_csv())
    run.emit("wordcloud-nsr.csv", nsr_lex.wordcloud_csv())
    run.emit_json("exclusive-sr-words.json", exclusive_sr_words(sr, nsr, lp.min_frequency))
    run.emit_json("ngrams-sr.json", extract_ngrams(sr, lp.ngram, lp.ngram_min_frequency))
    run.emit_json("frequent-stems.json", frequent_stems(sr + nsr, lp.frequent))
    print(f"SR lexicon: {len(sr_lex)} words; NSR lexicon: {len(nsr_lex)} words")


def cmd_train(cfg: RunConfig, run: Run) -> None:
    prep = _preprocessor(cfg, run)
    ds = _datasets(cfg, run)[0]
    clf = LdaClassifier.train(ds.sr_descriptions(), cfg.lda, prep)
    target = Path(cfg.paths.model) if cfg.paths.model else run.out / "model.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    clf.save(target)
    run.produced(target)
    topics = {k: [w for w, _ in top_terms(clf.model, k, 10)] for k in range(clf.model.num_topics)}
    run.emit_json("topics.json", {"alpha": clf.model.alpha.tolist(), "top_terms": topics})
    print(f"trained {clf.model.num_topics} topics on {ds.sr_count} SR descriptions -> {target}")


def _load_classifier(cfg: RunConfig, run: Run):
    if cfg.classifier == "lda":
        clf = LdaClassifier.load(run.use(cfg.paths.model))
        return clf.with_threshold(cfg.lda.threshold) if cfg.lda.threshold != clf.threshold else clf
    d = Path(run.use(cfg.paths.lexicon_dir))
    sr = Lexicon.from_dict(json.loads((d / "lexicon-sr.json").read_text(encoding="utf-8")))
    nsr = Lexicon.from_dict(json.loads((d / "lexicon-nsr.json").read_text(encoding="utf-8")))
    return LexiconClassifier(sr, nsr, _preprocessor(cfg, run))


def cmd_classify(cfg: RunConfig, run: Run) -> None:
    clf = _load_classifier(cfg, run)
    for ref, ds in zip(cfg.paths.datasets, _datasets(cfg, run)):
        preds, extra = [], []
        for it in ds.items:
            if isinstance(clf, LdaClassifier):
                res = clf.classify_detailed(it.description)
                preds.append(res.is_sr)
                extra.append({"max_probability": res.distribution.max_probability if res.distribution is not None else None})
            else:
                preds.append(clf.classify(it.description))
                extra.append({})
        out = run.out / f"predictions-{_slug(Path(ref.path).stem)}.yaml"
        write_predictions(ds, preds, out, extra)
        run.produced(out)
        print(f"{ref.path}: {sum(preds)} of {len(preds)} classified SR")


def cmd_evaluate(cfg: RunConfig, run: Run) -> None:
    datasets = _datasets(cfg, run)
    if cfg.paths.predictions:
        reports = [evaluate_predictions(run.use(f), ds, name=Path(f).stem) for f, ds in zip(cfg.paths.predictions, datasets)]
        run.emit("table.txt", render_prf_table(reports) + "\n")
    else:
        clf = _load_classifier(cfg, run)
        reports = cross_eval(clf, datasets)
        for ref, ds in zip(cfg.paths.datasets, datasets):
            run.emit_json(f"errors-{_slug(Path(ref.path).stem)}.json", error_listing(clf, ds).to_dict())
        run.emit("table.txt", render_table(reports) + "\n")
    out = run.out / "metrics.json"
    save_reports(reports, out)
    run.produced(out)
    run.emit_json("table.json", table_rows(reports))
    if cfg.dummy.seeds > 0:
        sweeps = {ds.name: sweep_dummy(ds, cfg.dummy.x_grid, range(cfg.seed, cfg.seed + cfg.dummy.seeds)).to_dict() for ds in datasets}
        run.emit_json("dummy-sweep.json", sweeps)
    print((run.out / "table.txt").read_text(encoding="utf-8"), end="")


def cmd_report(cfg: RunConfig, run: Run) -> None:
    reports = load_reports(run.use(cfg.paths.reports))
    text = render_table(reports) + "\n\n" + render_prf_table(reports) + "\n"
    run.emit("report.txt", text)
    print(text, end="")


HANDLERS: dict[str, Callable[[RunConfig, Run], None]] = {
    "build-catalog": cmd_build_catalog,
    "build-dataset": cmd_build_dataset,
    "lexicon": cmd_lexicon,
    "train": cmd_train,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srsettings", description="Label and classify security-relevant configuration settings.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threshold", type=float, help="LDA probability threshold")
    parser.add_argument("--topics", type=int, help="number of LDA topics")
    parser.add_argument("--passes", type=int, help="LDA passes")
    parser.add_argument("--admx-dir", dest="admx_dir")
    parser.add_argument("--adml-dir", dest="adml_dir")
    parser.add_argument("--catalog")
    parser.add_argument("--guide", action="append", help="XCCDF guide (repeatable)")
    parser.add_argument("--publisher", help="guide publisher label (CIS, Siemens, ...)")
    parser.add_argument("--dataset", action="append", help="labeled dataset YAML (repeatable)")
    parser.add_argument("--predictions", action="append", help="predictions file, one per dataset")
    parser.add_argument("--model")
    parser.add_argument("--lexicon-dir", dest="lexicon_dir")
    parser.add_argument("--stoplist")
    parser.add_argument("--stopwords")
    parser.add_argument("--reports", help="metrics.json to render")
    parser.add_argument("--os-label", dest="os_label")
    parser.add_argument("--classifier", choices=("lda", "lexicon"))
    parser.add_argument("--extended", action="store_true", help="write hive and provenance keys")
    parser.add_argument("--dedup-hives", dest="dedup_hives", action="store_true")
    parser.add_argument("--dummy-seeds", dest="dummy_seeds", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        validate(cfg, args.command)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    run = Run(args.command, cfg)
    if args.config:
        run.use(args.config)
    try:
        HANDLERS[args.command](cfg, run)
    except Exception as exc:
        logger.debug("pipeline failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    run.write_manifest()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
