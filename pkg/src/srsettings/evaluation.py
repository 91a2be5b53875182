"""Scoring classifiers against labeled datasets."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
import yaml

from .admx import Hive
from .dataset import LabeledDataset

logger = logging.getLogger(__name__)


@runtime_checkable
class Classifier(Protocol):
    name: str

    def classify(self, text: str) -> bool: ...


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @classmethod
    def from_predictions(cls, truth: Sequence[bool], predicted: Sequence[bool]) -> "ConfusionMatrix":
        y = np.asarray(truth, dtype=bool)
        p = np.asarray(predicted, dtype=bool)
        return cls(
            tp=int(np.sum(y & p)),
            fp=int(np.sum(~y & p)),
            tn=int(np.sum(~y & ~p)),
            fn=int(np.sum(y & ~p)),
        )


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    recall: float | None
    precision: float
    f1: float
    balanced_accuracy: float | None
    classified_sr_count: int
    dataset: str = ""
    classifier: str = ""
    os_label: str = ""
    guide: str = ""
    flags: list[str] = field(default_factory=list)
    degraded: bool = False
    failures: list[dict] = field(default_factory=list)

    @property
    def settings(self) -> int:
        return self.confusion.total

    @property
    def sr_settings(self) -> int:
        return self.confusion.positives

    def to_dict(self) -> dict:
        d = asdict(self)
        d["settings"] = self.settings
        d["sr_settings"] = self.sr_settings
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        d = dict(d)
        d.pop("settings", None)
        d.pop("sr_settings", None)
        d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)


def compute_metrics(cm: ConfusionMatrix) -> tuple[float | None, float, float, float | None, list[str]]:
    """recall, precision, F1, balanced accuracy and flags for ``cm``.

    Undefined recall/BA (a class is absent) come back as ``None``; empty
    precision/F1 denominators give 0 and raise a flag.
    """
    flags = []
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    specificity = cm.tn / (cm.tn + cm.fp) if cm.tn + cm.fp else None
    if recall is None:
        flags.append("no-positive-items")
    if specificity is None:
        flags.append("no-negative-items")
    if cm.tp + cm.fp:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision = 0.0
        flags.append("precision-undefined")
    r = recall or 0.0
    if precision + r:
        f1 = 2 * precision * r / (precision + r)
    else:
        f1 = 0.0
        flags.append("f1-undefined")
    ba = (recall + specificity) / 2 if recall is not None and specificity is not None else None
    return recall, precision, f1, ba, flags


def report_from_confusion(cm: ConfusionMatrix, dataset: str = "", classifier: str = "", **extra) -> MetricsReport:
    recall, precision, f1, ba, flags = compute_metrics(cm)
    return MetricsReport(cm, recall, precision, f1, ba, cm.tp + cm.fp, dataset, classifier, flags=flags, **extra)


def _predict_all(classifier, texts: Sequence[str]) -> tuple[list[bool], list[dict]]:
    batch = getattr(classifier, "classify_many", None)
    if batch is not None:
        try:
            return [bool(x) for x in batch(texts)], []
        except Exception:  # fall back to per-item to isolate the failures
            logger.exception("batch classification failed; retrying item by item")
    preds, failures = [], []
    for i, text in enumerate(texts):
        try:
            preds.append(bool(classifier.classify(text)))
        except Exception as exc:
            preds.append(False)
            failures.append({"index": i, "error": f"{type(exc).__name__}: {exc}"})
    return preds, failures


def evaluate(classifier: Classifier, ds: LabeledDataset) -> MetricsReport:
    """Classify every item of ``ds`` once and score the predictions.

    A classifier exception counts as an NSR prediction; the report is then
    marked degraded and lists the failing items.
    """
    texts = [it.description for it in ds.items]
    preds, failures = _predict_all(classifier, texts)
    for f in failures:
        f["setting"] = ds.items[f["index"]].setting
    cm = ConfusionMatrix.from_predictions([it.is_security_relevant for it in ds.items], preds)
    rep = report_from_confusion(
        cm,
        dataset=ds.name,
        classifier=getattr(classifier, "name", type(classifier).__name__),
        os_label=ds.os_label,
        guide=ds.guide_publisher,
    )
    if failures:
        rep.degraded = True
        rep.failures = failures
        rep.flags.append("degraded")
    return rep


# -- baselines -------------------------------------------------------------------


class UniformDummy:
    """Labels each item SR with probability ``x``.

    The draw for item ``i`` is the ``i``-th uniform of a generator seeded
    with ``seed``, so results depend only on (seed, item index).
    """

    def __init__(self, x: float, seed: int = 0):
        if not 0 <= x <= 1:
            raise ValueError("x must lie in [0, 1]")
        self.x = x
        self.seed = seed
        self.name = f"uniform(x={x:g}, seed={seed})"

    def classify_many(self, texts: Sequence[str]) -> list[bool]:
        draws = np.random.default_rng(self.seed).random(len(texts))
        return (draws < self.x).tolist()

    def classify(self, text: str) -> bool:
        # single-item use: the draw of item index 0
        return bool(np.random.default_rng(self.seed).random() < self.x)


def uniform_dummy(x: float, seed: int = 0) -> UniformDummy:
    return UniformDummy(x, seed)


@dataclass
class SweepRow:
    x: float
    recall: float
    precision: float
    f1: float
    balanced_accuracy: float
    classified_sr_count: float
    seeds: int


@dataclass
class SweepResult:
    best: SweepRow
    table: list[SweepRow]

    def to_dict(self) -> dict:
        return {"best": asdict(self.best), "table": [asdict(r) for r in self.table]}


def sweep_dummy(ds: LabeledDataset, x_grid: Iterable[float], seeds: Iterable[int]) -> SweepResult:
    """Average dummy metrics over ``seeds`` for each ``x``; best by F1."""
    grid = list(x_grid)
    seeds = list(seeds)
    if not grid or not seeds:
        raise ValueError("x grid and seeds must be non-empty")
    truth = np.array([it.is_security_relevant for it in ds.items], dtype=bool)
    table = []
    for x in grid:
        acc = np.zeros(5)
        for s in seeds:
            pred = np.asarray(UniformDummy(x, s).classify_many([""] * len(truth)), dtype=bool)
            cm = ConfusionMatrix.from_predictions(truth, pred)
            recall, precision, f1, ba, _ = compute_metrics(cm)
            acc += (recall or 0.0, precision, f1, ba if ba is not None else 0.0, cm.tp + cm.fp)
        acc /= len(seeds)
        table.append(SweepRow(x, *map(float, acc), seeds=len(seeds)))
    best = max(table, key=lambda r: (r.f1, -r.x))
    return SweepResult(best, table)


# -- cross-dataset tables -----------------------------------------------------------


def cross_eval(classifier: Classifier, datasets: Iterable[LabeledDataset]) -> list[MetricsReport]:
    return [evaluate(classifier, ds) for ds in datasets]


TABLE_COLUMNS = ("OS", "Guide", "Settings", "# SR", "Recall (%)", "# classified as SR", "BA (%)")
PRF_COLUMNS = ("Classifier", "OS", "Guide", "Recall", "Precision", "F1")


def _pct(v: float | None) -> str:
    return "-" if v is None else f"{100 * v:.0f}"


def _frac(v: float | None) -> str:
    return "-" if v is None else f"{v:.2f}"


def table_rows(reports: Iterable[MetricsReport]) -> list[dict[str, Any]]:
    return [
        {
            "OS": r.os_label or r.dataset,
            "Guide": r.guide,
            "Settings": r.settings,
            "# SR": r.sr_settings,
            "Recall (%)": _pct(r.recall),
            "# classified as SR": r.classified_sr_count,
            "BA (%)": _pct(r.balanced_accuracy),
        }
        for r in reports
    ]


def _render(columns: Sequence[str], rows: list[dict[str, Any]]) -> str:
    cells = [[str(row[c]) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(columns, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in cells:
        lines.append("  ".join(v.ljust(w) if i < 2 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def render_table(reports: Iterable[MetricsReport]) -> str:
    """Plain-text table in the column order OS, guide, |settings|, |SR|,
    recall, classified-SR, BA."""
    return _render(TABLE_COLUMNS, table_rows(reports))


def render_prf_table(reports: Iterable[MetricsReport]) -> str:
    rows = [
        {
            "Classifier": r.classifier,
            "OS": r.os_label or r.dataset,
            "Guide": r.guide,
            "Recall": _frac(r.recall),
            "Precision": _frac(r.precision),
            "F1": _frac(r.f1),
        }
        for r in reports
    ]
    return _render(PRF_COLUMNS, rows)


# -- external predictions ---------------------------------------------------------


class PredictionsError(ValueError):
    pass


def _as_bool(v, where: str) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise PredictionsError(f"{where}: predicted value {v!r} is not a boolean")


def _hive_key(v) -> str | None:
    if v is None or v == "":
        return None
    return Hive(v).value if not isinstance(v, Hive) else v.value


def load_predictions(source: str | os.PathLike | Iterable[Mapping]) -> dict[tuple[str, str | None], bool]:
    """Read a predictions file (YAML or CSV with setting, hive, predicted)."""
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".csv":
            rows = list(csv.DictReader(text.splitlines()))
        else:
            rows = yaml.safe_load(text) or []
    else:
        rows = list(source)
    out: dict[tuple[str, str | None], bool] = {}
    for i, row in enumerate(rows):
        if "setting" not in row or "predicted" not in row:
            raise PredictionsError(f"row {i}: needs 'setting' and 'predicted'")
        key = (row["setting"], _hive_key(row.get("hive")))
        if key in out:
            raise PredictionsError(f"row {i}: duplicate prediction for {key}")
        out[key] = _as_bool(row["predicted"], f"row {i}")
    return out


def evaluate_predictions(predictions, ds: LabeledDataset, name: str = "predictions") -> MetricsReport:
    """Score externally produced predictions exactly like :func:`evaluate`."""
    preds = predictions if isinstance(predictions, Mapping) else load_predictions(predictions)
    keys = [(it.setting, it.hive.value if it.hive is not None else None) for it in ds.items]
    missing = [k for k in keys if k not in preds]
    extra = sorted(set(preds) - set(keys), key=lambda k: (k[0], k[1] or ""))
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing predictions for " + "; ".join(f"{s} ({h or '-'})" for s, h in missing))
        if extra:
            parts.append("predictions for unknown settings " + "; ".join(f"{s} ({h or '-'})" for s, h in extra))
        raise PredictionsError(". ".join(parts))
    lookup = dict(zip(keys, [preds[k] for k in keys]))
    cm = ConfusionMatrix.from_predictions([it.is_security_relevant for it in ds.items], [lookup[k] for k in keys])
    return report_from_confusion(cm, dataset=ds.name, classifier=name, os_label=ds.os_label, guide=ds.guide_publisher)


def write_predictions(ds: LabeledDataset, predicted: Sequence[bool], path: str | os.PathLike, extra: Sequence[Mapping] | None = None) -> None:
    rows = []
    for i, (it, p) in enumerate(zip(ds.items, predicted)):
        row = {"setting": it.setting, "hive": it.hive.value if it.hive is not None else None, "predicted": bool(p)}
        if extra is not None:
            row.update(extra[i])
        rows.append(row)
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["setting", "hive", "predicted"], lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    else:
        path.write_text(yaml.safe_dump(rows, sort_keys=False, allow_unicode=True, width=1 << 30), encoding="utf-8")


# -- error analysis ----------------------------------------------------------------


@dataclass
class ErrorEntry:
    setting: str
    hive: str | None
    excerpt: str
    max_probability: float | None = None
    distribution: list[float] | None = None


@dataclass
class ErrorListing:
    false_negatives: list[ErrorEntry]
    false_positives: list[ErrorEntry]

    def to_dict(self) -> dict:
        return {
            "false_negatives": [asdict(e) for e in self.false_negatives],
            "false_positives": [asdict(e) for e in self.false_positives],
        }


def _excerpt(text: str, width: int = 160) -> str:
    return text if len(text) <= width else text[: width - 3].rstrip() + "..."


def error_listing(classifier: Classifier, ds: LabeledDataset) -> ErrorListing:
    """False negatives and false positives, highest max-topic probability first.

    Classifiers exposing ``classify_detailed`` (the LDA classifier) contribute
    their topic distribution to each entry.
    """
    detailed = getattr(classifier, "classify_detailed", None)
    if detailed is None:
        preds, _ = _predict_all(classifier, [it.description for it in ds.items])
    fns: list[tuple[int, ErrorEntry]] = []
    fps: list[tuple[int, ErrorEntry]] = []
    for i, it in enumerate(ds.items):
        dist = None
        if detailed is not None:
            pred = detailed(it.description)
            predicted, dist = pred.is_sr, pred.distribution
        else:
            predicted = preds[i]
        if predicted == it.is_security_relevant:
            continue
        entry = ErrorEntry(
            it.setting,
            it.hive.value if it.hive is not None else None,
            _excerpt(it.description),
            dist.max_probability if dist is not None else None,
            [float(p) for p in dist.probabilities] if dist is not None else None,
        )
        (fns if it.is_security_relevant else fps).append((i, entry))

    def order(pair):
        i, e = pair
        return (e.max_probability is None, -(e.max_probability or 0.0), i)

    return ErrorListing([e for _, e in sorted(fns, key=order)], [e for _, e in sorted(fps, key=order)])


def save_reports(reports: Iterable[MetricsReport], path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")


def load_reports(path: str | os.PathLike) -> list[MetricsReport]:
    return [MetricsReport.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


__all__ = [
    "Classifier",
    "ConfusionMatrix",
    "ErrorEntry",
    "ErrorListing",
    "MetricsReport",
    "PredictionsError",
    "SweepResult",
    "SweepRow",
    "UniformDummy",
    "compute_metrics",
    "cross_eval",
    "error_listing",
    "evaluate",
    "evaluate_predictions",
    "load_predictions",
    "load_reports",
    "render_prf_table",
    "render_table",
    "report_from_confusion",
    "save_reports",
    "sweep_dummy",
    "table_rows",
    "uniform_dummy",
    "write_predictions",
]
