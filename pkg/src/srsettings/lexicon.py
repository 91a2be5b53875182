"""Lexicon analyses over SR and NSR descriptions.

All functions take already preprocessed documents (:class:`ProcessedDoc` or
plain stem sequences).
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .textprep import Corpus, _stems, build_dictionary, tfidf_fit, tfidf_transform, to_bow

SR = "SR"
NSR = "NSR"
DESCRIPTIONS_ONLY = "descriptions-only"
WITH_RATIONALES = "descriptions+rationales"


@dataclass
class Lexicon:
    polarity: str
    entries: dict[str, float]
    provenance: str = DESCRIPTIONS_ONLY

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_dict(self) -> dict:
        return {
            "polarity": self.polarity,
            "provenance": self.provenance,
            "entries": [{"word": w, "score": s} for w, s in self.ranked()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Lexicon":
        return cls(d["polarity"], {e["word"]: float(e["score"]) for e in d["entries"]}, d.get("provenance", DESCRIPTIONS_ONLY))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def wordcloud_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["word", "weight"])
        for word, score in self.ranked():
            w.writerow([word, f"{score:.6g}"])
        return buf.getvalue()


def exclusive_sr_words(sr_docs: Corpus, nsr_docs: Corpus, min_frequency: int = 5) -> list[tuple[str, int]]:
    """Words seen in SR documents only, with frequency above ``min_frequency``."""
    nsr_vocab = {s for d in nsr_docs for s in _stems(d)}
    counts = Counter(s for d in sr_docs for s in _stems(d) if s not in nsr_vocab)
    hits = [(w, c) for w, c in counts.items() if c > min_frequency]
    return sorted(hits, key=lambda kv: (-kv[1], kv[0]))


def _max_scores(corpus: Corpus) -> dict[str, float]:
    dictionary = build_dictionary(corpus)
    model = tfidf_fit(corpus, dictionary)
    best: dict[str, float] = {}
    for doc in corpus:
        for i, w in tfidf_transform(model, to_bow(doc, dictionary)).items():
            word = dictionary.id2token[i]
            if w > best.get(word, 0.0):
                best[word] = w
    return best


def _aggregate_scores(corpus: Corpus) -> dict[str, float]:
    # one corpus-level vector: collection frequency x idf, L2-normalized
    dictionary = build_dictionary(corpus)
    model = tfidf_fit(corpus, dictionary)
    raw = {dictionary.id2token[i]: dictionary.cfs[i] * model.idfs[i] for i in dictionary.cfs}
    raw = {w: v for w, v in raw.items() if v > 0}
    norm = math.sqrt(sum(v * v for v in raw.values()))
    return {w: v / norm for w, v in raw.items()} if norm else {}


def tfidf_keywords(corpus: Corpus, threshold: float = 0.5, mode: str = "max") -> list[tuple[str, float]]:
    """Words whose tf-idf score reaches ``threshold``, best first.

    ``mode="max"`` scores a word by its largest per-document weight;
    ``mode="aggregate"`` by its weight in one corpus-level tf-idf vector.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if mode == "max":
        scores = _max_scores(corpus)
    elif mode == "aggregate":
        scores = _aggregate_scores(corpus)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    # tolerate rounding on exact-threshold weights (e.g. a doc's sole term)
    keep = [(w, s) for w, s in scores.items() if s >= threshold - 1e-12]
    return sorted(keep, key=lambda kv: (-kv[1], kv[0]))


def build_lexicons(
    sr_docs: Corpus,
    nsr_docs: Corpus,
    rationales: Corpus | None = None,
    threshold: float = 0.5,
    mode: str = "max",
) -> tuple[Lexicon, Lexicon]:
    """SR and NSR keyword lexicons, each minus the other's selected words."""
    sr_corpus = list(sr_docs) + list(rationales or [])
    sr_kw = dict(tfidf_keywords(sr_corpus, threshold, mode))
    nsr_kw = dict(tfidf_keywords(list(nsr_docs), threshold, mode))
    provenance = WITH_RATIONALES if rationales else DESCRIPTIONS_ONLY
    sr = Lexicon(SR, {w: s for w, s in sr_kw.items() if w not in nsr_kw}, provenance)
    nsr = Lexicon(NSR, {w: s for w, s in nsr_kw.items() if w not in sr_kw}, DESCRIPTIONS_ONLY)
    return sr, nsr


@dataclass
class LexiconHits:
    sr: list[str] = field(default_factory=list)
    nsr: list[str] = field(default_factory=list)


def lexicon_classify(doc, sr: Lexicon, nsr: Lexicon) -> tuple[bool, LexiconHits]:
    """SR iff there is at least one SR hit and more SR than NSR hits."""
    hits = LexiconHits()
    for s in _stems(doc):
        if s in sr.entries:
            hits.sr.append(s)
        elif s in nsr.entries:
            hits.nsr.append(s)
    return (len(hits.sr) > 0 and len(hits.sr) > len(hits.nsr)), hits


class LexiconClassifier:
    """Adapter exposing :func:`lexicon_classify` on raw description text."""

    def __init__(self, sr: Lexicon, nsr: Lexicon, preprocessor, name: str = "lexicon"):
        self.sr = sr
        self.nsr = nsr
        self.preprocessor = preprocessor
        self.name = name

    def classify(self, text: str) -> bool:
        return lexicon_classify(self.preprocessor(text), self.sr, self.nsr)[0]


def extract_ngrams(corpus: Corpus, n: int = 2, min_frequency: int = 1) -> list[tuple[str, int]]:
    if n < 2:
        raise ValueError("n must be at least 2")
    counts: Counter = Counter()
    for doc in corpus:
        stems: Sequence[str] = _stems(doc)
        for i in range(len(stems) - n + 1):
            counts[" ".join(stems[i : i + n])] += 1
    hits = [(g, c) for g, c in counts.items() if c >= min_frequency]
    return sorted(hits, key=lambda kv: (-kv[1], kv[0]))


__all__ = [
    "Lexicon",
    "LexiconClassifier",
    "LexiconHits",
    "build_lexicons",
    "exclusive_sr_words",
    "extract_ngrams",
    "lexicon_classify",
    "tfidf_keywords",
]
