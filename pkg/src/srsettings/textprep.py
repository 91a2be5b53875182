"""Description preprocessing, dictionary and tf-idf weighting.

The chain is lowercase -> tokenize -> stopwords -> length filter ->
rule-based lemmatization -> Porter stemming -> manual stoplist.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from nltk.stem.porter import PorterStemmer

BowVector = dict[int, int]
WeightedDoc = dict[int, float]

_TOKEN = re.compile(r"[a-z0-9]+")
_VOWEL = re.compile(r"[aeiouy]")


def load_wordlist(path: str | os.PathLike) -> frozenset[str]:
    """Read a one-word-per-line list; ``#`` starts a comment."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


def _packaged(name: str) -> frozenset[str]:
    with resources.as_file(resources.files("srsettings") / "data" / name) as p:
        return load_wordlist(p)


def default_stopwords() -> frozenset[str]:
    return _packaged("stopwords_en.txt")


def default_stoplist() -> frozenset[str]:
    return _packaged("stoplist.txt")


def lemmatize(word: str) -> str:
    """Strip plural and verb inflections.

    Handles -ies/-es/-s and -ing/-ed with undoubling of a final double
    consonant (``running`` -> ``run``).  Words of three letters or fewer are
    returned unchanged.
    """
    if len(word) <= 3:
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("ches", "shes", "xes", "zes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    for suffix, min_len in (("ing", 6), ("ed", 5)):
        if word.endswith(suffix) and len(word) >= min_len:
            stem = word[: -len(suffix)]
            if not _VOWEL.search(stem):
                return word
            if len(stem) > 2 and stem[-1] == stem[-2] and stem[-1] not in "aeiouylsz":
                stem = stem[:-1]
            return stem
    return word


@dataclass(frozen=True)
class ProcessedDoc:
    doc_id: str
    stems: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.stems)

    def __iter__(self):
        return iter(self.stems)


class Preprocessor:
    """Configurable preprocessing chain; instances are callable on text."""

    def __init__(
        self,
        stopwords: Iterable[str] | None = None,
        stoplist: Iterable[str] | None = None,
        min_length: int = 2,
        max_length: int = 16,
        lemmatize_tokens: bool = True,
        filter_before_lemma: bool = True,
    ):
        self.stemmer = PorterStemmer()
        self.min_length = min_length
        self.max_length = max_length
        self.lemmatize_tokens = lemmatize_tokens
        self.filter_before_lemma = filter_before_lemma
        self.stopwords = frozenset(stopwords) if stopwords is not None else default_stopwords()
        raw_stop = frozenset(w.lower() for w in (stoplist if stoplist is not None else default_stoplist()))
        # accept both surface forms and stems in the stoplist file
        self.stoplist = raw_stop | {self._stem(w) for w in raw_stop}

    def _stem(self, token: str) -> str:
        if self.lemmatize_tokens:
            token = lemmatize(token)
        return self.stemmer.stem(token)

    def _length_ok(self, token: str) -> bool:
        return self.min_length <= len(token) <= self.max_length

    def __call__(self, text: str, doc_id: str = "") -> ProcessedDoc:
        stems = []
        for tok in _TOKEN.findall(text.lower()):
            if tok in self.stopwords:
                continue
            if self.filter_before_lemma and not self._length_ok(tok):
                continue
            stem = self._stem(tok)
            # stems must pass the same filters as tokens
            if not self._length_ok(stem) or stem in self.stopwords or stem in self.stoplist:
                continue
            stems.append(stem)
        return ProcessedDoc(doc_id, tuple(stems))

    def config(self) -> dict:
        return {
            "stopwords": sorted(self.stopwords),
            "stoplist": sorted(self.stoplist),
            "min_length": self.min_length,
            "max_length": self.max_length,
            "lemmatize_tokens": self.lemmatize_tokens,
            "filter_before_lemma": self.filter_before_lemma,
        }

    @classmethod
    def from_config(cls, cfg: Mapping) -> "Preprocessor":
        return cls(
            stopwords=cfg["stopwords"],
            stoplist=cfg["stoplist"],
            min_length=cfg.get("min_length", 2),
            max_length=cfg.get("max_length", 16),
            lemmatize_tokens=cfg.get("lemmatize_tokens", True),
            filter_before_lemma=cfg.get("filter_before_lemma", True),
        )


_default: Preprocessor | None = None


def preprocess(text: str, doc_id: str = "") -> ProcessedDoc:
    """Run the default chain (packaged stopwords and stoplist) on ``text``."""
    global _default
    if _default is None:
        _default = Preprocessor()
    return _default(text, doc_id)


Corpus = Sequence[Union[ProcessedDoc, Sequence[str]]]


def _stems(doc) -> Sequence[str]:
    return doc.stems if isinstance(doc, ProcessedDoc) else doc


def frequent_stems(corpus: Corpus, n: int) -> list[tuple[str, int]]:
    counts = Counter(s for doc in corpus for s in _stems(doc))
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


class DictionaryError(ValueError):
    pass


@dataclass
class Dictionary:
    token2id: dict[str, int]
    dfs: dict[int, int]
    cfs: dict[int, int]
    num_docs: int
    id2token: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self):
        self.id2token = {i: t for t, i in self.token2id.items()}

    def __len__(self) -> int:
        return len(self.token2id)

    def __contains__(self, token: str) -> bool:
        return token in self.token2id

    def to_dict(self) -> dict:
        return {
            "num_docs": self.num_docs,
            "tokens": [
                {"word": self.id2token[i], "id": i, "df": self.dfs[i], "cf": self.cfs[i]}
                for i in range(len(self.token2id))
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dictionary":
        toks = d["tokens"]
        return cls(
            {t["word"]: t["id"] for t in toks},
            {t["id"]: t["df"] for t in toks},
            {t["id"]: t["cf"] for t in toks},
            d["num_docs"],
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Dictionary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_dictionary(corpus: Corpus) -> Dictionary:
    """Word ids follow sorted vocabulary order, so they do not depend on
    document order."""
    df: Counter = Counter()
    cf: Counter = Counter()
    for doc in corpus:
        stems = _stems(doc)
        cf.update(stems)
        df.update(set(stems))
    if not cf:
        raise DictionaryError("empty vocabulary")
    token2id = {w: i for i, w in enumerate(sorted(cf))}
    return Dictionary(
        token2id,
        {token2id[w]: c for w, c in df.items()},
        {token2id[w]: c for w, c in cf.items()},
        len(corpus),
    )


def to_bow(doc, dictionary: Dictionary) -> BowVector:
    counts: Counter = Counter()
    for s in _stems(doc):
        i = dictionary.token2id.get(s)
        if i is not None:
            counts[i] += 1
    return dict(sorted(counts.items()))


@dataclass
class TfidfModel:
    idfs: dict[int, float]
    num_docs: int

    def to_dict(self) -> dict:
        return {"num_docs": self.num_docs, "idfs": {str(k): v for k, v in self.idfs.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TfidfModel":
        return cls({int(k): float(v) for k, v in d["idfs"].items()}, d["num_docs"])

    def __getitem__(self, bow: BowVector) -> WeightedDoc:
        return tfidf_transform(self, bow)


def tfidf_fit(corpus: Corpus | None, dictionary: Dictionary) -> TfidfModel:
    """idf(t) = log2(N / df(t)) from the dictionary's document frequencies.

    ``corpus`` is accepted for symmetry with the dictionary build; the
    statistics it would contribute are already held by ``dictionary``.
    """
    n = dictionary.num_docs
    return TfidfModel({i: math.log2(n / df) for i, df in dictionary.dfs.items()}, n)


def tfidf_transform(model: TfidfModel, bow: BowVector) -> WeightedDoc:
    weights = {}
    for i, tf in bow.items():
        w = tf * model.idfs.get(i, 0.0)
        if w > 0:
            weights[i] = w
    norm = math.sqrt(sum(w * w for w in weights.values()))
    if norm == 0:
        return {}
    return {i: w / norm for i, w in sorted(weights.items())}


__all__ = [
    "BowVector",
    "Dictionary",
    "DictionaryError",
    "Preprocessor",
    "ProcessedDoc",
    "TfidfModel",
    "WeightedDoc",
    "build_dictionary",
    "default_stoplist",
    "default_stopwords",
    "frequent_stems",
    "lemmatize",
    "load_wordlist",
    "preprocess",
    "tfidf_fit",
    "tfidf_transform",
    "to_bow",
]
