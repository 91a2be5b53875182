"""LDA topic model trained by batch variational Bayes on weighted documents.

Documents are sparse ``{word_id: weight}`` maps; tf-idf weights act as
fractional word counts.  The document-topic prior ``alpha`` is asymmetric and
re-estimated after every pass with Minka's fixed-point iteration.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .textprep import Dictionary, Preprocessor, TfidfModel, WeightedDoc, tfidf_fit, tfidf_transform, to_bow, build_dictionary

logger = logging.getLogger(__name__)

MODEL_FORMAT = "srsettings-lda"
MODEL_VERSION = 1
ALPHA_FLOOR = 1e-8


class LdaError(RuntimeError):
    pass


class NoKnownTermsError(LdaError):
    """The document has no term left after dictionary filtering."""


@dataclass
class LdaConfig:
    num_topics: int = 9
    passes: int = 4
    eta: float | None = None  # symmetric topic-word prior, 1/K when None
    threshold: float = 0.70
    seed: int = 0
    e_step_max_iters: int = 50
    e_step_tol: float = 1e-4
    per_word_topics: bool = True
    learn_alpha: bool = True
    check_elbo: bool = True
    alpha_max_iters: int = 1000
    alpha_tol: float = 1e-10

    def validate(self) -> None:
        # K=1 is accepted as a degenerate model (every distribution is [1.0])
        if self.num_topics < 1:
            raise ValueError("num_topics must be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        if self.e_step_tol <= 0 or self.alpha_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.e_step_max_iters < 1:
            raise ValueError("e_step_max_iters must be >= 1")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def eta_value(self) -> float:
        return self.eta if self.eta is not None else 1.0 / self.num_topics


def initial_alpha(num_topics: int) -> np.ndarray:
    """Asymmetric starting prior 1 / (k + 1 + sqrt(K)) for k = 0..K-1."""
    k = np.arange(num_topics, dtype=float)
    return 1.0 / (k + 1.0 + math.sqrt(num_topics))


@dataclass
class TopicDistribution:
    doc_id: str
    probabilities: np.ndarray

    @property
    def top_topic(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def max_probability(self) -> float:
        return float(np.max(self.probabilities))

    def as_pairs(self) -> list[tuple[int, float]]:
        return [(k, float(p)) for k, p in enumerate(self.probabilities)]


class WordTopics(NamedTuple):
    word_id: int
    topic: int
    weights: np.ndarray


@dataclass
class LdaModel:
    lam: np.ndarray  # K x V variational topic-word parameters
    alpha: np.ndarray
    config: LdaConfig
    dictionary: Dictionary | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def num_topics(self) -> int:
        return self.lam.shape[0]

    @property
    def num_terms(self) -> int:
        return self.lam.shape[1]

    def topics(self) -> np.ndarray:
        """Expected topic-word distributions (rows sum to 1)."""
        return self.lam / self.lam.sum(axis=1, keepdims=True)

    def exp_elog_beta(self) -> np.ndarray:
        return np.exp(digamma(self.lam) - digamma(self.lam.sum(axis=1, keepdims=True)))

    # persistence -----------------------------------------------------------

    def to_dict(self, include_dictionary: bool = True) -> dict:
        d = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": asdict(self.config),
            "alpha": self.alpha.tolist(),
            "lambda": self.lam.tolist(),
            "dictionary_hash": self.dictionary.digest() if self.dictionary is not None else None,
        }
        if include_dictionary and self.dictionary is not None:
            d["dictionary"] = self.dictionary.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, dictionary: Dictionary | None = None) -> "LdaModel":
        if d.get("format") != MODEL_FORMAT:
            raise LdaError("not an LDA model file")
        if d.get("version") != MODEL_VERSION:
            raise LdaError(f"unsupported model version {d.get('version')}")
        stored = d.get("dictionary_hash")
        embedded = Dictionary.from_dict(d["dictionary"]) if "dictionary" in d else None
        if embedded is not None and embedded.digest() != stored:
            raise LdaError("embedded dictionary does not match its recorded hash")
        if dictionary is not None and stored is not None and dictionary.digest() != stored:
            raise LdaError("dictionary hash mismatch: model was trained with a different dictionary")
        lam = np.asarray(d["lambda"], dtype=float)
        dic = dictionary or embedded
        if dic is not None and len(dic) != lam.shape[1]:
            raise LdaError("dictionary size does not match model vocabulary")
        return cls(lam, np.asarray(d["alpha"], dtype=float), LdaConfig(**d["config"]), dic)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike, dictionary: Dictionary | None = None) -> "LdaModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), dictionary)


# -- numerics ------------------------------------------------------------------


def inverse_digamma(y: np.ndarray, iters: int = 8) -> np.ndarray:
    """Solve digamma(x) = y by Newton's method (Minka's initialization)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    small = y < -2.22
    x = np.exp(y) + 0.5
    x[small] = -1.0 / (y[small] - digamma(1.0))
    for _ in range(iters):
        x = x - (digamma(x) - y) / polygamma(1, x)
    return x


def update_alpha(alpha: np.ndarray, mean_log_theta: np.ndarray, max_iters: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """Fixed-point Dirichlet MLE: psi(a_k) = psi(sum a) + E[log theta_k]."""
    a = alpha.copy()
    for _ in range(max_iters):
        new = np.maximum(inverse_digamma(digamma(a.sum()) + mean_log_theta), ALPHA_FLOOR)
        if not np.all(np.isfinite(new)):
            raise LdaError("non-finite alpha during fixed-point update")
        done = np.max(np.abs(new - a)) < tol
        a = new
        if done:
            break
    return a


def _doc_arrays(doc: WeightedDoc) -> tuple[np.ndarray, np.ndarray]:
    items = sorted(doc.items())
    ids = np.fromiter((i for i, _ in items), dtype=np.int64, count=len(items))
    cts = np.fromiter((w for _, w in items), dtype=float, count=len(items))
    return ids, cts


def _doc_elbo(cts, phi, gamma, alpha, elog_beta_cols) -> float:
    elog_theta = digamma(gamma) - digamma(gamma.sum())
    safe_phi = np.where(phi > 0, phi, 1.0)
    word_term = np.sum(cts[:, None] * phi * (elog_theta[None, :] + elog_beta_cols.T - np.log(safe_phi)))
    prior = gammaln(alpha.sum()) - gammaln(alpha).sum() + np.dot(alpha - 1.0, elog_theta)
    entropy = -(gammaln(gamma.sum()) - gammaln(gamma).sum() + np.dot(gamma - 1.0, elog_theta))
    return float(word_term + prior + entropy)


class _EStep(NamedTuple):
    gamma: np.ndarray
    phi: np.ndarray  # n_words x K, rows sum to 1
    iterations: int


def _e_step(ids, cts, alpha, elog_beta, config: LdaConfig, where: str = "") -> _EStep:
    k = alpha.shape[0]
    elog_beta_cols = elog_beta[:, ids]
    gamma = alpha + cts.sum() / k
    phi = np.full((len(ids), k), 1.0 / k)
    last_elbo = -np.inf
    it = 0
    for it in range(1, config.e_step_max_iters + 1):
        elog_theta = digamma(gamma) - digamma(gamma.sum())
        log_phi = elog_theta[None, :] + elog_beta_cols.T
        log_phi -= log_phi.max(axis=1, keepdims=True)
        phi = np.exp(log_phi)
        phi /= phi.sum(axis=1, keepdims=True)
        new_gamma = alpha + cts @ phi
        if not np.all(np.isfinite(new_gamma)):
            raise LdaError(f"non-finite variational parameters ({where})")
        change = float(np.mean(np.abs(new_gamma - gamma)))
        gamma = new_gamma
        if config.check_elbo:
            elbo = _doc_elbo(cts, phi, gamma, alpha, elog_beta_cols)
            if elbo < last_elbo - 1e-8 * max(1.0, abs(last_elbo)):
                raise LdaError(f"evidence lower bound decreased by {last_elbo - elbo:.3g} ({where}, iteration {it})")
            last_elbo = elbo
        if change < config.e_step_tol:
            break
    return _EStep(gamma, phi, it)


# -- training and inference -------------------------------------------------------


def train_lda(corpus: Sequence[WeightedDoc], config: LdaConfig | None = None, num_terms: int | None = None, dictionary: Dictionary | None = None) -> LdaModel:
    """Fit topics with batch variational Bayes.

    Each pass runs the E-step on every document, replaces ``lambda`` by
    ``eta`` plus the expected weighted counts, then re-estimates ``alpha``
    from the documents' expected log topic proportions.
    """
    config = config or LdaConfig()
    config.validate()
    if num_terms is None:
        if dictionary is not None:
            num_terms = len(dictionary)
        else:
            num_terms = 1 + max((max(d) for d in corpus if d), default=-1)
    docs = []
    for d, doc in enumerate(corpus):
        if not doc:
            logger.warning("skipping empty document %d", d)
            continue
        ids, cts = _doc_arrays(doc)
        if ids.max() >= num_terms or ids.min() < 0:
            raise LdaError(f"document {d} has word ids outside the vocabulary")
        if np.any(cts <= 0) or not np.all(np.isfinite(cts)):
            raise LdaError(f"document {d} has non-positive or non-finite weights")
        docs.append((d, ids, cts))
    if not docs:
        raise LdaError("empty training corpus")

    k = config.num_topics
    rng = np.random.default_rng(config.seed)
    lam = rng.gamma(100.0, 1.0 / 100.0, size=(k, num_terms))
    alpha = initial_alpha(k)
    eta = config.eta_value
    history = []
    for p in range(config.passes):
        elog_beta = digamma(lam) - digamma(lam.sum(axis=1, keepdims=True))
        sstats = np.zeros_like(lam)
        log_theta_sum = np.zeros(k)
        iters = 0
        for d, ids, cts in docs:
            est = _e_step(ids, cts, alpha, elog_beta, config, where=f"pass {p}, document {d}")
            sstats[:, ids] += (cts[:, None] * est.phi).T
            log_theta_sum += digamma(est.gamma) - digamma(est.gamma.sum())
            iters += est.iterations
        lam = eta + sstats
        if not np.all(np.isfinite(lam)):
            raise LdaError(f"non-finite topic-word parameters after pass {p}")
        if config.learn_alpha:
            alpha = update_alpha(alpha, log_theta_sum / len(docs), config.alpha_max_iters, config.alpha_tol)
        history.append({"pass": p, "mean_e_step_iterations": iters / len(docs), "alpha": alpha.tolist()})
        logger.debug("pass %d: mean E-step iterations %.1f", p, iters / len(docs))
    return LdaModel(lam, alpha, config, dictionary, history)


def _infer(model: LdaModel, doc: WeightedDoc) -> tuple[np.ndarray, _EStep]:
    doc = {i: w for i, w in doc.items() if 0 <= i < model.num_terms and w > 0}
    if not doc:
        raise NoKnownTermsError("no known terms")
    ids, cts = _doc_arrays(doc)
    elog_beta = digamma(model.lam) - digamma(model.lam.sum(axis=1, keepdims=True))
    est = _e_step(ids, cts, model.alpha, elog_beta, model.config, where="inference")
    return ids, est


def infer_topics(model: LdaModel, doc: WeightedDoc, doc_id: str = "") -> TopicDistribution:
    _, est = _infer(model, doc)
    return TopicDistribution(doc_id, est.gamma / est.gamma.sum())


def per_word_topics(model: LdaModel, doc: WeightedDoc) -> list[WordTopics]:
    ids, est = _infer(model, doc)
    return [WordTopics(int(i), int(np.argmax(row)), row.copy()) for i, row in zip(ids, est.phi)]


def top_terms(model: LdaModel, topic: int, n: int = 10) -> list[tuple[str | int, float]]:
    if not 0 <= topic < model.num_topics:
        raise IndexError(f"topic {topic} out of range [0, {model.num_topics})")
    row = model.topics()[topic]
    order = sorted(range(len(row)), key=lambda i: (-row[i], i))[:n]
    name = (lambda i: model.dictionary.id2token[i]) if model.dictionary is not None else (lambda i: i)
    return [(name(i), float(row[i])) for i in order]


class LdaPrediction(NamedTuple):
    is_sr: bool
    distribution: TopicDistribution | None
    warning: str | None = None


def lda_classify(model: LdaModel, doc: WeightedDoc, doc_id: str = "") -> LdaPrediction:
    """SR iff the largest topic probability reaches the configured threshold."""
    try:
        dist = infer_topics(model, doc, doc_id)
    except NoKnownTermsError:
        logger.warning("document %r has no known terms; classified NSR", doc_id)
        return LdaPrediction(False, None, "no known terms")
    return LdaPrediction(dist.max_probability >= model.config.threshold, dist)


# -- text-level classifier --------------------------------------------------------


class LdaClassifier:
    """Preprocessing, dictionary, tf-idf weighting and LDA model in one object."""

    def __init__(self, model: LdaModel, tfidf: TfidfModel, preprocessor: Preprocessor, name: str = "lda"):
        if model.dictionary is None:
            raise LdaError("classifier needs a model with a dictionary")
        self.model = model
        self.tfidf = tfidf
        self.preprocessor = preprocessor
        self.name = name

    @property
    def dictionary(self) -> Dictionary:
        return self.model.dictionary

    @property
    def threshold(self) -> float:
        return self.model.config.threshold

    def weigh(self, text: str) -> WeightedDoc:
        return tfidf_transform(self.tfidf, to_bow(self.preprocessor(text), self.dictionary))

    def classify_detailed(self, text: str, doc_id: str = "") -> LdaPrediction:
        return lda_classify(self.model, self.weigh(text), doc_id)

    def classify(self, text: str) -> bool:
        return self.classify_detailed(text).is_sr

    def with_threshold(self, threshold: float) -> "LdaClassifier":
        cfg = LdaConfig(**{**asdict(self.model.config), "threshold": threshold})
        model = LdaModel(self.model.lam, self.model.alpha, cfg, self.model.dictionary, self.model.history)
        return LdaClassifier(model, self.tfidf, self.preprocessor, self.name)

    @classmethod
    def train(cls, sr_texts: Iterable[str], config: LdaConfig | None = None, preprocessor: Preprocessor | None = None, name: str = "lda") -> "LdaClassifier":
        preprocessor = preprocessor or Preprocessor()
        docs = [preprocessor(t, str(i)) for i, t in enumerate(sr_texts)]
        docs = [d for d in docs if len(d)]
        dictionary = build_dictionary(docs)
        tfidf = tfidf_fit(docs, dictionary)
        weighted = [tfidf_transform(tfidf, to_bow(d, dictionary)) for d in docs]
        model = train_lda(weighted, config, dictionary=dictionary)
        return cls(model, tfidf, preprocessor, name)

    def save(self, path: str | os.PathLike) -> None:
        blob = {
            "format": "srsettings-lda-classifier",
            "version": MODEL_VERSION,
            "name": self.name,
            "model": self.model.to_dict(),
            "tfidf": self.tfidf.to_dict(),
            "preprocessor": self.preprocessor.config(),
        }
        Path(path).write_text(json.dumps(blob), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LdaClassifier":
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        if blob.get("format") != "srsettings-lda-classifier":
            raise LdaError(f"{path} is not an LDA classifier file")
        model = LdaModel.from_dict(blob["model"])
        return cls(model, TfidfModel.from_dict(blob["tfidf"]), Preprocessor.from_config(blob["preprocessor"]), blob.get("name", "lda"))


__all__ = [
    "LdaClassifier",
    "LdaConfig",
    "LdaError",
    "LdaModel",
    "LdaPrediction",
    "NoKnownTermsError",
    "TopicDistribution",
    "WordTopics",
    "infer_topics",
    "initial_alpha",
    "inverse_digamma",
    "lda_classify",
    "per_word_topics",
    "top_terms",
    "train_lda",
    "update_alpha",
]
