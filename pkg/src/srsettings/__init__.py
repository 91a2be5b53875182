"""Label, analyze and classify security-relevant configuration settings."""

__version__ = "0.1.0"

from .admx import Hive, PolicySetting, SettingCatalog, load_template_dirs, load_templates, parse_adml, parse_admx, resolve_catalog
from .dataset import LabeledDataset, LabeledSetting, label_catalog, read_dataset, write_dataset
from .evaluation import ConfusionMatrix, MetricsReport, compute_metrics, evaluate, uniform_dummy
from .lda import LdaClassifier, LdaConfig, LdaModel, infer_topics, lda_classify, train_lda
from .lexicon import Lexicon, build_lexicons, lexicon_classify
from .textprep import Dictionary, Preprocessor, build_dictionary, preprocess, tfidf_fit, tfidf_transform
from .xccdf import Guide, RuleTargetMap, match_rules, parse_xccdf

__all__ = [
    "ConfusionMatrix",
    "Dictionary",
    "Guide",
    "Hive",
    "LabeledDataset",
    "LabeledSetting",
    "LdaClassifier",
    "LdaConfig",
    "LdaModel",
    "Lexicon",
    "MetricsReport",
    "PolicySetting",
    "Preprocessor",
    "RuleTargetMap",
    "SettingCatalog",
    "build_dictionary",
    "build_lexicons",
    "compute_metrics",
    "evaluate",
    "infer_topics",
    "label_catalog",
    "lda_classify",
    "lexicon_classify",
    "load_template_dirs",
    "load_templates",
    "match_rules",
    "parse_adml",
    "parse_admx",
    "parse_xccdf",
    "preprocess",
    "read_dataset",
    "resolve_catalog",
    "tfidf_fit",
    "tfidf_transform",
    "train_lda",
    "uniform_dummy",
    "write_dataset",
]
