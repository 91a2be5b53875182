import json
from pathlib import Path

import pytest
import yaml

from conftest import GOLDEN_DIR
from srsettings.cli import EXIT_OK, EXIT_PIPELINE, EXIT_VALIDATION, config_from_dict, ConfigError, main
from srsettings.dataset import LabeledDataset, LabeledSetting, write_dataset
from srsettings.evaluation import TABLE_COLUMNS

GOLDEN = (GOLDEN_DIR / "golden.yaml").read_text(encoding="utf-8")

SR_TEXTS = [
    "An attacker could steal credentials from memory of the remote service.",
    "Malicious software may exploit weak authentication to gain access.",
    "Prevents unauthenticated remote users from reading stored credentials.",
    "Enables auditing of logon attempts so that attacks can be detected.",
    "Blocks untrusted fonts that an attacker could use to exploit the system.",
    "Requires encryption for remote connections to protect credentials.",
    "Disables the camera on the lock screen so attackers cannot use it.",
    "Restricts anonymous access to named pipes and shares.",
]
NSR_TEXTS = [
    "Sets the background color of the desktop.",
    "Chooses the default volume for system sounds.",
    "Changes the accent color of the start menu.",
    "Shows the clock in the taskbar notification area.",
    "Specifies the wallpaper displayed on the desktop.",
    "Sets the size of icons in the file explorer.",
    "Controls the animation of windows when minimizing.",
    "Hides the weather widget on the taskbar.",
]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def dataset_file(tmp_path):
    items = [LabeledSetting(f"Cat \\ SR {i}", t, True) for i, t in enumerate(SR_TEXTS)]
    items += [LabeledSetting(f"Cat \\ NSR {i}", t, False) for i, t in enumerate(NSR_TEXTS)]
    path = tmp_path / "toy.yaml"
    write_dataset(LabeledDataset("Toy", items=items), path)
    return path


def build_dataset(out):
    return run("build-dataset", "--admx-dir", GOLDEN_DIR / "admx", "--adml-dir", GOLDEN_DIR / "adml", "--os-label", "W10 1909",
               "--guide", GOLDEN_DIR / "cis_w10_1909.xml", "--out", out)


class TestBuild:
    def test_build_catalog(self, tmp_path):
        assert run("build-catalog", "--admx-dir", GOLDEN_DIR / "admx", "--adml-dir", GOLDEN_DIR / "adml", "--os-label", "W10 1909", "--out", tmp_path) == EXIT_OK
        catalog = json.loads((tmp_path / "catalog.json").read_text(encoding="utf-8"))
        assert len(catalog["settings"]) == 2
        report = json.loads((tmp_path / "resolution-report.json").read_text(encoding="utf-8"))
        assert {"parsed", "resolved", "excluded", "warnings"} <= set(report)
        manifest = json.loads((tmp_path / "manifest-build-catalog.json").read_text(encoding="utf-8"))
        assert manifest["seed"] == 0 and manifest["inputs"] and manifest["outputs"]
        assert all(len(o["sha256"]) == 64 for o in manifest["outputs"])
        assert {"srsettings", "python", "numpy"} <= set(manifest["versions"])

    def test_build_dataset_matches_golden(self, tmp_path):
        assert build_dataset(tmp_path) == EXIT_OK
        assert (tmp_path / "cis_w10_1909.yaml").read_text(encoding="utf-8") == GOLDEN
        report = json.loads((tmp_path / "cis_w10_1909-match-report.json").read_text(encoding="utf-8"))
        assert len(report["pairs"]) == 1 and report["unmatched"] == []

    def test_build_dataset_from_saved_catalog(self, tmp_path):
        run("build-catalog", "--admx-dir", GOLDEN_DIR / "admx", "--adml-dir", GOLDEN_DIR / "adml", "--os-label", "W10 1909", "--out", tmp_path / "c")
        out = tmp_path / "d"
        assert run("build-dataset", "--catalog", tmp_path / "c" / "catalog.json", "--guide", GOLDEN_DIR / "cis_w10_1909.xml", "--out", out) == EXIT_OK
        assert (out / "cis_w10_1909.yaml").read_text(encoding="utf-8") == GOLDEN

    def test_reproducible_manifest(self, tmp_path):
        build_dataset(tmp_path / "a")
        build_dataset(tmp_path / "b")
        a = json.loads((tmp_path / "a" / "manifest-build-dataset.json").read_text(encoding="utf-8"))
        b = json.loads((tmp_path / "b" / "manifest-build-dataset.json").read_text(encoding="utf-8"))
        assert [o["sha256"] for o in a["outputs"]] == [o["sha256"] for o in b["outputs"]]
        assert a["inputs"] == b["inputs"]

    def test_extended(self, tmp_path):
        run("build-dataset", "--admx-dir", GOLDEN_DIR / "admx", "--adml-dir", GOLDEN_DIR / "adml", "--os-label", "W", "--guide",
            GOLDEN_DIR / "cis_w10_1909.xml", "--extended", "--out", tmp_path)
        rows = yaml.safe_load((tmp_path / "cis_w10_1909.yaml").read_text(encoding="utf-8"))
        assert rows[0]["hive"] == "Machine"


class TestValidation:
    def test_untrained_model_path(self, tmp_path, dataset_file, capsys):
        code = run("classify", "--dataset", dataset_file, "--model", tmp_path / "missing.json", "--out", tmp_path)
        assert code == EXIT_VALIDATION
        assert "paths.model" in capsys.readouterr().err

    def test_missing_admx_dir(self, tmp_path, capsys):
        assert run("build-catalog", "--admx-dir", tmp_path / "nope", "--os-label", "X", "--out", tmp_path) == EXIT_VALIDATION
        assert "paths.admx_dir" in capsys.readouterr().err

    def test_missing_os_label(self, tmp_path, capsys):
        assert run("build-catalog", "--admx-dir", GOLDEN_DIR / "admx", "--out", tmp_path) == EXIT_VALIDATION
        assert "os_label" in capsys.readouterr().err

    def test_config_unknown_field(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("lda:\n  topics: 3\nbogus: 1\n", encoding="utf-8")
        assert run("report", "--config", cfg, "--out", tmp_path) == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "lda.topics: unknown field" in err and "bogus: unknown field" in err

    def test_bad_lda_values(self, tmp_path, dataset_file, capsys):
        assert run("train", "--dataset", dataset_file, "--topics", "0", "--out", tmp_path) == EXIT_VALIDATION
        assert "lda:" in capsys.readouterr().err

    def test_config_from_dict(self):
        cfg = config_from_dict({"paths": {"guides": ["g.xml", {"path": "s.xml", "publisher": "Siemens"}]}, "lda": {"num_topics": 3}, "seed": 4})
        assert [g.publisher for g in cfg.paths.guides] == [None, "Siemens"]
        assert cfg.lda.num_topics == 3 and cfg.seed == 4
        with pytest.raises(ConfigError):
            config_from_dict({"paths": {"guides": [3]}})

    def test_pipeline_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("- setting: x\n", encoding="utf-8")
        assert run("train", "--dataset", bad, "--out", tmp_path) == EXIT_PIPELINE
        assert "missing key" in capsys.readouterr().err


class TestModelling:
    def test_train_classify_evaluate_report(self, tmp_path, dataset_file):
        model = tmp_path / "model.json"
        assert run("train", "--dataset", dataset_file, "--topics", "2", "--passes", "3", "--model", model, "--out", tmp_path / "t") == EXIT_OK
        assert model.is_file()
        topics = json.loads((tmp_path / "t" / "topics.json").read_text(encoding="utf-8"))
        assert len(topics["alpha"]) == 2

        assert run("classify", "--dataset", dataset_file, "--model", model, "--out", tmp_path / "c") == EXIT_OK
        preds = yaml.safe_load((tmp_path / "c" / "predictions-toy.yaml").read_text(encoding="utf-8"))
        assert len(preds) == 16 and {"setting", "hive", "predicted", "max_probability"} <= set(preds[0])

        out = tmp_path / "e"
        assert run("evaluate", "--dataset", dataset_file, "--model", model, "--dummy-seeds", "5", "--out", out) == EXIT_OK
        table = json.loads((out / "table.json").read_text(encoding="utf-8"))
        assert list(table[0]) == list(TABLE_COLUMNS)
        metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
        assert {"recall", "balanced_accuracy", "classified_sr_count", "settings", "sr_settings"} <= set(metrics[0])
        assert (out / "errors-toy.json").is_file() and (out / "dummy-sweep.json").is_file()

        assert run("report", "--reports", out / "metrics.json", "--out", tmp_path / "r") == EXIT_OK
        assert "BA (%)" in (tmp_path / "r" / "report.txt").read_text(encoding="utf-8")

    def test_evaluate_predictions(self, tmp_path, dataset_file):
        from srsettings.dataset import read_dataset
        from srsettings.evaluation import write_predictions

        ds = read_dataset(dataset_file)
        preds = tmp_path / "bert.csv"
        write_predictions(ds, [it.is_security_relevant for it in ds], preds)
        assert run("evaluate", "--dataset", dataset_file, "--predictions", preds, "--out", tmp_path / "e") == EXIT_OK
        metrics = json.loads((tmp_path / "e" / "metrics.json").read_text(encoding="utf-8"))
        assert metrics[0]["f1"] == 1.0

    def test_lexicon_then_classify(self, tmp_path, dataset_file):
        lex = tmp_path / "lex"
        cfg = tmp_path / "lex.yaml"
        cfg.write_text("lexicon:\n  threshold: 0.3\n  min_frequency: 0\n", encoding="utf-8")
        assert run("lexicon", "--config", cfg, "--dataset", dataset_file, "--out", lex) == EXIT_OK
        sr = json.loads((lex / "lexicon-sr.json").read_text(encoding="utf-8"))
        assert sr["polarity"] == "SR" and sr["entries"]
        assert (lex / "wordcloud-sr.csv").read_text(encoding="utf-8").startswith("word,weight")
        assert run("evaluate", "--dataset", dataset_file, "--classifier", "lexicon", "--lexicon-dir", lex, "--out", tmp_path / "e") == EXIT_OK

    def test_config_file_drives_run(self, tmp_path, dataset_file):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(yaml.safe_dump({
            "paths": {"datasets": [str(dataset_file)], "model": str(tmp_path / "m.json")},
            "lda": {"num_topics": 2, "passes": 2},
            "seed": 3,
            "out": str(tmp_path / "o"),
        }), encoding="utf-8")
        assert run("train", "--config", cfg) == EXIT_OK
        manifest = json.loads((tmp_path / "o" / "manifest-train.json").read_text(encoding="utf-8"))
        assert manifest["seed"] == 3 and manifest["config"]["lda"]["seed"] == 3
        assert any(Path(i["path"]).name == "run.yaml" for i in manifest["inputs"])
