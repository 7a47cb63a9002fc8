"""Configuration handling, CLI subcommands, exit codes, and the report."""

import json
from pathlib import Path

import pytest

from sessiongad.cli import main
from sessiongad.config import ConfigError, DEFAULTS, PipelineConfig
from sessiongad.report import flagged_count

FIXTURE = Path(__file__).parent / "data" / "session_transcripts.jsonl"

TINY_CFG = """
seed = 5
gen.mode = events
gen.groups = 30
gen.anomaly_fraction = 0.1
embed.command_dim = 12
embed.command_window = 3
embed.command_negatives = 3
embed.epochs = 2
embed.reduction_hidden = 16
embed.reduction_dim = 12
embed.reduction_epochs = 5
gad.latent_dim = 4
gad.hidden = 16
gad.disc_hidden = 4
gad.n_max = 4
gad.epochs = 6
gad.batch_size = 8
report.top_fraction = 0.2
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


class TestConfig:
    def test_defaults_cover_every_key(self):
        config = PipelineConfig()
        for key in DEFAULTS:
            assert config[key] is not None or key == "seed"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_text("gad.alfa = 10")

    def test_comments_and_values_parse(self):
        config = PipelineConfig.from_text(
            "# comment\ngad.alpha = 5.0  # trailing\ngad.hidden = 16,8\n")
        assert config["gad.alpha"] == 5.0
        assert config["gad.hidden"] == (16, 8)

    def test_digest_stable_and_sensitive(self):
        a = PipelineConfig.from_text("seed = 1")
        b = PipelineConfig.from_text("seed = 1")
        c = PipelineConfig.from_text("seed = 2")
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            PipelineConfig.from_text("seed = 1\ngad.alpha = ten\n")


class TestCliContracts:
    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = main(["gen", "--output-dir", str(out_dir)])
        assert code == 1
        assert not out_dir.exists() or not list(out_dir.iterdir())
        err = capsys.readouterr().err
        assert "error code=1" in err

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("no.such.key = 1\n")
        code = main(["gen", "--config", str(bad),
                     "--output-dir", str(tmp_path / "out")])
        assert code == 1

    def test_missing_input_is_data_error(self, cfg_path, tmp_path, capsys):
        code = main(["train-embed", "--config", str(cfg_path),
                     "--input", str(tmp_path / "nope.jsonl"),
                     "--output", str(tmp_path / "m.bin")])
        assert code == 2
        assert "error code=2" in capsys.readouterr().err

    def test_divergence_maps_to_exit_three(self, cfg_path, tmp_path,
                                           monkeypatch, capsys):
        from sessiongad import cli as cli_module
        from sessiongad.gad import DivergenceError

        def explode(*args, **kwargs):
            raise DivergenceError(3)

        monkeypatch.setattr(cli_module.pipeline, "run_train", explode)
        code = main(["train", "--config", str(cfg_path),
                     "--input", str(tmp_path / "f.jsonl"),
                     "--output", str(tmp_path / "g.bin")])
        assert code == 3
        assert "error code=3" in capsys.readouterr().err

    def test_gen_vectors_mode(self, tmp_path):
        cfg = tmp_path / "v.cfg"
        cfg.write_text("gen.mode = vectors\ngen.groups = 12\n"
                       "gen.anomaly_fraction = 0.25\ngen.dim = 4\n")
        out = tmp_path / "out"
        assert main(["gen", "--config", str(cfg),
                     "--output-dir", str(out)]) == 0
        features = (out / "features.jsonl").read_text().splitlines()
        labels = (out / "labels.jsonl").read_text().splitlines()
        assert "header" in features[0]
        assert len(features) == 13 and len(labels) == 13  # header + 12 rows
        label_values = [json.loads(l)["label"] for l in labels[1:]]
        assert sum(label_values) == 3


class TestPipelineEndToEnd:
    def run_all(self, cfg_path, work):
        steps = [
            ["gen", "--config", str(cfg_path), "--output-dir",
             str(work / "data")],
            ["train-embed", "--config", str(cfg_path),
             "--input", str(work / "data" / "events.jsonl"),
             "--output", str(work / "embed_models.bin")],
            ["featurize", "--config", str(cfg_path),
             "--input", str(work / "data" / "events.jsonl"),
             "--models", str(work / "embed_models.bin"),
             "--prevalence", str(work / "data" / "prevalence.jsonl"),
             "--output", str(work / "features.jsonl")],
            ["train", "--config", str(cfg_path),
             "--input", str(work / "features.jsonl"),
             "--output", str(work / "gad_model.bin")],
            ["score", "--config", str(cfg_path),
             "--input", str(work / "features.jsonl"),
             "--model", str(work / "gad_model.bin"),
             "--output", str(work / "scores.jsonl")],
        ]
        for step in steps:
            assert main(step) == 0, step[0]

    def test_pipeline_and_artifacts(self, cfg_path, tmp_path):
        self.run_all(cfg_path, tmp_path)
        scores = (tmp_path / "scores.jsonl").read_text().splitlines()
        header = json.loads(scores[0])["header"]
        assert header["tool"] == "sessiongad" and header["config"]
        rows = [json.loads(l) for l in scores[1:]]
        assert len(rows) == 30
        assert [r["rank"] for r in rows] == list(range(1, 31))

        # eval joins labels and writes the documented CSV columns
        assert main(["eval", "--config", str(cfg_path),
                     "--scores", str(tmp_path / "scores.jsonl"),
                     "--labels", str(tmp_path / "data" / "labels.jsonl"),
                     "--output", str(tmp_path / "metrics.csv")]) == 0
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("# sessiongad")
        assert lines[1] == "method,alpha,auprc,auroc,seed"
        assert len(lines) == 3

        # report: JSON + text + figures next to the JSON
        assert main(["report", "--config", str(cfg_path),
                     "--scores", str(tmp_path / "scores.jsonl"),
                     "--events", str(tmp_path / "data" / "events.jsonl"),
                     "--output", str(tmp_path / "report.json"),
                     "--text", str(tmp_path / "report.txt")]) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["flagged"] == 6  # ceil(0.2 * 30)
        assert report["sessions"][0]["rank"] == 1
        assert report["sessions"][0]["commands"]
        assert (tmp_path / "report.txt").exists()
        assert (tmp_path / "report_scores.png").stat().st_size > 0
        assert (tmp_path / "report_techniques.png").stat().st_size > 0

    def test_top_fraction_one_reports_everything(self, cfg_path, tmp_path):
        self.run_all(cfg_path, tmp_path)
        assert main(["report", "--config", str(cfg_path),
                     "--scores", str(tmp_path / "scores.jsonl"),
                     "--events", str(tmp_path / "data" / "events.jsonl"),
                     "--output", str(tmp_path / "all.json"),
                     "--top-fraction", "1.0"]) == 0
        report = json.loads((tmp_path / "all.json").read_text())
        assert report["flagged"] == report["total_sessions"] == 30

    def test_empty_scores_give_empty_report(self, cfg_path, tmp_path):
        scores = tmp_path / "empty_scores.jsonl"
        scores.write_text('{"header": {"tool": "sessiongad"}}\n')
        events = tmp_path / "events.jsonl"
        events.write_text("")
        assert main(["report", "--config", str(cfg_path),
                     "--scores", str(scores),
                     "--events", str(events),
                     "--output", str(tmp_path / "empty.json")]) == 0
        report = json.loads((tmp_path / "empty.json").read_text())
        assert report["flagged"] == 0 and report["sessions"] == []

    def test_sweep_alpha_writes_rows_and_figure(self, cfg_path, tmp_path):
        self.run_all(cfg_path, tmp_path)
        assert main(["sweep-alpha", "--config", str(cfg_path),
                     "--input", str(tmp_path / "features.jsonl"),
                     "--labels", str(tmp_path / "data" / "labels.jsonl"),
                     "--alphas", "5,10,20",
                     "--output", str(tmp_path / "sweep.csv"),
                     "--figure", str(tmp_path / "sweep.png")]) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 5  # comment + columns + 3 rows
        assert (tmp_path / "sweep.png").stat().st_size > 0


class TestTranscriptScoring:
    def test_fixture_scores_six_ranked_rows(self, tmp_path):
        cfg = tmp_path / "t1.cfg"
        cfg.write_text(TINY_CFG)
        steps = [
            ["train-embed", "--config", str(cfg), "--input", str(FIXTURE),
             "--output", str(tmp_path / "m.bin")],
            ["featurize", "--config", str(cfg), "--input", str(FIXTURE),
             "--models", str(tmp_path / "m.bin"),
             "--output", str(tmp_path / "f.jsonl")],
            ["train", "--config", str(cfg),
             "--input", str(tmp_path / "f.jsonl"),
             "--output", str(tmp_path / "g.bin")],
            ["score", "--config", str(cfg),
             "--input", str(tmp_path / "f.jsonl"),
             "--model", str(tmp_path / "g.bin"),
             "--output", str(tmp_path / "s.jsonl")],
        ]
        for step in steps:
            assert main(step) == 0, step[0]
        rows = [json.loads(l) for l in
                (tmp_path / "s.jsonl").read_text().splitlines()[1:]]
        assert len(rows) == 6
        assert sorted(r["rank"] for r in rows) == [1, 2, 3, 4, 5, 6]
        sids = {r["session_id"] for r in rows}
        assert sids == {f"S-1-2-331-{n}" for n in range(21, 27)}
        # the report surfaces mapped techniques for the encoded-command
        # powershell events
        assert main(["report", "--config", str(cfg),
                     "--scores", str(tmp_path / "s.jsonl"),
                     "--events", str(FIXTURE),
                     "--output", str(tmp_path / "r.json"),
                     "--top-fraction", "1.0"]) == 0
        report = json.loads((tmp_path / "r.json").read_text())
        by_sid = {s["session_id"]: s for s in report["sessions"]}
        techniques_23 = by_sid["S-1-2-331-23"]["techniques"]
        assert "Scripting" in techniques_23 or \
            "Command-LineInterface" in techniques_23


class TestFlaggedCount:
    def test_fraction_examples(self):
        assert flagged_count(6, 0.001) == 1   # ceil keeps tiny sets useful
        assert flagged_count(30, 0.2) == 6
        assert flagged_count(10, 1.0) == 10
        assert flagged_count(0, 0.5) == 0
        assert flagged_count(10, 0.0) == 0
