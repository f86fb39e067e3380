import json
import os
from pathlib import Path

import pytest

from okra.cli import main as cli_main
from okra.pipeline import (
    ConfigError,
    cmd_build_kg,
    cmd_generate,
    cmd_sample,
    load_config,
)

TINY_INI = """
[data]
n_candidates = 12
n_vacancies = 24
n_skills = 16
n_experience_areas = 12
n_locations = 8
pairs_per_candidate = 6
negative_per_candidate = 2
seed = 5

[sampler]
walks_per_anchor = 2

[model]
text_dim = 8
node_dim = 8
hash_buckets = 32

[train]
learning_rate = 0.01
epochs = 1
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


class TestConfig:
    def test_defaults_fill_missing_sections(self, tiny_config):
        cfg = load_config(tiny_config)
        assert cfg["eval"]["top_k"] == 10
        assert cfg["sampler"]["k"] == 7

    def test_unknown_key_rejected_by_name(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[data]\nn_candidats = 5\n")
        with pytest.raises(ConfigError, match="n_candidats"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[serving]\nport = 80\n")
        with pytest.raises(ConfigError, match="serving"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.ini")

    def test_seed_override_changes_digest(self, tiny_config):
        a = load_config(tiny_config)
        b = load_config(tiny_config, seed_override=99)
        assert a.digest != b.digest
        assert b["data"]["seed"] == 99

    def test_rules_parse(self, tiny_config):
        rules = load_config(tiny_config).rules()
        kinds = {type(r).__name__ for r in rules}
        assert kinds == {"InversePair", "Transitive", "SubclassPropagate"}

    def test_bad_rule_string(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[graph]\nrules = wiggle:foo\n")
        with pytest.raises(ConfigError, match="wiggle"):
            load_config(path).rules()


class TestCliExitCodes:
    def test_malformed_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[data]\nn_candidats = 5\n")
        code = cli_main(["generate", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "n_candidats" in capsys.readouterr().err

    def test_missing_upstream_exits_3(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        code = cli_main(["pipeline", "--stage", "evaluate",
                         "--config", str(tiny_config), "--out", str(out)])
        assert code == 3

    def test_digest_mismatch_exits_4(self, tiny_config, tmp_path):
        out = str(tmp_path / "out")
        assert cli_main(["generate", "--config", str(tiny_config), "--out", out]) == 0
        code = cli_main(["pipeline", "--stage", "build-kg", "--config", str(tiny_config),
                         "--seed", "1234", "--out", out])
        assert code == 4

    def test_baseline_requires_name(self, tiny_config, tmp_path):
        code = cli_main(["pipeline", "--stage", "baseline",
                         "--config", str(tiny_config), "--out", str(tmp_path / "o")])
        assert code == 2


class TestGenerateStage:
    def test_artifacts_written(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        cfg = load_config(tiny_config)
        cmd_generate(cfg, out)
        for name in ("candidates.tsv", "vacancies.tsv", "labels.tsv",
                     "manifest_generate.json"):
            assert (out / name).is_file()
        manifest = json.loads((out / "manifest_generate.json").read_text())
        assert manifest["digest"] == cfg.digest

    def test_rerun_identical_bytes(self, tiny_config, tmp_path):
        cfg = load_config(tiny_config)
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            cmd_generate(cfg, out)
            outs.append((out / "labels.tsv").read_bytes())
        assert outs[0] == outs[1]


class TestFullPipeline:
    @pytest.fixture(scope="class")
    def run_dir(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("pipe")
        cfg_path = tmp / "tiny.ini"
        cfg_path.write_text(TINY_INI)
        out = tmp / "out"
        for args in (["generate"], ["pipeline", "--stage", "build-kg"],
                     ["pipeline", "--stage", "sample"],
                     ["pipeline", "--stage", "train"],
                     ["pipeline", "--stage", "evaluate"],
                     ["pipeline", "--stage", "explain"],
                     ["pipeline", "--stage", "baseline", "--name", "random"],
                     ["pipeline", "--stage", "baseline", "--name", "tfidf"]):
            code = cli_main(args + ["--config", str(cfg_path), "--out", str(out)])
            assert code == 0, args
        return out

    def test_stage_artifacts(self, run_dir):
        for name in ("triples.tsv", "entities.tsv", "subgraphs.jsonl", "splits.json",
                     "features.json", "checkpoint.okra", "history.csv", "report.json",
                     "plotdata.csv", "explanations.jsonl", "report_random.json",
                     "report_tfidf.json"):
            assert (run_dir / name).is_file(), name

    def test_report_embeds_digest(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())
        manifest = json.loads((run_dir / "manifest_generate.json").read_text())
        assert report["config_digest"] == manifest["digest"]

    def test_splits_partition_candidates(self, run_dir):
        splits = json.loads((run_dir / "splits.json").read_text())
        all_keys = splits["train"] + splits["validation"] + splits["test"]
        assert len(all_keys) == len(set(all_keys)) == 12

    def test_explanations_schema(self, run_dir):
        lines = (run_dir / "explanations.jsonl").read_text().splitlines()
        splits = json.loads((run_dir / "splits.json").read_text())
        subs = [json.loads(l) for l in (run_dir / "subgraphs.jsonl").read_text().splitlines()]
        test_pairs = [s for s in subs if s["origin"][0] in set(splits["test"])]
        assert len(lines) == len(test_pairs)
        for line in lines:
            rec = json.loads(line)
            assert len(rec["channels"]) == 4
            for ch in rec["channels"]:
                total = sum(ch["node_importances"])
                assert abs(total - 1.0) < 1e-9
                assert all(x >= 0 for x in ch["node_importances"])

    def test_plotdata_format(self, run_dir):
        lines = (run_dir / "plotdata.csv").read_text().splitlines()
        assert lines[0] == "model,metric,value"
        assert any(line.startswith("okra,ndcg@10,") for line in lines)


class TestDeterminism:
    def test_two_runs_byte_identical_report(self, tmp_path):
        cfg_path = tmp_path / "tiny.ini"
        cfg_path.write_text(TINY_INI)
        reports = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            for args in (["generate"], ["pipeline", "--stage", "build-kg"],
                         ["pipeline", "--stage", "sample"],
                         ["pipeline", "--stage", "train"],
                         ["pipeline", "--stage", "evaluate"]):
                assert cli_main(args + ["--config", str(cfg_path),
                                        "--out", str(out)]) == 0
            reports.append((out / "report.json").read_bytes())
        assert reports[0] == reports[1]


class TestThreadIndependence:
    def test_sample_stage_schedule_independent(self, tiny_config, tmp_path):
        cfg = load_config(tiny_config)
        outputs = []
        for workers, sub in (("1", "w1"), ("3", "w3")):
            out = tmp_path / sub
            cmd_generate(cfg, out)
            cmd_build_kg(cfg, out)
            os.environ["OKRA_THREADS"] = workers
            try:
                cmd_sample(cfg, out)
            finally:
                del os.environ["OKRA_THREADS"]
            outputs.append((out / "subgraphs.jsonl").read_bytes())
        assert outputs[0] == outputs[1]
