import csv
import json
import os

import pytest

from iotdisc.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main

CONFIG = """
[scenario]
name = unit

[network]
nodes = 40
seed = 3
deg_max = 8

[corpus]
source = synth
streams = 60
attrs = 4
vocab = 50
seed = 5

[policy]
mode = hash
d = 6
b = 4
rotate_hash_on_collision = true

[queries]
count = 20
seed = 5

[sweep]
policy = nsum, hash, meaning, alph
cov = 0.5, 0.75, 1.0
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text(CONFIG)
    return str(path)


class TestSynthStats:
    def test_synth_then_stats(self, tmp_path, capsys):
        out = str(tmp_path / "corpus.tsv")
        assert main(["synth", "--streams", "30", "--attrs", "5", "--vocab", "40",
                     "--seed", "2", "--out", out]) == EXIT_OK
        assert main(["stats", out]) == EXIT_OK
        captured = capsys.readouterr().out
        assert "streams: 30" in captured

    def test_tree_build_with_export(self, tmp_path, capsys):
        out = str(tmp_path / "corpus.tsv")
        main(["synth", "--streams", "30", "--attrs", "3", "--vocab", "30", "--seed", "2", "--out", out])
        export = str(tmp_path / "trees.json")
        assert main(["tree-build", out, "--policy", "hash", "--export", export]) == EXIT_OK
        blob = json.loads(open(export).read())
        assert len(blob) == 3

    def test_missing_corpus_is_io_error(self):
        from iotdisc.cli import EXIT_IO

        assert main(["stats", "/nonexistent/corpus.tsv"]) == EXIT_IO


class TestRun:
    def test_sweep_emits_twelve_rows(self, config_file, tmp_path, capsys):
        out = str(tmp_path / "rows.csv")
        assert main(["run", "--config", config_file, "--out", out]) == EXIT_OK
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 12  # 4 policies x 3 coverage points
        assert [r["policy"] for r in rows[:3]] == ["nsum", "nsum", "nsum"]

    def test_rerun_identical_bytes(self, config_file, tmp_path):
        out1, out2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        main(["run", "--config", config_file, "--out", out1])
        main(["run", "--config", config_file, "--out", out2])
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_entries_monotone_in_coverage(self, config_file, tmp_path):
        out = str(tmp_path / "rows.csv")
        main(["run", "--config", config_file, "--out", out])
        rows = list(csv.DictReader(open(out)))
        for policy in ("hash", "meaning", "alph"):
            ordered = sorted(
                (float(r["cov"]), float(r["rt_entries_avg"]))
                for r in rows
                if r["policy"] == policy
            )
            values = [v for _, v in ordered]
            assert values == sorted(values), policy

    def test_self_check_passes_on_exact_config(self, config_file, tmp_path):
        out = str(tmp_path / "rows.csv")
        code = main([
            "run", "--config", config_file, "--out", out, "--self-check",
            "--set", "sweep.cov=1.0",
        ])
        assert code == EXIT_OK

    def test_self_check_catches_bounded_runs(self, config_file, tmp_path):
        out = str(tmp_path / "rows.csv")
        code = main([
            "run", "--config", config_file, "--out", out, "--self-check",
            "--set", "policy.b_q=1", "--set", "sweep.cov=1.0",
            "--set", "sweep.policy=nsum",
        ])
        assert code == EXIT_INVARIANT

    def test_bad_config_value_is_config_error(self, config_file, tmp_path):
        code = main([
            "run", "--config", config_file, "--set", "policy.mode=bogus",
            "--set", "sweep.policy=",
        ])
        assert code == EXIT_CONFIG

    def test_plots_rendered_alongside_csv(self, config_file, tmp_path):
        out = str(tmp_path / "rows.csv")
        plots = str(tmp_path / "figs")
        assert main(["run", "--config", config_file, "--out", out, "--plots", plots]) == EXIT_OK
        pngs = [f for f in os.listdir(plots) if f.endswith(".png")]
        assert "rt_entries_avg.png" in pngs
        assert "misleading_pct.png" in pngs
        for png in pngs:
            assert os.path.getsize(os.path.join(plots, png)) > 4000


class TestTrace:
    def test_trace_writes_message_log(self, config_file, tmp_path):
        out = str(tmp_path / "trace.log")
        code = main([
            "trace", "--config", config_file, "--out", out,
            "--set", "corpus.streams=10", "--set", "queries.count=3",
            "--set", "sweep.policy=", "--set", "sweep.cov=",
        ])
        assert code == EXIT_OK
        lines = open(out).read().strip().splitlines()
        kinds = {ln.split("\t")[1] for ln in lines}
        assert "ADV" in kinds and "QRY" in kinds and "RSP" in kinds
        for ln in lines:
            parts = ln.split("\t")
            assert len(parts) == 6
