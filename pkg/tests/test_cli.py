import io
import json

import numpy as np
import pytest

import when2talk.cli as cli
from when2talk.cli import UsageError, load_config, main
from when2talk.corpus import (build_vocab, extract_samples, gen_synthetic,
                              load_samples, load_transcripts,
                              save_transcripts)


@pytest.fixture
def transcripts_file(tmp_path):
    ts = gen_synthetic(5, np.random.default_rng(41))
    path = tmp_path / "conv.jsonl"
    save_transcripts(ts, path)
    return path


class TestLoadConfig:
    def write(self, tmp_path, payload):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(payload))
        return path

    def test_defaults(self, tmp_path):
        cfg, tcfg = load_config(self.write(tmp_path, {}))
        assert cfg.d_hidden == 64 and tcfg.epochs == 30

    def test_paper_preset(self, tmp_path):
        cfg, _ = load_config(self.write(tmp_path, {"preset": "paper"}))
        assert cfg.d_hidden == 500 and cfg.gnn_layers == 3

    def test_key_mapping(self, tmp_path):
        cfg, tcfg = load_config(self.write(tmp_path, {
            "gru_hidden": 32, "dropout_ratio": 0.1, "learning_rate": 0.01}))
        assert cfg.d_hidden == 32 and cfg.dropout == 0.1 and tcfg.lr == 0.01

    def test_unknown_key_is_named(self, tmp_path):
        with pytest.raises(UsageError, match="n_heads"):
            load_config(self.write(tmp_path, {"n_heads": 8}))

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(UsageError, match="preset"):
            load_config(self.write(tmp_path, {"preset": "huge"}))

    def test_invalid_value(self, tmp_path):
        with pytest.raises(UsageError, match="invalid config"):
            load_config(self.write(tmp_path, {"dropout_ratio": 2.0}))

    def test_unreadable_file(self, tmp_path):
        bad = tmp_path / "cfg.json"
        bad.write_text("{nope")
        with pytest.raises(UsageError):
            load_config(bad)


class TestConvert:
    def test_counts_and_output(self, transcripts_file, tmp_path, capsys):
        out = tmp_path / "samples.jsonl"
        assert main(["convert", "--in", str(transcripts_file),
                     "--out", str(out)]) == 0
        stats = json.loads(capsys.readouterr().out)
        samples = load_samples(out)
        assert stats["samples"] == len(samples)
        assert stats["speak"] == stats["silence"]  # agent=both balances exactly

    def test_single_agent(self, transcripts_file, tmp_path, capsys):
        out = tmp_path / "samples.jsonl"
        assert main(["convert", "--in", str(transcripts_file),
                     "--out", str(out), "--agent", "A"]) == 0
        assert all(s.agent == "A" for s in load_samples(out))

    def test_unknown_agent_is_data_error(self, transcripts_file, tmp_path):
        assert main(["convert", "--in", str(transcripts_file),
                     "--out", str(tmp_path / "x.jsonl"), "--agent", "Z"]) == 2

    def test_missing_input(self, tmp_path):
        assert main(["convert", "--in", str(tmp_path / "none.jsonl"),
                     "--out", str(tmp_path / "x.jsonl")]) == 2


class TestStats:
    def test_stats_json(self, transcripts_file, capsys):
        assert main(["stats", "--in", str(transcripts_file)]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["count"] == 5
        assert stats["avg_turns"] >= 4

    def test_dot_output(self, transcripts_file, capsys):
        tid = load_transcripts(transcripts_file)[0].id
        assert main(["stats", "--in", str(transcripts_file), "--dot", tid]) == 0
        out = capsys.readouterr().out
        assert "digraph {" in out and "->" in out

    def test_dot_unknown_id(self, transcripts_file):
        assert main(["stats", "--in", str(transcripts_file),
                     "--dot", "nope"]) == 2


class TestSynth:
    def test_split_sizes(self, synth_dir):
        sizes = {name: len(load_transcripts(synth_dir / f"{name}.jsonl"))
                 for name in ("train", "dev", "test")}
        assert sizes == {"train": 400, "dev": 50, "test": 50}

    def test_seed_reproduces_files(self, synth_dir, tmp_path, capsys):
        again = tmp_path / "synth2"
        assert main(["synth", "--out", str(again), "--dialogues", "500",
                     "--seed", "7"]) == 0
        for name in ("train", "dev", "test"):
            assert (again / f"{name}.jsonl").read_bytes() == \
                (synth_dir / f"{name}.jsonl").read_bytes()

    def test_splits_are_disjoint(self, synth_dir):
        ids = [t.id for name in ("train", "dev", "test")
               for t in load_transcripts(synth_dir / f"{name}.jsonl")]
        assert len(ids) == len(set(ids))


class TestTrain:
    def test_missing_split_is_data_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{}")
        assert main(["train", "--config", str(cfg),
                     "--data-dir", str(tmp_path), "--out",
                     str(tmp_path / "m.w2t")]) == 2

    def test_bad_config_is_usage_error(self, tmp_path, synth_dir):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"optimizer": "sgd"}))
        assert main(["train", "--config", str(cfg),
                     "--data-dir", str(synth_dir), "--out",
                     str(tmp_path / "m.w2t")]) == 1


class TestEval:
    def test_on_transcripts(self, trained_ckpt_path, synth_dir, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        assert main(["eval", "--ckpt", str(trained_ckpt_path),
                     "--data", str(synth_dir / "test.jsonl"),
                     "--report", str(report_path)]) == 0
        stdout_line = capsys.readouterr().out.strip()
        report = json.loads(stdout_line)
        assert report == json.loads(report_path.read_text())
        assert report["n_samples"] == report["n_speak"] + report["n_silence"]
        assert report["accuracy"] >= 0.9

    def test_on_sample_file(self, trained_ckpt_path, synth_dir, tmp_path, capsys):
        samples_path = tmp_path / "samples.jsonl"
        assert main(["convert", "--in", str(synth_dir / "test.jsonl"),
                     "--out", str(samples_path)]) == 0
        capsys.readouterr()
        assert main(["eval", "--ckpt", str(trained_ckpt_path),
                     "--data", str(samples_path)]) == 0
        report = json.loads(capsys.readouterr().out)
        ts = load_transcripts(synth_dir / "test.jsonl")
        assert report["n_samples"] == sum(2 * (len(t.turns) - 1) for t in ts)

    def test_missing_checkpoint(self, synth_dir, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "none.w2t"),
                     "--data", str(synth_dir / "test.jsonl")]) == 2

    def test_garbage_checkpoint(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.w2t"
        bad.write_bytes(b"garbage bytes")
        assert main(["eval", "--ckpt", str(bad),
                     "--data", str(synth_dir / "test.jsonl")]) == 2


class TestChat:
    def run_chat(self, monkeypatch, ckpt_path, script):
        monkeypatch.setattr("sys.stdin", io.StringIO(script))
        return main(["chat", "--ckpt", str(ckpt_path)])

    def test_scripted_session(self, trained_ckpt_path, monkeypatch, capsys):
        script = "let us review the budget tomorrow\n/ctx\n/quit\n"
        assert self.run_chat(monkeypatch, trained_ckpt_path, script) == 0
        out = capsys.readouterr().out
        assert "B:" in out or "[silence" in out
        assert "A: let us review the budget tomorrow" in out

    def test_eof_terminates(self, trained_ckpt_path, monkeypatch, capsys):
        assert self.run_chat(monkeypatch, trained_ckpt_path, "hello\n") == 0


class TestGradcheckCommand:
    def test_failure_exit_code(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "grad_check_groups",
                            lambda *a, **k: {"word_emb": 0.5})
        assert main(["gradcheck"]) == 3
        assert "word_emb" in capsys.readouterr().out

    def test_success_path(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "grad_check_groups",
                            lambda *a, **k: {"word_emb": 1e-9})
        assert main(["gradcheck"]) == 0


class TestParser:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit):
            main(["train"])
