"""Config loading, replication bookkeeping, and output determinism."""
import json
import math

import numpy as np
import pytest

from tokaudit import (
    DomainError,
    InputError,
    LambdaSchedule,
    ModelSpec,
    PolicySpec,
    PromptCorpus,
    RunConfig,
    TruncationDist,
    load_config,
    load_corpus,
    load_vocabulary,
    run_replications,
)
from tokaudit.harness import (
    CALIBRATION_STREAM,
    TRAJECTORY_COLUMNS,
    replication_rng,
    summary_dict,
    wilson_interval,
    write_outputs,
)


class TestPromptCorpus:
    def test_from_lines_skips_blanks(self):
        c = PromptCorpus.from_lines(["ab", "", "  ", "ba"])
        assert c.prompts == ("ab", "ba")
        assert len(c) == 2
        assert c[1] == "ba"
        assert list(c) == ["ab", "ba"]

    def test_digest_tracks_contents(self):
        a = PromptCorpus.from_lines(["ab", "ba"])
        b = PromptCorpus.from_lines(["ab", "ba"])
        c = PromptCorpus.from_lines(["ba", "ab"])
        assert a.digest == b.digest
        assert a.digest != c.digest

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            PromptCorpus.from_lines(["", "  "])


class TestLoaders:
    def test_load_corpus(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("ab\n\nba\n", encoding="utf-8")
        c = load_corpus(p)
        assert c.prompts == ("ab", "ba")

    def test_load_corpus_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_corpus(tmp_path / "nope.txt")

    def test_load_corpus_bad_utf8_reports_line(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_bytes(b"ab\n\xff\xfe\n")
        with pytest.raises(InputError) as exc:
            load_corpus(p)
        assert ":2:" in str(exc.value)

    def test_load_corpus_empty(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("\n\n", encoding="utf-8")
        with pytest.raises(InputError):
            load_corpus(p)

    def test_load_vocabulary(self, tmp_path):
        p = tmp_path / "v.json"
        p.write_text(json.dumps({"tokens": ["a", "b", "ab"]}), encoding="utf-8")
        v = load_vocabulary(p)
        assert v.strings == ("a", "b", "ab", "")

    def test_load_vocabulary_bad_json(self, tmp_path):
        p = tmp_path / "v.json"
        p.write_text("{not json", encoding="utf-8")
        with pytest.raises(InputError):
            load_vocabulary(p)

    def test_load_vocabulary_wrong_shape(self, tmp_path):
        p = tmp_path / "v.json"
        p.write_text(json.dumps(["a", "b"]), encoding="utf-8")
        with pytest.raises(InputError):
            load_vocabulary(p)
        p.write_text(json.dumps({"tokens": [1, 2]}), encoding="utf-8")
        with pytest.raises(InputError):
            load_vocabulary(p)

    def test_load_vocabulary_domain_error_becomes_input_error(self, tmp_path):
        p = tmp_path / "v.json"
        p.write_text(json.dumps({"tokens": ["a", "a"]}), encoding="utf-8")
        with pytest.raises(InputError):
            load_vocabulary(p)


class TestRunConfigValidation:
    def _base(self, vocab_tiny, **kw):
        spec = ModelSpec(seed=1, vocab=vocab_tiny, max_len=6)
        defaults = dict(
            model=spec,
            policy=PolicySpec.faithful(),
            alpha=0.05,
            trunc=TruncationDist.poisson(4.0),
            max_steps=10,
            replications=2,
            master_seed=1,
            corpus=PromptCorpus.from_lines(["ab"]),
            schedule=LambdaSchedule.constant(0.1),
        )
        defaults.update(kw)
        return RunConfig(**defaults)

    def test_ok(self, vocab_tiny):
        self._base(vocab_tiny)

    def test_alpha_range(self, vocab_tiny):
        with pytest.raises(DomainError):
            self._base(vocab_tiny, alpha=0.0)

    def test_calibration_needs_holdout(self, vocab_tiny):
        with pytest.raises(DomainError):
            self._base(vocab_tiny, schedule=None)

    def test_corpora_must_not_overlap(self, vocab_tiny):
        with pytest.raises(DomainError) as exc:
            self._base(
                vocab_tiny,
                holdout=PromptCorpus.from_lines(["ab", "ba"]),
            )
        assert "overlap" in str(exc.value)


class TestLoadConfig:
    def test_parses_shipped_default(self, configs_dir):
        cfg = load_config(configs_dir / "default.json")
        assert cfg.policy.kind == "faithful"
        assert cfg.schedule is None  # calibrate
        assert cfg.holdout is not None
        assert cfg.alpha == 0.05
        assert cfg.trunc.kind == "poisson"
        assert cfg.replications == 150
        assert cfg.model.vocab.size == 10  # nine tokens plus EOS

    def test_parses_all_shipped_configs(self, configs_dir):
        for name in ("default", "detection", "heuristic", "certified", "oracle_tiny"):
            cfg = load_config(configs_dir / f"{name}.json")
            assert cfg.max_steps >= 1

    def test_overrides(self, configs_dir):
        cfg = load_config(
            configs_dir / "default.json",
            overrides={
                "policy": "random",
                "m": 2,
                "alpha": 0.01,
                "max_steps": 7,
                "replications": 3,
                "master_seed": 99,
                "lambda0": 0.25,
                "anomaly_mode": "clamp",
            },
        )
        assert cfg.policy.kind == "random"
        assert cfg.policy.m == 2
        assert cfg.alpha == 0.01
        assert cfg.max_steps == 7
        assert cfg.replications == 3
        assert cfg.master_seed == 99
        assert cfg.schedule == LambdaSchedule.constant(0.25)
        assert cfg.anomaly_mode == "clamp"

    def test_schedule_override_to_calibrate(self, configs_dir):
        # default.json ships a holdout corpus, so calibrate mode is legal
        cfg = load_config(
            configs_dir / "default.json",
            overrides={"schedule": "calibrate"},
        )
        assert cfg.schedule is None
        # heuristic.json has no calibration corpus to fall back on
        with pytest.raises(DomainError):
            load_config(
                configs_dir / "heuristic.json", overrides={"schedule": "calibrate"}
            )

    def test_missing_key(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text(json.dumps({"model": {"seed": 1}}), encoding="utf-8")
        with pytest.raises(InputError):
            load_config(p)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{", encoding="utf-8")
        with pytest.raises(InputError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_config(tmp_path / "nope.json")

    def test_relative_paths_resolve_against_config_dir(self, tmp_path, data_dir):
        # write a config in a scratch dir pointing at the shipped data with
        # absolute paths, then one with paths relative to that dir
        vocab = data_dir / "vocab_tiny.json"
        sub = tmp_path / "sub"
        sub.mkdir()
        (sub / "c.txt").write_text("ab\n", encoding="utf-8")
        cfg_file = sub / "cfg.json"
        cfg_file.write_text(
            json.dumps(
                {
                    "model": {"seed": 1, "vocab": str(vocab), "max_len": 6},
                    "schedule": {"kind": "constant", "lambda0": 0.1},
                    "master_seed": 1,
                    "corpus": "c.txt",
                }
            ),
            encoding="utf-8",
        )
        cfg = load_config(cfg_file)
        assert cfg.corpus.prompts == ("ab",)


class TestReplicationPlumbing:
    def test_replication_rng_deterministic_and_distinct(self):
        a = replication_rng(42, 0).integers(0, 1 << 30, 8)
        b = replication_rng(42, 0).integers(0, 1 << 30, 8)
        c = replication_rng(42, 1).integers(0, 1 << 30, 8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_calibration_stream_reserved(self):
        # replication indices must stay clear of the calibration stream
        assert CALIBRATION_STREAM == 2**32 - 1

    def test_wilson_interval_frozen(self):
        # high-precision reference for 8 successes of 10 at 95%
        lo, hi = wilson_interval(8, 10)
        assert math.isclose(lo, 0.49016247153664174, rel_tol=1e-12)
        assert math.isclose(hi, 0.94331784854562474, rel_tol=1e-12)
        assert wilson_interval(0, 5)[0] == 0.0
        assert wilson_interval(5, 5)[1] == 1.0
        with pytest.raises(DomainError):
            wilson_interval(1, 0)

    def _tiny_config(self, vocab_tiny, **kw):
        spec = ModelSpec(seed=7, vocab=vocab_tiny, max_len=6)
        defaults = dict(
            model=spec,
            policy=PolicySpec.random(2),
            alpha=0.05,
            trunc=TruncationDist.poisson(4.0),
            max_steps=30,
            replications=4,
            master_seed=11,
            corpus=PromptCorpus.from_lines(["ab", "ba"]),
            schedule=LambdaSchedule.constant(0.2),
        )
        defaults.update(kw)
        return RunConfig(**defaults)

    def test_run_replications_deterministic(self, vocab_tiny):
        cfg = self._tiny_config(vocab_tiny)
        s1 = run_replications(cfg)
        s2 = run_replications(cfg)
        assert s1.flag_count() == s2.flag_count()
        assert [o.final_log_wealth for o in s1.completed()] == [
            o.final_log_wealth for o in s2.completed()
        ]

    def test_calibration_path_sets_lambda(self, vocab_tiny):
        cfg = self._tiny_config(
            vocab_tiny,
            schedule=None,
            holdout=PromptCorpus.from_lines(["aab", "bba"]),
            n_holdout=60,
        )
        summary = run_replications(cfg)
        assert summary.calibration is not None
        assert summary.lam == summary.calibration.lam
        assert summary.schedule_kind == "constant"
        assert len(summary.calibration.evidences) == 60

    def test_aggregates_shape(self, vocab_tiny):
        summary = run_replications(self._tiny_config(vocab_tiny))
        agg = summary.aggregates()
        assert agg["replications"] == 4
        assert agg["completed"] == 4
        assert agg["flag_count"] == summary.flag_count()
        assert 0.0 <= agg["flag_rate_ci95"][0] <= agg["flag_rate_ci95"][1] <= 1.0
        if agg["flag_count"]:
            q = agg["tau_quantiles"]
            assert q["q25"] <= q["q50"] <= q["q75"]
        else:
            assert agg["tau_quantiles"] is None

    def test_write_outputs_byte_identical(self, vocab_tiny, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            cfg = self._tiny_config(vocab_tiny, out_dir=str(out))
            run_replications(cfg)
        sa = (out_a / "summary.json").read_bytes()
        sb = (out_b / "summary.json").read_bytes()
        assert sa == sb
        for r in range(4):
            ta = (out_a / f"trajectory_{r}.csv").read_bytes()
            tb = (out_b / f"trajectory_{r}.csv").read_bytes()
            assert ta == tb

    def test_trajectory_csv_shape(self, vocab_tiny, tmp_path):
        cfg = self._tiny_config(vocab_tiny, out_dir=str(tmp_path / "o"))
        summary = run_replications(cfg)
        lines = (tmp_path / "o" / "trajectory_0.csv").read_text().splitlines()
        assert lines[0] == ",".join(TRAJECTORY_COLUMNS)
        outcome = summary.outcomes[0]
        assert len(lines) == 1 + len(outcome.trajectory)
        first = lines[1].split(",")
        assert first[0] == "1"
        # floats are serialized via repr and parse back exactly
        assert float(first[4]) == outcome.trajectory[0].evidence

    def test_summary_dict_round_trips_through_json(self, vocab_tiny):
        cfg = self._tiny_config(vocab_tiny)
        summary = run_replications(cfg)
        payload = summary_dict(cfg, summary)
        again = json.loads(json.dumps(payload, sort_keys=True))
        assert again["aggregates"]["flag_count"] == summary.flag_count()
        assert again["config"]["corpus_digest"] == cfg.corpus.digest

    def test_flagged_column_marks_only_tau(self, vocab_tiny, tmp_path):
        cfg = self._tiny_config(
            vocab_tiny,
            policy=PolicySpec.random(3),
            schedule=LambdaSchedule.constant(0.3),
            max_steps=200,
            replications=2,
            out_dir=str(tmp_path / "o"),
        )
        summary = run_replications(cfg)
        for r, outcome in enumerate(summary.outcomes):
            rows = (tmp_path / "o" / f"trajectory_{r}.csv").read_text().splitlines()[1:]
            trues = [row.split(",")[0] for row in rows if row.endswith(",true")]
            if outcome.flagged:
                assert trues == [str(outcome.tau)]
            else:
                assert trues == []
