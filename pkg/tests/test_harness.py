import csv
import io
import json
import math

import numpy as np
import pytest

from tailcp.data import load_predictions
from tailcp.errors import ConfigError
from tailcp.harness import (ExperimentConfig, config_from_mapping, load_config, parse_records_csv,
                            records_to_csv, run, summarize, sweep_coverage_curve, tune_once)
from tailcp.harness.cli import main
from tailcp.harness.config import parse_kv_text
from tailcp.harness.experiment import derive_seed, trial_seed
from tailcp.harness.report import CSV_COLUMNS, TrialRecord, records_to_json

TINY = dict(K=6, mu=10.0, n_total=600, trials=2, frac_cal=0.3)


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw}).validate()


class TestConfig:
    def test_kv_parsing(self):
        text = "# comment\nalpha = 0.1, 0.05\nmethods=standard,pw\n\ntrials = 3 # inline\n"
        cfg = config_from_mapping(parse_kv_text(text))
        assert cfg.alphas == [0.1, 0.05] and cfg.methods == ["standard", "pw"] and cfg.trials == 3

    def test_types(self):
        cfg = config_from_mapping({"n_cal": "500", "tune": "no", "k_rs": "1,2", "raps_k": "none"})
        assert cfg.n_cal == 500 and cfg.tune is False and cfg.k_rs == [1, 2]
        assert cfg.raps_k is None

    @pytest.mark.parametrize("mapping", [{"bogus": "1"}, {"trials": "x"}, {"tune": "maybe"}])
    def test_bad_values(self, mapping):
        with pytest.raises(ConfigError):
            config_from_mapping(mapping)

    @pytest.mark.parametrize("kw", [dict(trials=0), dict(alphas=[1.0]), dict(etas=[0.0]),
                                    dict(methods=["magic"]), dict(scores=["margin"]),
                                    dict(methods=[]), dict(format="xml"), dict(seed=-1)])
    def test_validate(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw).validate()

    def test_load_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv("TAILCP_WORKERS", "3")
        assert ExperimentConfig().worker_count() == 3
        assert ExperimentConfig(workers=1).worker_count() == 1
        monkeypatch.setenv("TAILCP_WORKERS", "many")
        with pytest.raises(ConfigError):
            ExperimentConfig().worker_count()


def _record(**kw):
    base = dict(method="standard", score="lac", alpha=0.1, eta=0.5, seed=2**63 + 5,
                coverage=90.5, avg_size=2.25, cov_head=95.0, cov_tail=math.nan,
                covgap_ht=math.nan, covgap=3.125)
    return TrialRecord(**{**base, **kw})


class TestReport:
    def test_header_only(self):
        assert records_to_csv([]) == ",".join(CSV_COLUMNS) + "\n"

    def test_one_record(self):
        text = records_to_csv([_record()])
        assert len(text.splitlines()) == 2
        assert text.splitlines()[1].endswith(",,")

    def test_round_trip(self):
        recs = [_record(), _record(method="tacp", lam=0.05, k_r=3, coverage=0.1 + 0.2)]
        back = parse_records_csv(records_to_csv(recs))
        assert all(a.same_as(b) for a, b in zip(recs, back)) and len(back) == 2

    def test_parse_rejects_bad_header(self):
        with pytest.raises(ValueError):
            parse_records_csv("a,b\n")

    def test_summary_matches_recomputation(self, rng):
        recs = [_record(coverage=float(c), seed=i) for i, c in enumerate(rng.random(7) * 100)]
        (entry,) = summarize(recs)
        cov = np.array([r.coverage for r in recs])
        assert entry["mean"]["coverage"] == np.mean(cov)
        assert entry["std"]["coverage"] == np.std(cov, ddof=1)
        assert entry["trials"] == 7

    def test_json_has_no_nan(self):
        payload = json.loads(records_to_json([_record()]))
        assert payload["records"][0]["cov_tail"] is None
        assert payload["summary"][0]["mean"]["coverage"] == 90.5


class TestRun:
    def test_smoke(self):
        res = run(tiny(trials=1, methods=["standard"], scores=["lac"]))
        (rec,) = res.records
        assert math.isfinite(rec.coverage) and math.isfinite(rec.avg_size)
        assert not res.partial

    def test_all_methods_and_scores(self):
        cfg = tiny(methods=["standard", "pw", "classwise", "cluster", "rc3p", "tacp", "stacp"],
                   scores=["aps", "lac", "topk", "raps"], etas=[0.5, 0.8])
        res = run(cfg)
        assert len(res.records) == 7 * 4 * 2 * 2
        for r in res.records:
            assert 0 <= r.coverage <= 100 and 0 <= r.avg_size <= 6
            assert (r.lam is not None) == (r.method in ("tacp", "stacp"))

    def test_deterministic_bytes(self):
        cfg = tiny(methods=["standard", "cluster", "tacp"])
        assert records_to_csv(run(cfg).records) == records_to_csv(run(cfg).records)

    def test_degenerate_kr_matches_standard(self):
        cfg = tiny(methods=["standard", "tacp"], scores=["aps", "lac"], tune=False, lam=2.0, k_r=6)
        recs = run(cfg).records
        std = [r for r in recs if r.method == "standard"]
        tacp = [r for r in recs if r.method == "tacp"]
        for a, b in zip(std, tacp):
            assert (a.coverage, a.avg_size, a.covgap_ht, a.covgap) == (
                b.coverage, b.avg_size, b.covgap_ht, b.covgap)

    def test_trial_independence(self):
        three = run(tiny(trials=3, methods=["standard", "tacp"])).records
        two = run(tiny(trials=2, methods=["standard", "tacp"])).records
        kept = [r for r in three if r.seed != trial_seed(0, 2)]
        assert len(kept) == len(two)
        assert all(a.same_as(b) for a, b in zip(kept, two))

    def test_parallel_matches_serial(self):
        cfg = tiny(trials=3, methods=["standard", "tacp"])
        serial = records_to_csv(run(cfg.replace(workers=1)).records)
        assert records_to_csv(run(cfg.replace(workers=2)).records) == serial

    def test_cell_failure_isolated(self, tmp_path):
        prior = tmp_path / "prior.txt"
        prior.write_text("1 1 1 1 1 1", encoding="utf-8")
        cfg = tiny(trials=1, methods=["standard", "tacp"], prior_source=str(prior),
                   tacp_lambdas=[-1.0])
        res = run(cfg)
        assert [r.method for r in res.records] == ["standard"]
        assert res.partial and res.failures[0].method == "tacp"

    def test_file_source_resplits(self, tmp_path):
        path = tmp_path / "preds.csv"
        assert main(["generate", "--set", "K=5", "--set", "n_total=300", "--out", str(path)]) == 0
        cfg = tiny(data=str(path), methods=["standard"], trials=2)
        res = run(cfg)
        assert len(res.records) == 2
        assert res.records[0].coverage != res.records[1].coverage

    def test_seed_derivation(self):
        assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(2, 1)
        assert 0 <= trial_seed(0, 0) < 2**64


class TestSweepAndTune:
    def test_sweep_rows(self):
        rows, res = sweep_coverage_curve(tiny(trials=1, methods=["standard"]))
        assert [r["alpha"] for r in rows] == [round(0.01 * i, 2) for i in range(1, 21)]
        assert rows[0]["target"] == pytest.approx(99.0)

    def test_tune_table_has_one_best(self):
        rows = tune_once(tiny(methods=["tacp"], scores=["lac"]))
        assert sum(r["best"] for r in rows) == 1
        best = next(r for r in rows if r["best"])
        assert best["objective"] <= best["baseline"]


class TestCli:
    def test_run_csv(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        code = main(["run", "--set", "K=5", "--set", "n_total=300", "--trials", "2",
                     "--methods", "standard,pw", "--scores", "lac", "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert len(rows) == 4 and rows[0]["method"] == "standard"

    def test_config_file_and_flag_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("K = 5\nn_total = 300\ntrials = 3\nmethods = standard\nscores = lac\n")
        assert main(["run", "--config", str(cfg), "--trials", "1"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 2

    def test_json_output(self, capsys):
        assert main(["run", "--set", "K=5", "--set", "n_total=300", "--trials", "1",
                     "--methods", "standard", "--format", "json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {"records", "summary", "failures"}

    def test_config_error_exit(self, capsys):
        assert main(["run", "--alpha", "1.5"]) == 1
        assert main(["run", "--set", "nonsense"]) == 1
        assert main(["run", "--set", "signal=-1", "--trials", "1"]) == 1

    def test_data_error_exit(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("0,0.5,0.5\n5,0.5,0.5\n")
        assert main(["run", "--data", str(bad)]) == 2
        assert main(["run", "--data", str(tmp_path / "missing.csv")]) == 2

    def test_partial_exit(self, tmp_path, capsys):
        prior = tmp_path / "prior.txt"
        prior.write_text("1 1 1 1 1")
        code = main(["run", "--set", "K=5", "--set", "n_total=300", "--trials", "1",
                     "--methods", "standard,tacp", "--set", f"prior_source={prior}",
                     "--set", "tacp_lambdas=-1"])
        assert code == 3
        assert len(capsys.readouterr().out.strip().splitlines()) == 2

    def test_generate_logits_round_trip(self, tmp_path):
        path = tmp_path / "logits.csv"
        assert main(["generate", "--set", "K=4", "--set", "n_total=100", "--logits", "--header",
                     "--out", str(path)]) == 0
        b = load_predictions(path, "logits", header=True)
        assert b.K == 4 and b.n >= 100
        assert np.allclose(b.probs.sum(axis=1), 1)

    def test_report(self, tmp_path, capsys):
        rec = tmp_path / "r.csv"
        main(["run", "--set", "K=5", "--set", "n_total=300", "--trials", "2", "--methods",
              "standard", "--out", str(rec)])
        out = tmp_path / "s.csv"
        assert main(["report", str(rec), "--format", "csv", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("method,score,alpha,eta,trials,coverage_mean")
        assert len(lines) == 2
        assert main(["report", str(tmp_path / "none.csv")]) == 2

    def test_sweep_and_tune_commands(self, capsys):
        assert main(["sweep", "--set", "K=5", "--set", "n_total=300", "--trials", "1",
                     "--methods", "standard", "--alpha", "0.1,0.2"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 3
        assert main(["tune", "--set", "K=5", "--set", "n_total=300", "--methods", "tacp",
                     "--scores", "lac"]) == 0
        assert "objective" in capsys.readouterr().out.splitlines()[0]
