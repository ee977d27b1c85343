import csv
import os

import numpy as np
import pytest
import yaml

from nes.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from nes.experiment import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    load_rows,
    run_experiment,
    summarize,
)
from nes.metrics import nll
from nes.search import TabularEvaluator, deep_ens_fixed
from nes.store import PredictionStore
from nes.synthetic import SyntheticModel, SyntheticSpec, generate_synthetic_benchmark


@pytest.fixture(scope="module")
def bench_store(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("bench") / "store")
    generate_synthetic_benchmark(path, gen_seed=2, num_families=2,
                                 archs_per_family=3, seeds_per_arch=3,
                                 n_val=32, n_test=32, num_classes=4)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def rows_without_walltime(path):
    return [{k: v for k, v in r.items() if k != "wall_seconds"}
            for r in read_csv(path)]


class TestConfigValidation:
    def base(self, **over):
        kwargs = dict(method="nes-rs", output_dir="/tmp/x", seeds=[0], K=8)
        kwargs.update(over)
        return kwargs

    def test_valid(self):
        ExperimentConfig(**self.base())

    @pytest.mark.parametrize("over", [
        dict(method="gradient-descent"),
        dict(seeds=[]),
        dict(source="oracle"),
        dict(source="store", store_path=None),
        dict(method="deepens-fixed", fixed_arch=None),
        dict(ensemble_sizes=[20], K=8),
        dict(severities=[7]),
    ])
    def test_invalid(self, over):
        with pytest.raises(ConfigError):
            ExperimentConfig(**self.base(**over))

    def test_from_file_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(self.base(turbo=True)))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(str(path))

    def test_from_file_rejects_non_mapping(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- just\n- a\n- list\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(str(path))

    def test_from_file_round_trip(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(self.base(K=16, seeds=[0, 1])))
        cfg = ExperimentConfig.from_file(str(path))
        assert cfg.K == 16 and cfg.seeds == [0, 1]


class TestRunExperiment:
    def run_config(self, tmp_path, store_path, name, **over):
        kwargs = dict(method="nes-rs", output_dir=str(tmp_path / name),
                      seeds=[0, 1], K=8, P=4, m=2, ensemble_sizes=[1, 2],
                      severities=[0, 5], source="store",
                      store_path=store_path)
        kwargs.update(over)
        cfg = ExperimentConfig(**kwargs)
        return run_experiment(cfg)

    def test_outputs_and_row_count(self, tmp_path, bench_store):
        out = self.run_config(tmp_path, bench_store, "r1")
        assert os.path.exists(os.path.join(out, "config.yaml"))
        rows = read_csv(os.path.join(out, "results.csv"))
        # 2 seeds x 2 severities x 2 ensemble sizes
        assert len(rows) == 8
        assert tuple(rows[0]) == CSV_COLUMNS

    def test_rerun_deterministic_ignoring_walltime(self, tmp_path, bench_store):
        a = self.run_config(tmp_path, bench_store, "a")
        b = self.run_config(tmp_path, bench_store, "b")
        assert rows_without_walltime(os.path.join(a, "results.csv")) == \
            rows_without_walltime(os.path.join(b, "results.csv"))

    def test_deepens_fixed_m1_matches_member_nll(self, tmp_path, bench_store):
        store = PredictionStore.open(bench_store)
        arch_id = store.arch_ids()[0]
        out = self.run_config(tmp_path, bench_store, "f",
                              method="deepens-fixed", fixed_arch=arch_id,
                              ensemble_sizes=[1], severities=[0], seeds=[0])
        row = read_csv(os.path.join(out, "results.csv"))[0]
        evaluator = TabularEvaluator(store=store)
        from nes.space import Architecture
        from nes.search import _job_seed
        res = deep_ens_fixed(Architecture.from_key(arch_id), evaluator, M=1,
                             seed=0)
        expected = nll(res.pool[0].preds[("test", 0)], store.labels("test", 0))
        # ensemble averaging renormalizes the float32 rows, so allow drift
        assert float(row["nll"]) == pytest.approx(expected, abs=1e-6)

    def test_deepens_best_runs_from_store(self, tmp_path, bench_store):
        out = self.run_config(tmp_path, bench_store, "db",
                              method="deepens-best", ensemble_sizes=[2],
                              severities=[0], seeds=[0])
        rows = read_csv(os.path.join(out, "results.csv"))
        assert len(rows) == 1 and rows[0]["method"] == "deepens-best"

    def test_deepens_best_rejects_synthetic_source(self, tmp_path):
        cfg = ExperimentConfig(method="deepens-best",
                               output_dir=str(tmp_path / "x"), seeds=[0], K=4,
                               ensemble_sizes=[2], source="synthetic")
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_toy_source_end_to_end(self, tmp_path):
        cfg = ExperimentConfig(
            method="nes-rs", output_dir=str(tmp_path / "toy"), seeds=[0],
            K=3, P=3, m=2, ensemble_sizes=[2], severities=[0], source="toy",
            trainer=dict(num_intermediate_nodes=1, hidden_width=4,
                         macro_depth=1, n_train=64, n_val=16, n_test=16,
                         num_classes=3, num_features=4, epochs=1,
                         batch_size=32),
        )
        out = run_experiment(cfg)
        rows = read_csv(os.path.join(out, "results.csv"))
        assert len(rows) == 1
        # the pool store materialized for crash resume
        assert os.path.isdir(os.path.join(out, "pool_seed0"))


class TestSummarize:
    def test_mean_and_ci(self, tmp_path, bench_store):
        run = TestRunExperiment().run_config(tmp_path, bench_store, "s1")
        out_csv = summarize([run], str(tmp_path / "sum"))
        summary = read_csv(out_csv)
        raw = read_csv(os.path.join(run, "results.csv"))
        for cell in summary:
            match = [float(r["nll"]) for r in raw
                     if (r["method"], r["K"], r["M"], r["severity"]) ==
                     (cell["method"], cell["K"], cell["M"], cell["severity"])]
            assert int(cell["num_seeds"]) == len(match)
            assert float(cell["nll_mean"]) == pytest.approx(
                np.mean(match), abs=1e-12)
            expected_ci = 0.0 if len(match) < 2 else \
                1.96 * np.std(match, ddof=1) / np.sqrt(len(match))
            assert float(cell["nll_ci95"]) == pytest.approx(expected_ci, abs=1e-12)
        for fname in ("nll_vs_M.csv", "nll_vs_M.svg",
                      "nll_vs_severity.csv", "nll_vs_severity.svg"):
            assert os.path.exists(os.path.join(str(tmp_path / "sum"), fname))

    def test_single_seed_ci_zero(self, tmp_path, bench_store):
        run = TestRunExperiment().run_config(
            tmp_path, bench_store, "s2", seeds=[0], ensemble_sizes=[2],
            severities=[0])
        summary = read_csv(summarize([run], str(tmp_path / "sum2")))
        assert all(float(c["nll_ci95"]) == 0.0 for c in summary)

    def test_missing_results_csv(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_rows([str(tmp_path / "nothing")])


class TestCli:
    def test_generate_and_verify(self, tmp_path, capsys):
        out = str(tmp_path / "bench")
        rc = main(["generate-benchmark", out, "--families", "2",
                   "--archs-per-family", "2", "--seeds-per-arch", "1",
                   "--n-val", "8", "--n-test", "8", "--classes", "3"])
        assert rc == EXIT_OK
        assert "4 architectures" in capsys.readouterr().out
        assert main(["verify-store", out]) == EXIT_OK

    def test_run_and_summarize(self, tmp_path, bench_store, capsys):
        cfg = dict(method="nes-rs", output_dir=str(tmp_path / "run"),
                   seeds=[0], K=4, P=4, m=2, ensemble_sizes=[2],
                   severities=[0], source="store", store_path=bench_store)
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(cfg))
        assert main(["run", str(cfg_path)]) == EXIT_OK
        assert main(["summarize", str(tmp_path / "run"),
                     "--output", str(tmp_path / "sum")]) == EXIT_OK
        assert os.path.exists(str(tmp_path / "sum" / "summary.csv"))

    def test_import_round_trip(self, tmp_path, bench_store, capsys):
        from nes.store import export_tabular
        export = str(tmp_path / "export.npz")
        export_tabular(PredictionStore.open(bench_store), export)
        rc = main(["import", export, str(tmp_path / "imported")])
        assert rc == EXIT_OK
        assert main(["verify-store", str(tmp_path / "imported")]) == EXIT_OK

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.yaml"
        cfg_path.write_text(yaml.safe_dump(dict(method="nope",
                                                output_dir="x", seeds=[0])))
        assert main(["run", str(cfg_path)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG

    def test_corrupt_store_exits_3(self, tmp_path, capsys):
        out = str(tmp_path / "bench")
        main(["generate-benchmark", out, "--families", "1",
              "--archs-per-family", "1", "--seeds-per-arch", "1",
              "--n-val", "8", "--n-test", "8", "--classes", "3"])
        victim = next(f for f in os.listdir(out) if f.endswith(".nesp"))
        fpath = os.path.join(out, victim)
        blob = bytearray(open(fpath, "rb").read())
        blob[-1] ^= 0xFF
        open(fpath, "wb").write(bytes(blob))
        assert main(["verify-store", out]) == EXIT_DATA
        assert "data error" in capsys.readouterr().err

    def test_unknown_import_format_exits_3(self, tmp_path):
        path = str(tmp_path / "junk.npz")
        np.savez(path, stuff=np.zeros(2))
        assert main(["import", path, str(tmp_path / "out")]) == EXIT_DATA
