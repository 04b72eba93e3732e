import json

import numpy as np
import pytest

from proxskip.cli import main as cli_main
from proxskip.harness import (ConfigError, build_problem, build_split,
                              config_hash, emit_plot_data, load_config,
                              parse_config, plotdata_from_manifest,
                              resolve_hyperparameters, run_experiment,
                              tune_stepsize)
from proxskip.problems import LogisticProblem
from proxskip.records import read_csv
from proxskip.solvers import reference_minimizer
from proxskip.federated import run_gd_baseline


def minimal_config(**overrides):
    cfg = {
        "problem": {"kind": "synthetic-quadratic", "kappa": 100.0, "d": 10,
                    "n_samples": 8, "heterogeneity": 1.0, "seed": 0},
        "methods": ["proxskip"],
        "seeds": [1],
    }
    cfg.update(overrides)
    return cfg


class TestConfig:
    def test_minimal_defaults(self):
        cfg = parse_config(minimal_config())
        problem = build_problem(cfg.problem)
        info = problem.smoothness_constants()
        params = resolve_hyperparameters(cfg, cfg.methods[0], problem, None)
        assert params["gamma"] == pytest.approx(1.0 / info.L, rel=1e-12)
        assert params["p"] == pytest.approx(1.0 / np.sqrt(info.kappa), rel=1e-9)
        # T derived from the default 1e-6 target through the rate bound
        zeta = min(params["gamma"] * info.mu, params["p"] ** 2)
        assert params["T"] == int(np.ceil(np.log(1e6) / -np.log1p(-zeta)))

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="foo"):
            parse_config(minimal_config(foo=1))

    def test_unknown_nested_key(self):
        bad = minimal_config()
        bad["problem"]["smoothness"] = 3
        with pytest.raises(ConfigError, match="problem.smoothness"):
            parse_config(bad)

    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="sgd"):
            parse_config(minimal_config(methods=["sgd"]))

    def test_methods_required(self):
        with pytest.raises(ConfigError, match="methods"):
            parse_config(minimal_config(methods=[]))

    def test_logistic_lambda_defaults_to_rule(self):
        cfg = parse_config({
            "problem": {"kind": "synthetic-logistic", "n_samples": 40, "d": 5,
                        "seed": 1},
            "methods": ["proxskip"], "seeds": [1],
        })
        problem = build_problem(cfg.problem)
        plain = LogisticProblem(problem.data, problem.labels, 0.0)
        assert problem.lam == pytest.approx(
            1e-4 * plain.smoothness_constants().L, rel=1e-12)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)

    def test_config_hash_stable(self):
        a = parse_config(minimal_config())
        b = parse_config(minimal_config())
        assert config_hash(a) == config_hash(b)


class TestRunExperiment:
    def test_byte_identical_reruns_and_jobs(self, tmp_path):
        raw = minimal_config(methods=["gd", "scaffnew"], seeds=[1, 2], T=200)
        raw["split"] = {"n_clients": 4, "mode": "round-robin"}
        cfg = parse_config(raw)
        m1 = run_experiment(cfg, out_dir=tmp_path / "a", jobs=1)
        m2 = run_experiment(cfg, out_dir=tmp_path / "b", jobs=4)
        files = sorted(e["file"] for e in m1["runs"])
        assert files == sorted(e["file"] for e in m2["runs"])
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_scaffnew_beats_gd_on_communications(self, tmp_path):
        raw = minimal_config(methods=["gd", "scaffnew"], seeds=[1],
                             target=1e-6)
        raw["problem"]["kappa"] = 400.0
        raw["problem"]["n_samples"] = 4
        raw["split"] = {"n_clients": 4}
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, out_dir=tmp_path)
        recs = {e["method"]: read_csv(tmp_path / e["file"]) for e in manifest["runs"]}
        target = 1e-6 * recs["gd"].dist2[0]
        gd_comms = recs["gd"].comm[np.nonzero(recs["gd"].dist2 <= target)[0][0]]
        sc = recs["scaffnew"]
        sc_target = 1e-6 * sc.dist2[0]
        sc_comms = sc.comm[np.nonzero(sc.dist2 <= sc_target)[0][0]]
        assert sc_comms < gd_comms

    def test_divergent_run_is_flagged_and_isolated(self, tmp_path):
        raw = minimal_config(
            methods=[{"name": "gd", "stepsize": 500.0}, "proxskip"],
            seeds=[1], T=100)
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, out_dir=tmp_path)
        by_method = {e["method"]: e for e in manifest["runs"]}
        assert by_method["gd"]["diverged"]
        assert not by_method["proxskip"]["diverged"]
        ok = read_csv(tmp_path / by_method["proxskip"]["file"])
        assert np.isfinite(ok.dist2[-1])

    def test_manifest_lists_resolved_parameters(self, tmp_path):
        cfg = parse_config(minimal_config(T=50))
        manifest = run_experiment(cfg, out_dir=tmp_path)
        entry = manifest["runs"][0]
        assert set(entry["params"]) >= {"gamma", "p", "T"}
        assert entry["floats_per_round"] == "d"
        assert (tmp_path / "manifest.json").exists()

    def test_p_grid_sweeps(self, tmp_path):
        raw = minimal_config(methods=["proxskip"], seeds=[1], T=50,
                             p_grid=[0.5, 0.25])
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, out_dir=tmp_path)
        files = {e["file"] for e in manifest["runs"]}
        assert files == {"proxskip_p0.5_s1.csv", "proxskip_p0.25_s1.csv"}

    def test_log_every_thins_rows(self, tmp_path):
        cfg = parse_config(minimal_config(T=95, log_every=10))
        manifest = run_experiment(cfg, out_dir=tmp_path)
        rec = read_csv(tmp_path / manifest["runs"][0]["file"])
        # rows 0,10,...,90 plus the final row t=95
        assert rec.t.tolist() == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]


class TestTune:
    def test_gd_picks_near_optimal_stepsize(self):
        cfg = parse_config(minimal_config(methods=["gd"], T=300, comm_budget=300))
        problem = build_problem(cfg.problem)
        info = problem.smoothness_constants()
        probe = reference_minimizer(problem)
        best = tune_stepsize(cfg, cfg.methods[0], problem, None, None, probe, 300)
        opt = 2.0 / (info.L + info.mu)
        # best grid point within a factor 2 of the classical optimum
        assert opt / 2 <= best <= opt * 2

    def test_single_point_grid(self):
        cfg = parse_config(minimal_config(methods=["gd"], T=50))
        problem = build_problem(cfg.problem)
        probe = reference_minimizer(problem)
        best = tune_stepsize(cfg, cfg.methods[0], problem, None, None, probe,
                             50, grid=[0.123])
        assert best == 0.123

    def test_all_divergent_grid_raises(self):
        cfg = parse_config(minimal_config(methods=["gd"], T=200))
        problem = build_problem(cfg.problem)
        probe = reference_minimizer(problem)
        info = problem.smoothness_constants()
        with pytest.raises(RuntimeError, match="diverged"):
            tune_stepsize(cfg, cfg.methods[0], problem, None, None, probe,
                          200, grid=[100.0 / info.mu])


class TestPlotData:
    def test_iter_axis_row_count(self):
        problem = build_problem(parse_config(minimal_config()).problem)
        rec = run_gd_baseline(problem, 0.5, 20, probe=reference_minimizer(problem))
        text = emit_plot_data([rec], "iter")
        assert len(text.strip().splitlines()) == 1 + rec.rows

    def test_comm_axis_collapses_repeats(self, tmp_path):
        raw = minimal_config(methods=["proxskip"], seeds=[3], T=80)
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, out_dir=tmp_path)
        text = plotdata_from_manifest(tmp_path / "manifest.json", "comm")
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        xs = np.array([int(r[2]) for r in rows])
        assert np.all(np.diff(xs) >= 1)  # strictly increasing after collapse

    def test_round_trip(self, tmp_path):
        problem = build_problem(parse_config(minimal_config()).problem)
        rec = run_gd_baseline(problem, 0.5, 15, probe=reference_minimizer(problem))
        text = emit_plot_data([rec], "iter")
        path = tmp_path / "plot.csv"
        path.write_text(text)
        body = path.read_text()
        assert body == emit_plot_data([rec], "iter")
        ys = [float(line.split(",")[3]) for line in body.strip().splitlines()[1:]]
        assert np.array_equal(np.array(ys), np.maximum(rec.dist2, 1e-30))

    def test_bad_axis(self):
        with pytest.raises(ValueError, match="axis"):
            emit_plot_data([], "wallclock")


class TestCli:
    def test_run_tune_plotdata_verify(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(minimal_config(
            methods=["gd", "scaffnew"], seeds=[1], T=150,
            split={"n_clients": 4}, out=str(tmp_path / "unused"))))
        out_dir = tmp_path / "res"
        assert cli_main(["run", str(cfg_path), "--out", str(out_dir), "--jobs", "2"]) == 0
        assert (out_dir / "manifest.json").exists()
        assert cli_main(["plotdata", str(out_dir / "manifest.json"),
                         "--axis", "comm", "--out", str(tmp_path / "p.csv")]) == 0
        assert (tmp_path / "p.csv").read_text().startswith("method,seed,x,y")
        capsys.readouterr()
        assert cli_main(["tune", str(cfg_path)]) == 0
        tuned = json.loads(capsys.readouterr().out)
        assert set(tuned) == {"gd", "scaffnew"}

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(minimal_config(foo=2)))
        assert cli_main(["run", str(bad)]) == 2


class TestLibsvmAndTopologyPaths:
    def test_libsvm_problem_with_truncation(self, tmp_path):
        lines = []
        gen = np.random.default_rng(3)
        for i in range(30):
            label = "+1" if gen.random() < 0.5 else "-1"
            feats = " ".join(f"{j + 1}:{round(float(gen.standard_normal()), 3)!r}"
                             for j in range(6))
            lines.append(f"{label} {feats}")
        data_path = tmp_path / "tiny.libsvm"
        data_path.write_text("\n".join(lines) + "\n")
        raw = {
            "problem": {"kind": "libsvm", "path": str(data_path),
                        "max_samples": 20, "max_features": 4},
            "methods": ["proxskip"],
            "seeds": [1],
            "T": 200,
        }
        cfg = parse_config(raw)
        problem = build_problem(cfg.problem)
        assert problem.n_samples <= 20
        assert problem.dim == 4
        plain = LogisticProblem(problem.data, problem.labels, 0.0)
        assert problem.lam == pytest.approx(
            1e-4 * plain.smoothness_constants().L, rel=1e-12)
        manifest = run_experiment(cfg, out_dir=tmp_path / "out")
        rec = read_csv(tmp_path / "out" / manifest["runs"][0]["file"])
        assert rec.dist2[-1] < rec.dist2[0]

    def test_decentralized_method_with_topology(self, tmp_path):
        raw = {
            "problem": {"kind": "synthetic_quadratic", "kappa": 50.0, "d": 4,
                        "n_samples": 6, "heterogeneity": 1.0, "seed": 2},
            "split": {"n_clients": 6},
            "topology": {"kind": "ring", "n": 6},
            "methods": ["decentralized_scaffnew"],
            "seeds": [1],
            "T": 2000,
        }
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, out_dir=tmp_path)
        entry = manifest["runs"][0]
        assert set(entry["params"]) >= {"gamma", "p", "tau", "T", "delta"}
        rec = read_csv(tmp_path / entry["file"])
        assert rec.dist2[-1] <= 1e-6 * rec.dist2[0]

    def test_custom_edge_list_topology(self, tmp_path):
        raw = {
            "problem": {"kind": "synthetic_quadratic", "kappa": 20.0, "d": 3,
                        "n_samples": 4, "heterogeneity": 0.5, "seed": 3},
            "split": {"n_clients": 4},
            "topology": {"kind": "custom", "n": 4,
                         "edges": [[0, 1], [1, 2], [2, 3], [3, 0], [0, 2]]},
            "methods": ["decentralized_scaffnew"],
            "seeds": [1],
            "T": 500,
        }
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, out_dir=tmp_path)
        rec = read_csv(tmp_path / manifest["runs"][0]["file"])
        assert rec.dist2[-1] < rec.dist2[0]
