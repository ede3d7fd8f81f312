import json

import numpy as np
import pytest

from alphaturn import cli
from alphaturn import factor_model as fm
from alphaturn import panel as pm
from alphaturn.errors import NumericalError


def run(argv):
    return cli.main(argv)


def write_corr(path, psi, labels=None):
    psi = np.asarray(psi, dtype=float).copy()
    psi = (psi + psi.T) / 2.0
    np.fill_diagonal(psi, 1.0)
    corr = pm.CorrelationMatrix(
        psi=psi, vols=np.ones(psi.shape[0]), psd=pm._is_psd(psi), labels=labels
    )
    pm.save_correlation(corr, path)
    return corr


class TestAnalyze:
    def test_identity_correlation(self, tmp_path):
        path = tmp_path / "corr.csv"
        write_corr(path, np.eye(16))
        out = tmp_path / "out.json"
        assert run(["analyze", str(path), "--corr", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["rho_star"] == pytest.approx(1.0 / 16.0, abs=1e-12)
        assert doc["psi1"] == pytest.approx(1.0, abs=1e-10)
        assert doc["cluster_lower_bound"] == pytest.approx(16.0, rel=1e-9)

    def test_panel_pipeline(self, tmp_path):
        rng = np.random.default_rng(0)
        common = rng.standard_normal(80)
        vals = common[:, None] + 0.5 * rng.standard_normal((80, 5))
        lines = ["time," + ",".join(f"a{i}" for i in range(5))]
        for s in range(80):
            lines.append(f"{s:02d}," + ",".join("%.10g" % v for v in vals[s]))
        path = tmp_path / "panel.csv"
        path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "out.json"
        assert run(["analyze", str(path), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        # one strong common factor: rho_star near (1 + (N-1) rho) / N
        assert doc["rho_star"] > 0.5
        assert len(doc["v1"]) == 5
        assert doc["signs"] == [1.0] * 5

    def test_raw_basis_skips_signs(self, tmp_path):
        path = tmp_path / "corr.csv"
        write_corr(path, np.eye(3))
        out = tmp_path / "out.json"
        assert run(["analyze", str(path), "--corr", "--raw-basis", "--out", str(out)]) == 0
        assert "signs" not in json.loads(out.read_text())

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert run(["analyze", str(tmp_path / "nope.csv")]) == 2
        assert "error" in capsys.readouterr().err

    def test_config_overrides_min_overlap(self, tmp_path):
        rng = np.random.default_rng(1)
        vals = rng.standard_normal((6, 3))
        lines = ["time,a,b,c"]
        for s in range(6):
            lines.append(f"{s}," + ",".join("%.10g" % v for v in vals[s]))
        path = tmp_path / "panel.csv"
        path.write_text("\n".join(lines) + "\n")
        # default min_overlap = 12 fails on 6 observations
        assert run(["analyze", str(path)]) == 2
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"min-overlap": 3}))
        out = tmp_path / "out.json"
        assert run(
            ["--config", str(cfg), "analyze", str(path), "--out", str(out)]
        ) == 0


class TestClusters:
    def test_sweep_and_knee(self, tmp_path):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((120, 8))
        path = tmp_path / "corr.csv"
        write_corr(path, np.corrcoef(a.T))
        out = tmp_path / "sweep.csv"
        summary = tmp_path / "knee.json"
        code = run(
            ["clusters", str(path), "--kmax", "5",
             "--out", str(out), "--summary-out", str(summary)]
        )
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "K,zeta1,zeta2"
        assert len(lines) >= 5
        doc = json.loads(summary.read_text())
        assert 1 <= doc["knee"] <= 5
        assert doc["rank_used"] == 8

    def test_singular_requires_deform_flag(self, tmp_path):
        path = tmp_path / "corr.csv"
        # rank-3 correlation of four series built from three draws
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 4))
        psi = np.corrcoef(a.T @ a)
        write_corr(path, psi)
        assert run(["clusters", str(path), "--kmax", "2", "--window", "1"]) == 2
        out = tmp_path / "sweep.csv"
        code = run(
            ["clusters", str(path), "--kmax", "2", "--window", "1",
             "--deform", "--out", str(out)]
        )
        assert code == 0

    def test_kmax_too_large_exit_2(self, tmp_path):
        path = tmp_path / "corr.csv"
        write_corr(path, np.eye(4) * 1.0)
        assert run(["clusters", str(path), "--kmax", "4"]) == 2


class TestModel:
    def _write_model(self, tmp_path, doc):
        path = tmp_path / "model.json"
        path.write_text(json.dumps(doc))
        return path

    def test_eigen_binary(self, tmp_path):
        path = self._write_model(
            tmp_path, {"mode": "binary", "sizes": [3, 1], "phi": [1.0, 1.0]}
        )
        out = tmp_path / "eig.json"
        assert run(["model", str(path), "--op", "eigen", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["method"] == "closed-form-binary"
        vals = sorted(
            (v["value"] for v in doc["values"] for _ in range(v["mult"])),
            reverse=True,
        )
        assert vals == pytest.approx([3.0, 1.0, 0.0, 0.0], abs=1e-12)
        assert doc["rho_star"] == pytest.approx(3.0 * np.sqrt(3.0) / 8.0, abs=1e-12)

    def test_eigen_nondiagonal(self, tmp_path):
        phi = [[1.0, 0.5], [0.5, 1.0]]
        path = self._write_model(
            tmp_path, {"mode": "binary", "sizes": [3, 1], "phi": phi}
        )
        out = tmp_path / "eig.json"
        assert run(["model", str(path), "--op", "eigen", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["method"] == "closed-form-nondiagonal"
        assert doc["rho_star"] == pytest.approx(0.8191981964403675, abs=1e-10)

    def test_eigen_dense_fallback(self, tmp_path):
        path = self._write_model(
            tmp_path,
            {
                "mode": "dense",
                "omega": [[1.0, 0.2], [0.8, 0.1], [0.1, 1.0], [0.2, 0.9]],
                "phi": [1.0, 1.0],
                "xi": [0.3, 0.3, 0.3, 0.3],
            },
        )
        out = tmp_path / "eig.json"
        assert run(["model", str(path), "--op", "eigen", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["method"] == "dense"

    def test_rho_curve(self, tmp_path):
        path = self._write_model(
            tmp_path, {"mode": "binary", "sizes": [3, 1], "phi": [1.0, 1.0]}
        )
        out = tmp_path / "curve.csv"
        code = run(
            ["model", str(path), "--op", "rho-curve",
             "--grid", "0,0.5,1", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "rho,psi_star"
        vals = [float(line.split(",")[1]) for line in lines[1:]]
        assert vals[0] == pytest.approx(3.0, abs=1e-12)
        assert vals[1] == pytest.approx((4.0 + np.sqrt(7.0)) / 2.0, rel=1e-12)
        assert vals[2] == pytest.approx(4.0, abs=1e-12)

    def test_sweep_f(self, tmp_path):
        path = self._write_model(
            tmp_path, {"mode": "binary", "sizes": [2, 2], "phi": [1.0, 1.0]}
        )
        out = tmp_path / "sweep.csv"
        assert run(
            ["model", str(path), "--op", "sweep-f", "--fmax", "8", "--out", str(out)]
        ) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "F,rho_star_min"
        assert float(lines[4].split(",")[1]) == pytest.approx(4.0**-1.5, rel=1e-12)

    def test_schema_violation_exit_2(self, tmp_path, capsys):
        path = self._write_model(tmp_path, {"mode": "binary", "sizes": [3, 0]})
        assert run(["model", str(path), "--op", "eigen"]) == 2
        err = capsys.readouterr().err
        assert "/sizes" in err or "phi" in err

    def test_schema_error_names_pointer(self, tmp_path, capsys):
        path = self._write_model(
            tmp_path, {"mode": "binary", "sizes": [3, -1], "phi": [1.0, 1.0]}
        )
        assert run(["model", str(path), "--op", "eigen"]) == 2
        assert "/sizes/1" in capsys.readouterr().err

    def test_numerical_error_exit_3(self, tmp_path, monkeypatch):
        path = self._write_model(
            tmp_path, {"mode": "binary", "sizes": [3, 1], "phi": [1.0, 1.0]}
        )

        def boom(*a, **k):
            raise NumericalError("forced failure")

        monkeypatch.setattr(cli.fm, "secular_roots", boom)
        assert run(["model", str(path), "--op", "rho-curve"]) == 3


class TestSynth:
    def test_byte_identical_reruns(self, tmp_path):
        argv = [
            "synth", "--seed", "5", "--n", "12", "--clusters", "3",
            "--n-obs", "40",
        ]
        p1, m1 = tmp_path / "p1.csv", tmp_path / "m1.json"
        p2, m2 = tmp_path / "p2.csv", tmp_path / "m2.json"
        assert run(argv + ["--panel-out", str(p1), "--model-out", str(m1)]) == 0
        assert run(argv + ["--panel-out", str(p2), "--model-out", str(m2)]) == 0
        assert p1.read_bytes() == p2.read_bytes()
        assert m1.read_bytes() == m2.read_bytes()

    def test_panel_roundtrips_and_model_loads(self, tmp_path):
        p, m = tmp_path / "p.csv", tmp_path / "m.json"
        assert run(
            ["synth", "--seed", "1", "--n", "10", "--clusters", "2",
             "--n-obs", "30", "--panel-out", str(p), "--model-out", str(m)]
        ) == 0
        panel = pm.load_panel(p)
        assert panel.n_alphas == 10
        assert panel.n_obs == 30
        model = fm.FactorModel.from_json(m.read_text())
        assert model.n == 10
        assert model.f == 2

    def test_bad_factor_rho_exit_2(self, tmp_path):
        assert run(
            ["synth", "--seed", "1", "--n", "4", "--clusters", "2",
             "--factor-rho", "maybe",
             "--panel-out", str(tmp_path / "p.csv"),
             "--model-out", str(tmp_path / "m.json")]
        ) == 2


class TestFTest:
    def _write_panel(self, path, values, labels):
        values = np.asarray(values, dtype=float)
        lines = ["time," + ",".join(labels)]
        for s in range(values.shape[0]):
            cells = ["" if np.isnan(v) else "%.10g" % v for v in values[s]]
            lines.append(f"t{s}," + ",".join(cells))
        path.write_text("\n".join(lines) + "\n")

    def _write_loadings(self, path, labels, clusters):
        lines = ["alpha,cluster"] + [
            f"{lab},{c}" for lab, c in zip(labels, clusters)
        ]
        path.write_text("\n".join(lines) + "\n")

    def test_end_to_end(self, tmp_path):
        rng = np.random.default_rng(2)
        old_labels = [f"a{i}" for i in range(6)]
        new_labels = old_labels + [f"b{i}" for i in range(3)]
        f1 = rng.standard_normal(5)
        f2 = rng.standard_normal(5)
        f3 = rng.standard_normal(5)
        old_vals = np.column_stack(
            [f1 + 0.2 * rng.standard_normal(5) for _ in range(3)]
            + [f2 + 0.2 * rng.standard_normal(5) for _ in range(3)]
        )
        new_vals = np.column_stack(
            [old_vals] + [(f3 + 0.2 * rng.standard_normal(5))[:, None] for _ in range(3)]
        )
        p_old, p_new = tmp_path / "old.csv", tmp_path / "new.csv"
        w_old, w_new = tmp_path / "wold.csv", tmp_path / "wnew.csv"
        self._write_panel(p_old, old_vals, old_labels)
        self._write_panel(p_new, new_vals, new_labels)
        self._write_loadings(w_old, old_labels, [1, 1, 1, 2, 2, 2])
        self._write_loadings(w_new, new_labels, [1, 1, 1, 2, 2, 2, 3, 3, 3])
        out = tmp_path / "ftest.csv"
        summary = tmp_path / "ftest.json"
        code = run(
            ["ftest", str(p_old), str(w_old), str(p_new), str(w_new),
             "--out", str(out), "--summary-out", str(summary)]
        )
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "time,f_old,f_new"
        doc = json.loads(summary.read_text())
        assert set(doc) >= {"median_f_old", "median_f_new", "verdict"}

    def test_missing_loading_exit_2(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        labels = ["a0", "a1", "a2", "a3"]
        vals = rng.standard_normal((4, 4)) + 1.0
        p = tmp_path / "p.csv"
        self._write_panel(p, vals, labels)
        w = tmp_path / "w.csv"
        self._write_loadings(w, labels[:3], [1, 1, 2])  # a3 unmapped
        assert run(["ftest", str(p), str(w), str(p), str(w)]) == 2
        assert "a3" in capsys.readouterr().err
