"""Benchmark scenario generator: test functions, truth records, file output."""

import json
import os

import numpy as np
import pytest

from nbpss import engine
from nbpss import simulate as sim


class TestFunctions:
    def test_linear_identity(self):
        assert sim.f1(np.array([2.0]))[0] == 2.0
        assert sim.f1(np.array([0.0]))[0] == 0.0

    def test_quadratic_vertex(self):
        # the shifted quadratic vanishes at x = 1, leaving the linear part
        assert sim.f2(np.array([1.0]))[0] == pytest.approx(1.0)
        assert sim.f2(np.array([0.0]))[0] == pytest.approx(4.0 / 5.5)

    def test_sine_values(self):
        assert sim.f3(np.array([0.0]))[0] == 0.0
        assert sim.f3(np.array([0.5]))[0] == pytest.approx(np.pi - 0.5, abs=1e-12)
        # odd function: f3(-x) = -f3(x)
        x = np.linspace(-1.5, 1.5, 7)
        np.testing.assert_allclose(sim.f3(-x), -sim.f3(x), atol=1e-12)

    def test_bump_tails_follow_slope(self):
        x = np.array([-6.0, 6.0])
        np.testing.assert_allclose(sim.f4(x), 0.5 * x, atol=1e-6)

    def test_registry(self):
        assert set(sim.TEST_FUNCTIONS) == {"f1", "f2", "f3", "f4"}


class TestLattice:
    def test_shape_and_symmetry(self):
        names, adj, centroids = sim.lattice_graph(10)
        assert len(names) == 100
        assert adj.shape == (100, 100)
        np.testing.assert_array_equal(adj, adj.T)
        assert centroids.shape == (100, 2)
        assert centroids.min() >= -1.0 and centroids.max() <= 1.0

    def test_rook_degrees(self):
        _, adj, _ = sim.lattice_graph(10)
        deg = adj.sum(axis=1)
        # 4 corners with 2 neighbours, 32 edge cells with 3, 64 interior with 4
        assert np.sum(deg == 2) == 4
        assert np.sum(deg == 3) == 32
        assert np.sum(deg == 4) == 64

    def test_surface_centered(self):
        _, _, centroids = sim.lattice_graph(10)
        surf = sim.spatial_surface(centroids)
        assert abs(surf.sum()) < 1e-10
        assert surf.std() > 0.1


class TestGenerate:
    def test_unknown_scenario(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            sim.generate_scenario("nope", 100)

    def test_minimum_rows(self):
        with pytest.raises(ValueError, match="at least 50"):
            sim.generate_scenario("high-sparsity-gaussian", 49)

    def test_high_sparsity_shape(self):
        s = sim.generate_scenario("high-sparsity-gaussian", 1000, seed=7)
        assert list(s.columns) == ["y"] + [f"x{j}" for j in range(1, 9)]
        assert s.n == 1000
        crit = s.truth["criterion"]
        assert crit["signal"] == [
            "linear:x1",
            "nonlinear:x2",
            "nonlinear:x3",
            "nonlinear:x4",
        ]
        # the linear-only covariate's smooth part plus both parts of x5..x8
        assert len(crit["noise"]) == 9

    def test_columns_standardized(self):
        s = sim.generate_scenario("low-sparsity-gaussian", 200, seed=1)
        for j in range(1, 5):
            col = s.columns[f"x{j}"]
            assert abs(col.mean()) < 1e-12
            assert col.std(ddof=1) == pytest.approx(1.0, abs=1e-12)

    def test_deterministic(self):
        a = sim.generate_scenario("high-sparsity-gaussian", 300, seed=5)
        b = sim.generate_scenario("high-sparsity-gaussian", 300, seed=5)
        for key in a.columns:
            np.testing.assert_array_equal(a.columns[key], b.columns[key])
        assert a.truth == b.truth

    def test_seed_changes_data(self):
        a = sim.generate_scenario("high-sparsity-gaussian", 300, seed=5)
        b = sim.generate_scenario("high-sparsity-gaussian", 300, seed=6)
        assert not np.array_equal(a.columns["y"], b.columns["y"])

    def test_correlated_covariates(self):
        s = sim.generate_scenario(
            "low-sparsity-gaussian", 4000, correlated=True, seed=3
        )
        for j in range(1, 4):
            r = np.corrcoef(s.columns[f"x{j}"], s.columns[f"x{j + 1}"])[0, 1]
            assert 0.6 < r < 0.8

    def test_independent_covariates(self):
        s = sim.generate_scenario("low-sparsity-gaussian", 4000, seed=3)
        r = np.corrcoef(s.columns["x1"], s.columns["x2"])[0, 1]
        assert abs(r) < 0.1

    def test_spatial_adds_region(self):
        s = sim.generate_scenario("low-sparsity-gaussian", 200, spatial=True, seed=2)
        assert s.region_column is not None
        assert set(s.region_column) <= set(s.adjacency_names)
        assert "spatial:region" in s.truth["criterion"]["signal"]
        surf = s.truth["spatial_surface"]
        assert len(surf["region"]) == 100
        assert abs(sum(surf["value"])) < 1e-9

    def test_poisson_counts(self):
        s = sim.generate_scenario("low-sparsity-poisson", 500, seed=4)
        y = s.columns["y"]
        assert np.all(y >= 0)
        np.testing.assert_array_equal(y, np.round(y))

    def test_zip_inflates_zeros(self):
        sp = sim.generate_scenario("low-sparsity-poisson", 3000, seed=9)
        sz = sim.generate_scenario("low-sparsity-zip", 3000, seed=9)
        assert np.mean(sz.columns["y"] == 0) > np.mean(sp.columns["y"] == 0)
        assert sz.truth["zero_inflation"] == pytest.approx(
            1.0 / (1.0 + np.exp(1.0))
        )

    def test_truth_function_grids(self):
        s = sim.generate_scenario("high-sparsity-gaussian", 100, seed=0)
        grids = s.truth["function_grids"]
        assert set(grids) == {"x1", "x2", "x3", "x4"}
        g = grids["x3"]
        k = int(np.argmin(np.abs(np.asarray(g["x"]) - 0.6)))
        assert g["f"][k] == pytest.approx(
            float(sim.f3(np.array([g["x"][k]]))[0]), abs=1e-12
        )
        assert np.interp(0.5, g["x"], g["f"]) == pytest.approx(np.pi - 0.5, abs=0.02)


class TestWrite:
    def test_files_and_engine_round_trip(self, tmp_path):
        s = sim.generate_scenario("low-sparsity-zip", 120, spatial=True, seed=8)
        paths = sim.write_simulation(s, str(tmp_path))
        assert set(paths) == {"data", "truth", "config", "adjacency"}
        for p in paths.values():
            assert os.path.exists(p)

        with open(paths["data"]) as fh:
            lines = fh.read().strip().split("\n")
        assert len(lines) == 121
        assert lines[0] == "y,x1,x2,x3,x4,region"

        config = engine.parse_model_config(open(paths["config"]).read())
        assert config.family == "zip"
        dataset = engine.load_dataset(paths["data"], config)
        assert dataset.n_rows == 120
        assert dataset.graph.n_regions == 100

        truth = json.loads(open(paths["truth"]).read())
        assert truth["scenario"] == "low-sparsity-zip"
        assert truth["spatial"] is True

    def test_gaussian_config_shape(self, tmp_path):
        s = sim.generate_scenario("high-sparsity-gaussian", 90, seed=1)
        paths = sim.write_simulation(s, str(tmp_path))
        doc = json.loads(open(paths["config"]).read())
        terms = doc["parameters"]["mu"]["terms"]
        # intercept plus a linear and a spline term per covariate
        assert len(terms) == 17
        labels = [t.get("label") for t in terms[1:]]
        assert "lin_x1" in labels and "s_x8" in labels
        assert "adjacency" not in doc["data"]

    def test_reloaded_data_matches(self, tmp_path):
        s = sim.generate_scenario("low-sparsity-gaussian", 100, seed=6)
        paths = sim.write_simulation(s, str(tmp_path))
        config = engine.parse_model_config(open(paths["config"]).read())
        dataset = engine.load_dataset(paths["data"], config)
        # repr round trip keeps float values exact; loader restandardizes
        # an already standardized column so values agree to rounding only
        np.testing.assert_array_equal(dataset.response, s.columns["y"])
        np.testing.assert_allclose(
            dataset.values["x1"], s.columns["x1"], atol=1e-12
        )
