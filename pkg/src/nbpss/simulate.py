"""Synthetic benchmark datasets with known signal/noise structure.

Each scenario draws covariates, builds a true predictor from a fixed set of
test functions, and samples responses from the chosen family.  The truth is
recorded in machine-readable form so selection performance can be scored
automatically: every (covariate, component) pair is tagged signal or noise,
where component separates the linear part of an effect from the nonlinear
remainder (matching how the model decomposes smooth terms).

Covariates are standardized after generation and the test functions are
evaluated on the standardized values, so the recorded truth is exactly the
function a fit on the emitted CSV should recover.

The spatial option assigns observations to a built-in 10 x 10 lattice of
regions and adds a smooth surface of the region centroids to the predictor;
the surface values are part of the truth record.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "TEST_FUNCTIONS",
    "SCENARIOS",
    "f1",
    "f2",
    "f3",
    "f4",
    "lattice_graph",
    "spatial_surface",
    "generate_scenario",
    "write_simulation",
    "Simulation",
]

# response scale of the count families; keeps rates in a moderate range
COUNT_PREDICTOR_SCALE = 0.35
ZERO_INFLATION_LOGIT = -1.0
SPATIAL_AMPLITUDE = 0.8


def f1(x: np.ndarray) -> np.ndarray:
    """Pure linear effect."""
    return np.asarray(x, dtype=float)


def f2(x: np.ndarray) -> np.ndarray:
    """Linear plus a shifted quadratic."""
    x = np.asarray(x, dtype=float)
    return x + (2.0 * x - 2.0) ** 2 / 5.5


def f3(x: np.ndarray) -> np.ndarray:
    """Sine wave riding on a negative slope."""
    x = np.asarray(x, dtype=float)
    return -x + np.pi * np.sin(np.pi * x)


def f4(x: np.ndarray) -> np.ndarray:
    """Gentle slope with two normal-density bumps."""
    x = np.asarray(x, dtype=float)
    return (
        0.5 * x
        + 15.0 * stats.norm.pdf(2.0 * (x - 0.2))
        - stats.norm.pdf(x + 0.4)
    )


TEST_FUNCTIONS = {"f1": f1, "f2": f2, "f3": f3, "f4": f4}

# which components of each test function are truly nonzero; the linear part
# is the population least squares slope, the nonlinear part the remainder
_COMPONENT_TRUTH = {
    "f1": {"linear": True, "nonlinear": False},
    "f2": {"linear": True, "nonlinear": True},
    "f3": {"linear": True, "nonlinear": True},
    "f4": {"linear": True, "nonlinear": True},
}


@dataclass(frozen=True)
class ScenarioSpec:
    family: str
    n_covariates: int
    signal: tuple[str, ...]  # function ids of the first covariates, in order


SCENARIOS = {
    "high-sparsity-gaussian": ScenarioSpec("gaussian", 8, ("f1", "f2", "f3", "f4")),
    "low-sparsity-gaussian": ScenarioSpec("gaussian", 4, ("f1", "f2", "f3", "f4")),
    "high-sparsity-poisson": ScenarioSpec("poisson", 8, ("f1", "f2", "f3", "f4")),
    "low-sparsity-poisson": ScenarioSpec("poisson", 4, ("f1", "f2", "f3", "f4")),
    "high-sparsity-zip": ScenarioSpec("zip", 8, ("f1", "f2", "f3", "f4")),
    "low-sparsity-zip": ScenarioSpec("zip", 4, ("f1", "f2", "f3", "f4")),
}


def lattice_graph(side: int = 10) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Rook-neighbour lattice of side x side regions.

    Returns region names, the 0/1 adjacency matrix, and centroids scaled to
    the unit square [-1, 1]^2.
    """
    names = tuple(f"r{i}_{j}" for i in range(side) for j in range(side))
    r = side * side
    adj = np.zeros((r, r))
    for i in range(side):
        for j in range(side):
            k = i * side + j
            if i + 1 < side:
                adj[k, k + side] = adj[k + side, k] = 1.0
            if j + 1 < side:
                adj[k, k + 1] = adj[k + 1, k] = 1.0
    grid = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    cx, cy = np.meshgrid(grid, grid, indexing="ij")
    centroids = np.column_stack([cx.ravel(), cy.ravel()])
    return names, adj, centroids


def spatial_surface(centroids: np.ndarray) -> np.ndarray:
    """Smooth true surface over region centroids, centered to sum zero."""
    vals = SPATIAL_AMPLITUDE * np.sin(np.pi * centroids[:, 0]) * np.cos(
        0.5 * np.pi * centroids[:, 1]
    )
    return vals - vals.mean()


@dataclass
class Simulation:
    """Generated dataset plus its ground truth."""

    scenario: str
    columns: dict[str, np.ndarray]
    region_column: np.ndarray | None
    adjacency_names: tuple[str, ...] | None
    adjacency_matrix: np.ndarray | None
    truth: dict

    @property
    def n(self) -> int:
        return len(self.columns["y"])


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / x.std(ddof=1)


def _draw_covariates(
    rng: np.random.Generator, n: int, k: int, correlated: bool
) -> np.ndarray:
    if not correlated:
        raw = rng.uniform(-2.0, 2.0, size=(n, k))
    else:
        # AR(1) across the covariate index with unit normal marginals
        rho = 0.7
        raw = np.empty((n, k))
        raw[:, 0] = rng.standard_normal(n)
        for j in range(1, k):
            raw[:, j] = rho * raw[:, j - 1] + np.sqrt(1 - rho * rho) * rng.standard_normal(n)
    return np.column_stack([_standardize(raw[:, j]) for j in range(k)])


def _sample_response(
    family: str, eta: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    if family == "gaussian":
        return eta + rng.normal(0.0, 1.0, eta.size)
    rate = np.exp(COUNT_PREDICTOR_SCALE * eta)
    counts = rng.poisson(rate).astype(float)
    if family == "poisson":
        return counts
    pi = 1.0 / (1.0 + np.exp(-ZERO_INFLATION_LOGIT))
    counts[rng.random(eta.size) < pi] = 0.0
    return counts


def generate_scenario(
    scenario: str,
    n: int,
    *,
    correlated: bool = False,
    spatial: bool = False,
    seed: int = 0,
) -> Simulation:
    """Draw one benchmark dataset.

    Signal covariates carry the test functions in order; the remaining
    covariates are pure noise.  With ``spatial`` a region column and the
    lattice surface are added to the predictor.
    """
    if scenario not in SCENARIOS:
        raise ValueError(
            f"unknown scenario {scenario!r}; available: {', '.join(sorted(SCENARIOS))}"
        )
    if n < 50:
        raise ValueError("n must be at least 50")
    spec = SCENARIOS[scenario]
    rng = np.random.default_rng(seed)
    x = _draw_covariates(rng, n, spec.n_covariates, correlated)

    eta = np.zeros(n)
    effects = []
    grids = {}
    grid = np.linspace(-1.8, 1.8, 61)
    for j in range(spec.n_covariates):
        name = f"x{j + 1}"
        if j < len(spec.signal):
            fid = spec.signal[j]
            eta += TEST_FUNCTIONS[fid](x[:, j])
            comp = _COMPONENT_TRUTH[fid]
            grids[name] = {
                "x": grid.tolist(),
                "f": TEST_FUNCTIONS[fid](grid).tolist(),
            }
        else:
            fid = "zero"
            comp = {"linear": False, "nonlinear": False}
        effects.append(
            {
                "covariate": name,
                "function": fid,
                "linear_nonzero": comp["linear"],
                "nonlinear_nonzero": comp["nonlinear"],
            }
        )

    region_column = None
    adjacency_names = adjacency_matrix = None
    spatial_truth = None
    if spatial:
        adjacency_names, adjacency_matrix, centroids = lattice_graph(10)
        surface = spatial_surface(centroids)
        codes = rng.integers(0, len(adjacency_names), n)
        region_column = np.array([adjacency_names[c] for c in codes])
        eta = eta + surface[codes]
        spatial_truth = {
            "region": [str(v) for v in adjacency_names],
            "value": surface.tolist(),
        }
        effects.append(
            {
                "covariate": "region",
                "function": "spatial",
                "linear_nonzero": False,
                "nonlinear_nonzero": True,
            }
        )

    y = _sample_response(spec.family, eta, rng)
    columns = {"y": y}
    for j in range(spec.n_covariates):
        columns[f"x{j + 1}"] = x[:, j]

    signal_terms = []
    noise_terms = []
    for j in range(spec.n_covariates):
        name = f"x{j + 1}"
        if j < len(spec.signal):
            fid = spec.signal[j]
            if fid == "f1":
                signal_terms.append(f"linear:{name}")
                noise_terms.append(f"nonlinear:{name}")
            else:
                signal_terms.append(f"nonlinear:{name}")
        else:
            noise_terms.extend((f"linear:{name}", f"nonlinear:{name}"))
    if spatial:
        signal_terms.append("spatial:region")

    truth = {
        "scenario": scenario,
        "family": spec.family,
        "n": n,
        "seed": seed,
        "correlated": correlated,
        "spatial": spatial,
        "predictor_scale": (
            1.0 if spec.family == "gaussian" else COUNT_PREDICTOR_SCALE
        ),
        "noise_sd": 1.0 if spec.family == "gaussian" else None,
        "zero_inflation": (
            None
            if spec.family != "zip"
            else 1.0 / (1.0 + np.exp(-ZERO_INFLATION_LOGIT))
        ),
        "effects": effects,
        "criterion": {"signal": signal_terms, "noise": noise_terms},
        "function_grids": grids,
        "spatial_surface": spatial_truth,
    }
    return Simulation(
        scenario=scenario,
        columns=columns,
        region_column=region_column,
        adjacency_names=adjacency_names,
        adjacency_matrix=adjacency_matrix,
        truth=truth,
    )


def _model_config_doc(sim: Simulation, data_path: str, adjacency_path: str | None) -> dict:
    """Ready-to-fit configuration with one linear and one spline term per
    covariate, all selectable with default elicitation targets."""
    spec = SCENARIOS[sim.scenario]
    param = {"gaussian": "mu", "poisson": "lambda", "zip": "lambda"}[spec.family]
    terms = [{"effect": "intercept"}]
    for j in range(spec.n_covariates):
        name = f"x{j + 1}"
        terms.append({"effect": "linear", "covariate": name, "label": f"lin_{name}"})
        terms.append({"effect": "spline", "covariate": name, "label": f"s_{name}"})
    if sim.region_column is not None:
        terms.append({"effect": "spatial", "covariate": "region", "label": "spat"})
    doc = {
        "family": spec.family,
        "response": "y",
        "parameters": {param: {"terms": terms}},
        "data": {"path": data_path},
    }
    if sim.region_column is not None:
        doc["data"]["adjacency"] = adjacency_path
    if spec.family == "zip":
        doc["parameters"]["pi"] = {"terms": [{"effect": "intercept", "label": "pi_intercept"}]}
    return doc


def write_simulation(sim: Simulation, out_dir: str) -> dict[str, str]:
    """Write data.csv, truth.json, model.json, and adjacency.txt if spatial.

    Returns a name -> path map.  model.json is a ready-to-run configuration
    with selectable linear + spline terms for every covariate; it refers to
    its sibling files by name so the directory can be moved or fit from any
    working directory (config paths resolve against the config location).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    data_path = os.path.join(out_dir, "data.csv")
    header = list(sim.columns)
    if sim.region_column is not None:
        header.append("region")
    with open(data_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(sim.n):
            row = [repr(float(sim.columns[name][i])) for name in sim.columns]
            if sim.region_column is not None:
                row.append(sim.region_column[i])
            writer.writerow(row)
    paths["data"] = data_path

    adjacency_path = None
    if sim.adjacency_names is not None:
        adjacency_path = os.path.join(out_dir, "adjacency.txt")
        with open(adjacency_path, "w", encoding="utf-8") as fh:
            fh.write("nodes " + " ".join(sim.adjacency_names) + "\n")
            rows, cols = np.nonzero(np.triu(sim.adjacency_matrix))
            for a, b in zip(rows, cols):
                fh.write(f"{sim.adjacency_names[a]} {sim.adjacency_names[b]}\n")
        paths["adjacency"] = adjacency_path

    truth_path = os.path.join(out_dir, "truth.json")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(sim.truth, fh, indent=2)
        fh.write("\n")
    paths["truth"] = truth_path

    config_path = os.path.join(out_dir, "model.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(_model_config_doc(sim, data_path, adjacency_path), fh, indent=2)
        fh.write("\n")
    paths["config"] = config_path
    return paths
