"""Fitting workflow around the sampler: configuration, data, summaries, files.

The pieces compose in a fixed order.  ``parse_model_config`` turns a JSON
document into a validated :class:`ModelConfig`; ``load_dataset`` reads the
CSV it points at and standardizes the selectable continuous covariates;
``assemble`` builds the design blocks and priors (running the scale
elicitation where a term gives targets instead of explicit scales);
``run_chains`` produces posterior draws; ``summarize`` reduces them to
inclusion probabilities and model-averaged curves; ``compute_scores`` adds
information criteria and cross-validated predictive scores; and
``write_outputs`` serializes everything to a directory.

Binary draw storage (draws.bin) uses the magic bytes ``NBPS``, a little
endian uint32 format version, then the draw matrix as little endian
column-major float64.  A JSON side-car (draws.bin.json) indexes the columns
and records per-chain metadata so the draws can be reloaded losslessly.

Score orientation: DIC and WAIC are on the deviance scale (smaller is
better); the cross-validated log, quadratic, and spherical scores are
proper-scoring-rule values (larger is better).
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .design import (
    EffectBlock,
    make_bspline_block,
    make_gmrf_block,
    make_linear_block,
)
from .elicitation import elicit_block
from .families import Family, get_family
from .model import (
    BlockPrior,
    Model,
    build_model,
    make_intercept_block,
    make_random_intercept_block,
)
from .prior import NbpssHyper
from .sampler import ChainConfig, ChainOutput, run_chain

__all__ = [
    "ConfigError",
    "DataError",
    "EngineError",
    "TermConfig",
    "ModelConfig",
    "ScoreSettings",
    "Adjacency",
    "Dataset",
    "ModelBundle",
    "EffectSummary",
    "PosteriorSummary",
    "ScoreReport",
    "parse_model_config",
    "read_adjacency",
    "load_dataset",
    "assemble",
    "run_chains",
    "summarize",
    "compute_scores",
    "write_outputs",
    "read_draws",
    "rebuild_chain_outputs",
    "thread_count",
]

DRAWS_MAGIC = b"NBPS"
DRAWS_VERSION = 1
EFFECT_KINDS = ("intercept", "linear", "spline", "spatial", "random")
LABEL_PATTERN = re.compile(r"^[A-Za-z0-9._()-]+$")


class ConfigError(ValueError):
    """Configuration document violates the schema; message is path-addressed."""


class DataError(ValueError):
    """Dataset or adjacency file cannot be used with the given configuration."""


class EngineError(RuntimeError):
    """I/O or serialization failure; message carries the offending path."""


def thread_count() -> int:
    """Concurrency cap for chains and cross-validation folds.

    Reads NBPSS_THREADS; anything unset, non-numeric, or < 1 means serial.
    """
    raw = os.environ.get("NBPSS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# configuration schema


@dataclass(frozen=True)
class TermConfig:
    """One predictor term: what it is built from and how it is penalized.

    Selectable terms either carry explicit scales (b, r) or sup-norm targets
    (alpha, c) that the elicitation stage resolves into scales.
    """

    covariate: str | None
    effect: str
    label: str
    select: bool
    a: float = 5.0
    b: float | None = None
    r: float | None = None
    alpha: float | None = None
    c: float | None = None
    a0: float = 1.0
    b0: float = 1.0
    omega_group: str | None = None
    fixed_omega: float | None = None
    ig_a: float = 0.001
    ig_b: float = 0.001
    interior: int = 20
    degree: int = 3
    rw_order: int = 2

    @property
    def needs_elicitation(self) -> bool:
        return self.select and self.b is None


@dataclass(frozen=True)
class ScoreSettings:
    """Cross-validation controls; folds = 0 disables the CV scores."""

    folds: int = 0
    iterations: int = 2000
    burn_in: int = 500
    thin: int = 2
    max_density_draws: int = 200


@dataclass(frozen=True)
class ModelConfig:
    family: str
    response: tuple[str, ...]
    terms: tuple[tuple[str, TermConfig], ...]
    chain: ChainConfig
    data_path: str
    adjacency_path: str | None
    error_a: float = 0.001
    error_b: float = 0.001
    inclusion_threshold: float = 0.5
    scores: ScoreSettings = field(default_factory=ScoreSettings)

    def family_object(self) -> Family:
        return get_family(self.family)


def _want(obj, path, typ, typename):
    if not isinstance(obj, typ) or isinstance(obj, bool) and typ is not bool:
        raise ConfigError(f"{path}: expected {typename}")
    return obj


def _want_number(obj, path, lo=None, hi=None, lo_open=True):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    v = float(obj)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{path}: must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v >= hi:
        raise ConfigError(f"{path}: must be < {hi}")
    return v


def _want_int(obj, path, lo=None):
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ConfigError(f"{path}: expected an integer")
    if lo is not None and obj < lo:
        raise ConfigError(f"{path}: must be >= {lo}")
    return obj


def _reject_unknown(obj: dict, known, path: str):
    for key in obj:
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")


_TERM_KEYS = {
    "covariate", "effect", "label", "select",
    "a", "b", "r", "alpha", "c", "a0", "b0", "omega_group", "fixed_omega",
    "ig_a", "ig_b", "interior", "degree", "rw_order",
}
_SELECT_ONLY = ("a", "b", "r", "alpha", "c", "a0", "b0", "omega_group", "fixed_omega")
_SPLINE_ONLY = ("interior", "degree", "rw_order")


def _default_label(effect: str, covariate: str | None) -> str:
    if effect == "intercept":
        return "intercept"
    prefix = {"linear": "", "spline": "s_", "spatial": "spat_", "random": "re_"}[effect]
    return prefix + covariate


def _parse_term(raw: dict, path: str) -> TermConfig:
    _want(raw, path, dict, "an object")
    _reject_unknown(raw, _TERM_KEYS, path)
    if "effect" not in raw:
        raise ConfigError(f"{path}.effect: required")
    effect = _want(raw["effect"], f"{path}.effect", str, "a string")
    if effect not in EFFECT_KINDS:
        raise ConfigError(
            f"{path}.effect: unknown effect {effect!r}; expected one of {EFFECT_KINDS}"
        )
    covariate = raw.get("covariate")
    if effect == "intercept":
        if covariate is not None:
            raise ConfigError(f"{path}.covariate: not allowed for intercept terms")
    elif covariate is None:
        raise ConfigError(f"{path}.covariate: required for {effect} terms")
    else:
        covariate = _want(covariate, f"{path}.covariate", str, "a string")

    select = raw.get("select", effect not in ("intercept",))
    select = _want(select, f"{path}.select", bool, "a boolean")
    if effect == "intercept" and select:
        raise ConfigError(f"{path}.select: intercept terms cannot be selectable")

    if not select:
        for key in _SELECT_ONLY:
            if key in raw:
                raise ConfigError(f"{path}.{key}: only applies when select is true")
    else:
        for key in ("ig_a", "ig_b"):
            if key in raw:
                raise ConfigError(f"{path}.{key}: only applies when select is false")
    if effect != "spline":
        for key in _SPLINE_ONLY:
            if key in raw:
                raise ConfigError(f"{path}.{key}: only applies to spline terms")
    if not select and effect == "linear":
        for key in ("ig_a", "ig_b"):
            if key in raw:
                raise ConfigError(
                    f"{path}.{key}: unpenalized linear terms take no scale prior"
                )

    has_scale = "b" in raw or "r" in raw
    has_target = "alpha" in raw or "c" in raw
    if has_scale and has_target:
        raise ConfigError(
            f"{path}: give either explicit scales (b, r) or targets (alpha, c), not both"
        )
    if has_scale and ("b" not in raw or "r" not in raw):
        raise ConfigError(f"{path}: explicit scales need both b and r")

    label = raw.get("label", _default_label(effect, covariate))
    label = _want(label, f"{path}.label", str, "a string")
    if not LABEL_PATTERN.match(label):
        raise ConfigError(
            f"{path}.label: {label!r} may only use letters, digits, and ._()-"
        )

    kwargs = dict(covariate=covariate, effect=effect, label=label, select=select)
    if select:
        kwargs["a"] = _want_number(raw.get("a", 5.0), f"{path}.a", lo=0.0)
        if has_scale:
            kwargs["b"] = _want_number(raw["b"], f"{path}.b", lo=0.0)
            r = _want_number(raw["r"], f"{path}.r", lo=0.0)
            if r > 1.0:
                raise ConfigError(f"{path}.r: must lie in (0, 1]")
            kwargs["r"] = r
        else:
            kwargs["alpha"] = _want_number(raw.get("alpha", 0.1), f"{path}.alpha", lo=0.0, hi=0.5)
            kwargs["c"] = _want_number(raw.get("c", 0.1), f"{path}.c", lo=0.0)
        kwargs["a0"] = _want_number(raw.get("a0", 1.0), f"{path}.a0", lo=0.0)
        kwargs["b0"] = _want_number(raw.get("b0", 1.0), f"{path}.b0", lo=0.0)
        if "omega_group" in raw:
            kwargs["omega_group"] = _want(
                raw["omega_group"], f"{path}.omega_group", str, "a string"
            )
        if "fixed_omega" in raw:
            kwargs["fixed_omega"] = _want_number(
                raw["fixed_omega"], f"{path}.fixed_omega", lo=0.0, hi=1.0
            )
    else:
        # zero is allowed so improper smoothing priors can still be expressed
        # and flagged by the advisory propriety check
        kwargs["ig_a"] = _want_number(
            raw.get("ig_a", 0.001), f"{path}.ig_a", lo=0.0, lo_open=False
        )
        kwargs["ig_b"] = _want_number(
            raw.get("ig_b", 0.001), f"{path}.ig_b", lo=0.0, lo_open=False
        )
    if effect == "spline":
        kwargs["interior"] = _want_int(raw.get("interior", 20), f"{path}.interior", lo=2)
        kwargs["degree"] = _want_int(raw.get("degree", 3), f"{path}.degree", lo=1)
        kwargs["rw_order"] = _want_int(raw.get("rw_order", 2), f"{path}.rw_order", lo=1)
    return TermConfig(**kwargs)


def parse_model_config(text: str) -> ModelConfig:
    """Validate a JSON configuration document into a ModelConfig.

    Unknown keys are rejected everywhere; error messages name the offending
    path.  Defaults: a = 5, a0 = b0 = 1, and sup-norm targets alpha = c = 0.1
    for selectable terms that give no explicit scales.
    """
    try:
        root = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    _want(root, "config", dict, "an object")
    _reject_unknown(
        root,
        {"family", "response", "parameters", "chain", "data", "error",
         "inclusion_threshold", "scores"},
        "config",
    )
    for key in ("family", "response", "parameters", "data"):
        if key not in root:
            raise ConfigError(f"config.{key}: required")

    family_name = _want(root["family"], "family", str, "a string")
    try:
        family = get_family(family_name)
    except ValueError as exc:
        raise ConfigError(f"family: {exc}") from exc

    raw_resp = root["response"]
    if isinstance(raw_resp, str):
        response = (raw_resp,)
    elif isinstance(raw_resp, list) and all(isinstance(s, str) for s in raw_resp):
        response = tuple(raw_resp)
    else:
        raise ConfigError("response: expected a column name or list of column names")
    if not response:
        raise ConfigError("response: at least one column required")

    params = _want(root["parameters"], "parameters", dict, "an object")
    if not params:
        raise ConfigError("parameters: at least one parameter required")
    terms: list[tuple[str, TermConfig]] = []
    seen_labels: set[str] = set()
    for pname, pbody in params.items():
        ppath = f"parameters.{pname}"
        if pname not in family.param_names:
            raise ConfigError(
                f"{ppath}: family {family.name!r} has parameters {family.param_names}"
            )
        _want(pbody, ppath, dict, "an object")
        _reject_unknown(pbody, {"terms"}, ppath)
        if "terms" not in pbody:
            raise ConfigError(f"{ppath}.terms: required")
        tlist = _want(pbody["terms"], f"{ppath}.terms", list, "a list")
        if not tlist:
            raise ConfigError(f"{ppath}.terms: at least one term required")
        for i, traw in enumerate(tlist):
            term = _parse_term(traw, f"{ppath}.terms[{i}]")
            if term.label in seen_labels:
                raise ConfigError(
                    f"{ppath}.terms[{i}].label: duplicate label {term.label!r};"
                    " set an explicit label"
                )
            seen_labels.add(term.label)
            terms.append((pname, term))

    data = _want(root["data"], "data", dict, "an object")
    _reject_unknown(data, {"path", "adjacency"}, "data")
    if "path" not in data:
        raise ConfigError("data.path: required")
    data_path = _want(data["path"], "data.path", str, "a string")
    adjacency_path = None
    if "adjacency" in data:
        adjacency_path = _want(data["adjacency"], "data.adjacency", str, "a string")
    if any(t.effect == "spatial" for _, t in terms) and adjacency_path is None:
        raise ConfigError("data.adjacency: required when a spatial term is present")

    chain_raw = root.get("chain", {})
    _want(chain_raw, "chain", dict, "an object")
    _reject_unknown(chain_raw, {"iterations", "burn_in", "thin", "seed"}, "chain")
    try:
        chain = ChainConfig(
            iterations=_want_int(chain_raw.get("iterations", 12000), "chain.iterations", lo=0),
            burn_in=_want_int(chain_raw.get("burn_in", 2000), "chain.burn_in", lo=0),
            thin=_want_int(chain_raw.get("thin", 10), "chain.thin", lo=1),
            seed=_want_int(chain_raw.get("seed", 0), "chain.seed", lo=0),
        )
    except ValueError as exc:
        raise ConfigError(f"chain: {exc}") from exc

    error_a, error_b = 0.001, 0.001
    if "error" in root:
        if family.name != "gaussian":
            raise ConfigError("error: only the gaussian family has an error variance")
        err = _want(root["error"], "error", dict, "an object")
        _reject_unknown(err, {"a", "b"}, "error")
        error_a = _want_number(err.get("a", 0.001), "error.a", lo=0.0)
        error_b = _want_number(err.get("b", 0.001), "error.b", lo=0.0)

    threshold = _want_number(
        root.get("inclusion_threshold", 0.5), "inclusion_threshold", lo=0.0, hi=1.0
    )

    scores = ScoreSettings()
    if "scores" in root:
        sraw = _want(root["scores"], "scores", dict, "an object")
        _reject_unknown(
            sraw, {"folds", "iterations", "burn_in", "thin", "max_density_draws"}, "scores"
        )
        folds = _want_int(sraw.get("folds", 0), "scores.folds", lo=0)
        if folds == 1:
            raise ConfigError("scores.folds: need at least 2 folds (0 disables)")
        scores = ScoreSettings(
            folds=folds,
            iterations=_want_int(sraw.get("iterations", 2000), "scores.iterations", lo=1),
            burn_in=_want_int(sraw.get("burn_in", 500), "scores.burn_in", lo=0),
            thin=_want_int(sraw.get("thin", 2), "scores.thin", lo=1),
            max_density_draws=_want_int(
                sraw.get("max_density_draws", 200), "scores.max_density_draws", lo=10
            ),
        )

    return ModelConfig(
        family=family.name,
        response=response,
        terms=tuple(terms),
        chain=chain,
        data_path=data_path,
        adjacency_path=adjacency_path,
        error_a=error_a,
        error_b=error_b,
        inclusion_threshold=threshold,
        scores=scores,
    )


# ---------------------------------------------------------------------------
# dataset ingestion


@dataclass(frozen=True)
class Adjacency:
    """Region graph: node names plus symmetric 0/1 neighbourhood matrix."""

    names: tuple[str, ...]
    matrix: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"region {name!r} not in adjacency graph") from None


def read_adjacency(path: str) -> Adjacency:
    """Read a plain-text region graph.

    Lines starting with ``#`` are comments.  A line whose first token is
    ``nodes`` lists region names (several such lines accumulate); every
    other non-empty line must hold exactly two names and declares one
    undirected edge.  Without any ``nodes`` line the node set is the sorted
    set of edge endpoints.
    """
    names: list[str] = []
    edges: list[tuple[str, str]] = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                tokens = body.split()
                if tokens[0] == "nodes":
                    names.extend(tokens[1:])
                elif len(tokens) == 2:
                    if tokens[0] == tokens[1]:
                        raise DataError(f"{path}:{lineno}: self edge {tokens[0]!r}")
                    edges.append((tokens[0], tokens[1]))
                else:
                    raise DataError(
                        f"{path}:{lineno}: expected 'nodes ...' or an edge 'a b'"
                    )
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    if not names:
        names = sorted({n for e in edges for n in e})
    if not names:
        raise DataError(f"{path}: no regions declared")
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate region names in node list")
    index = {n: i for i, n in enumerate(names)}
    mat = np.zeros((len(names), len(names)))
    for a, b in edges:
        for n in (a, b):
            if n not in index:
                raise DataError(f"{path}: edge endpoint {n!r} not in node list")
        mat[index[a], index[b]] = 1.0
        mat[index[b], index[a]] = 1.0
    return Adjacency(names=tuple(names), matrix=mat)


@dataclass
class Dataset:
    """Typed columns of one CSV file, standardized where the model selects.

    ``standardizers`` maps covariate name to (mean, sd) with sd computed with
    denominator n - 1; ``values`` holds ready-to-use numeric columns (already
    standardized for selectable continuous covariates), ``raw`` the originals.
    """

    n_rows: int
    response: np.ndarray
    values: dict[str, np.ndarray]
    raw: dict[str, np.ndarray]
    standardizers: dict[str, tuple[float, float]]
    region_codes: dict[str, np.ndarray]
    group_codes: dict[str, np.ndarray]
    group_levels: dict[str, tuple[str, ...]]
    graph: Adjacency | None


def _read_csv_columns(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    for i, row in enumerate(body, 2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
    return header, body


def _numeric_column(cells: list[str], name: str, path: str) -> np.ndarray:
    out = np.empty(len(cells))
    for i, cell in enumerate(cells):
        try:
            out[i] = float(cell)
        except ValueError:
            raise DataError(
                f"{path}: row {i + 2}, column {name!r}: non-numeric value {cell.strip()!r}"
            ) from None
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise DataError(f"{path}: row {bad + 2}, column {name!r}: non-finite value")
    return out


def load_dataset(path: str, config: ModelConfig) -> Dataset:
    """Read the CSV behind a configuration and prepare model columns.

    Continuous covariates of selectable terms are standardized to mean zero
    and sample standard deviation one (denominator n - 1); the location and
    scale are stored for back-transformation of fitted effects.  Region and
    grouping columns stay categorical.
    """
    header, body = _read_csv_columns(path)
    colmap = {name: [row[j].strip() for row in body] for j, name in enumerate(header)}

    def require(name: str) -> list[str]:
        if name not in colmap:
            raise DataError(f"{path}: column {name!r} missing")
        return colmap[name]

    resp_cols = [_numeric_column(require(name), name, path) for name in config.response]
    response = resp_cols[0] if len(resp_cols) == 1 else np.column_stack(resp_cols)

    graph = None
    if config.adjacency_path is not None:
        graph = read_adjacency(config.adjacency_path)

    values: dict[str, np.ndarray] = {}
    raw: dict[str, np.ndarray] = {}
    standardizers: dict[str, tuple[float, float]] = {}
    region_codes: dict[str, np.ndarray] = {}
    group_codes: dict[str, np.ndarray] = {}
    group_levels: dict[str, tuple[str, ...]] = {}

    for _, term in config.terms:
        if term.effect == "intercept":
            continue
        name = term.covariate
        cells = require(name)
        if term.effect == "spatial":
            if name in region_codes:
                continue
            codes = np.array([graph.index_of(cell) for cell in cells])
            region_codes[name] = codes
        elif term.effect == "random":
            if name in group_codes:
                continue
            levels, codes = np.unique(cells, return_inverse=True)
            group_codes[name] = codes
            group_levels[name] = tuple(levels)
        else:
            if name in raw:
                already = name in standardizers
                if term.select and not already:
                    raise DataError(
                        f"{path}: column {name!r} used by both selectable and"
                        " fixed terms; split it into two columns"
                    )
                continue
            col = _numeric_column(cells, name, path)
            raw[name] = col
            if term.select:
                if len(col) < 2:
                    raise DataError(f"{path}: need at least 2 rows to standardize {name!r}")
                mean = float(np.mean(col))
                sd = float(np.std(col, ddof=1))
                if sd == 0.0 or not np.isfinite(sd):
                    raise DataError(f"{path}: constant selected covariate {name!r}")
                standardizers[name] = (mean, sd)
                values[name] = (col - mean) / sd
            else:
                values[name] = col

    return Dataset(
        n_rows=len(body),
        response=response,
        values=values,
        raw=raw,
        standardizers=standardizers,
        region_codes=region_codes,
        group_codes=group_codes,
        group_levels=group_levels,
        graph=graph,
    )


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class ModelBundle:
    """Everything the fitting and summary stages need, in one place."""

    config: ModelConfig
    dataset: Dataset
    model: Model
    standardizers: dict[str, tuple[float, float]]
    elicited: dict[str, dict[str, float]]


def _build_block(term: TermConfig, dataset: Dataset) -> EffectBlock:
    n = dataset.n_rows
    if term.effect == "intercept":
        return make_intercept_block(n, label=term.label)
    if term.effect == "linear":
        return make_linear_block(dataset.values[term.covariate], term.label)
    if term.effect == "spline":
        return make_bspline_block(
            dataset.values[term.covariate],
            term.label,
            interior=term.interior,
            degree=term.degree,
            rw_order=term.rw_order,
        )
    if term.effect == "spatial":
        return make_gmrf_block(
            dataset.region_codes[term.covariate],
            dataset.graph.matrix,
            term.label,
            region_labels=np.array(dataset.graph.names),
        )
    if term.effect == "random":
        levels = dataset.group_levels[term.covariate]
        block = make_random_intercept_block(
            dataset.group_codes[term.covariate],
            term.label,
            n_levels=len(levels),
        )
        return replace(block, region_labels=np.array(levels))
    raise ConfigError(f"unknown effect kind {term.effect!r}")


def assemble(
    config: ModelConfig,
    dataset: Dataset,
    *,
    elicit_draws: int = 10_000,
    elicit_seed: int = 0,
) -> ModelBundle:
    """Build design blocks and priors; resolve elicitation targets to scales.

    Terms with sup-norm targets get their (b, r) solved per block; the
    resolved values are recorded in the bundle for reporting.
    """
    family = config.family_object()
    terms = []
    elicited: dict[str, dict[str, float]] = {}
    label_std: dict[str, tuple[float, float]] = {}
    for pname, term in config.terms:
        block = _build_block(term, dataset)
        if term.covariate in dataset.standardizers:
            label_std[term.label] = dataset.standardizers[term.covariate]
        if not term.select:
            if term.effect in ("intercept", "linear"):
                prior = BlockPrior(kind="flat")
            else:
                prior = BlockPrior(kind="ig", ig_a=term.ig_a, ig_b=term.ig_b)
        else:
            if term.needs_elicitation:
                b, r = elicit_block(
                    block,
                    alpha=term.alpha,
                    c=term.c,
                    a=term.a,
                    draws=elicit_draws,
                    seed=elicit_seed,
                )
                elicited[term.label] = {
                    "alpha": term.alpha, "c": term.c, "a": term.a, "b": b, "r": r,
                }
            else:
                b, r = term.b, term.r
            prior = BlockPrior(
                kind="nbpss",
                hyper=NbpssHyper(a=term.a, b=b, r=r, a0=term.a0, b0=term.b0),
                omega_group=term.omega_group,
                fixed_omega=term.fixed_omega,
            )
        terms.append((pname, block, prior))
    y = family.check_response(dataset.response)
    model = build_model(
        family, y, terms, error_a=config.error_a, error_b=config.error_b
    )
    return ModelBundle(
        config=config,
        dataset=dataset,
        model=model,
        standardizers=label_std,
        elicited=elicited,
    )


def run_chains(
    model: Model,
    base: ChainConfig,
    n_chains: int = 1,
    *,
    threads: int | None = None,
) -> list[ChainOutput]:
    """Run one or more chains; chain i uses seed base.seed + i.

    Chains share no mutable state, so they may run on a thread pool when
    NBPSS_THREADS (or the threads argument) allows more than one worker.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    configs = [replace(base, seed=base.seed + i) for i in range(n_chains)]
    workers = thread_count() if threads is None else max(1, threads)
    if workers == 1 or n_chains == 1:
        return [run_chain(model, cfg) for cfg in configs]
    with ThreadPoolExecutor(max_workers=min(workers, n_chains)) as pool:
        return list(pool.map(lambda cfg: run_chain(model, cfg), configs))


# ---------------------------------------------------------------------------
# posterior summarization


@dataclass(frozen=True)
class EffectSummary:
    """Posterior reduction of one term."""

    label: str
    parameter: str
    kind: str
    selectable: bool
    inclusion: float | None
    selected: bool | None
    coef_mean: np.ndarray
    coef_lo: np.ndarray
    coef_hi: np.ndarray
    curve_x: np.ndarray | None
    curve_labels: tuple[str, ...] | None
    curve_mean: np.ndarray | None
    curve_lo: np.ndarray | None
    curve_hi: np.ndarray | None
    acceptance: float
    tau2_mean: float | None
    omega_mean: float | None


@dataclass(frozen=True)
class PosteriorSummary:
    """Inclusion table, model-averaged curves, and the raw draw matrix."""

    family: str
    effects: tuple[EffectSummary, ...]
    threshold: float
    n_draws: int
    sigma2_mean: float | None
    sigma2_lo: float | None
    sigma2_hi: float | None
    acceptance: dict[str, float]
    constraint_residual: float
    draw_columns: tuple[str, ...]
    draw_matrix: np.ndarray
    chain_meta: tuple[dict, ...]

    def effect(self, label: str) -> EffectSummary:
        for eff in self.effects:
            if eff.label == label:
                return eff
        raise KeyError(label)


def _draw_layout(model: Model) -> list[str]:
    cols: list[str] = []
    for mb in model.blocks:
        cols.extend(f"beta:{mb.label}:{i}" for i in range(mb.dim))
        if mb.prior.kind in ("nbpss", "ig"):
            cols.append(f"tau2:{mb.label}")
        if mb.prior.kind == "nbpss":
            cols.extend((f"psi2:{mb.label}", f"delta:{mb.label}", f"omega:{mb.label}"))
    if model.family.name == "gaussian":
        cols.append("sigma2")
    cols.append("deviance")
    return cols


def _draw_matrix(chains: list[ChainOutput], model: Model, columns: list[str]) -> np.ndarray:
    total = sum(ch.n_kept for ch in chains)
    out = np.empty((total, len(columns)))
    row = 0
    for ch in chains:
        t = ch.n_kept
        col = 0
        for mb in model.blocks:
            out[row : row + t, col : col + mb.dim] = ch.beta[mb.label]
            col += mb.dim
            if mb.prior.kind in ("nbpss", "ig"):
                out[row : row + t, col] = ch.tau2[mb.label]
                col += 1
            if mb.prior.kind == "nbpss":
                out[row : row + t, col] = ch.psi2[mb.label]
                out[row : row + t, col + 1] = ch.delta[mb.label]
                out[row : row + t, col + 2] = ch.omega[mb.label]
                col += 3
        if model.family.name == "gaussian":
            out[row : row + t, col] = ch.sigma2
            col += 1
        out[row : row + t, col] = -2.0 * ch.loglik.sum(axis=1)
        row += t
    return out


def _effect_grid(
    mb, beta_draws: np.ndarray, grid_points: int, standardizer
) -> tuple[np.ndarray | None, tuple[str, ...] | None, np.ndarray | None]:
    """Evaluation grid and per-draw curve values for one block."""
    block = mb.block
    if block.kind in ("spline", "linear"):
        if block.x is None or block.x.size == 0:
            return None, None, None
        if mb.dim == 1 and np.all(mb.basis_dense == mb.basis_dense[0, 0]):
            return None, None, None  # intercept-like column has no curve
        xg = np.linspace(float(block.x.min()), float(block.x.max()), grid_points)
        curves = beta_draws @ block.basis_at(xg).T
        if standardizer is not None:
            mean, sd = standardizer
            xg = xg * sd + mean
        return xg, None, curves
    if block.kind in ("gmrf", "random"):
        labels = tuple(str(v) for v in block.region_labels)
        return None, labels, beta_draws
    return None, None, None


def summarize(
    chains: list[ChainOutput] | ChainOutput,
    model: Model,
    *,
    threshold: float = 0.5,
    grid_points: int = 200,
    standardizers: dict[str, tuple[float, float]] | None = None,
) -> PosteriorSummary:
    """Reduce stored draws to inclusion probabilities and averaged effects.

    Inclusion is the plain mean of the stored selection indicators; effect
    curves average the per-draw fitted functions over all draws including
    spike-regime ones, with pointwise 2.5%/97.5% bands.  Chains are put in a
    canonical order (by seed) before reduction, so the result is exactly
    invariant to the order in which they are passed.
    """
    if isinstance(chains, ChainOutput):
        chains = [chains]
    chains = [ch for ch in chains if ch is not None]
    if not chains:
        raise ValueError("no chains to summarize")
    chains = sorted(chains, key=lambda ch: (ch.seed, ch.config.iterations, ch.n_kept))
    labels = chains[0].labels
    if any(ch.labels != labels for ch in chains):
        raise ValueError("chains disagree on block labels")
    n_draws = sum(ch.n_kept for ch in chains)
    if n_draws == 0:
        raise ValueError("no stored draws to summarize")
    standardizers = standardizers or {}

    total_iters = sum(max(ch.config.iterations, 1) for ch in chains)
    acceptance = {
        lab: sum(ch.acceptance[lab] * max(ch.config.iterations, 1) for ch in chains)
        / total_iters
        for lab in labels
    }

    effects = []
    for mb in model.blocks:
        lab = mb.label
        beta = np.concatenate([ch.beta[lab] for ch in chains], axis=0)
        selectable = mb.prior.kind == "nbpss"
        inclusion = selected = None
        omega_mean = None
        if selectable:
            delta = np.concatenate([ch.delta[lab] for ch in chains])
            inclusion = float(delta.mean())
            selected = inclusion >= threshold
            omega_mean = float(
                np.concatenate([ch.omega[lab] for ch in chains]).mean()
            )
        tau2_mean = None
        if mb.prior.kind in ("nbpss", "ig"):
            tau2_mean = float(np.concatenate([ch.tau2[lab] for ch in chains]).mean())

        xg, cat_labels, curves = _effect_grid(
            mb, beta, grid_points, standardizers.get(lab)
        )
        if curves is not None:
            curve_mean = curves.mean(axis=0)
            curve_lo = np.quantile(curves, 0.025, axis=0)
            curve_hi = np.quantile(curves, 0.975, axis=0)
        else:
            curve_mean = curve_lo = curve_hi = None
        effects.append(
            EffectSummary(
                label=lab,
                parameter=model.family.param_names[mb.param],
                kind=mb.block.kind,
                selectable=selectable,
                inclusion=inclusion,
                selected=selected,
                coef_mean=beta.mean(axis=0),
                coef_lo=np.quantile(beta, 0.025, axis=0),
                coef_hi=np.quantile(beta, 0.975, axis=0),
                curve_x=xg,
                curve_labels=cat_labels,
                curve_mean=curve_mean,
                curve_lo=curve_lo,
                curve_hi=curve_hi,
                acceptance=acceptance[lab],
                tau2_mean=tau2_mean,
                omega_mean=omega_mean,
            )
        )

    sigma2_mean = sigma2_lo = sigma2_hi = None
    if chains[0].sigma2 is not None:
        s2 = np.concatenate([ch.sigma2 for ch in chains])
        sigma2_mean = float(s2.mean())
        sigma2_lo = float(np.quantile(s2, 0.025))
        sigma2_hi = float(np.quantile(s2, 0.975))

    columns = _draw_layout(model)
    meta = tuple(
        {
            "seed": ch.seed,
            "iterations": ch.config.iterations,
            "burn_in": ch.config.burn_in,
            "thin": ch.config.thin,
            "n_kept": ch.n_kept,
            "approximate": ch.approximate,
            "acceptance": dict(ch.acceptance),
            "constraint_residual": ch.constraint_residual,
        }
        for ch in chains
    )
    return PosteriorSummary(
        family=model.family.name,
        effects=tuple(effects),
        threshold=threshold,
        n_draws=n_draws,
        sigma2_mean=sigma2_mean,
        sigma2_lo=sigma2_lo,
        sigma2_hi=sigma2_hi,
        acceptance=acceptance,
        constraint_residual=max(ch.constraint_residual for ch in chains),
        draw_columns=tuple(columns),
        draw_matrix=_draw_matrix(chains, model, columns),
        chain_meta=meta,
    )


# ---------------------------------------------------------------------------
# information criteria and predictive scores


@dataclass(frozen=True)
class ScoreReport:
    """Model comparison numbers.

    dic and waic are deviance-scaled (smaller is better).  The cv_* entries
    are mean per-observation proper scores of the cross-validated posterior
    predictive (larger is better); cv_quadratic and cv_spherical are None
    for families without a tractable predictive L2 norm.
    """

    dic: float
    dic_penalty: float
    waic: float
    waic_penalty: float
    folds: int
    cv_log: float | None
    cv_quadratic: float | None
    cv_spherical: float | None
    fold_assignment: np.ndarray | None

    def to_dict(self) -> dict:
        return {
            "dic": self.dic,
            "dic_penalty": self.dic_penalty,
            "waic": self.waic,
            "waic_penalty": self.waic_penalty,
            "folds": self.folds,
            "cv_log": self.cv_log,
            "cv_quadratic": self.cv_quadratic,
            "cv_spherical": self.cv_spherical,
            "fold_assignment": (
                None
                if self.fold_assignment is None
                else self.fold_assignment.tolist()
            ),
            "orientation": {
                "dic": "smaller_is_better",
                "waic": "smaller_is_better",
                "cv_log": "larger_is_better",
                "cv_quadratic": "larger_is_better",
                "cv_spherical": "larger_is_better",
            },
        }


def _posterior_mean_deviance(model: Model, chains: list[ChainOutput]) -> float:
    """Deviance at the posterior mean of coefficients and error variance."""
    eta_bar = np.zeros((model.n_obs, model.family.n_params))
    total = sum(ch.n_kept for ch in chains)
    for mb in model.blocks:
        beta_bar = (
            sum(ch.beta[mb.label].sum(axis=0) for ch in chains) / total
        )
        eta_bar[:, mb.param] += mb.basis_dense @ beta_bar
    aux = None
    if chains[0].sigma2 is not None:
        aux = {"sigma2": float(np.concatenate([ch.sigma2 for ch in chains]).mean())}
    return float(-2.0 * model.family.logdens(model.y, eta_bar, aux=aux).sum())


def _row_subset(matrix, rows: np.ndarray):
    if sparse.issparse(matrix):
        return matrix[rows]
    return np.asarray(matrix)[rows]


def _fold_model(model: Model, rows: np.ndarray) -> Model:
    """Same blocks and priors on a row subset; bases keep their columns."""
    terms = []
    for mb in model.blocks:
        block = replace(
            mb.block,
            basis=_row_subset(mb.block.basis, rows),
            x=None if mb.block.x is None else mb.block.x[rows],
        )
        terms.append((mb.param, block, mb.prior))
    y = model.y[rows] if model.y.ndim == 1 else model.y[rows, :]
    return build_model(
        model.family,
        y,
        terms,
        error_a=model.error_a,
        error_b=model.error_b,
        attach_constraints=False,
    )


def _eta_draws(model: Model, chain: ChainOutput, bases: list[np.ndarray]) -> np.ndarray:
    """Per-draw predictors on a row set; shape (kept, rows, params)."""
    t = chain.n_kept
    n = bases[0].shape[0]
    eta = np.zeros((t, n, model.family.n_params))
    for mb, basis in zip(model.blocks, bases):
        eta[:, :, mb.param] += chain.beta[mb.label] @ basis.T
    return eta


def _pointwise_loglik(
    family: Family, y: np.ndarray, eta: np.ndarray, sigma2: np.ndarray | None
) -> np.ndarray:
    """(draws, points) log densities for draw-indexed predictors."""
    t = eta.shape[0]
    out = np.empty((t, eta.shape[1]))
    for i in range(t):
        aux = None if sigma2 is None else {"sigma2": float(sigma2[i])}
        out[i] = family.logdens(y, eta[i], aux=aux)
    return out


def _thin_draw_index(t: int, cap: int) -> np.ndarray:
    if t <= cap:
        return np.arange(t)
    return np.unique(np.linspace(0, t - 1, cap).astype(int))


def _gaussian_l2(mu: np.ndarray, var: np.ndarray) -> float:
    """Integral of the squared mixture density sum_t N(mu_t, var_t)/T."""
    t = mu.size
    vsum = var[:, None] + var[None, :]
    diff = mu[:, None] - mu[None, :]
    kernel = np.exp(-0.5 * diff * diff / vsum) / np.sqrt(2.0 * np.pi * vsum)
    return float(kernel.sum() / (t * t))


def _predictive_scores_point(
    family: Family,
    y_i,
    eta_i: np.ndarray,
    sigma2: np.ndarray | None,
    ll_i: np.ndarray,
    cap: int,
) -> tuple[float, float | None, float | None]:
    """Log, quadratic, and spherical scores of one held-out observation.

    ``ll_i`` holds the per-draw log densities of the point; the L2 pieces of
    the quadratic and spherical scores use an evenly thinned draw subset of
    at most ``cap`` draws to keep the pairwise sums affordable.
    """
    t = eta_i.shape[0]
    log_score = float(logsumexp(ll_i) - np.log(t))
    keep = _thin_draw_index(t, cap)
    dens = float(np.exp(logsumexp(ll_i[keep]) - np.log(keep.size)))
    if family.name in ("gaussian", "gaussian_locscale"):
        mu = eta_i[keep, 0]
        var = sigma2[keep] if family.name == "gaussian" else np.exp(eta_i[keep, 1])
        l2 = _gaussian_l2(mu, var)
        return log_score, 2.0 * dens - l2, dens / math.sqrt(l2)
    if family.name in ("poisson", "zip"):
        k_max = int(max(5 * float(y_i) + 30, 60))
        grid = np.arange(k_max + 1, dtype=float)
        sub = eta_i[keep]
        pmf = np.zeros(grid.size)
        for i in range(sub.shape[0]):
            eta_rep = np.repeat(sub[i : i + 1], grid.size, axis=0)
            pmf += np.exp(family.logdens(grid, eta_rep, aux=None))
        pmf /= sub.shape[0]
        l2 = float(pmf @ pmf)
        dens = float(pmf[int(y_i)])
        return log_score, 2.0 * dens - l2, dens / math.sqrt(l2)
    return log_score, None, None


def compute_scores(
    model: Model,
    data: Dataset | None,
    chains: list[ChainOutput] | ChainOutput,
    folds: int,
    *,
    cv_config: ChainConfig | None = None,
    max_density_draws: int = 200,
    threads: int | None = None,
) -> ScoreReport:
    """Information criteria from the full-data chains plus k-fold CV scores.

    DIC is 2 * mean(deviance over draws) minus the deviance at the posterior
    mean parameters.  WAIC subtracts the pointwise log-predictive variance
    penalty from the log pointwise predictive density.  Cross-validation
    refits the model on each training split (round-robin fold assignment,
    row i to fold i mod folds) and scores each held-out point under its
    draw-averaged posterior predictive.  folds = 0 skips the CV block.
    """
    if isinstance(chains, ChainOutput):
        chains = [chains]
    if not chains or all(ch.n_kept == 0 for ch in chains):
        raise ValueError("no stored draws to score")
    if data is not None and data.n_rows != model.n_obs:
        raise ValueError("dataset row count does not match the model")

    ll = np.concatenate([ch.loglik for ch in chains], axis=0)
    t = ll.shape[0]
    dev_draws = -2.0 * ll.sum(axis=1)
    dev_hat = _posterior_mean_deviance(model, chains)
    dic_penalty = float(dev_draws.mean() - dev_hat)
    dic = float(2.0 * dev_draws.mean() - dev_hat)

    lppd = logsumexp(ll, axis=0) - np.log(t)
    p_waic = ll.var(axis=0, ddof=1) if t > 1 else np.zeros(ll.shape[1])
    waic_penalty = float(p_waic.sum())
    waic = float(-2.0 * (lppd.sum() - waic_penalty))

    if folds == 0:
        return ScoreReport(
            dic=dic,
            dic_penalty=dic_penalty,
            waic=waic,
            waic_penalty=waic_penalty,
            folds=0,
            cv_log=None,
            cv_quadratic=None,
            cv_spherical=None,
            fold_assignment=None,
        )

    n = model.n_obs
    if folds < 2:
        raise ValueError("folds must be at least 2 (0 disables cross-validation)")
    if folds > n:
        raise ValueError(f"{folds} folds over {n} rows leaves empty folds")
    assignment = np.arange(n) % folds
    if cv_config is None:
        cv_config = ChainConfig(iterations=2000, burn_in=500, thin=2, seed=0)

    dense_bases = [np.asarray(mb.basis_dense) for mb in model.blocks]

    def score_fold(k: int) -> tuple[float, float | None, float | None, int]:
        test = np.flatnonzero(assignment == k)
        train = np.flatnonzero(assignment != k)
        if train.size == 0:
            raise ValueError(f"fold {k}: empty training set")
        sub = _fold_model(model, train)
        chain = run_chain(sub, replace(cv_config, seed=cv_config.seed + k))
        test_bases = [basis[test] for basis in dense_bases]
        eta = _eta_draws(model, chain, test_bases)
        sigma2 = chain.sigma2
        y_test = model.y[test] if model.y.ndim == 1 else model.y[test, :]
        ll_test = _pointwise_loglik(model.family, y_test, eta, sigma2)
        log_sum, quad_sum, sph_sum = 0.0, 0.0, 0.0
        has_l2 = True
        for i in range(test.size):
            y_i = y_test[i] if model.y.ndim == 1 else y_test[i, :]
            ls, qs, ss = _predictive_scores_point(
                model.family, y_i, eta[:, i, :], sigma2, ll_test[:, i], max_density_draws
            )
            log_sum += ls
            if qs is None:
                has_l2 = False
            else:
                quad_sum += qs
                sph_sum += ss
        return (
            log_sum,
            quad_sum if has_l2 else None,
            sph_sum if has_l2 else None,
            test.size,
        )

    workers = thread_count() if threads is None else max(1, threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, folds)) as pool:
            results = list(pool.map(score_fold, range(folds)))
    else:
        results = [score_fold(k) for k in range(folds)]

    total = sum(r[3] for r in results)
    cv_log = sum(r[0] for r in results) / total
    if any(r[1] is None for r in results):
        cv_quad = cv_sph = None
    else:
        cv_quad = sum(r[1] for r in results) / total
        cv_sph = sum(r[2] for r in results) / total
    return ScoreReport(
        dic=dic,
        dic_penalty=dic_penalty,
        waic=waic,
        waic_penalty=waic_penalty,
        folds=folds,
        cv_log=cv_log,
        cv_quadratic=cv_quad,
        cv_spherical=cv_sph,
        fold_assignment=assignment,
    )


# ---------------------------------------------------------------------------
# serialization


def _effect_json(eff: EffectSummary) -> dict:
    return {
        "label": eff.label,
        "parameter": eff.parameter,
        "kind": eff.kind,
        "selectable": eff.selectable,
        "inclusion": eff.inclusion,
        "selected": eff.selected,
        "acceptance": eff.acceptance,
        "tau2_mean": eff.tau2_mean,
        "omega_mean": eff.omega_mean,
        "coef_mean": eff.coef_mean.tolist(),
        "coef_lo": eff.coef_lo.tolist(),
        "coef_hi": eff.coef_hi.tolist(),
    }


def summary_to_dict(summary: PosteriorSummary) -> dict:
    return {
        "family": summary.family,
        "threshold": summary.threshold,
        "n_draws": summary.n_draws,
        "constraint_residual": summary.constraint_residual,
        "sigma2": (
            None
            if summary.sigma2_mean is None
            else {
                "mean": summary.sigma2_mean,
                "lo": summary.sigma2_lo,
                "hi": summary.sigma2_hi,
            }
        ),
        "acceptance": summary.acceptance,
        "effects": [_effect_json(eff) for eff in summary.effects],
        "chains": list(summary.chain_meta),
    }


def _write_json(path: str, payload: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=False)
            fh.write("\n")
    except OSError as exc:
        raise EngineError(f"{path}: {exc.strerror or exc}") from exc


def _write_effect_csv(path: str, eff: EffectSummary) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "mean", "lo", "hi"])
            xs = eff.curve_x if eff.curve_x is not None else eff.curve_labels
            for x, m, lo, hi in zip(xs, eff.curve_mean, eff.curve_lo, eff.curve_hi):
                writer.writerow([x if isinstance(x, str) else repr(float(x)),
                                 repr(float(m)), repr(float(lo)), repr(float(hi))])
    except OSError as exc:
        raise EngineError(f"{path}: {exc.strerror or exc}") from exc


def write_draws(path: str, summary: PosteriorSummary) -> None:
    """Binary draw matrix: magic, uint32 version, column-major float64."""
    matrix = np.ascontiguousarray(summary.draw_matrix, dtype="<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(DRAWS_MAGIC)
            fh.write(struct.pack("<I", DRAWS_VERSION))
            fh.write(matrix.tobytes(order="F"))
    except OSError as exc:
        raise EngineError(f"{path}: {exc.strerror or exc}") from exc
    sidecar = {
        "format": "nbpss-draws",
        "version": DRAWS_VERSION,
        "rows": int(matrix.shape[0]),
        "columns": list(summary.draw_columns),
        "dtype": "float64",
        "byte_order": "little",
        "order": "column-major",
        "family": summary.family,
        "threshold": summary.threshold,
        "chains": list(summary.chain_meta),
    }
    _write_json(path + ".json", sidecar)


def read_draws(path: str) -> tuple[np.ndarray, dict]:
    """Reload a draw matrix and its side-car index, bit-exactly."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
            payload = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    if len(head) < 8 or head[:4] != DRAWS_MAGIC:
        raise EngineError(f"{path}: not a draws file (bad magic)")
    version = struct.unpack("<I", head[4:])[0]
    if version != DRAWS_VERSION:
        raise EngineError(f"{path}: unsupported draws version {version}")
    try:
        with open(path + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}.json: {exc.strerror or exc}") from exc
    rows = meta["rows"]
    cols = len(meta["columns"])
    expected = rows * cols * 8
    if len(payload) != expected:
        raise EngineError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    matrix = flat.reshape((rows, cols), order="F")
    return matrix, meta


def rebuild_chain_outputs(
    matrix: np.ndarray, meta: dict, model: Model
) -> list[ChainOutput]:
    """Reconstruct per-chain outputs from a stored draw matrix.

    Pointwise log densities are recomputed from the stored coefficients, so
    the result can feed summarize and the information criteria directly.
    """
    columns = {name: i for i, name in enumerate(meta["columns"])}
    chains: list[ChainOutput] = []
    row = 0
    for chmeta in meta["chains"]:
        t = chmeta["n_kept"]
        sl = matrix[row : row + t]
        row += t
        beta, tau2, psi2, delta, omega = {}, {}, {}, {}, {}
        for mb in model.blocks:
            lab = mb.label
            idx = [columns[f"beta:{lab}:{i}"] for i in range(mb.dim)]
            beta[lab] = np.ascontiguousarray(sl[:, idx])
            if mb.prior.kind in ("nbpss", "ig"):
                tau2[lab] = np.ascontiguousarray(sl[:, columns[f"tau2:{lab}"]])
            if mb.prior.kind == "nbpss":
                psi2[lab] = np.ascontiguousarray(sl[:, columns[f"psi2:{lab}"]])
                delta[lab] = sl[:, columns[f"delta:{lab}"]].astype(np.int64)
                omega[lab] = np.ascontiguousarray(sl[:, columns[f"omega:{lab}"]])
        sigma2 = None
        if "sigma2" in columns:
            sigma2 = np.ascontiguousarray(sl[:, columns["sigma2"]])
        loglik = np.empty((t, model.n_obs))
        for i in range(t):
            eta = np.zeros((model.n_obs, model.family.n_params))
            for mb in model.blocks:
                eta[:, mb.param] += mb.basis_dense @ beta[mb.label][i]
            aux = None if sigma2 is None else {"sigma2": float(sigma2[i])}
            loglik[i] = model.family.logdens(model.y, eta, aux=aux)
        config = ChainConfig(
            iterations=chmeta["iterations"],
            burn_in=chmeta["burn_in"],
            thin=chmeta["thin"],
            seed=chmeta["seed"],
            mh_correction=not chmeta["approximate"],
        )
        chains.append(
            ChainOutput(
                labels=tuple(mb.label for mb in model.blocks),
                beta=beta,
                tau2=tau2,
                psi2=psi2,
                delta=delta,
                omega=omega,
                sigma2=sigma2,
                loglik=loglik,
                acceptance=dict(chmeta["acceptance"]),
                max_abs_log_ratio={lab: 0.0 for lab in beta},
                constraint_residual=chmeta["constraint_residual"],
                seed=chmeta["seed"],
                config=config,
                approximate=chmeta["approximate"],
            )
        )
    return chains


def write_outputs(
    summary: PosteriorSummary,
    scores: ScoreReport | None,
    out_dir: str,
) -> dict[str, str]:
    """Serialize a fit: summary.json, effects/*.csv, draws.bin, scores.json.

    Returns a name -> path map of everything written.
    """
    effects_dir = os.path.join(out_dir, "effects")
    try:
        os.makedirs(effects_dir, exist_ok=True)
    except OSError as exc:
        raise EngineError(f"{out_dir}: {exc.strerror or exc}") from exc

    written: dict[str, str] = {}
    summary_path = os.path.join(out_dir, "summary.json")
    _write_json(summary_path, summary_to_dict(summary))
    written["summary"] = summary_path

    for eff in summary.effects:
        if eff.curve_mean is None:
            continue
        path = os.path.join(effects_dir, f"{eff.label}.csv")
        _write_effect_csv(path, eff)
        written[f"effects/{eff.label}"] = path

    draws_path = os.path.join(out_dir, "draws.bin")
    write_draws(draws_path, summary)
    written["draws"] = draws_path
    written["draws_index"] = draws_path + ".json"

    if scores is not None:
        scores_path = os.path.join(out_dir, "scores.json")
        _write_json(scores_path, scores.to_dict())
        written["scores"] = scores_path
    return written
