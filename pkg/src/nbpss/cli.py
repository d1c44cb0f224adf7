"""Command line front end.

Subcommands
-----------
fit        elicit prior scales where requested, run the sampler, and write
           summaries, delimited effect curves, raw draws, scores, and figures
elicit     run only the prior scale calibration and emit the (b, r) pairs
simulate   generate a benchmark dataset with a machine-readable truth record
summarize  rebuild all summary outputs from a stored draws file
check      print the advisory posterior propriety report

Exit status is 0 on success, 1 for configuration or data errors, and 2 for
numeric failures during sampling or output handling.  Diagnostics go to
stderr; results and file listings go to stdout.  The NBPSS_THREADS
environment variable caps worker threads for parallel chains and
cross-validation folds.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import engine
from . import simulate as simulate_mod
from .engine import ConfigError, DataError, EngineError
from .model import propriety_spec
from .propriety import check_propriety
from .sampler import SamplerError

__all__ = ["main", "build_parser"]

log = logging.getLogger("nbpss.cli")


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("value must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nbpss",
        description="Bayesian effect selection for structured additive "
        "distributional regression",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="-v for progress messages, -vv for debug output",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", parents=[common], help="fit a model and write outputs")
    fit.add_argument("-c", "--config", required=True, help="model configuration JSON")
    fit.add_argument("-o", "--out", required=True, help="output directory")
    fit.add_argument("--seed", type=_u64, default=None, help="override the chain seed")
    fit.add_argument("--chains", type=_positive_int, default=1, help="number of chains")
    fit.add_argument(
        "--no-mh-correction",
        action="store_true",
        help="skip the acceptance step and keep every proposal (approximate)",
    )
    fit.add_argument(
        "--no-figures", action="store_true", help="do not render figure files"
    )

    eli = sub.add_parser(
        "elicit", parents=[common], help="calibrate prior scales and print them"
    )
    eli.add_argument("-c", "--config", required=True, help="model configuration JSON")
    eli.add_argument(
        "-o", "--out", default=None, help="directory for elicited.json (default stdout)"
    )
    eli.add_argument(
        "--seed", type=_u64, default=0, help="seed for the calibration sampler"
    )

    sim = sub.add_parser(
        "simulate", parents=[common], help="generate a benchmark dataset"
    )
    sim.add_argument(
        "--scenario",
        required=True,
        help="scenario id, e.g. high-sparsity-gaussian",
    )
    sim.add_argument("--n", type=_positive_int, default=1000, help="number of rows")
    sim.add_argument(
        "--correlated",
        action="store_true",
        help="draw covariates from a dependent process instead of independently",
    )
    sim.add_argument(
        "--spatial", action="store_true", help="add a regional effect on a lattice"
    )
    sim.add_argument("--seed", type=_u64, default=0, help="generator seed")
    sim.add_argument("-o", "--out", required=True, help="output directory")

    summ = sub.add_parser(
        "summarize", parents=[common], help="rebuild outputs from stored draws"
    )
    summ.add_argument("-c", "--config", required=True, help="model configuration JSON")
    summ.add_argument("-o", "--out", required=True, help="output directory")
    summ.add_argument(
        "--draws", default=None, help="draws file (default: <out>/draws.bin)"
    )
    summ.add_argument(
        "--no-figures", action="store_true", help="do not render figure files"
    )

    chk = sub.add_parser(
        "check", parents=[common], help="print the advisory propriety report"
    )
    chk.add_argument("-c", "--config", required=True, help="model configuration JSON")

    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def _load_config(path: str) -> engine.ModelConfig:
    """Parse the configuration file, resolving data paths relative to it."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    config = engine.parse_model_config(text)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        if p is None or os.path.isabs(p):
            return p
        return os.path.join(base, p)

    return replace(
        config,
        data_path=resolve(config.data_path),
        adjacency_path=resolve(config.adjacency_path),
    )


def _assemble(config: engine.ModelConfig, elicit_seed: int = 0) -> engine.ModelBundle:
    dataset = engine.load_dataset(config.data_path, config)
    log.info("loaded %d rows from %s", dataset.n_rows, config.data_path)
    bundle = engine.assemble(config, dataset, elicit_seed=elicit_seed)
    for label, info in bundle.elicited.items():
        log.info(
            "elicited %s: b=%.6g r=%.6g (alpha=%g, c=%g)",
            label,
            info["b"],
            info["r"],
            info["alpha"],
            info["c"],
        )
    return bundle


def _print_effects(summary: engine.PosteriorSummary) -> None:
    acc = min(summary.acceptance.values()) if summary.acceptance else 1.0
    print(
        f"family={summary.family} draws={summary.n_draws} "
        f"min acceptance={acc:.3f} threshold={summary.threshold:g}"
    )
    width = max((len(e.label) for e in summary.effects), default=5)
    for eff in summary.effects:
        if eff.selectable:
            mark = "selected" if eff.selected else "-"
            print(f"  {eff.label:<{width}s}  inclusion={eff.inclusion:.3f}  {mark}")
        else:
            print(f"  {eff.label:<{width}s}  (always included)")


def _print_paths(paths: dict[str, str]) -> None:
    for name in sorted(paths):
        print(f"wrote {paths[name]}")


def _render_figures(summary: engine.PosteriorSummary, out_dir: str) -> dict[str, str]:
    # imported lazily so plotting stays optional for library-only use
    from .report import render_figures

    return render_figures(summary, out_dir)


def _cmd_fit(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    chain = config.chain
    if args.seed is not None:
        chain = replace(chain, seed=args.seed)
    if args.no_mh_correction:
        chain = replace(chain, mh_correction=False)
    bundle = _assemble(config)
    threads = engine.thread_count()
    log.info(
        "running %d chain(s) of %d iterations (threads=%d)",
        args.chains,
        chain.iterations,
        threads,
    )
    chains = engine.run_chains(bundle.model, chain, n_chains=args.chains, threads=threads)
    for ch in chains:
        log.info(
            "chain seed=%d kept=%d acceptance=%.3f max|log ratio|=%.2e",
            ch.seed,
            ch.n_kept,
            ch.acceptance,
            ch.max_abs_log_ratio,
        )
    summary = engine.summarize(
        chains,
        bundle.model,
        threshold=config.inclusion_threshold,
        standardizers=bundle.standardizers,
    )
    cv = config.scores
    cv_chain = replace(
        chain, iterations=cv.iterations, burn_in=cv.burn_in, thin=cv.thin
    )
    scores = engine.compute_scores(
        bundle.model,
        bundle.dataset,
        chains,
        cv.folds,
        cv_config=cv_chain,
        max_density_draws=cv.max_density_draws,
        threads=threads,
    )
    paths = engine.write_outputs(summary, scores, args.out)
    if bundle.elicited:
        elicited_path = os.path.join(args.out, "elicited.json")
        try:
            with open(elicited_path, "w", encoding="utf-8") as fh:
                json.dump(bundle.elicited, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise EngineError(f"cannot write {elicited_path!r}: {exc}") from exc
        paths["elicited"] = elicited_path
    if not args.no_figures:
        paths.update(_render_figures(summary, args.out))
    _print_effects(summary)
    _print_paths(paths)
    return 0


def _cmd_elicit(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    bundle = _assemble(config, elicit_seed=args.seed)
    payload = {
        "terms": {
            label: {"b": info["b"], "r": info["r"]}
            for label, info in sorted(bundle.elicited.items())
        }
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out is None:
        print(text)
        return 0
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "elicited.json")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise EngineError(f"cannot write {path!r}: {exc}") from exc
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    sim = simulate_mod.generate_scenario(
        args.scenario,
        args.n,
        correlated=args.correlated,
        spatial=args.spatial,
        seed=args.seed,
    )
    paths = simulate_mod.write_simulation(sim, args.out)
    crit = sim.truth["criterion"]
    print(
        f"scenario={sim.scenario} n={sim.n} "
        f"signal={len(crit['signal'])} noise={len(crit['noise'])}"
    )
    _print_paths(paths)
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    bundle = _assemble(config)
    draws_path = args.draws or os.path.join(args.out, "draws.bin")
    matrix, meta = engine.read_draws(draws_path)
    if meta.get("family") != config.family:
        raise ConfigError(
            f"draws file was produced for family {meta.get('family')!r}, "
            f"config declares {config.family!r}"
        )
    chains = engine.rebuild_chain_outputs(matrix, meta, bundle.model)
    log.info("rebuilt %d chain(s), %d draws total", len(chains), matrix.shape[0])
    summary = engine.summarize(
        chains,
        bundle.model,
        threshold=config.inclusion_threshold,
        standardizers=bundle.standardizers,
    )
    paths = engine.write_outputs(summary, None, args.out)
    if not args.no_figures:
        paths.update(_render_figures(summary, args.out))
    _print_effects(summary)
    _print_paths(paths)
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    bundle = _assemble(config)
    report = check_propriety(propriety_spec(bundle.model))
    print(report.summary())
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "elicit": _cmd_elicit,
    "simulate": _cmd_simulate,
    "summarize": _cmd_summarize,
    "check": _cmd_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that slot is reserved for
        # numeric failures, so remap while keeping --help at 0
        return 0 if exc.code == 0 else 1
    _setup_logging(args.verbose)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SamplerError, EngineError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
